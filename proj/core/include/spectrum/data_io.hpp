#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spectrum/network.hpp"
#include "spectrum/signal_pipeline.hpp"

namespace spectrum::data {

enum class Split { unassigned, train, test };

std::string_view split_name(Split s) noexcept;

struct Dataset {
  std::vector<signal::RawTrace> samples;
  std::map<std::string, Split> split;  ///< writers absent from the map are unassigned

  /// Samples of writers assigned to `s`. When no writer has any assignment,
  /// every sample is returned for both train and test.
  [[nodiscard]] std::vector<signal::RawTrace> subset(Split s) const;
  /// Writer ids in order of first appearance.
  [[nodiscard]] std::vector<std::string> writers() const;
  /// Validates every trace and the split map.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// One JSON object per line:
/// {"writer_id", "session", "kind": "genuine"|"skilled", "hz", "points": [[x,y,p,t],...]}
/// plus an optional "split": "train"|"test". Blank lines are skipped.
Dataset parse_dataset(std::istream& in, std::string_view source = "<stream>");
Dataset load_dataset(const std::filesystem::path& path);
void write_dataset(const Dataset& dataset, std::ostream& out);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

/// A preprocessed trace as stored by the `preprocess` command.
struct FeatureRecord {
  std::string writer_id;
  int session = 0;
  signal::SampleKind kind = signal::SampleKind::genuine;
  double hz = 0.0;
  std::vector<std::string> channels;
  signal::FeatureSequence features;
};

void write_features(std::span<const FeatureRecord> records, std::ostream& out);
std::vector<FeatureRecord> parse_features(std::istream& in, std::string_view source = "<stream>");

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary little-endian checkpoint: "SPCT", u32 version, config block, u64
/// array count, then per array u32 rows, u32 cols and f64 values.
void write_checkpoint(const net::ModelParams& params, std::ostream& out);
net::ModelParams read_checkpoint(std::istream& in, std::string_view source = "<stream>");
void save_checkpoint(const net::ModelParams& params, const std::filesystem::path& path);
net::ModelParams load_checkpoint(const std::filesystem::path& path);

/// Throws spectrum::Error naming every field where the configs differ.
void require_compatible(const net::ModelConfig& expected, const net::ModelConfig& actual);

/// Writes `bytes` to `path` in one go, so failed commands leave no partial file.
void write_file(const std::filesystem::path& path, std::string_view bytes);

struct Sinusoid {
  double amplitude = 0.0;
  double frequency = 0.0;  ///< Hz at the nominal duration
  double phase = 0.0;
};

struct SyntheticWriterParams {
  std::vector<Sinusoid> x, y;
  double pressure_offset = 0.5;
  double pressure_amplitude = 0.5;
  double pressure_frequency = 1.0;
  double pressure_phase = 0.0;
  double sigma_genuine = 0.03;
  double sigma_forgery = 0.3;
  double duration = 2.0;  ///< seconds
  double rate_hz = 100.0;

  /// sigma_forgery > sigma_genuine (or both zero) and every frequency below Nyquist.
  void validate(double duration_jitter) const;
};

struct SyntheticConfig {
  std::size_t writers = 30;
  std::size_t test_writers = 0;  ///< the last writers are marked test, the rest train
  std::size_t genuine = 10;
  std::size_t skilled = 10;
  std::size_t components = 4;
  double min_frequency = 0.5;
  double max_frequency = 8.0;
  double duration = 2.0;
  double duration_jitter = 0.2;  ///< relative, uniform
  double warp = 0.3;             ///< time-warp strength, below 1 keeps it monotone
  double rate_hz = 100.0;
  double sigma_genuine = 0.03;
  double sigma_forgery = 0.3;
  double point_noise = 0.01;  ///< absolute coordinate noise per point

  void validate() const;
};

/// Draws one writer's parameters.
SyntheticWriterParams draw_writer(const SyntheticConfig& config, std::uint64_t seed);

/// Renders one sample from base parameters perturbed by `sigma`.
signal::RawTrace render_sample(const SyntheticWriterParams& base, double sigma,
                               const SyntheticConfig& config, std::uint64_t seed);

/// Seeded synthetic writers: genuines are the writer's parameters with small
/// jitter, time warp and length variation; skilled forgeries start from the
/// target's parameters perturbed by sigma_forgery.
Dataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace spectrum::data
