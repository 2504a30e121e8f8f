#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spectrum/matrix.hpp"
#include "spectrum/network.hpp"
#include "spectrum/signal_pipeline.hpp"

namespace spectrum::verify {

/// Minima and means of the temporal and frequency scores of one query.
struct ScoreQuadruple {
  double t_min = 0.0;
  double t_avg = 0.0;
  double f_min = 0.0;
  double f_avg = 0.0;

  friend bool operator==(const ScoreQuadruple&, const ScoreQuadruple&) = default;
};

inline constexpr double kNormFloor = 1e-6;

/// Distance between frequency features: squared L2 (default) or plain L2.
enum class FrequencyDistance { squared, euclidean };

/// Mean DTW distance over all unordered template pairs, floored at kNormFloor.
/// Returns 1 for a single template.
double template_norm(std::span<const Matrix> temporal_templates);

/// Scores a query against templates with a precomputed template norm.
ScoreQuadruple score_query(std::span<const net::Embeddings> templates,
                           const net::Embeddings& query, double norm,
                           FrequencyDistance distance = FrequencyDistance::squared);
ScoreQuadruple score_query(std::span<const net::Embeddings> templates,
                           const net::Embeddings& query,
                           FrequencyDistance distance = FrequencyDistance::squared);

/// s_T_min (1 + sigmoid(s_F_min)) + s_T_avg (1 - sigmoid(s_F_avg)).
double mdv_statistic(const ScoreQuadruple& q) noexcept;
bool mdv_decide(const ScoreQuadruple& q, double threshold) noexcept;
/// s_T_min + s_T_avg.
double temporal_statistic(const ScoreQuadruple& q) noexcept;
bool temporal_only_decide(const ScoreQuadruple& q, double threshold) noexcept;

struct ThresholdGrid {
  double c_min = 0.0;
  double c_max = 50.0;
  double step = 0.01;

  /// Copy whose upper end covers `max_statistic`, keeping the step.
  [[nodiscard]] ThresholdGrid covering(double max_statistic) const;
  [[nodiscard]] std::size_t points() const;
  [[nodiscard]] double at(std::size_t i) const noexcept {
    return c_min + static_cast<double>(i) * step;
  }
};

struct SweepResult {
  double eer = 0.0;  ///< percent
  double threshold = 0.0;
  double far = 0.0;  ///< fraction of forged statistics accepted at the threshold
  double frr = 0.0;  ///< fraction of genuine statistics rejected at the threshold
};

/// EER over a threshold grid: FRR(c) = share of genuine >= c, FAR(c) = share of
/// forged < c, evaluated where |FAR - FRR| is smallest (first such c).
SweepResult sweep_eer(std::span<const double> genuine, std::span<const double> forged,
                      const ThresholdGrid& grid = {});

struct WriterStatistics {
  std::string writer_id;
  std::vector<double> genuine;
  std::vector<double> forged;
};

struct LocalEer {
  double eer = 0.0;  ///< percent, mean of per-writer EERs
  std::size_t writers_used = 0;
  std::vector<std::string> excluded;  ///< writers lacking genuine or forged trials
};

LocalEer local_eer(std::span<const WriterStatistics> writers, const ThresholdGrid& grid = {});

enum class ForgeryKind { skilled, random };

struct Protocol {
  std::size_t templates = 4;
  ForgeryKind forgery = ForgeryKind::skilled;

  /// Parses "4v1-skilled", "1v1-random", ... (templates 1 to 4).
  static Protocol parse(std::string_view tag);
  [[nodiscard]] std::string tag() const;
};

enum class TrialKind { genuine, skilled, random };
std::string_view trial_kind_name(TrialKind kind) noexcept;

struct Trial {
  std::string writer_id;
  TrialKind kind = TrialKind::genuine;
  double statistic_mdv = 0.0;
  double statistic_temporal = 0.0;
};

struct EERReport {
  std::string protocol;
  double eer_global = 0.0;  ///< percent, MDV statistic
  double eer_local = 0.0;
  double threshold_at_eer = 0.0;
  double eer_global_temporal = 0.0;  ///< percent, temporal-only statistic
  double eer_local_temporal = 0.0;
  double threshold_at_eer_temporal = 0.0;
  std::size_t genuine_trials = 0;
  std::size_t forgery_trials = 0;
  std::size_t writers = 0;
  std::vector<std::string> excluded_writers;
};

struct ProtocolResult {
  EERReport report;
  std::vector<Trial> trials;
};

/// A test sample after embedding.
struct EmbeddedSample {
  std::string writer_id;
  signal::SampleKind kind = signal::SampleKind::genuine;
  net::Embeddings embeddings;
};

struct ProtocolOptions {
  ThresholdGrid grid;
  std::size_t max_random_negatives = 1000;
  std::uint64_t seed = 0;
  FrequencyDistance frequency_distance = FrequencyDistance::squared;
};

/// Templates are each writer's first n genuine samples in input order; the
/// remaining genuines are positive trials. Negatives are the writer's skilled
/// forgeries or, for the random protocol, other writers' genuine samples
/// (seeded subsample when above the cap). Writers without n + 1 genuines are excluded.
ProtocolResult run_protocol(std::span<const EmbeddedSample> samples, const Protocol& protocol,
                            const ProtocolOptions& options = {});

/// Embeds every feature sequence with `threads` workers. Output order follows input.
std::vector<net::Embeddings> embed_all(std::span<const signal::FeatureSequence> features,
                                       const net::ModelParams& params, std::size_t threads = 1,
                                       net::GateSummary* gates = nullptr);

/// Writes the report as a JSON object (with an optional gate statistic).
void write_report_json(const EERReport& report, std::ostream& out, const double* gate_mean = nullptr);
/// writer_id,trial_kind,statistic_mdv,statistic_temporal
void write_scores_csv(std::span<const Trial> trials, std::ostream& out);

}  // namespace spectrum::verify
