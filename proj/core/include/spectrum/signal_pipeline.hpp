#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "spectrum/matrix.hpp"

namespace spectrum::signal {

enum class SampleKind { genuine, skilled_forgery };

struct PenPoint {
  double x = 0.0;
  double y = 0.0;
  double p = 0.0;  ///< pressure, non-negative
  double t = 0.0;  ///< seconds, strictly increasing along a trace

  friend bool operator==(const PenPoint&, const PenPoint&) = default;
};

/// A timestamped pen trajectory together with its writer metadata.
struct RawTrace {
  std::vector<PenPoint> points;
  std::string writer_id;
  SampleKind kind = SampleKind::genuine;
  int session = 0;
  double source_hz = 0.0;

  friend bool operator==(const RawTrace&, const RawTrace&) = default;
};

/// Throws spectrum::Error when the trace breaks its invariants
/// (empty, non-increasing timestamps, negative pressure, non-finite values).
void validate(const RawTrace& trace);

/// L x C matrix of time-function channels, one row per timestep.
struct FeatureSequence {
  Matrix values;

  [[nodiscard]] std::size_t length() const noexcept { return values.rows(); }
  [[nodiscard]] std::size_t channels() const noexcept { return values.cols(); }
};

/// Channel order of the emitted time functions.
enum class Channel : std::size_t {
  x_velocity,
  y_velocity,
  speed,
  speed_rate,
  angle,
  angle_cos,
  angle_sin,
  angular_velocity,
  angular_acceleration,
  centripetal,
  total_acceleration,
  pressure,
  pressure_rate,
  pressure_accel,
  log_speed,
};

inline constexpr std::size_t kFullChannelCount = 15;

/// Short names used on the command line (`a`, `p`, `v`, ...), in channel order.
std::string_view channel_name(Channel c) noexcept;
/// Returns the channel index for a short name; throws on unknown names.
std::size_t channel_index(std::string_view name, std::size_t channel_count = kFullChannelCount);

struct FeatureOptions {
  /// Emit log(1 + v) as the 15th channel. When false only 14 channels are produced.
  bool include_log_speed = true;

  [[nodiscard]] std::size_t channel_count() const noexcept {
    return include_log_speed ? kFullChannelCount : kFullChannelCount - 1;
  }
};

struct PreprocessOptions {
  double target_hz = 120.0;
  FeatureOptions features;
};

struct TimeFunctionDiagnostics {
  std::size_t zero_velocity_samples = 0;
};

/// Moves the mean of (x, y) to the origin and scales both axes by one common
/// factor so that max(|x|, |y|) == 1. Coincident points keep scale 1.
RawTrace center_normalize(const RawTrace& trace);

/// Min-max maps pressure to [0, 1]; a constant pressure track becomes all zeros.
RawTrace normalize_pressure(const RawTrace& trace);

/// Resamples x, y and p on a uniform grid of spacing 1/target_hz spanning
/// [t_first, t_last] using a cubic Hermite (Catmull-Rom) spline over time.
/// Traces with fewer than four points fall back to linear interpolation.
RawTrace resample(const RawTrace& trace, double target_hz);

/// Derives the kinematic and pressure channels from a uniformly sampled trace.
FeatureSequence compute_time_functions(const RawTrace& trace, const FeatureOptions& options = {},
                                       TimeFunctionDiagnostics* diagnostics = nullptr);

/// Per-column z-score within one sequence using the population deviation.
/// Constant columns become zeros.
FeatureSequence standardize(const FeatureSequence& features);

/// The full chain: center, pressure, resample, time functions, standardize.
FeatureSequence preprocess(const RawTrace& trace, const PreprocessOptions& options = {});

}  // namespace spectrum::signal
