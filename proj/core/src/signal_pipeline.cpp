#include "spectrum/signal_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spectrum/error.hpp"

namespace spectrum::signal {
namespace {

constexpr std::array<std::string_view, kFullChannelCount> kChannelNames = {
    "xdot", "ydot", "v", "vdot", "theta", "cos", "sin", "thetadot",
    "thetaddot", "dv", "a", "p", "pdot", "pddot", "logv"};

// Central differences inside, one-sided at both ends, scaled by the sample rate.
std::vector<double> derivative(const std::vector<double>& f, double rate) {
  const std::size_t n = f.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  d.front() = (f[1] - f[0]) * rate;
  d.back() = (f[n - 1] - f[n - 2]) * rate;
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (f[i + 1] - f[i - 1]) * 0.5 * rate;
  return d;
}

struct Track {
  std::vector<double> t;
  std::vector<double> v;
};

// Catmull-Rom style tangents on a possibly non-uniform knot sequence.
std::vector<double> hermite_tangents(const Track& tr) {
  const std::size_t n = tr.t.size();
  std::vector<double> m(n, 0.0);
  m.front() = (tr.v[1] - tr.v[0]) / (tr.t[1] - tr.t[0]);
  m.back() = (tr.v[n - 1] - tr.v[n - 2]) / (tr.t[n - 1] - tr.t[n - 2]);
  for (std::size_t i = 1; i + 1 < n; ++i)
    m[i] = (tr.v[i + 1] - tr.v[i - 1]) / (tr.t[i + 1] - tr.t[i - 1]);
  return m;
}

double eval_segment(const Track& tr, const std::vector<double>* tangents, std::size_t i, double t) {
  const double h = tr.t[i + 1] - tr.t[i];
  const double s = (t - tr.t[i]) / h;
  if (tangents == nullptr) return tr.v[i] + s * (tr.v[i + 1] - tr.v[i]);
  const double s2 = s * s;
  const double s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1;
  const double h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2;
  const double h11 = s3 - s2;
  return h00 * tr.v[i] + h10 * h * (*tangents)[i] + h01 * tr.v[i + 1] +
         h11 * h * (*tangents)[i + 1];
}

}  // namespace

void validate(const RawTrace& trace) {
  if (trace.points.empty()) throw Error("trace '" + trace.writer_id + "' has no points");
  for (std::size_t i = 0; i < trace.points.size(); ++i) {
    const PenPoint& pt = trace.points[i];
    if (!std::isfinite(pt.x) || !std::isfinite(pt.y) || !std::isfinite(pt.p) ||
        !std::isfinite(pt.t)) {
      throw Error("trace point " + std::to_string(i) + " is not finite");
    }
    if (pt.p < 0.0) throw Error("trace point " + std::to_string(i) + " has negative pressure");
    if (i > 0 && !(pt.t > trace.points[i - 1].t)) {
      throw Error("trace timestamps not strictly increasing at point " + std::to_string(i));
    }
  }
}

std::string_view channel_name(Channel c) noexcept {
  return kChannelNames[static_cast<std::size_t>(c)];
}

std::size_t channel_index(std::string_view name, std::size_t channel_count) {
  for (std::size_t i = 0; i < channel_count && i < kChannelNames.size(); ++i) {
    if (kChannelNames[i] == name) return i;
  }
  throw Error("unknown channel name '" + std::string(name) + "'");
}

RawTrace center_normalize(const RawTrace& trace) {
  RawTrace out = trace;
  if (out.points.empty()) return out;
  double mx = 0.0, my = 0.0;
  for (const auto& pt : out.points) {
    mx += pt.x;
    my += pt.y;
  }
  mx /= static_cast<double>(out.points.size());
  my /= static_cast<double>(out.points.size());
  double extent = 0.0;
  for (auto& pt : out.points) {
    pt.x -= mx;
    pt.y -= my;
    extent = std::max({extent, std::abs(pt.x), std::abs(pt.y)});
  }
  const double scale = extent > 0.0 ? extent : 1.0;
  for (auto& pt : out.points) {
    pt.x /= scale;
    pt.y /= scale;
  }
  return out;
}

RawTrace normalize_pressure(const RawTrace& trace) {
  RawTrace out = trace;
  if (out.points.empty()) return out;
  auto [lo, hi] = std::minmax_element(out.points.begin(), out.points.end(),
                                      [](const PenPoint& a, const PenPoint& b) { return a.p < b.p; });
  const double pmin = lo->p;
  const double range = hi->p - pmin;
  for (auto& pt : out.points) pt.p = range > 0.0 ? (pt.p - pmin) / range : 0.0;
  return out;
}

RawTrace resample(const RawTrace& trace, double target_hz) {
  if (!(target_hz > 0.0)) throw Error("resample: target rate must be positive");
  validate(trace);
  const double t0 = trace.points.front().t;
  const double duration = trace.points.back().t - t0;
  if (!(duration > 0.0)) throw Error("resample: trace has zero duration");

  const std::size_t n = trace.points.size();
  Track xs, ys, ps;
  for (Track* tr : {&xs, &ys, &ps}) {
    tr->t.reserve(n);
    tr->v.reserve(n);
  }
  for (const auto& pt : trace.points) {
    xs.t.push_back(pt.t);
    ys.t.push_back(pt.t);
    ps.t.push_back(pt.t);
    xs.v.push_back(pt.x);
    ys.v.push_back(pt.y);
    ps.v.push_back(pt.p);
  }
  const bool cubic = n >= 4;
  std::vector<double> mx, my, mp;
  if (cubic) {
    mx = hermite_tangents(xs);
    my = hermite_tangents(ys);
    mp = hermite_tangents(ps);
  }

  // Small slack keeps e.g. 0.99 s * 120 Hz from losing its last sample to rounding.
  const auto count = static_cast<std::size_t>(std::floor(duration * target_hz + 1e-9)) + 1;
  RawTrace out = trace;
  out.points.clear();
  out.points.reserve(count);
  out.source_hz = target_hz;
  std::size_t seg = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const double t = t0 + static_cast<double>(k) / target_hz;
    while (seg + 2 < n && t > xs.t[seg + 1]) ++seg;
    PenPoint pt;
    pt.t = t;
    pt.x = eval_segment(xs, cubic ? &mx : nullptr, seg, t);
    pt.y = eval_segment(ys, cubic ? &my : nullptr, seg, t);
    pt.p = std::max(0.0, eval_segment(ps, cubic ? &mp : nullptr, seg, t));
    out.points.push_back(pt);
  }
  return out;
}

FeatureSequence compute_time_functions(const RawTrace& trace, const FeatureOptions& options,
                                       TimeFunctionDiagnostics* diagnostics) {
  const std::size_t n = trace.points.size();
  if (n < 3) throw Error("compute_time_functions: need at least 3 points, got " + std::to_string(n));
  double rate = trace.source_hz;
  if (!(rate > 0.0)) {
    const double span = trace.points.back().t - trace.points.front().t;
    if (!(span > 0.0)) throw Error("compute_time_functions: cannot infer sample rate");
    rate = static_cast<double>(n - 1) / span;
  }

  std::vector<double> x(n), y(n), p(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = trace.points[i].x;
    y[i] = trace.points[i].y;
    p[i] = trace.points[i].p;
  }
  const auto dx = derivative(x, rate);
  const auto dy = derivative(y, rate);
  std::vector<double> v(n), theta(n), unwrapped(n);
  std::size_t zero_velocity = 0;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::sqrt(dx[i] * dx[i] + dy[i] * dy[i]);
    if (dx[i] == 0.0 && dy[i] == 0.0) {
      theta[i] = 0.0;
      ++zero_velocity;
    } else {
      theta[i] = std::atan2(dy[i], dx[i]);
    }
  }
  unwrapped[0] = theta[0];
  for (std::size_t i = 1; i < n; ++i) {
    double step = theta[i] - theta[i - 1];
    step -= 2.0 * std::numbers::pi * std::round(step / (2.0 * std::numbers::pi));
    unwrapped[i] = unwrapped[i - 1] + step;
  }
  const auto dv = derivative(v, rate);
  const auto dtheta = derivative(unwrapped, rate);
  const auto ddtheta = derivative(dtheta, rate);
  const auto dp = derivative(p, rate);
  const auto ddp = derivative(dp, rate);

  FeatureSequence out{Matrix(n, options.channel_count())};
  for (std::size_t i = 0; i < n; ++i) {
    const double centripetal = v[i] * dtheta[i];
    auto row = out.values.row(i);
    row[0] = dx[i];
    row[1] = dy[i];
    row[2] = v[i];
    row[3] = dv[i];
    row[4] = theta[i];
    row[5] = std::cos(theta[i]);
    row[6] = std::sin(theta[i]);
    row[7] = dtheta[i];
    row[8] = ddtheta[i];
    row[9] = centripetal;
    row[10] = std::sqrt(dv[i] * dv[i] + centripetal * centripetal);
    row[11] = p[i];
    row[12] = dp[i];
    row[13] = ddp[i];
    if (options.include_log_speed) row[14] = std::log1p(v[i]);
  }
  if (diagnostics != nullptr) diagnostics->zero_velocity_samples += zero_velocity;
  return out;
}

FeatureSequence standardize(const FeatureSequence& features) {
  const std::size_t len = features.length();
  if (len < 2) throw Error("standardize: need at least 2 timesteps");
  FeatureSequence out = features;
  for (std::size_t c = 0; c < features.channels(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < len; ++r) mean += features.values(r, c);
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t r = 0; r < len; ++r) {
      const double d = features.values(r, c) - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(len));
    // Columns whose spread is pure rounding noise count as constant.
    const bool constant = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
    for (std::size_t r = 0; r < len; ++r)
      out.values(r, c) = constant ? 0.0 : (features.values(r, c) - mean) / sd;
  }
  return out;
}

FeatureSequence preprocess(const RawTrace& trace, const PreprocessOptions& options) {
  validate(trace);
  RawTrace t = center_normalize(trace);
  t = normalize_pressure(t);
  t = resample(t, options.target_hz);
  return standardize(compute_time_functions(t, options.features));
}

}  // namespace spectrum::signal
