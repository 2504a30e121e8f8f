#include "spectrum/verification.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <thread>

#include "json.hpp"
#include "spectrum/alignment.hpp"
#include "spectrum/error.hpp"
#include "spectrum/random.hpp"

namespace spectrum::verify {
namespace {

double logistic(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("score_query: frequency features differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double max_of(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  return m;
}

// Share of sorted values strictly below c.
double share_below(const std::vector<double>& sorted, double c) {
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), c);
  return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

struct Sweeps {
  SweepResult global;
  LocalEer local;
};

Sweeps sweep_statistic(const std::vector<Trial>& trials, double Trial::*field,
                       const std::vector<std::string>& writer_order, const ThresholdGrid& base) {
  std::vector<double> genuine, forged;
  std::map<std::string, WriterStatistics> per_writer;
  for (const auto& t : trials) {
    const double v = t.*field;
    auto& w = per_writer[t.writer_id];
    w.writer_id = t.writer_id;
    (t.kind == TrialKind::genuine ? genuine : forged).push_back(v);
    (t.kind == TrialKind::genuine ? w.genuine : w.forged).push_back(v);
  }
  std::vector<double> all = genuine;
  all.insert(all.end(), forged.begin(), forged.end());
  const ThresholdGrid grid = base.covering(max_of(all));
  std::vector<WriterStatistics> ordered;
  for (const auto& id : writer_order) {
    const auto it = per_writer.find(id);
    if (it != per_writer.end()) ordered.push_back(it->second);
  }
  return {sweep_eer(genuine, forged, grid), local_eer(ordered, grid)};
}

}  // namespace

double template_norm(std::span<const Matrix> temporal_templates) {
  const std::size_t n = temporal_templates.size();
  if (n == 0) throw Error("template_norm: no templates");
  if (n == 1) return 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      total += align::dtw(temporal_templates[i], temporal_templates[j]);
  const double mean = total / static_cast<double>(n * (n - 1) / 2);
  return std::max(mean, kNormFloor);
}

ScoreQuadruple score_query(std::span<const net::Embeddings> templates,
                           const net::Embeddings& query, double norm,
                           FrequencyDistance distance) {
  if (templates.empty()) throw Error("score_query: no templates");
  if (!(norm > 0.0)) throw Error("score_query: template norm must be positive");
  const double root = std::sqrt(norm);
  ScoreQuadruple q{std::numeric_limits<double>::infinity(), 0.0,
                   std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& t : templates) {
    const double s_t = align::dtw(t.temporal, query.temporal) / root;
    const double sq = squared_distance(t.frequency, query.frequency);
    const double s_f = (distance == FrequencyDistance::squared ? sq : std::sqrt(sq)) / root;
    q.t_min = std::min(q.t_min, s_t);
    q.f_min = std::min(q.f_min, s_f);
    q.t_avg += s_t;
    q.f_avg += s_f;
  }
  q.t_avg /= static_cast<double>(templates.size());
  q.f_avg /= static_cast<double>(templates.size());
  return q;
}

ScoreQuadruple score_query(std::span<const net::Embeddings> templates,
                           const net::Embeddings& query, FrequencyDistance distance) {
  std::vector<Matrix> temporal;
  for (const auto& t : templates) temporal.push_back(t.temporal);
  return score_query(templates, query, template_norm(temporal), distance);
}

double mdv_statistic(const ScoreQuadruple& q) noexcept {
  return q.t_min * (1.0 + logistic(q.f_min)) + q.t_avg * (1.0 - logistic(q.f_avg));
}

bool mdv_decide(const ScoreQuadruple& q, double threshold) noexcept {
  return mdv_statistic(q) < threshold;
}

double temporal_statistic(const ScoreQuadruple& q) noexcept { return q.t_min + q.t_avg; }

bool temporal_only_decide(const ScoreQuadruple& q, double threshold) noexcept {
  return temporal_statistic(q) < threshold;
}

ThresholdGrid ThresholdGrid::covering(double max_statistic) const {
  ThresholdGrid g = *this;
  if (std::isfinite(max_statistic) && max_statistic >= c_max) {
    g.c_max = c_min + (std::floor((max_statistic - c_min) / step) + 1.0) * step;
  }
  return g;
}

std::size_t ThresholdGrid::points() const {
  if (!(step > 0.0)) throw Error("threshold grid: step must be positive");
  if (!(c_max >= c_min)) throw Error("threshold grid: c_max must not be below c_min");
  return static_cast<std::size_t>(std::floor((c_max - c_min) / step + 1e-9)) + 1;
}

SweepResult sweep_eer(std::span<const double> genuine, std::span<const double> forged,
                      const ThresholdGrid& grid) {
  if (genuine.empty()) throw Error("sweep_eer: no genuine statistics");
  if (forged.empty()) throw Error("sweep_eer: no forged statistics");
  std::vector<double> g(genuine.begin(), genuine.end());
  std::vector<double> f(forged.begin(), forged.end());
  std::sort(g.begin(), g.end());
  std::sort(f.begin(), f.end());
  const std::size_t n = grid.points();
  SweepResult best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double c = grid.at(i);
    const double frr = 1.0 - share_below(g, c);
    const double far = share_below(f, c);
    const double gap = std::abs(far - frr);
    if (gap < best_gap) {
      best_gap = gap;
      best = {50.0 * (far + frr), c, far, frr};
    }
  }
  return best;
}

LocalEer local_eer(std::span<const WriterStatistics> writers, const ThresholdGrid& grid) {
  LocalEer out;
  double total = 0.0;
  for (const auto& w : writers) {
    if (w.genuine.empty() || w.forged.empty()) {
      out.excluded.push_back(w.writer_id);
      continue;
    }
    total += sweep_eer(w.genuine, w.forged, grid).eer;
    ++out.writers_used;
  }
  out.eer = out.writers_used == 0 ? std::numeric_limits<double>::quiet_NaN()
                                  : total / static_cast<double>(out.writers_used);
  return out;
}

Protocol Protocol::parse(std::string_view tag) {
  const auto fail = [&] {
    return Error("unknown protocol '" + std::string(tag) +
                 "' (expected {4,3,2,1}v1-{skilled,random})");
  };
  if (tag.size() < 4 || tag.substr(1, 2) != "v1" || tag[3] != '-') throw fail();
  Protocol p;
  if (tag[0] < '1' || tag[0] > '4') throw fail();
  p.templates = static_cast<std::size_t>(tag[0] - '0');
  const std::string_view kind = tag.substr(4);
  if (kind == "skilled") {
    p.forgery = ForgeryKind::skilled;
  } else if (kind == "random") {
    p.forgery = ForgeryKind::random;
  } else {
    throw fail();
  }
  return p;
}

std::string Protocol::tag() const {
  return std::to_string(templates) + "v1-" + (forgery == ForgeryKind::skilled ? "skilled" : "random");
}

std::string_view trial_kind_name(TrialKind kind) noexcept {
  switch (kind) {
    case TrialKind::genuine: return "genuine";
    case TrialKind::skilled: return "skilled";
    case TrialKind::random: return "random";
  }
  return "genuine";
}

ProtocolResult run_protocol(std::span<const EmbeddedSample> samples, const Protocol& protocol,
                            const ProtocolOptions& options) {
  if (protocol.templates == 0) throw Error("run_protocol: need at least one template");
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto [it, fresh] = groups.try_emplace(samples[i].writer_id);
    if (fresh) order.push_back(samples[i].writer_id);
    (samples[i].kind == signal::SampleKind::genuine ? it->second.first : it->second.second)
        .push_back(i);
  }

  ProtocolResult result;
  EERReport& report = result.report;
  report.protocol = protocol.tag();
  std::vector<std::string> scored;
  for (std::size_t w = 0; w < order.size(); ++w) {
    const std::string& writer = order[w];
    const auto& [genuine, skilled] = groups.at(writer);
    if (genuine.size() < protocol.templates + 1) {
      report.excluded_writers.push_back(writer);
      continue;
    }
    std::vector<net::Embeddings> templates;
    std::vector<Matrix> temporal;
    for (std::size_t k = 0; k < protocol.templates; ++k) {
      templates.push_back(samples[genuine[k]].embeddings);
      temporal.push_back(samples[genuine[k]].embeddings.temporal);
    }
    const double norm = template_norm(temporal);

    std::vector<std::pair<std::size_t, TrialKind>> queries;
    for (std::size_t k = protocol.templates; k < genuine.size(); ++k)
      queries.emplace_back(genuine[k], TrialKind::genuine);
    if (protocol.forgery == ForgeryKind::skilled) {
      for (std::size_t idx : skilled) queries.emplace_back(idx, TrialKind::skilled);
    } else {
      std::vector<std::size_t> impostors;
      for (const auto& other : order)
        if (other != writer)
          for (std::size_t idx : groups.at(other).first) impostors.push_back(idx);
      if (impostors.size() > options.max_random_negatives) {
        std::mt19937_64 rng(mix_seed(options.seed, w));
        for (std::size_t i = impostors.size(); i > 1; --i) std::swap(impostors[i - 1], impostors[rng() % i]);
        impostors.resize(options.max_random_negatives);
        std::sort(impostors.begin(), impostors.end());
      }
      for (std::size_t idx : impostors) queries.emplace_back(idx, TrialKind::random);
    }
    for (const auto& [idx, kind] : queries) {
      const ScoreQuadruple q =
          score_query(templates, samples[idx].embeddings, norm, options.frequency_distance);
      result.trials.push_back({writer, kind, mdv_statistic(q), temporal_statistic(q)});
      (kind == TrialKind::genuine ? report.genuine_trials : report.forgery_trials) += 1;
    }
    scored.push_back(writer);
  }
  report.writers = scored.size();
  if (report.genuine_trials == 0 || report.forgery_trials == 0) {
    throw Error("run_protocol " + report.protocol + ": need both genuine and forgery trials (got " +
                std::to_string(report.genuine_trials) + " genuine, " +
                std::to_string(report.forgery_trials) + " forgery)");
  }

  const Sweeps mdv = sweep_statistic(result.trials, &Trial::statistic_mdv, scored, options.grid);
  const Sweeps tmp =
      sweep_statistic(result.trials, &Trial::statistic_temporal, scored, options.grid);
  report.eer_global = mdv.global.eer;
  report.threshold_at_eer = mdv.global.threshold;
  report.eer_local = mdv.local.eer;
  report.eer_global_temporal = tmp.global.eer;
  report.threshold_at_eer_temporal = tmp.global.threshold;
  report.eer_local_temporal = tmp.local.eer;
  for (const auto& w : mdv.local.excluded) report.excluded_writers.push_back(w);
  return result;
}

std::vector<net::Embeddings> embed_all(std::span<const signal::FeatureSequence> features,
                                       const net::ModelParams& params, std::size_t threads,
                                       net::GateSummary* gates) {
  const std::size_t n = features.size();
  std::vector<net::Embeddings> out(n);
  std::vector<net::GateSummary> summaries(n);
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      out[i] = net::embed(features[i], params, &summaries[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) run(i);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  if (gates != nullptr) {
    for (const auto& s : summaries) {
      gates->sum += s.sum;
      gates->count += s.count;
    }
  }
  return out;
}

void write_report_json(const EERReport& report, std::ostream& out, const double* gate_mean) {
  auto number = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  nlohmann::ordered_json j;
  j["protocol"] = report.protocol;
  j["eer_global"] = number(report.eer_global);
  j["eer_local"] = number(report.eer_local);
  j["threshold_at_eer"] = number(report.threshold_at_eer);
  j["eer_global_temporal"] = number(report.eer_global_temporal);
  j["eer_local_temporal"] = number(report.eer_local_temporal);
  j["threshold_at_eer_temporal"] = number(report.threshold_at_eer_temporal);
  j["genuine_trials"] = report.genuine_trials;
  j["forgery_trials"] = report.forgery_trials;
  j["writers"] = report.writers;
  j["excluded_writers"] = report.excluded_writers;
  if (gate_mean != nullptr) j["gate_mean"] = number(*gate_mean);
  out << j.dump(2) << '\n';
}

void write_scores_csv(std::span<const Trial> trials, std::ostream& out) {
  out << "writer_id,trial_kind,statistic_mdv,statistic_temporal\n" << std::setprecision(17);
  for (const auto& t : trials) {
    out << t.writer_id << ',' << trial_kind_name(t.kind) << ',' << t.statistic_mdv << ','
        << t.statistic_temporal << '\n';
  }
}

}  // namespace spectrum::verify
