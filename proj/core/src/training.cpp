#include "spectrum/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <thread>

#include "spectrum/error.hpp"
#include "spectrum/random.hpp"

namespace spectrum::train {
namespace {

using ad::Var;

struct WriterPool {
  std::vector<std::size_t> genuine;
  std::vector<std::size_t> skilled;
};

std::map<std::string, WriterPool> pool_by_writer(std::span<const Sample> samples) {
  std::map<std::string, WriterPool> pools;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& pool = pools[samples[i].writer_id];
    (samples[i].kind == signal::SampleKind::genuine ? pool.genuine : pool.skilled).push_back(i);
  }
  return pools;
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(v[i - 1], v[j]);
  }
}

Var sum_all(ad::Tape& tape, const std::vector<Var>& xs) {
  if (xs.empty()) return tape.constant(Matrix(1, 1, 0.0));
  return ad::sum(ad::concat_cols(xs));
}

void check_finite(double value, const char* term, const std::string& writer) {
  if (!std::isfinite(value)) {
    throw Error(std::string("non-finite ") + term + " for writer '" + writer + "'");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw Error("train config: epochs must be positive");
  if (!(lr_start > 0.0) || !(lr_end > 0.0) || !(lr_end < lr_start)) {
    throw Error("train config: need 0 < lr_end < lr_start");
  }
  if (weight_decay < 0.0) throw Error("train config: weight_decay must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw Error("train config: betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw Error("train config: adam_eps must be positive");
  if (lambda < 0.0) throw Error("train config: lambda must be non-negative");
  if (!(gamma > 0.0)) throw Error("train config: gamma must be positive");
  if (!(margin > 0.0)) throw Error("train config: margin must be positive");
  if (batch.writers == 0 || batch.genuine == 0) {
    throw Error("train config: a batch needs at least one writer and one genuine sample");
  }
  if (threads == 0) throw Error("train config: threads must be positive");
}

std::vector<std::size_t> WriterSlot::all() const {
  std::vector<std::size_t> out{anchor};
  out.insert(out.end(), positives.begin(), positives.end());
  out.insert(out.end(), skilled.begin(), skilled.end());
  out.insert(out.end(), random.begin(), random.end());
  return out;
}

std::size_t Batch::size() const noexcept {
  std::size_t n = 0;
  for (const auto& w : writers) n += 1 + w.positives.size() + w.skilled.size() + w.random.size();
  return n;
}

Batch sample_batch(std::span<const Sample> samples, const BatchShape& shape, std::uint64_t seed) {
  const auto pools = pool_by_writer(samples);
  std::string deficient;
  for (const auto& [writer, pool] : pools) {
    if (pool.genuine.size() < shape.genuine || pool.skilled.size() < shape.skilled) {
      deficient += (deficient.empty() ? "" : ", ") + writer + " (" +
                   std::to_string(pool.genuine.size()) + " genuine, " +
                   std::to_string(pool.skilled.size()) + " skilled)";
    }
  }
  if (!deficient.empty()) {
    throw Error("sample_batch: writers with too few samples (need " +
                std::to_string(shape.genuine) + " genuine and " + std::to_string(shape.skilled) +
                " skilled): " + deficient);
  }
  const std::size_t needed = shape.writers + shape.random;
  if (pools.size() < needed) {
    throw Error("sample_batch: need at least " + std::to_string(needed) + " training writers, got " +
                std::to_string(pools.size()));
  }

  std::mt19937_64 rng(seed);
  std::vector<std::string> writers;
  for (const auto& entry : pools) writers.push_back(entry.first);
  shuffle_in_place(writers, rng);
  const std::vector<std::string> others(writers.begin() + static_cast<std::ptrdiff_t>(shape.writers),
                                        writers.end());

  Batch batch;
  for (std::size_t u = 0; u < shape.writers; ++u) {
    const auto& pool = pools.at(writers[u]);
    WriterSlot slot;
    slot.writer_id = writers[u];
    auto genuine = pool.genuine;
    shuffle_in_place(genuine, rng);
    slot.anchor = genuine[0];
    slot.positives.assign(genuine.begin() + 1, genuine.begin() + static_cast<std::ptrdiff_t>(shape.genuine));
    auto skilled = pool.skilled;
    shuffle_in_place(skilled, rng);
    slot.skilled.assign(skilled.begin(), skilled.begin() + static_cast<std::ptrdiff_t>(shape.skilled));
    auto donors = others;
    shuffle_in_place(donors, rng);
    for (std::size_t j = 0; j < shape.random; ++j) {
      const auto& donor = pools.at(donors[j]).genuine;
      slot.random.push_back(donor[rng() % donor.size()]);
    }
    batch.writers.push_back(std::move(slot));
  }
  return batch;
}

std::size_t steps_per_epoch(std::span<const Sample> samples, const BatchShape& shape) {
  std::size_t genuine = 0;
  for (const auto& s : samples) genuine += s.kind == signal::SampleKind::genuine ? 1 : 0;
  return std::max<std::size_t>(1, (genuine + shape.writers - 1) / shape.writers);
}

double triplet_term(double d_pos, double d_neg, double margin) {
  return std::max(0.0, d_pos + margin - d_neg);
}

double writer_triplet_loss(std::span<const double> terms) {
  double total = 0.0;
  std::size_t active = 0;
  for (double t : terms) {
    total += t;
    active += t > 0.0 ? 1 : 0;
  }
  return total / static_cast<double>(active + 1);
}

double triplet_loss(const std::vector<std::vector<double>>& writer_terms) {
  if (writer_terms.empty()) throw Error("triplet_loss: no writers");
  double total = 0.0;
  for (const auto& terms : writer_terms) total += writer_triplet_loss(terms);
  return total / static_cast<double>(writer_terms.size());
}

double intra_loss(const std::vector<std::vector<double>>& writer_distances) {
  if (writer_distances.empty()) throw Error("intra_loss: no writers");
  double total = 0.0;
  for (const auto& d : writer_distances) {
    if (d.empty()) throw Error("intra_loss: a writer has no genuine distances");
    double s = 0.0;
    for (double v : d) s += v;
    total += s / static_cast<double>(d.size());
  }
  return total / static_cast<double>(writer_distances.size());
}

double bce_loss(std::span<const double> logits, std::span<const double> labels) {
  if (logits.size() != labels.size() || logits.empty()) {
    throw Error("bce_loss: logits and labels must be non-empty and of equal length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw Error("bce_loss: labels must be 0 or 1");
    const double z = logits[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return total / static_cast<double>(logits.size());
}

LossBreakdown combine(double triplet, double intra, double bce, double lambda) {
  return {triplet, intra, bce, triplet + lambda * intra + bce};
}

WriterTerms writer_objective(ad::Tape& tape, const net::BoundParams& params,
                             const net::ModelConfig& model, const WriterSlot& slot,
                             std::span<const Sample> samples, const TrainConfig& config,
                             std::size_t writers_in_batch, std::size_t batch_size) {
  std::vector<Var> temporal;
  std::vector<Var> logits;
  std::vector<double> labels;
  for (std::size_t idx : slot.all()) {
    const Sample& s = samples[idx];
    const bool genuine_label = s.kind == signal::SampleKind::genuine && s.writer_id == slot.writer_id;
    const net::ForwardVars f = net::forward(tape, params, model, s.features);
    temporal.push_back(f.temporal);
    logits.push_back(f.logit);
    labels.push_back(genuine_label ? 1.0 : 0.0);
  }
  const Var anchor = temporal[0];
  const std::size_t n_pos = slot.positives.size();
  const std::size_t n_neg = slot.skilled.size() + slot.random.size();

  std::vector<Var> d_pos, d_neg;
  for (std::size_t i = 0; i < n_pos; ++i)
    d_pos.push_back(ad::soft_dtw(anchor, temporal[1 + i], config.gamma));
  for (std::size_t j = 0; j < n_neg; ++j)
    d_neg.push_back(ad::soft_dtw(anchor, temporal[1 + n_pos + j], config.gamma));

  std::vector<Var> terms;
  std::size_t active = 0;
  for (const Var& dp : d_pos) {
    for (const Var& dn : d_neg) {
      const Var l = ad::relu(ad::add_scalar(ad::sub(dp, dn), config.margin));
      active += l.scalar() > 0.0 ? 1 : 0;
      terms.push_back(l);
    }
  }
  const Var tri = ad::scale(sum_all(tape, terms), 1.0 / static_cast<double>(active + 1));
  const Var intra = n_pos == 0 ? tape.constant(Matrix(1, 1, 0.0))
                               : ad::scale(sum_all(tape, d_pos), 1.0 / static_cast<double>(n_pos));
  const Var bce = ad::scale(ad::bce_with_logits(ad::concat_cols(logits), labels),
                            static_cast<double>(logits.size()));

  const double nw = static_cast<double>(writers_in_batch);
  const std::vector<Var> parts{ad::scale(tri, 1.0 / nw), ad::scale(intra, config.lambda / nw),
                               ad::scale(bce, 1.0 / static_cast<double>(batch_size))};
  return {sum_all(tape, parts), tri.scalar(), intra.scalar(), bce.scalar()};
}

ad::Var batch_objective(ad::Tape& tape, std::span<const ad::Var> leaves,
                        const net::ModelConfig& model, const Batch& batch,
                        std::span<const Sample> samples, const TrainConfig& config,
                        LossBreakdown* parts) {
  const net::BoundParams bound = net::bind(model, leaves);
  const std::size_t size = batch.size();
  std::vector<Var> objectives;
  double tri = 0.0, intra = 0.0, bce = 0.0;
  for (const auto& slot : batch.writers) {
    const WriterTerms t =
        writer_objective(tape, bound, model, slot, samples, config, batch.writers.size(), size);
    objectives.push_back(t.objective);
    tri += t.triplet;
    intra += t.intra;
    bce += t.bce_sum;
  }
  if (parts != nullptr) {
    const double nw = static_cast<double>(batch.writers.size());
    *parts = combine(tri / nw, intra / nw, bce / static_cast<double>(size), config.lambda);
  }
  return sum_all(tape, objectives);
}

StepResult loss_and_grad(const net::ModelParams& params, const Batch& batch,
                         std::span<const Sample> samples, const TrainConfig& config) {
  if (batch.writers.empty()) throw Error("loss_and_grad: empty batch");
  const std::size_t n_writers = batch.writers.size();
  const std::size_t size = batch.size();
  std::vector<WriterTerms> terms(n_writers);
  std::vector<std::vector<Matrix>> grads(n_writers);
  std::vector<std::exception_ptr> errors(n_writers);

  auto run_writer = [&](std::size_t u) {
    try {
      ad::Tape tape;
      const auto leaves = net::place(tape, params, true);
      const net::BoundParams bound = net::bind(params.config, leaves);
      terms[u] = writer_objective(tape, bound, params.config, batch.writers[u], samples, config,
                                  n_writers, size);
      const std::string& w = batch.writers[u].writer_id;
      check_finite(terms[u].triplet, "L_tri", w);
      check_finite(terms[u].intra, "L_intra", w);
      check_finite(terms[u].bce_sum, "L_BCE", w);
      tape.backward(terms[u].objective);
      grads[u].reserve(leaves.size());
      for (const Var& leaf : leaves) grads[u].push_back(tape.grad(leaf));
    } catch (...) {
      errors[u] = std::current_exception();
    }
  };

  const std::size_t workers = std::min(config.threads, n_writers);
  if (workers <= 1) {
    for (std::size_t u = 0; u < n_writers; ++u) run_writer(u);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t u = w; u < n_writers; u += workers) run_writer(u);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  StepResult result;
  result.grads = std::move(grads[0]);
  for (std::size_t u = 1; u < n_writers; ++u) {
    for (std::size_t k = 0; k < result.grads.size(); ++k) {
      auto dst = result.grads[k].values();
      const auto src = grads[u][k].values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  for (std::size_t k = 0; k < result.grads.size(); ++k) {
    if (!result.grads[k].all_finite()) {
      throw Error("non-finite gradient for parameter '" + params.arrays.names[k] + "'");
    }
  }
  double tri = 0.0, intra = 0.0, bce = 0.0;
  for (const auto& t : terms) {
    tri += t.triplet;
    intra += t.intra;
    bce += t.bce_sum;
  }
  const double nw = static_cast<double>(n_writers);
  result.loss = combine(tri / nw, intra / nw, bce / static_cast<double>(size), config.lambda);
  return result;
}

AdamW::AdamW(const TrainConfig& config, const ad::ParamSet& params)
    : beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps),
      weight_decay_(config.weight_decay) {
  for (const auto& p : params.values) {
    m_.emplace_back(p.rows(), p.cols(), 0.0);
    v_.emplace_back(p.rows(), p.cols(), 0.0);
  }
}

void AdamW::step(ad::ParamSet& params, std::span<const Matrix> grads, double lr) {
  if (grads.size() != params.count() || m_.size() != params.count()) {
    throw Error("AdamW: gradient count does not match parameter count");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < grads.size(); ++k) {
    auto p = params.values[k].values();
    const auto g = grads[k].values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    if (g.size() != p.size()) throw Error("AdamW: gradient shape mismatch for " + params.names[k]);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] *= 1.0 - lr * weight_decay_;
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total, double lr_start, double lr_end) {
  if (total <= 1) return lr_start;
  const double progress = static_cast<double>(std::min(step, total - 1)) /
                          static_cast<double>(total - 1);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<double> TrainResult::epoch_means() const {
  std::vector<double> means;
  if (steps_per_epoch == 0) return means;
  for (std::size_t start = 0; start < history.size(); start += steps_per_epoch) {
    const std::size_t end = std::min(history.size(), start + steps_per_epoch);
    double s = 0.0;
    for (std::size_t i = start; i < end; ++i) s += history[i].loss.total;
    means.push_back(s / static_cast<double>(end - start));
  }
  return means;
}

TrainResult train(std::span<const Sample> samples, const net::ModelConfig& model,
                  const TrainConfig& config, std::uint64_t seed, const TrainHooks& hooks) {
  config.validate();
  model.validate();
  for (const auto& s : samples) {
    if (s.features.channels() != model.channels) {
      throw Error("train: sample of writer '" + s.writer_id + "' has " +
                  std::to_string(s.features.channels()) + " channels, model expects " +
                  std::to_string(model.channels));
    }
    if (s.features.length() < net::kMinSequenceLength) {
      throw Error("train: sample of writer '" + s.writer_id + "' is shorter than " +
                  std::to_string(net::kMinSequenceLength) + " timesteps");
    }
  }
  // Fails early on deficient writers.
  (void)sample_batch(samples, config.batch, mix_seed(seed, 1));

  TrainResult result{net::init_params(model, seed), {}, steps_per_epoch(samples, config.batch)};
  const std::size_t total_steps = config.epochs * result.steps_per_epoch;
  AdamW optimizer(config, result.params.arrays);

  if (hooks.loss_log != nullptr) {
    *hooks.loss_log << "step,lr,L_tri,L_intra,L_BCE,total\n" << std::setprecision(12);
  }
  for (std::size_t step = 0; step < total_steps; ++step) {
    const Batch batch = sample_batch(samples, config.batch, mix_seed(seed, step + 1));
    StepResult r;
    try {
      r = loss_and_grad(result.params, batch, samples, config);
    } catch (const Error& e) {
      throw Error("training aborted at step " + std::to_string(step) + ": " + e.what());
    }
    const double lr = cosine_lr(step, total_steps, config.lr_start, config.lr_end);
    optimizer.step(result.params.arrays, r.grads, lr);
    result.history.push_back({step, lr, r.loss});
    if (hooks.loss_log != nullptr) {
      *hooks.loss_log << step << ',' << lr << ',' << r.loss.triplet << ',' << r.loss.intra << ','
                      << r.loss.bce << ',' << r.loss.total << '\n';
    }
    if ((step + 1) % result.steps_per_epoch == 0 && hooks.on_epoch) {
      hooks.on_epoch((step + 1) / result.steps_per_epoch, result.params);
    }
  }
  return result;
}

std::vector<Sample> prepare_samples(std::span<const signal::RawTrace> traces,
                                    const signal::PreprocessOptions& options) {
  std::vector<Sample> out;
  out.reserve(traces.size());
  for (const auto& t : traces) out.push_back({t.writer_id, t.kind, signal::preprocess(t, options)});
  return out;
}

}  // namespace spectrum::train
