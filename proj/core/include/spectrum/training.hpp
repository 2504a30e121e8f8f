#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "spectrum/diff_engine.hpp"
#include "spectrum/network.hpp"
#include "spectrum/signal_pipeline.hpp"

namespace spectrum::train {

/// Per-writer composition of a batch.
struct BatchShape {
  std::size_t writers = 4;
  std::size_t genuine = 5;  ///< anchor plus genuine - 1 positives
  std::size_t skilled = 5;
  std::size_t random = 5;  ///< genuines of other writers, one writer each

  [[nodiscard]] std::size_t per_writer() const noexcept { return genuine + skilled + random; }
  [[nodiscard]] std::size_t size() const noexcept { return writers * per_writer(); }
};

struct TrainConfig {
  std::size_t epochs = 40;
  double lr_start = 5e-4;
  double lr_end = 5e-7;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda = 0.01;  ///< weight of the intra-writer term
  double gamma = 5.0;    ///< soft-DTW smoothing
  double margin = 1.0;   ///< triplet margin
  BatchShape batch;
  std::size_t threads = 1;

  /// Throws spectrum::Error on non-positive or inconsistent settings.
  void validate() const;
};

/// A preprocessed training sample.
struct Sample {
  std::string writer_id;
  signal::SampleKind kind = signal::SampleKind::genuine;
  signal::FeatureSequence features;
};

/// Indices into the sample list for one writer of a batch.
struct WriterSlot {
  std::string writer_id;
  std::size_t anchor = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> skilled;
  std::vector<std::size_t> random;

  /// anchor, positives, skilled, random in that order.
  [[nodiscard]] std::vector<std::size_t> all() const;
};

struct Batch {
  std::vector<WriterSlot> writers;

  [[nodiscard]] std::size_t size() const noexcept;
};

/// Draws writers, anchors, positives and forgeries. Deterministic given seed.
Batch sample_batch(std::span<const Sample> samples, const BatchShape& shape, std::uint64_t seed);

/// Number of optimizer steps per epoch: ceil(genuine samples / writers), so each
/// genuine sample serves as an anchor once per epoch on average.
std::size_t steps_per_epoch(std::span<const Sample> samples, const BatchShape& shape);

// Scalar forms of the loss terms.
double triplet_term(double d_pos, double d_neg, double margin);
/// Sum of one writer's triplet terms over (number of positive terms + 1).
double writer_triplet_loss(std::span<const double> terms);
/// Mean over writers of writer_triplet_loss.
double triplet_loss(const std::vector<std::vector<double>>& writer_terms);
/// Mean over writers of the mean anchor-to-positive distance.
double intra_loss(const std::vector<std::vector<double>>& writer_distances);
double bce_loss(std::span<const double> logits, std::span<const double> labels);

struct LossBreakdown {
  double triplet = 0.0;
  double intra = 0.0;
  double bce = 0.0;
  double total = 0.0;
};

/// total = triplet + lambda * intra + bce.
LossBreakdown combine(double triplet, double intra, double bce, double lambda);

/// One writer's contribution to the batch objective, on the tape:
/// triplet / N_w + lambda * intra / N_w + (BCE summed over its samples) / batch size.
struct WriterTerms {
  ad::Var objective;
  double triplet = 0.0;
  double intra = 0.0;
  double bce_sum = 0.0;
};

WriterTerms writer_objective(ad::Tape& tape, const net::BoundParams& params,
                             const net::ModelConfig& model, const WriterSlot& slot,
                             std::span<const Sample> samples, const TrainConfig& config,
                             std::size_t writers_in_batch, std::size_t batch_size);

/// The whole batch objective on a single tape, for gradient audits.
ad::Var batch_objective(ad::Tape& tape, std::span<const ad::Var> leaves,
                        const net::ModelConfig& model, const Batch& batch,
                        std::span<const Sample> samples, const TrainConfig& config,
                        LossBreakdown* parts = nullptr);

/// Loss and gradient of the batch objective. Writers may run on separate
/// threads; gradients are reduced in writer order so the result does not
/// depend on the thread count.
struct StepResult {
  LossBreakdown loss;
  std::vector<Matrix> grads;
};

StepResult loss_and_grad(const net::ModelParams& params, const Batch& batch,
                         std::span<const Sample> samples, const TrainConfig& config);

/// Decoupled weight decay Adam.
class AdamW {
 public:
  AdamW(const TrainConfig& config, const ad::ParamSet& params);
  void step(ad::ParamSet& params, std::span<const Matrix> grads, double lr);
  [[nodiscard]] std::size_t steps_taken() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

/// Cosine decay from lr_start at step 0 to lr_end at step total - 1.
double cosine_lr(std::size_t step, std::size_t total, double lr_start, double lr_end);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

struct TrainResult {
  net::ModelParams params;
  std::vector<StepRecord> history;
  std::size_t steps_per_epoch = 0;

  /// Mean total loss of each epoch.
  [[nodiscard]] std::vector<double> epoch_means() const;
};

struct TrainHooks {
  /// Receives the CSV header and one row per step when set.
  std::ostream* loss_log = nullptr;
  /// Called after every epoch with the 1-based epoch number.
  std::function<void(std::size_t, const net::ModelParams&)> on_epoch;
};

/// Full optimisation run. Deterministic given seed, data and config.
/// Throws spectrum::Error naming the loss term if any term becomes non-finite.
TrainResult train(std::span<const Sample> samples, const net::ModelConfig& model,
                  const TrainConfig& config, std::uint64_t seed, const TrainHooks& hooks = {});

/// Preprocesses traces into training samples.
std::vector<Sample> prepare_samples(std::span<const signal::RawTrace> traces,
                                    const signal::PreprocessOptions& options = {});

}  // namespace spectrum::train
