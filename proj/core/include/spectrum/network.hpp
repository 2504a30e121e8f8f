#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "spectrum/ad_ops.hpp"
#include "spectrum/diff_engine.hpp"
#include "spectrum/signal_pipeline.hpp"

namespace spectrum::net {

enum class GateKind { sigmoid, softmax };

inline constexpr std::size_t kConvKernel = 5;
inline constexpr std::size_t kMinSequenceLength = 20;
inline constexpr std::size_t kBlockCount = 2;

/// Hyperparameters fixing every array shape of the model.
struct ModelConfig {
  std::size_t channels = signal::kFullChannelCount;  ///< input time functions
  std::size_t width = 64;                            ///< embedding width d
  std::size_t embed_dim = 64;                        ///< temporal feature width
  std::vector<std::size_t> scales = {16, 32, 64};    ///< filter length per interactor
  std::size_t heads = 4;
  GateKind gate = GateKind::sigmoid;

  [[nodiscard]] std::size_t scale_count() const noexcept { return scales.size(); }
  /// Throws spectrum::Error on inconsistent settings.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// All learnable arrays, in declaration order, plus the config that shaped them.
struct ModelParams {
  ModelConfig config;
  ad::ParamSet arrays;

  [[nodiscard]] std::size_t parameter_count() const noexcept { return arrays.total_size(); }
};

/// Fan-in uniform init for convolutions and linears, orthogonal GRU recurrent
/// blocks, zero gate bias, and complex filters at 1+0j plus N(0, 0.02) noise.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Names and shapes in declaration order; init_params and checkpoints follow it.
std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> parameter_layout(
    const ModelConfig& config);

struct ConvParams {
  ad::Var weight, bias;
};

struct ScaleParams {
  ad::Var even_weight, even_bias;  ///< 1x1 conv on the even timesteps
  ad::Var filter;                  ///< packed complex weights, d x 2l
  ad::Var post_weight, post_bias;  ///< 1x1 conv after interleaving
};

struct InteractorParams {
  std::vector<ScaleParams> scales;
  ad::AttentionWeights attention;
};

struct FusionParams {
  ad::Var weight;  ///< d x 2d
  ad::Var bias;    ///< 1 x d
};

struct BlockParams {
  InteractorParams interactor;
  FusionParams fusion;
};

struct HeadParams {
  ad::Var w1, b1, w2, b2;
};

/// Parameter leaves on one tape, grouped by role.
struct BoundParams {
  ConvParams conv1, conv2;
  std::vector<BlockParams> blocks;
  ad::Var gru_w_ih, gru_w_hh, gru_b_ih, gru_b_hh;
  ad::Var pool_weight, pool_bias;
  HeadParams temporal_head, frequency_head;
};

/// Places every array on the tape (as variables when `trainable`, else constants).
std::vector<ad::Var> place(ad::Tape& tape, const ModelParams& params, bool trainable);
BoundParams bind(const ModelConfig& config, std::span<const ad::Var> leaves);

/// Even columns and odd columns of x (d x L). For odd L the odd half repeats
/// its last column so both halves have ceil(L/2) columns.
std::pair<ad::Var, ad::Var> split_even_odd(ad::Var x);
/// Inverse of split_even_odd for a source of `length` columns.
ad::Var interleave(ad::Var even, ad::Var odd, std::size_t length);

ad::Var conv1x1(ad::Var x, ad::Var weight, ad::Var bias);
/// Learnable global filter on the rows of x (d x N).
ad::Var spectral_filter(ad::Var x, ad::Var packed_weights);

ad::Var single_scale_interactor(ad::Var x, const ScaleParams& p);
/// Mean of the per-scale interactors, then residual multi-head self-attention.
ad::Var multi_scale_interactor(ad::Var x, const InteractorParams& p, std::size_t heads);

struct FusionResult {
  ad::Var fused;  ///< L x d
  ad::Var gate;   ///< L x d
};

/// f_time and f_freq are L x d; the gate weighs f_time, its complement f_freq.
FusionResult self_gated_fusion(ad::Var f_time, ad::Var f_freq, const FusionParams& p,
                               GateKind kind = GateKind::sigmoid);

struct BlockResult {
  ad::Var fused;  ///< d x L
  ad::Var freq;   ///< d x L, the interactor stream
  ad::Var gate;   ///< L x d
};

BlockResult m3i_block(ad::Var x, const BlockParams& p, const ModelConfig& config);

/// Conv(kernel 5, same padding) -> tanh -> mean pool (2, 2); d x ceil(L/2) out.
ad::Var conv_module(ad::Var x, const ConvParams& p);

/// Softmax attention over the rows of seq (L x d) -> 1 x d.
ad::Var selective_pooling(ad::Var seq, ad::Var weight, ad::Var bias);

struct ForwardVars {
  ad::Var temporal;   ///< L_T x embed_dim
  ad::Var frequency;  ///< 1 x d
  ad::Var logit;      ///< 1 x 1
  std::vector<ad::Var> gates;
};

ForwardVars forward(ad::Tape& tape, const BoundParams& p, const ModelConfig& config,
                    const signal::FeatureSequence& features);

/// Length of the temporal features for an input of `length` timesteps.
[[nodiscard]] constexpr std::size_t temporal_length(std::size_t length) noexcept {
  return ((length + 1) / 2 + 1) / 2;
}

struct Embeddings {
  Matrix temporal;                 ///< f_T
  std::vector<double> frequency;   ///< f_F
  double logit = 0.0;
};

struct GateSummary {
  double sum = 0.0;
  std::size_t count = 0;
  [[nodiscard]] double mean() const noexcept {
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
  }
};

/// Inference without gradient bookkeeping. Gate values are added to `gates` if given.
Embeddings embed(const signal::FeatureSequence& features, const ModelParams& params,
                 GateSummary* gates = nullptr);

/// Mean gate value over all timesteps, channels, blocks and samples. Values
/// above 0.5 mean the fusion leans on the temporal stream.
double gate_statistics(const ModelParams& params,
                       std::span<const signal::FeatureSequence> samples);

}  // namespace spectrum::net
