#include "spectrum/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <string_view>

#include "spectrum/error.hpp"
#include "spectrum/spectral_core.hpp"

namespace spectrum::net {
namespace {

using ad::Var;
using Shape = std::pair<std::size_t, std::size_t>;

std::string block_prefix(std::size_t b) { return "block" + std::to_string(b) + "."; }

// Sequential reader over the leaves in declaration order.
class LeafCursor {
 public:
  LeafCursor(std::span<const Var> leaves, const std::vector<std::pair<std::string, Shape>>& layout)
      : leaves_(leaves), layout_(layout) {
    if (leaves.size() != layout.size()) {
      throw Error("bind: expected " + std::to_string(layout.size()) + " parameter arrays, got " +
                  std::to_string(leaves.size()));
    }
  }
  Var next() {
    const auto& [name, shape] = layout_[pos_];
    const Var v = leaves_[pos_++];
    if (v.rows() != shape.first || v.cols() != shape.second) {
      throw Error("bind: parameter '" + name + "' has shape " + std::to_string(v.rows()) + "x" +
                  std::to_string(v.cols()) + ", expected " + std::to_string(shape.first) + "x" +
                  std::to_string(shape.second));
    }
    return v;
  }

 private:
  std::span<const Var> leaves_;
  const std::vector<std::pair<std::string, Shape>>& layout_;
  std::size_t pos_ = 0;
};

Matrix uniform(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

// Square orthogonal matrix from modified Gram-Schmidt on Gaussian rows.
Matrix orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix q(n, n);
  for (double& v : q.values()) v = dist(rng);
  for (std::size_t i = 0; i < n; ++i) {
    auto ri = q.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      const auto rj = q.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += ri[k] * rj[k];
      for (std::size_t k = 0; k < n; ++k) ri[k] -= dot * rj[k];
    }
    double norm = 0.0;
    for (double v : ri) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : ri) v /= norm;
  }
  return q;
}

}  // namespace

void ModelConfig::validate() const {
  if (channels == 0) throw Error("model config: channels must be positive");
  if (width == 0 || embed_dim == 0) throw Error("model config: widths must be positive");
  if (scales.empty()) throw Error("model config: need at least one interactor scale");
  for (std::size_t l : scales)
    if (l < 2) throw Error("model config: filter scales must be at least 2");
  if (heads == 0 || width % heads != 0) {
    throw Error("model config: width " + std::to_string(width) + " is not divisible by " +
                std::to_string(heads) + " heads");
  }
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.width;
  std::vector<std::pair<std::string, Shape>> out;
  auto push = [&](std::string name, std::size_t r, std::size_t k) {
    out.emplace_back(std::move(name), Shape{r, k});
  };
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    const std::string conv = "conv" + std::to_string(b + 1) + ".";
    push(conv + "weight", d, (b == 0 ? c.channels : d) * kConvKernel);
    push(conv + "bias", d, 1);
    const std::string pre = block_prefix(b);
    for (std::size_t s = 0; s < c.scales.size(); ++s) {
      const std::string sp = pre + "scale" + std::to_string(s) + ".";
      push(sp + "even_weight", d, d);
      push(sp + "even_bias", d, 1);
      push(sp + "filter", d, 2 * c.scales[s]);
      push(sp + "post_weight", d, d);
      push(sp + "post_bias", d, 1);
    }
    for (const char* m : {"q", "k", "v", "o"}) {
      push(pre + "attn.w" + m, d, d);
      push(pre + "attn.b" + m, 1, d);
    }
    push(pre + "gate.weight", d, 2 * d);
    push(pre + "gate.bias", 1, d);
  }
  push("gru.w_ih", 3 * d, d);
  push("gru.w_hh", 3 * d, d);
  push("gru.b_ih", 1, 3 * d);
  push("gru.b_hh", 1, 3 * d);
  push("pool.weight", 1, d);
  push("pool.bias", 1, 1);
  push("temporal_head.w1", d, d);
  push("temporal_head.b1", 1, d);
  push("temporal_head.w2", c.embed_dim, d);
  push("temporal_head.b2", 1, c.embed_dim);
  push("frequency_head.w1", d, d);
  push("frequency_head.b1", 1, d);
  push("frequency_head.w2", 1, d);
  push("frequency_head.b2", 1, 1);
  return out;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params{config, {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> filter_noise(0.0, 0.02);
  const std::size_t d = config.width;
  for (const auto& [name, shape] : parameter_layout(config)) {
    const auto [rows, cols] = shape;
    const auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() &&
             name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    Matrix m;
    if (ends_with(".filter")) {
      m = Matrix(rows, cols);
      const std::size_t l = cols / 2;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < l; ++k) {
          m(r, k) = 1.0 + filter_noise(rng);
          m(r, l + k) = filter_noise(rng);
        }
    } else if (ends_with("gate.bias")) {
      m = Matrix(rows, cols, 0.0);
    } else if (name == "gru.w_hh") {
      m = Matrix(rows, cols);
      for (std::size_t g = 0; g < 3; ++g) {
        const Matrix q = orthogonal(d, rng);
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t k = 0; k < d; ++k) m(g * d + r, k) = q(r, k);
      }
    } else if (name.rfind("conv", 0) == 0) {
      const std::size_t fan_in = (name[4] == '1' ? config.channels : d) * kConvKernel;
      m = uniform(rows, cols, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
    } else if (name.rfind("gru.", 0) == 0) {
      m = uniform(rows, cols, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    } else if (ends_with("gate.weight")) {
      m = uniform(rows, cols, 1.0 / std::sqrt(static_cast<double>(2 * d)), rng);
    } else {
      m = uniform(rows, cols, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    }
    params.arrays.add(name, std::move(m));
  }
  return params;
}

std::vector<Var> place(ad::Tape& tape, const ModelParams& params, bool trainable) {
  std::vector<Var> leaves;
  leaves.reserve(params.arrays.count());
  for (const auto& v : params.arrays.values)
    leaves.push_back(trainable ? tape.variable(v) : tape.constant(v));
  return leaves;
}

BoundParams bind(const ModelConfig& config, std::span<const Var> leaves) {
  const auto layout = parameter_layout(config);
  LeafCursor cur(leaves, layout);
  BoundParams p;
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    ConvParams& conv = b == 0 ? p.conv1 : p.conv2;
    conv.weight = cur.next();
    conv.bias = cur.next();
    BlockParams block;
    for (std::size_t s = 0; s < config.scales.size(); ++s) {
      ScaleParams sp;
      sp.even_weight = cur.next();
      sp.even_bias = cur.next();
      sp.filter = cur.next();
      sp.post_weight = cur.next();
      sp.post_bias = cur.next();
      block.interactor.scales.push_back(sp);
    }
    auto& a = block.interactor.attention;
    for (Var* v : {&a.wq, &a.bq, &a.wk, &a.bk, &a.wv, &a.bv, &a.wo, &a.bo}) *v = cur.next();
    block.fusion.weight = cur.next();
    block.fusion.bias = cur.next();
    p.blocks.push_back(std::move(block));
  }
  p.gru_w_ih = cur.next();
  p.gru_w_hh = cur.next();
  p.gru_b_ih = cur.next();
  p.gru_b_hh = cur.next();
  p.pool_weight = cur.next();
  p.pool_bias = cur.next();
  for (HeadParams* h : {&p.temporal_head, &p.frequency_head}) {
    h->w1 = cur.next();
    h->b1 = cur.next();
    h->w2 = cur.next();
    h->b2 = cur.next();
  }
  return p;
}

std::pair<Var, Var> split_even_odd(Var x) {
  const std::size_t len = x.cols();
  if (len < 2) throw Error("split_even_odd: need at least 2 timesteps, got " + std::to_string(len));
  const std::size_t half = (len + 1) / 2;
  const std::size_t last_odd = len % 2 == 0 ? len - 1 : len - 2;
  std::vector<std::size_t> even, odd;
  for (std::size_t i = 0; i < half; ++i) {
    even.push_back(2 * i);
    odd.push_back(std::min(2 * i + 1, last_odd));
  }
  return {ad::gather_cols(x, std::move(even)), ad::gather_cols(x, std::move(odd))};
}

Var interleave(Var even, Var odd, std::size_t length) {
  if (!even.value().same_shape(odd.value())) throw Error("interleave: halves differ in shape");
  const std::size_t half = even.cols();
  if (length > 2 * half || length + 1 < 2 * half) {
    throw Error("interleave: length " + std::to_string(length) + " does not match halves of " +
                std::to_string(half));
  }
  std::vector<std::size_t> index(length);
  for (std::size_t p = 0; p < length; ++p) index[p] = p % 2 == 0 ? p / 2 : half + p / 2;
  const std::array<Var, 2> parts{even, odd};
  return ad::gather_cols(ad::concat_cols(parts), std::move(index));
}

Var conv1x1(Var x, Var weight, Var bias) { return ad::add_col(ad::matmul(weight, x), bias); }

Var spectral_filter(Var x, Var packed_weights) {
  const std::size_t n = x.cols();
  const Var spec = ad::rdft(x);
  const Var w = ad::interpolate_weights(packed_weights, spectral::half_bins(n));
  return ad::irdft(ad::spectral_modulate(spec, w, n), n);
}

Var single_scale_interactor(Var x, const ScaleParams& p) {
  const auto [even, odd] = split_even_odd(x);
  const Var y_even = conv1x1(even, p.even_weight, p.even_bias);
  const Var y_odd = spectral_filter(odd, p.filter);
  return conv1x1(interleave(y_even, y_odd, x.cols()), p.post_weight, p.post_bias);
}

Var multi_scale_interactor(Var x, const InteractorParams& p, std::size_t heads) {
  if (p.scales.empty()) throw Error("multi_scale_interactor: no scales");
  std::vector<Var> outs;
  outs.reserve(p.scales.size());
  for (const auto& s : p.scales) outs.push_back(single_scale_interactor(x, s));
  const Var rows = ad::transpose(ad::mean_of(outs));
  const Var attended = ad::multi_head_attention(rows, p.attention, heads);
  return ad::transpose(ad::add(rows, attended));
}

FusionResult self_gated_fusion(Var f_time, Var f_freq, const FusionParams& p, GateKind kind) {
  if (!f_time.value().same_shape(f_freq.value())) {
    throw Error("self_gated_fusion: temporal and frequency features differ in shape");
  }
  const std::array<Var, 2> both{f_time, f_freq};
  const Var logits = ad::linear(ad::concat_cols(both), p.weight, p.bias);
  const Var gate = kind == GateKind::sigmoid ? ad::sigmoid(logits) : ad::softmax_rows(logits);
  const Var complement = ad::add_scalar(ad::scale(gate, -1.0), 1.0);
  return {ad::add(ad::mul(f_time, gate), ad::mul(f_freq, complement)), gate};
}

BlockResult m3i_block(Var x, const BlockParams& p, const ModelConfig& config) {
  const Var freq = multi_scale_interactor(x, p.interactor, config.heads);
  const FusionResult f =
      self_gated_fusion(ad::transpose(x), ad::transpose(freq), p.fusion, config.gate);
  return {ad::transpose(f.fused), freq, f.gate};
}

Var conv_module(Var x, const ConvParams& p) {
  if (x.cols() < kConvKernel) {
    throw Error("conv_module: need at least " + std::to_string(kConvKernel) + " timesteps, got " +
                std::to_string(x.cols()));
  }
  const Var c = ad::conv1d(x, p.weight, p.bias, kConvKernel, 1, kConvKernel / 2);
  return ad::avg_pool_cols(ad::tanh(c), 2, 2);
}

Var selective_pooling(Var seq, Var weight, Var bias) {
  const Var scores = ad::transpose(ad::linear(seq, weight, bias));
  return ad::matmul(ad::softmax_rows(scores), seq);
}

ForwardVars forward(ad::Tape& tape, const BoundParams& p, const ModelConfig& config,
                    const signal::FeatureSequence& features) {
  if (features.length() < kMinSequenceLength) {
    throw Error("forward: sequence length " + std::to_string(features.length()) +
                " is below the minimum of " + std::to_string(kMinSequenceLength));
  }
  if (features.channels() != config.channels) {
    throw Error("forward: input has " + std::to_string(features.channels()) +
                " channels, model expects " + std::to_string(config.channels));
  }
  ForwardVars out;
  const Var input = ad::transpose(tape.constant(features.values));
  const BlockResult first = m3i_block(conv_module(input, p.conv1), p.blocks[0], config);
  const BlockResult second = m3i_block(conv_module(first.fused, p.conv2), p.blocks[1], config);
  out.gates = {first.gate, second.gate};

  const Var hidden = ad::gru(ad::transpose(second.fused), p.gru_w_ih, p.gru_w_hh, p.gru_b_ih,
                             p.gru_b_hh);
  const auto& th = p.temporal_head;
  out.temporal = ad::linear(ad::tanh(ad::linear(hidden, th.w1, th.b1)), th.w2, th.b2);

  out.frequency = selective_pooling(ad::transpose(second.freq), p.pool_weight, p.pool_bias);
  const auto& fh = p.frequency_head;
  out.logit = ad::linear(ad::tanh(ad::linear(out.frequency, fh.w1, fh.b1)), fh.w2, fh.b2);
  return out;
}

Embeddings embed(const signal::FeatureSequence& features, const ModelParams& params,
                 GateSummary* gates) {
  ad::Tape tape;
  const auto leaves = place(tape, params, false);
  const BoundParams bound = net::bind(params.config, leaves);
  const ForwardVars f = forward(tape, bound, params.config, features);
  Embeddings e;
  e.temporal = f.temporal.value();
  const auto freq = f.frequency.value().values();
  e.frequency.assign(freq.begin(), freq.end());
  e.logit = f.logit.scalar();
  if (gates != nullptr) {
    for (const Var& g : f.gates) {
      for (double v : g.value().values()) gates->sum += v;
      gates->count += g.value().size();
    }
  }
  return e;
}

double gate_statistics(const ModelParams& params,
                       std::span<const signal::FeatureSequence> samples) {
  if (samples.empty()) throw Error("gate_statistics: no samples");
  GateSummary summary;
  for (const auto& s : samples) embed(s, params, &summary);
  return summary.mean();
}

}  // namespace spectrum::net
