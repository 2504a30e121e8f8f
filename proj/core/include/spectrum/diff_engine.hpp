#pragma once

#include <any>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spectrum/matrix.hpp"

namespace spectrum::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] std::size_t rows() const { return value().rows(); }
  [[nodiscard]] std::size_t cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const;
};

/// Accumulates input gradients for node `id` from that node's output gradient.
using BackwardRule = void (*)(Tape& tape, std::size_t id);

/// Registers a primitive's backward rule under `name`. Re-registering a name
/// replaces the rule. Built-in primitives are registered on first use.
void register_primitive(std::string_view name, BackwardRule rule);
[[nodiscard]] bool is_registered(std::string_view name);

struct Node {
  std::string op;
  Matrix value;
  Matrix grad;  ///< empty until a gradient reaches the node
  std::vector<std::size_t> inputs;
  std::any aux;
  BackwardRule backward = nullptr;
  bool requires_grad = false;
};

/// Per-forward-pass record of primitive applications (a Wengert list).
/// Nodes are appended in evaluation order, so inputs always precede users.
class Tape {
 public:
  Var constant(Matrix value);
  Var variable(Matrix value);

  /// Appends a node produced by primitive `op`. Throws if `op` has no
  /// registered backward rule.
  Var record(std::string_view op, Matrix value, std::vector<std::size_t> inputs,
             std::any aux = {});

  /// Seeds d(root)/d(root) = 1 and runs every backward rule in reverse order.
  void backward(Var root);

  [[nodiscard]] const Node& node(std::size_t id) const { return nodes_[id]; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward root w.r.t. `v`; zeros if nothing reached it.
  [[nodiscard]] Matrix grad(Var v) const;

  /// Accumulation buffer for input `id`, zero-initialised on first access.
  Matrix& grad_buffer(std::size_t id);

 private:
  std::vector<Node> nodes_;
};

/// Named list of parameter arrays in a fixed declaration order.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Matrix> values;

  [[nodiscard]] std::size_t count() const noexcept { return values.size(); }
  [[nodiscard]] std::size_t total_size() const noexcept;
  [[nodiscard]] std::size_t index_of(std::string_view name) const;
  void add(std::string name, Matrix value);
};

/// Builds a scalar loss on `tape` from parameter leaves (one Var per array of
/// the ParamSet, same order).
using Program = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct ValueAndGrad {
  double loss = 0.0;
  std::vector<Matrix> grads;
};

ValueAndGrad value_and_grad(const Program& program, const ParamSet& params);

/// Evaluates the program without recording gradients.
double evaluate(const Program& program, const ParamSet& params);

struct GradReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::vector<double> per_param_max;  ///< same order as the ParamSet
  std::size_t coordinates_checked = 0;
};

/// Central-difference audit of reverse-mode gradients. Checks every coordinate
/// when the model has at most `min_coordinates`, otherwise a seeded random
/// subsample of that many coordinates. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8).
GradReport finite_diff_check(const Program& program, const ParamSet& params, double epsilon,
                             std::size_t min_coordinates = 200, std::uint64_t seed = 0);

}  // namespace spectrum::ad
