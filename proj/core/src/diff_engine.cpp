#include "spectrum/diff_engine.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <shared_mutex>
#include <unordered_map>

#include "spectrum/error.hpp"

namespace spectrum::ad {

// Defined alongside the primitives in ad_ops.cpp.
void register_builtin_primitives();

namespace {

struct Registry {
  std::shared_mutex mutex;
  std::unordered_map<std::string, BackwardRule> rules;
};

Registry& storage() {
  static Registry reg;
  return reg;
}

Registry& registry() {
  static std::once_flag builtins;
  std::call_once(builtins, [] { register_builtin_primitives(); });
  return storage();
}

// Leaves have no backward rule; their gradient is just read back.
void leaf_rule(Tape&, std::size_t) {}

}  // namespace

void register_primitive(std::string_view name, BackwardRule rule) {
  if (rule == nullptr) throw Error("register_primitive: null rule for '" + std::string(name) + "'");
  Registry& r = storage();
  std::unique_lock lock(r.mutex);
  r.rules[std::string(name)] = rule;
}

bool is_registered(std::string_view name) {
  Registry& r = registry();
  std::shared_lock lock(r.mutex);
  return r.rules.contains(std::string(name));
}

const Matrix& Var::value() const { return tape->node(id).value; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw Error("Var::scalar: node is not 1x1");
  return v[0];
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  n.backward = &leaf_rule;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  Node n;
  n.op = "variable";
  n.value = std::move(value);
  n.backward = &leaf_rule;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Matrix value, std::vector<std::size_t> inputs,
                 std::any aux) {
  BackwardRule rule = nullptr;
  {
    Registry& r = registry();
    std::shared_lock lock(r.mutex);
    auto it = r.rules.find(std::string(op));
    if (it == r.rules.end()) {
      throw Error("unregistered primitive '" + std::string(op) + "'");
    }
    rule = it->second;
  }
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  n.backward = rule;
  n.aux = std::move(aux);
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw Error("record: input node does not precede '" + n.op + "'");
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw Error("backward: root belongs to another tape");
  if (nodes_[root.id].value.size() != 1) throw Error("backward: root must be a scalar");
  for (auto& n : nodes_) n.grad = Matrix();
  grad_buffer(root.id)[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || n.inputs.empty()) continue;
    n.backward(*this, i);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

std::size_t ParamSet::total_size() const noexcept {
  std::size_t s = 0;
  for (const auto& v : values) s += v.size();
  return s;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw Error("unknown parameter '" + std::string(name) + "'");
}

void ParamSet::add(std::string name, Matrix value) {
  names.push_back(std::move(name));
  values.push_back(std::move(value));
}

ValueAndGrad value_and_grad(const Program& program, const ParamSet& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.count());
  for (const auto& v : params.values) leaves.push_back(tape.variable(v));
  const Var loss = program(tape, leaves);
  tape.backward(loss);
  ValueAndGrad out;
  out.loss = loss.scalar();
  out.grads.reserve(leaves.size());
  for (const Var& leaf : leaves) out.grads.push_back(tape.grad(leaf));
  return out;
}

double evaluate(const Program& program, const ParamSet& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.count());
  for (const auto& v : params.values) leaves.push_back(tape.constant(v));
  return program(tape, leaves).scalar();
}

GradReport finite_diff_check(const Program& program, const ParamSet& params, double epsilon,
                             std::size_t min_coordinates, std::uint64_t seed) {
  if (!(epsilon > 0.0)) throw Error("finite_diff_check: epsilon must be positive");
  const ValueAndGrad analytic = value_and_grad(program, params);

  // (array, element) pairs to probe. Every array contributes at least one
  // coordinate so that small arrays such as biases are never skipped.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  const std::size_t total = params.total_size();
  if (total <= min_coordinates) {
    for (std::size_t a = 0; a < params.count(); ++a)
      for (std::size_t e = 0; e < params.values[a].size(); ++e) coords.emplace_back(a, e);
  } else {
    std::mt19937_64 rng(seed);
    for (std::size_t a = 0; a < params.count(); ++a) {
      if (params.values[a].empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, params.values[a].size() - 1);
      coords.emplace_back(a, pick(rng));
    }
    std::vector<std::size_t> offsets(params.count() + 1, 0);
    for (std::size_t a = 0; a < params.count(); ++a)
      offsets[a + 1] = offsets[a] + params.values[a].size();
    std::uniform_int_distribution<std::size_t> flat(0, total - 1);
    while (coords.size() < min_coordinates) {
      const std::size_t f = flat(rng);
      const auto a = static_cast<std::size_t>(
          std::upper_bound(offsets.begin(), offsets.end(), f) - offsets.begin() - 1);
      coords.emplace_back(a, f - offsets[a]);
    }
  }

  GradReport report;
  report.per_param_max.assign(params.count(), 0.0);
  ParamSet probe = params;
  for (const auto& [a, e] : coords) {
    const double original = probe.values[a][e];
    probe.values[a][e] = original + epsilon;
    const double up = evaluate(program, probe);
    probe.values[a][e] = original - epsilon;
    const double down = evaluate(program, probe);
    probe.values[a][e] = original;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double exact = analytic.grads[a][e];
    const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
    const double rel = std::abs(exact - numeric) / denom;
    report.per_param_max[a] = std::max(report.per_param_max[a], rel);
    if (report.worst_param.empty() || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = params.names[a];
    }
  }
  report.coordinates_checked = coords.size();
  return report;
}

}  // namespace spectrum::ad
