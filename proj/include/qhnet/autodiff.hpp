#pragma once

// Tape-based reverse-mode differentiation over dense double arrays.
//
// A Tape records one forward evaluation. Every recorded node owns its value
// (or views a parameter in a ParamStore) and, for differentiable nodes, a
// closure that pushes the node's adjoint into its inputs. One tape serves
// exactly one backward pass. Tapes never write into the ParamStore; gradients
// are committed explicitly, which keeps concurrent per-sample tapes safe as
// long as the commit itself is serialized.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qhnet/error.hpp"
#include "qhnet/irreps.hpp"
#include "qhnet/rng.hpp"

namespace qhnet::ad {

struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
};

/// Named learnable arrays, kept in insertion order.
class ParamStore {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape, std::vector<double> value) {
    if (index_.contains(name)) throw ContractViolation("ParamStore: duplicate parameter " + name);
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    require(value.size() == n, "ParamStore: value size does not match shape for " + name);
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(shape), std::move(value), std::vector<double>(n, 0.0)});
    return params_.size() - 1;
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::size_t index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractViolation("ParamStore: unknown parameter " + std::string(name));
    return it->second;
  }

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(std::string_view name) { return params_[index(name)]; }
  const Parameter& at(std::string_view name) const { return params_[index(name)]; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Handle to a node on a Tape.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(std::vector<double> value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  /// Leaf viewing a parameter in the bound store. Each parameter gets one
  /// leaf per tape; repeated requests return the same node.
  Var param(std::size_t index) {
    require(params_ != nullptr, "Tape: no ParamStore bound");
    if (param_nodes_.size() < params_->size()) param_nodes_.resize(params_->size());
    if (param_nodes_[index].valid()) return param_nodes_[index];
    Node n;
    n.view = (*params_)[index].value.data();
    n.view_size = (*params_)[index].value.size();
    n.requires_grad = true;
    n.param = static_cast<int>(index);
    const Var v = push(std::move(n));
    param_nodes_[index] = v;
    return v;
  }
  Var param(std::string_view name) {
    require(params_ != nullptr, "Tape: no ParamStore bound");
    return param(params_->index(name));
  }

  /// Records a derived node. `backward` runs only if some input needs grad.
  Var record(std::vector<double> value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }
  Var record(std::vector<double> value, std::span<const Var> inputs, Backward backward) {
    Node n;
    n.owned = std::move(value);
    for (Var in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  std::span<const double> value(Var v) const {
    const Node& n = node(v);
    return n.view ? std::span<const double>(n.view, n.view_size) : std::span<const double>(n.owned);
  }
  double scalar(Var v) const {
    const auto x = value(v);
    require(x.size() == 1, "Tape: node is not a scalar");
    return x[0];
  }
  std::size_t size(Var v) const { return value(v).size(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Mutable adjoint, allocated on first touch.
  std::span<double> grad(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(value(v).size(), 0.0);
    return n.grad;
  }
  /// Adjoint for reading; empty if nothing reached the node.
  std::span<const double> grad_of(Var v) const { return node(v).grad; }

  void backward(Var root, double seed = 1.0) {
    if (backward_done_) throw ContractViolation("Tape: backward may run once per recording");
    if (size(root) != 1) throw ContractViolation("Tape: backward requires a scalar root");
    backward_done_ = true;
    if (!requires_grad(root)) return;
    grad(root)[0] += seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, Var{static_cast<std::uint32_t>(i)});
    }
  }

  /// Adds parameter-leaf adjoints into `grads` (one vector per parameter,
  /// same order as the store). Untouched parameters receive nothing.
  void accumulate_param_grads(std::vector<std::vector<double>>& grads, double weight = 1.0) const {
    require(params_ != nullptr, "Tape: no ParamStore bound");
    grads.resize(params_->size());
    for (std::size_t p = 0; p < param_nodes_.size(); ++p) {
      if (!param_nodes_[p].valid()) continue;
      const auto& g = node(param_nodes_[p]).grad;
      if (g.empty()) continue;
      auto& dst = grads[p];
      if (dst.empty()) dst.assign((*params_)[p].value.size(), 0.0);
      for (std::size_t k = 0; k < g.size(); ++k) dst[k] += weight * g[k];
    }
  }

  /// Commits parameter gradients into the store's accumulators.
  void accumulate_into(ParamStore& store, double weight = 1.0) const {
    require(&store == params_, "Tape: gradients must go to the bound store");
    for (std::size_t p = 0; p < param_nodes_.size(); ++p) {
      if (!param_nodes_[p].valid()) continue;
      const auto& g = node(param_nodes_[p]).grad;
      if (g.empty()) continue;
      auto& dst = store[p].grad;
      for (std::size_t k = 0; k < g.size(); ++k) dst[k] += weight * g[k];
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<double> owned;
    const double* view = nullptr;
    std::size_t view_size = 0;
    std::vector<double> grad;
    bool requires_grad = false;
    int param = -1;
    Backward backward;
  };

  Var push(Node n) {
    require(!backward_done_, "Tape: cannot record after backward");
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }
  Node& node(Var v) {
    require(v.valid() && v.id < nodes_.size(), "Tape: invalid node handle");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    require(v.valid() && v.id < nodes_.size(), "Tape: invalid node handle");
    return nodes_[v.id];
  }

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::vector<Var> param_nodes_;
  bool backward_done_ = false;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
  bool finite = true;
};

/// Compares reverse-mode gradients with central differences on `samples`
/// randomly chosen scalars (all scalars when samples == 0). `build_loss`
/// records a scalar loss on the given tape. Relative error uses the
/// denominator max(|analytic|, |numeric|, 1e-12).
inline GradcheckReport gradcheck(ParamStore& store, const std::function<Var(Tape&)>& build_loss, double eps = 1e-6,
                                 std::size_t samples = 0, std::uint64_t seed = 0) {
  std::vector<std::vector<double>> analytic;
  {
    Tape t(&store);
    const Var loss = build_loss(t);
    t.backward(loss);
    t.accumulate_param_grads(analytic);
  }
  analytic.resize(store.size());
  for (std::size_t p = 0; p < store.size(); ++p)
    if (analytic[p].empty()) analytic[p].assign(store[p].value.size(), 0.0);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < store.size(); ++p)
    for (std::size_t k = 0; k < store[p].value.size(); ++k) coords.emplace_back(p, k);
  if (samples > 0 && samples < coords.size()) {
    Rng rng(seed);
    rng.shuffle(coords);
    coords.resize(samples);
  }

  auto eval = [&]() {
    Tape t(&store);
    return t.scalar(build_loss(t));
  };

  GradcheckReport report;
  for (const auto& [p, k] : coords) {
    double& x = store[p].value[k];
    const double saved = x;
    x = saved + eps;
    const double fp = eval();
    x = saved - eps;
    const double fm = eval();
    x = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[p][k];
    ++report.checked;
    if (!std::isfinite(numeric) || !std::isfinite(a)) {
      report.finite = false;
      report.max_rel_error = std::numeric_limits<double>::infinity();
      report.worst_parameter = store[p].name;
      continue;
    }
    report.max_abs_error = std::max(report.max_abs_error, std::abs(a - numeric));
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_parameter = store[p].name;
    }
  }
  return report;
}

}  // namespace qhnet::ad
