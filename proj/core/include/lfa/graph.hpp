#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lfa/tensor.hpp"

namespace lfa {

struct NodeId {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Per-scope floating-op tally collected while a graph executes forward.
struct ComplexityTrace {
  std::vector<std::pair<std::string, long long>> per_scope;  // insertion order
  long long total = 0;

  void add(const std::string& scope, long long flops);
};

struct GraphStats {
  long long power_clamp_count = 0;  // negative inputs clamped by power activation
};

// Dynamic tape: ops append nodes during forward and register backward
// closures; backward() replays them in reverse insertion order.
// Single-threaded per graph; one graph per forward pass.
class Graph {
 public:
  explicit Graph(Mode mode = Mode::Infer, uint64_t rng_seed = 0)
      : mode(mode), rng(static_cast<std::mt19937::result_type>(rng_seed)) {}

  // Leaf holding an input value. requires_grad makes its gradient available
  // after backward() (used by gradient checks).
  NodeId leaf(Tensor value, bool requires_grad = false);

  // Leaf bound to a parameter tensor: backward accumulates into p.grad().
  NodeId param(Tensor& p);

  const Tensor& value(NodeId id) const { return nodes_[id.idx].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id.idx].grad; }

  // Seeds the root gradient and runs every backward closure.
  void backward(NodeId root, const Tensor& seed);

  bool needs_grad(NodeId id) const { return nodes_[id.idx].needs_grad; }

  // Used by op implementations.
  NodeId push(Tensor value, std::vector<NodeId> inputs,
              std::function<void(Graph&, const Tensor& gout)> back,
              bool touches_params = false);
  Tensor& grad_buffer(NodeId id);
  void accumulate_grad(NodeId id, const std::vector<float>& g);

  void add_flops(long long flops);
  void push_scope(const std::string& name);
  void pop_scope();

  Mode mode;
  std::mt19937 rng;
  ComplexityTrace* trace = nullptr;
  GraphStats stats;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Graph&, const Tensor& gout)> back;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<std::string> scope_;
  std::string scope_path_;
};

// RAII layer-name scope for complexity accounting.
class ScopeGuard {
 public:
  ScopeGuard(Graph& g, const std::string& name) : g_(g) { g_.push_scope(name); }
  ~ScopeGuard() { g_.pop_scope(); }

 private:
  Graph& g_;
};

// ---- tensor-algebra ops ----
NodeId ew_add(Graph& g, NodeId a, NodeId b);
NodeId ew_sub(Graph& g, NodeId a, NodeId b);
NodeId ew_mul(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId x, float factor);
NodeId concat_channels(Graph& g, const std::vector<NodeId>& parts);

// ---- activations ----
NodeId relu(Graph& g, NodeId x);
NodeId leaky_relu(Graph& g, NodeId x, float slope);
NodeId gelu(Graph& g, NodeId x);
NodeId sigmoid(Graph& g, NodeId x);
// x^gamma with negative inputs clamped to zero; clamps are counted in
// Graph::stats.power_clamp_count.
NodeId power_clamped(Graph& g, NodeId x, float gamma);

// Inverted dropout: active only in Train mode; identity otherwise or at rate 0.
NodeId dropout(Graph& g, NodeId x, float rate);

}  // namespace lfa
