#include "lfa/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace lfa {

void ComplexityTrace::add(const std::string& scope, long long flops) {
  total += flops;
  for (auto& [name, count] : per_scope) {
    if (name == scope) {
      count += flops;
      return;
    }
  }
  per_scope.emplace_back(scope, flops);
}

NodeId Graph::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr, requires_grad});
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

NodeId Graph::param(Tensor& p) {
  NodeId id = leaf(p, true);
  Tensor* target = &p;
  nodes_[id.idx].back = [id, target](Graph& g, const Tensor& gout) {
    std::vector<float>& acc = target->grad();
    const std::vector<float>& src = gout.values();
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
  };
  return id;
}

NodeId Graph::push(Tensor value, std::vector<NodeId> inputs,
                   std::function<void(Graph&, const Tensor& gout)> back,
                   bool touches_params) {
  bool needs = touches_params;
  for (NodeId in : inputs) needs = needs || nodes_[in.idx].needs_grad;
  nodes_.push_back(Node{std::move(value), Tensor{}, needs ? std::move(back) : nullptr, needs});
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_buffer(NodeId id) {
  Node& node = nodes_[id.idx];
  if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0f);
  return node.grad;
}

void Graph::accumulate_grad(NodeId id, const std::vector<float>& g) {
  Tensor& buf = grad_buffer(id);
  float* dst = buf.data();
  for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Graph::backward(NodeId root, const Tensor& seed) {
  if (!(seed.shape() == nodes_[root.idx].value.shape())) {
    throw ShapeError("backward seed shape " + seed.shape().str() + " != root shape " +
                     nodes_[root.idx].value.shape().str());
  }
  grad_buffer(root);
  nodes_[root.idx].grad = seed;
  for (int i = root.idx; i >= 0; --i) {
    Node& node = nodes_[i];
    if (!node.back || node.grad.empty()) continue;
    node.back(*this, node.grad);
  }
}

void Graph::add_flops(long long flops) {
  if (trace) trace->add(scope_path_.empty() ? std::string("(top)") : scope_path_, flops);
}

void Graph::push_scope(const std::string& name) {
  scope_.push_back(name);
  scope_path_.clear();
  for (size_t i = 0; i < scope_.size(); ++i) {
    if (i) scope_path_ += '/';
    scope_path_ += scope_[i];
  }
}

void Graph::pop_scope() {
  scope_.pop_back();
  scope_path_.clear();
  for (size_t i = 0; i < scope_.size(); ++i) {
    if (i) scope_path_ += '/';
    scope_path_ += scope_[i];
  }
}

namespace {

NodeId ew_binary(Graph& g, EwKind kind, NodeId a, NodeId b, bool negate_b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  const Shape sa = ta.shape();
  const Shape sb = tb.shape();
  const bool broadcast = sb.n == sa.n && sb.c == sa.c && sb.h == 1 && sb.w == 1 && !(sa == sb);
  Tensor out = negate_b ? Tensor(sa, 0.0f) : elementwise(kind, ta, tb);
  const long long hw = static_cast<long long>(sa.h) * sa.w;
  if (negate_b) {
    const float* pa = ta.data();
    const float* pb = tb.data();
    float* po = out.data();
    for (long long i = 0; i < ta.size(); ++i) {
      po[i] = pa[i] - (broadcast ? pb[i / hw] : pb[i]);
    }
  }
  g.add_flops(ta.size());

  return g.push(std::move(out), {a, b}, [=](Graph& gr, const Tensor& gout) {
    const Tensor& va = gr.value(a);
    const Tensor& vb = gr.value(b);
    const float* go = gout.data();
    if (gr.needs_grad(a)) {
      std::vector<float> ga(static_cast<size_t>(va.size()), 0.0f);
      for (long long i = 0; i < va.size(); ++i) {
        if (kind == EwKind::Add) {
          ga[i] = go[i];
        } else {
          ga[i] = go[i] * (broadcast ? vb.data()[i / hw] : vb.data()[i]);
        }
      }
      gr.accumulate_grad(a, ga);
    }
    if (gr.needs_grad(b)) {
      std::vector<float> gb(static_cast<size_t>(vb.size()), 0.0f);
      const float sign = negate_b ? -1.0f : 1.0f;
      for (long long i = 0; i < va.size(); ++i) {
        float contrib = kind == EwKind::Add ? sign * go[i] : go[i] * va.data()[i];
        gb[broadcast ? i / hw : i] += contrib;
      }
      gr.accumulate_grad(b, gb);
    }
  });
}

}  // namespace

NodeId ew_add(Graph& g, NodeId a, NodeId b) { return ew_binary(g, EwKind::Add, a, b, false); }
NodeId ew_sub(Graph& g, NodeId a, NodeId b) { return ew_binary(g, EwKind::Add, a, b, true); }
NodeId ew_mul(Graph& g, NodeId a, NodeId b) { return ew_binary(g, EwKind::Mul, a, b, false); }

NodeId scale(Graph& g, NodeId x, float factor) {
  const Tensor& tx = g.value(x);
  Tensor out(tx.shape(), 0.0f);
  for (long long i = 0; i < tx.size(); ++i) out.data()[i] = tx.data()[i] * factor;
  g.add_flops(tx.size());
  return g.push(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
    if (!gr.needs_grad(x)) return;
    std::vector<float> gx(gout.values());
    for (float& v : gx) v *= factor;
    gr.accumulate_grad(x, gx);
  });
}

NodeId concat_channels(Graph& g, const std::vector<NodeId>& parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (NodeId p : parts) values.push_back(g.value(p));
  Tensor out = lfa::concat_channels(values);
  const Shape so = out.shape();
  std::vector<int> part_channels;
  for (const Tensor& v : values) part_channels.push_back(v.shape().c);

  return g.push(std::move(out), parts, [=](Graph& gr, const Tensor& gout) {
    const long long hw = static_cast<long long>(so.h) * so.w;
    long long c_off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const int pc = part_channels[pi];
      if (gr.needs_grad(parts[pi])) {
        std::vector<float> gp(static_cast<size_t>(so.n) * pc * hw);
        for (int n = 0; n < so.n; ++n) {
          const float* src = gout.data() + (static_cast<long long>(n) * so.c + c_off) * hw;
          float* dst = gp.data() + static_cast<long long>(n) * pc * hw;
          std::copy(src, src + static_cast<long long>(pc) * hw, dst);
        }
        gr.accumulate_grad(parts[pi], gp);
      }
      c_off += pc;
    }
  });
}

namespace {

// Shared shape for unary elementwise maps: forward fn and derivative fn of x.
NodeId unary_op(Graph& g, NodeId x, float (*fwd)(float), float (*dfdx)(float)) {
  const Tensor& tx = g.value(x);
  Tensor out(tx.shape(), 0.0f);
  for (long long i = 0; i < tx.size(); ++i) out.data()[i] = fwd(tx.data()[i]);
  g.add_flops(tx.size());
  return g.push(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
    if (!gr.needs_grad(x)) return;
    const Tensor& vx = gr.value(x);
    std::vector<float> gx(static_cast<size_t>(vx.size()));
    for (long long i = 0; i < vx.size(); ++i) gx[i] = gout.data()[i] * dfdx(vx.data()[i]);
    gr.accumulate_grad(x, gx);
  });
}

// Clamped to the open interval: float rounding would otherwise return an
// exact 0 or 1 under saturation, breaking the probability-output contract.
float sigmoid_f(float x) {
  const float s = 1.0f / (1.0f + std::exp(-x));
  constexpr float eps = 1e-7f;
  return std::min(1.0f - eps, std::max(eps, s));
}

constexpr float kInvSqrt2 = 0.70710678118654752f;
constexpr float kInvSqrt2Pi = 0.39894228040143268f;

}  // namespace

NodeId relu(Graph& g, NodeId x) {
  return unary_op(
      g, x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v) { return v > 0.0f ? 1.0f : 0.0f; });
}

NodeId leaky_relu(Graph& g, NodeId x, float slope) {
  const Tensor& tx = g.value(x);
  Tensor out(tx.shape(), 0.0f);
  for (long long i = 0; i < tx.size(); ++i) {
    float v = tx.data()[i];
    out.data()[i] = v > 0.0f ? v : slope * v;
  }
  g.add_flops(tx.size());
  return g.push(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
    if (!gr.needs_grad(x)) return;
    const Tensor& vx = gr.value(x);
    std::vector<float> gx(static_cast<size_t>(vx.size()));
    for (long long i = 0; i < vx.size(); ++i) {
      gx[i] = gout.data()[i] * (vx.data()[i] > 0.0f ? 1.0f : slope);
    }
    gr.accumulate_grad(x, gx);
  });
}

NodeId gelu(Graph& g, NodeId x) {
  // Exact Gaussian-CDF form: x * Phi(x).
  return unary_op(
      g, x,
      [](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); },
      [](float v) {
        float phi_cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
        float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
        return phi_cdf + v * pdf;
      });
}

NodeId sigmoid(Graph& g, NodeId x) {
  return unary_op(
      g, x, [](float v) { return sigmoid_f(v); },
      [](float v) {
        float s = sigmoid_f(v);
        return s * (1.0f - s);
      });
}

NodeId power_clamped(Graph& g, NodeId x, float gamma) {
  const Tensor& tx = g.value(x);
  Tensor out(tx.shape(), 0.0f);
  long long clamped = 0;
  for (long long i = 0; i < tx.size(); ++i) {
    float v = tx.data()[i];
    if (v < 0.0f) {
      ++clamped;
      v = 0.0f;
    }
    out.data()[i] = std::pow(v, gamma);
  }
  g.stats.power_clamp_count += clamped;
  g.add_flops(tx.size());
  return g.push(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
    if (!gr.needs_grad(x)) return;
    const Tensor& vx = gr.value(x);
    std::vector<float> gx(static_cast<size_t>(vx.size()), 0.0f);
    for (long long i = 0; i < vx.size(); ++i) {
      float v = vx.data()[i];
      if (v > 0.0f) gx[i] = gout.data()[i] * gamma * std::pow(v, gamma - 1.0f);
    }
    gr.accumulate_grad(x, gx);
  });
}

NodeId dropout(Graph& g, NodeId x, float rate) {
  if (rate < 0.0f || rate >= 1.0f) {
    throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  }
  const Tensor& tx = g.value(x);
  if (g.mode == Mode::Infer || rate == 0.0f) {
    Tensor out = tx;
    return g.push(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
      if (gr.needs_grad(x)) gr.accumulate_grad(x, gout.values());
    });
  }
  const float keep_scale = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<float>>(static_cast<size_t>(tx.size()));
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor out(tx.shape(), 0.0f);
  for (long long i = 0; i < tx.size(); ++i) {
    (*mask)[i] = u(g.rng) < rate ? 0.0f : keep_scale;
    out.data()[i] = tx.data()[i] * (*mask)[i];
  }
  g.add_flops(tx.size());
  return g.push(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
    if (!gr.needs_grad(x)) return;
    std::vector<float> gx(static_cast<size_t>(gout.size()));
    for (long long i = 0; i < gout.size(); ++i) gx[i] = gout.data()[i] * (*mask)[i];
    gr.accumulate_grad(x, gx);
  });
}

}  // namespace lfa
