#include <algorithm>
#include <numeric>

#include "lfa/attention.hpp"
#include "lfa/gradcheck.hpp"
#include "lfa/layers.hpp"
#include "lfa/model.hpp"

namespace lfa {

namespace {

// Distinct values evenly spread over [-range/2, range/2], shuffled. The even
// spacing keeps gaps well above the finite-difference step so max-pool
// argmaxes and relu-family signs are stable under perturbation; the modest
// range keeps float32 rounding noise small next to the gradients.
Tensor grid_input(const Shape& s, uint64_t seed, float range = 1.0f) {
  std::vector<float> v(static_cast<size_t>(s.elems()));
  const float spacing = range / static_cast<float>(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    v[i] = spacing * (static_cast<float>(i) - 0.5f * static_cast<float>(v.size() - 1));
  }
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor(s, std::move(v));
}

Tensor positive_grid_input(const Shape& s, uint64_t seed, float range = 1.0f) {
  Tensor t = grid_input(s, seed, range);
  for (long long i = 0; i < t.size(); ++i) t.data()[i] += 0.6f * range;
  return t;
}

// Positive weights keep the projected gradient entries same-signed sums, so
// they stay well above the float32 noise floor of the finite differences.
// Bimodal magnitudes keep |r_i - mean(r)| bounded below, which matters for
// the mean-subtracting ops (batch/layer norm) whose input gradients would
// otherwise vanish wherever r_i crosses the channel mean.
Tensor projection(const Shape& s, uint64_t seed) {
  Tensor r(s, 0.0f);
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed ^ 0x9e3779b9u));
  std::uniform_real_distribution<float> mag(0.0f, 0.2f);
  std::bernoulli_distribution hi(0.5);
  for (long long i = 0; i < r.size(); ++i) {
    r.data()[i] = (hi(rng) ? 1.3f : 0.5f) + mag(rng);
  }
  return r;
}

double dot_value(const Tensor& r, const Tensor& v) {
  double s = 0.0;
  for (long long i = 0; i < v.size(); ++i) {
    s += static_cast<double>(r.data()[i]) * v.data()[i];
  }
  return s;
}

using BuildFn = std::function<NodeId(Graph&, NodeId)>;

// d/dx of sum(r * op(x)) checked against the tape's backward pass.
GradReport check_input_grad(const std::string& name, const BuildFn& build, const Tensor& x,
                            Mode mode, const GradCheckOptions& opts, double tolerance,
                            double epsilon_scale = 1.0) {
  ScalarFn fn = [&](const Tensor& xv, Tensor* gout) -> double {
    Graph g(mode, opts.seed);
    NodeId in = g.leaf(xv, /*requires_grad=*/true);
    NodeId out = build(g, in);
    Tensor r = projection(g.value(out).shape(), opts.seed);
    const double s = dot_value(r, g.value(out));
    if (gout) {
      g.backward(out, r);
      *gout = g.grad(in);
    }
    return s;
  };
  return grad_check(name, fn, x, opts.epsilon * epsilon_scale, tolerance, opts.seed);
}

// Same scalar, differentiated with respect to one parameter tensor instead.
GradReport check_param_grad(const std::string& name, const BuildFn& build, const Tensor& x,
                            Tensor& param, Mode mode, const GradCheckOptions& opts) {
  const Tensor start = param;
  ScalarFn fn = [&](const Tensor& pv, Tensor* gout) -> double {
    std::copy(pv.data(), pv.data() + pv.size(), param.data());
    Graph g(mode, opts.seed);
    NodeId in = g.leaf(x);
    NodeId out = build(g, in);
    Tensor r = projection(g.value(out).shape(), opts.seed);
    const double s = dot_value(r, g.value(out));
    if (gout) {
      param.zero_grad();
      g.backward(out, r);
      *gout = Tensor(pv.shape(), param.grad());
      param.zero_grad();
    }
    return s;
  };
  return grad_check(name, fn, start, opts.epsilon, opts.tolerance, opts.seed);
}

// Full model, differentiated over a small sample of its parameters: the
// sampled values are packed into one tensor so grad_check drives the loop.
GradReport check_model_grad(const GradCheckOptions& opts) {
  ModelConfig cfg;
  Model m = build_model(cfg, opts.seed);
  // 64 is the smallest extent whose /8-scale bottleneck still satisfies the
  // pooling-cascade minimum inside the attention blocks. Image-like [0,1]
  // values keep the sigmoid head well away from saturation.
  Tensor x({1, 3, 64, 64}, 0.0f);
  {
    std::mt19937 xrng(static_cast<std::mt19937::result_type>(opts.seed + 17));
    fill_uniform(x, xrng, 0.0f, 1.0f);
  }
  const Tensor r = projection({1, 1, 64, 64}, opts.seed);

  NamedTensors params = m.trainable();
  struct Coord {
    size_t tensor;
    long long elem;
  };
  std::vector<Coord> coords;
  std::mt19937 rng(static_cast<std::mt19937::result_type>(opts.seed + 158));
  std::uniform_int_distribution<size_t> pick_tensor(0, params.size() - 1);
  const int kSamples = 32;
  for (int i = 0; i < kSamples; ++i) {
    const size_t ti = pick_tensor(rng);
    std::uniform_int_distribution<long long> pick_elem(0, params[ti].second->size() - 1);
    coords.push_back({ti, pick_elem(rng)});
  }

  Tensor packed({1, 1, 1, kSamples}, 0.0f);
  for (int i = 0; i < kSamples; ++i) {
    packed.data()[i] = params[coords[static_cast<size_t>(i)].tensor]
                           .second->data()[coords[static_cast<size_t>(i)].elem];
  }

  ScalarFn fn = [&](const Tensor& pv, Tensor* gout) -> double {
    for (int i = 0; i < kSamples; ++i) {
      params[coords[static_cast<size_t>(i)].tensor]
          .second->data()[coords[static_cast<size_t>(i)].elem] = pv.data()[i];
    }
    Graph g(Mode::Infer, opts.seed);
    NodeId in = g.leaf(x);
    NodeId out = model_forward(g, in, m);
    const double s = dot_value(r, g.value(out));
    if (gout) {
      for (auto& [name, t] : params) t->zero_grad();
      g.backward(out, r);
      *gout = Tensor(pv.shape(), 0.0f);
      for (int i = 0; i < kSamples; ++i) {
        const Coord& c = coords[static_cast<size_t>(i)];
        Tensor* t = params[c.tensor].second;
        gout->data()[i] = t->has_grad() ? t->grad()[static_cast<size_t>(c.elem)] : 0.0f;
      }
      for (auto& [name, t] : params) t->zero_grad();
    }
    return s;
  };
  return grad_check("model", fn, packed, opts.epsilon, opts.model_tolerance, opts.seed);
}

void reset_running_stats(NormParams& p) {
  std::fill(p.running_mean.data(), p.running_mean.data() + p.running_mean.size(), 0.0f);
  std::fill(p.running_var.data(), p.running_var.data() + p.running_var.size(), 1.0f);
}

// Conditioning for the composed attention blocks: small kernels plus biases
// pushed well away from zero keep every internal relu/clamp/argmax kink
// outside the reach of the finite-difference step.
void shrink_values(Tensor& t, float factor) {
  for (long long i = 0; i < t.size(); ++i) t.data()[i] *= factor;
}

void lift_bias(Tensor& b, std::mt19937& rng, float lo = 0.3f, float hi = 0.8f) {
  std::uniform_real_distribution<float> mag(lo, hi);
  for (long long i = 0; i < b.size(); ++i) b.data()[i] = mag(rng);
}

void condition_conv(ConvParams& p, std::mt19937& rng, float kernel_scale = 0.1f) {
  shrink_values(p.kernel, kernel_scale);
  lift_bias(p.bias, rng);
}

// Same-sign kernels make every projected gradient a sum of same-sign terms,
// bounded away from the finite-difference noise floor.
void make_positive(Tensor& t, float floor_value = 0.05f) {
  for (long long i = 0; i < t.size(); ++i) t.data()[i] = std::abs(t.data()[i]) + floor_value;
}

// Rescales each output channel to unit L1 gain so stacked conditioned convs
// keep activations O(1) instead of compounding.
void normalize_gain(Tensor& kernel) {
  const Shape s = kernel.shape();
  const long long per_oc = static_cast<long long>(s.c) * s.h * s.w;
  for (int oc = 0; oc < s.n; ++oc) {
    double sum = 0.0;
    for (long long i = 0; i < per_oc; ++i) sum += std::abs(kernel.data()[oc * per_oc + i]);
    const float inv = sum > 0.0 ? static_cast<float>(1.0 / sum) : 1.0f;
    for (long long i = 0; i < per_oc; ++i) kernel.data()[oc * per_oc + i] *= inv;
  }
}

}  // namespace

std::vector<GradReport> run_gradcheck_suite(const GradCheckOptions& opts) {
  std::vector<GradReport> reports;
  auto wanted = [&](const std::string& name) {
    return opts.filter.empty() || name.find(opts.filter) != std::string::npos;
  };
  auto add_input = [&](const std::string& name, const BuildFn& build, const Tensor& x,
                       Mode mode = Mode::Infer, double epsilon_scale = 1.0) {
    if (wanted(name)) reports.push_back(check_input_grad(name, build, x, mode, opts,
                                                         opts.tolerance, epsilon_scale));
  };
  auto add_param = [&](const std::string& name, const BuildFn& build, const Tensor& x,
                       Tensor& param, Mode mode = Mode::Infer) {
    if (wanted(name)) reports.push_back(check_param_grad(name, build, x, param, mode, opts));
  };

  std::mt19937 rng(static_cast<std::mt19937::result_type>(opts.seed));
  const Shape small{2, 3, 6, 6};
  const Tensor xs = grid_input(small, opts.seed + 1);

  // ---- tensor algebra ----
  add_input("ew_add", [&](Graph& g, NodeId in) { return ew_add(g, in, relu(g, in)); }, xs);
  add_input("ew_sub", [&](Graph& g, NodeId in) { return ew_sub(g, in, sigmoid(g, in)); }, xs);
  add_input("ew_mul", [&](Graph& g, NodeId in) { return ew_mul(g, in, sigmoid(g, in)); }, xs);
  add_input("ew_mul_broadcast",
            [&](Graph& g, NodeId in) {
              return ew_mul(g, in, sigmoid(g, global_pool(g, in, PoolMode::Avg)));
            },
            xs);
  add_input("scale", [&](Graph& g, NodeId in) { return scale(g, in, 0.25f); }, xs);
  add_input("concat_channels",
            [&](Graph& g, NodeId in) {
              return concat_channels(g, {in, sigmoid(g, in)});
            },
            xs);

  // ---- activations ----
  add_input("relu", [&](Graph& g, NodeId in) { return relu(g, in); }, xs);
  add_input("leaky_relu", [&](Graph& g, NodeId in) { return leaky_relu(g, in, 0.01f); }, xs);
  add_input("gelu", [&](Graph& g, NodeId in) { return gelu(g, in); }, xs);
  add_input("sigmoid", [&](Graph& g, NodeId in) { return sigmoid(g, in); }, xs);
  add_input("power_clamped", [&](Graph& g, NodeId in) { return power_clamped(g, in, 2.0f); },
            positive_grid_input(small, opts.seed + 2));
  add_input("dropout", [&](Graph& g, NodeId in) { return dropout(g, in, 0.5f); }, xs, Mode::Train);

  // ---- convolutions ----
  // Positive kernels and inputs: for a linear op the projected gradients are
  // then same-sign sums, far above the finite-difference noise floor.
  const Tensor xp = positive_grid_input(small, opts.seed + 1);
  ConvParams conv = make_conv(3, 4, 3, rng);
  make_positive(conv.kernel);
  add_input("conv2d.input", [&](Graph& g, NodeId in) { return conv2d(g, in, conv); }, xp);
  add_param("conv2d.kernel", [&](Graph& g, NodeId in) { return conv2d(g, in, conv); }, xp,
            conv.kernel);
  add_param("conv2d.bias", [&](Graph& g, NodeId in) { return conv2d(g, in, conv); }, xp,
            conv.bias);

  ConvParams conv_s2 = make_conv(3, 4, 3, rng, /*stride=*/2, 1, 1, Padding::Valid);
  make_positive(conv_s2.kernel);
  add_input("conv2d_stride2.input", [&](Graph& g, NodeId in) { return conv2d(g, in, conv_s2); },
            positive_grid_input({1, 3, 9, 9}, opts.seed + 3));
  add_param("conv2d_stride2.kernel", [&](Graph& g, NodeId in) { return conv2d(g, in, conv_s2); },
            positive_grid_input({1, 3, 9, 9}, opts.seed + 3), conv_s2.kernel);

  ConvParams conv_dil = make_conv(3, 4, 3, rng, 1, /*dilation=*/2);
  make_positive(conv_dil.kernel);
  add_input("conv2d_dilated.input", [&](Graph& g, NodeId in) { return conv2d(g, in, conv_dil); },
            positive_grid_input({1, 3, 8, 8}, opts.seed + 4));
  add_param("conv2d_dilated.kernel", [&](Graph& g, NodeId in) { return conv2d(g, in, conv_dil); },
            positive_grid_input({1, 3, 8, 8}, opts.seed + 4), conv_dil.kernel);

  ConvParams conv_dw = make_conv(4, 4, 1, rng, 1, 1, /*groups=*/4);
  make_positive(conv_dw.kernel);
  add_input("conv2d_depthwise.input", [&](Graph& g, NodeId in) { return conv2d(g, in, conv_dw); },
            positive_grid_input({1, 4, 5, 5}, opts.seed + 5));
  add_param("conv2d_depthwise.kernel",
            [&](Graph& g, NodeId in) { return conv2d(g, in, conv_dw); },
            positive_grid_input({1, 4, 5, 5}, opts.seed + 5), conv_dw.kernel);

  ConvParams tconv = make_transposed_conv(3, 4, 2, 2, rng);
  make_positive(tconv.kernel);
  add_input("transposed_conv2d.input",
            [&](Graph& g, NodeId in) { return transposed_conv2d(g, in, tconv); }, xp);
  add_param("transposed_conv2d.kernel",
            [&](Graph& g, NodeId in) { return transposed_conv2d(g, in, tconv); }, xp,
            tconv.kernel);
  add_param("transposed_conv2d.bias",
            [&](Graph& g, NodeId in) { return transposed_conv2d(g, in, tconv); }, xp, tconv.bias);

  // ---- pooling ----
  add_input("pool2d_max", [&](Graph& g, NodeId in) { return pool2d(g, in, PoolMode::Max, 2, 2); },
            xs);
  add_input("pool2d_avg", [&](Graph& g, NodeId in) { return pool2d(g, in, PoolMode::Avg, 2, 2); },
            xs);
  add_input("pool2d_max_4x4",
            [&](Graph& g, NodeId in) { return pool2d(g, in, PoolMode::Max, 4, 4); },
            grid_input({1, 2, 8, 8}, opts.seed + 6));
  add_input("global_pool_max",
            [&](Graph& g, NodeId in) { return global_pool(g, in, PoolMode::Max); }, xs);
  add_input("global_pool_avg",
            [&](Graph& g, NodeId in) { return global_pool(g, in, PoolMode::Avg); }, xs);

  // ---- normalization ----
  NormParams bn = make_norm(3);
  auto bn_build = [&](Graph& g, NodeId in) {
    reset_running_stats(bn);
    return batch_norm(g, in, bn);
  };
  // A moderate input range keeps the batch stddev small, which scales the
  // input gradient (prop. 1/sigma) above the finite-difference noise, while
  // staying large enough that the 1/sigma curvature doesn't bite.
  const Tensor xbn = grid_input(small, opts.seed + 1, 0.35f);
  add_input("batch_norm.input", bn_build, xbn, Mode::Train);
  add_param("batch_norm.scale", bn_build, xbn, bn.scale, Mode::Train);
  add_param("batch_norm.shift", bn_build, xbn, bn.shift, Mode::Train);
  NormParams bn_inf = make_norm(3);
  add_input("batch_norm_infer.input",
            [&](Graph& g, NodeId in) { return batch_norm(g, in, bn_inf); }, xs, Mode::Infer);

  // Wide channel axis plus per-channel offsets: the per-pixel channel stddev
  // dwarfs the finite-difference step (otherwise the 1/sigma curvature wrecks
  // the check) and the bimodal projection keeps every gradient entry large.
  const Shape ln_shape{1, 8, 4, 4};
  NormParams ln = make_norm(ln_shape.c);
  Tensor xln = grid_input(ln_shape, opts.seed + 9, 0.4f);
  for (int n = 0; n < ln_shape.n; ++n)
    for (int c = 0; c < ln_shape.c; ++c)
      for (int h = 0; h < ln_shape.h; ++h)
        for (int w = 0; w < ln_shape.w; ++w) xln.at(n, c, h, w) += 0.2f * static_cast<float>(c);
  add_input("layer_norm.input", [&](Graph& g, NodeId in) { return layer_norm(g, in, ln); }, xln);
  add_param("layer_norm.scale", [&](Graph& g, NodeId in) { return layer_norm(g, in, ln); }, xln,
            ln.scale);

  // ---- dense ----
  DenseParams dn = make_dense(3, 5, rng);
  make_positive(dn.weight);
  add_input("dense.input", [&](Graph& g, NodeId in) { return dense(g, in, dn); }, xp);
  add_param("dense.weight", [&](Graph& g, NodeId in) { return dense(g, in, dn); }, xp, dn.weight);
  add_param("dense.bias", [&](Graph& g, NodeId in) { return dense(g, in, dn); }, xp, dn.bias);

  // ---- attention blocks ----
  // Inference mode keeps dropout out of the way and batch norm on its fixed
  // running stats; every other path is live.
  RaaParams raa = make_raa(4, rng);
  make_positive(raa.conv3.kernel, 0.01f);
  shrink_values(raa.conv3.kernel, 0.1f);
  lift_bias(raa.conv3.bias, rng, 0.8f, 1.2f);
  // The composed blocks chain enough float32 ops that a 1e-3 step sits below
  // the forward-evaluation noise floor (finite-difference noise ~ jitter/eps);
  // 3x the base step lands in the valley between noise and truncation.
  const double kBlockEps = 3.0;
  const Tensor xr = positive_grid_input({1, 4, 8, 8}, opts.seed + 7);
  auto raa_build = [&](Graph& g, NodeId in) { return raa_forward(g, in, raa); };
  add_input("raa.input", raa_build, xr, Mode::Infer, kBlockEps);
  add_param("raa.kernel", raa_build, xr, raa.conv3.kernel);

  LiteFusionParams lf = make_litefusion(4, rng);
  // The kink-free paths keep their He-initialized kernels: sign diversity
  // across channels keeps the entry layer-norm sigma at O(1), which is what
  // keeps the input gradient above the float32 noise floor. The relu-guarded
  // context branch and channel mixer get small kernels with lifted biases so
  // their preactivations cannot cross zero under the finite-difference step.
  for (ConvParams* c : {&lf.ctx_conv3, &lf.ctx_pw}) {
    shrink_values(c->kernel, 0.05f);
    lift_bias(c->bias, rng, 0.5f, 1.0f);
  }
  shrink_values(lf.chan_dense1.weight, 0.05f);
  lift_bias(lf.chan_dense1.bias, rng, 0.5f, 1.0f);
  shrink_values(lf.chan_dense2.weight, 0.05f);
  lift_bias(lf.chan_dense2.bias, rng, 0.5f, 1.0f);
  const Tensor xl = positive_grid_input({1, 4, 8, 8}, opts.seed + 8);
  add_input("litefusion.input",
            [&](Graph& g, NodeId in) { return litefusion_forward(g, in, lf); }, xl, Mode::Infer,
            kBlockEps);
  add_param("litefusion.entry_kernel",
            [&](Graph& g, NodeId in) { return litefusion_forward(g, in, lf); }, xl,
            lf.entry_pw.kernel);

  // ---- full model, sampled parameters ----
  if (wanted("model")) reports.push_back(check_model_grad(opts));

  return reports;
}

}  // namespace lfa
