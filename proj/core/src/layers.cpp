#include "lfa/layers.hpp"

#include <cmath>
#include <memory>

namespace lfa {

namespace {

struct ConvGeom {
  int out_h = 0, out_w = 0;
  int pad_top = 0, pad_left = 0;
  int eff_kh = 0, eff_kw = 0;
};

ConvGeom conv_geometry(const Shape& in, int kh, int kw, int stride, int dilation,
                       Padding padding) {
  ConvGeom geo;
  geo.eff_kh = dilation * (kh - 1) + 1;
  geo.eff_kw = dilation * (kw - 1) + 1;
  if (padding == Padding::Same) {
    if (kh % 2 == 0 || kw % 2 == 0) {
      throw ConfigError("same padding requires odd kernel extents");
    }
    geo.out_h = (in.h + stride - 1) / stride;
    geo.out_w = (in.w + stride - 1) / stride;
    int pad_h = std::max(0, (geo.out_h - 1) * stride + geo.eff_kh - in.h);
    int pad_w = std::max(0, (geo.out_w - 1) * stride + geo.eff_kw - in.w);
    // Asymmetric need pads the extra cell on the bottom/right.
    geo.pad_top = pad_h / 2;
    geo.pad_left = pad_w / 2;
  } else {
    if (geo.eff_kh > in.h || geo.eff_kw > in.w) {
      throw ShapeError("kernel larger than input under valid padding");
    }
    geo.out_h = (in.h - geo.eff_kh) / stride + 1;
    geo.out_w = (in.w - geo.eff_kw) / stride + 1;
  }
  return geo;
}

}  // namespace

ConvParams make_conv(int c_in, int c_out, int k, std::mt19937& rng, int stride, int dilation,
                     int groups, Padding padding) {
  if (c_in % groups != 0 || c_out % groups != 0) {
    throw ConfigError("conv channels must be divisible by groups");
  }
  ConvParams p;
  p.kernel = Tensor({c_out, c_in / groups, k, k}, 0.0f);
  const float fan_in = static_cast<float>(c_in / groups) * k * k;
  fill_normal(p.kernel, rng, 0.0f, std::sqrt(2.0f / fan_in));
  p.bias = Tensor({1, c_out, 1, 1}, 0.0f);
  p.stride = stride;
  p.dilation = dilation;
  p.groups = groups;
  p.padding = padding;
  return p;
}

ConvParams make_transposed_conv(int c_in, int c_out, int k, int stride, std::mt19937& rng) {
  ConvParams p;
  p.kernel = Tensor({c_in, c_out, k, k}, 0.0f);
  const float fan_in = static_cast<float>(c_in) * k * k;
  fill_normal(p.kernel, rng, 0.0f, std::sqrt(2.0f / fan_in));
  p.bias = Tensor({1, c_out, 1, 1}, 0.0f);
  p.stride = stride;
  p.padding = Padding::Valid;
  return p;
}

NormParams make_norm(int channels) {
  NormParams p;
  p.scale = Tensor({1, channels, 1, 1}, 1.0f);
  p.shift = Tensor({1, channels, 1, 1}, 0.0f);
  p.running_mean = Tensor({1, channels, 1, 1}, 0.0f);
  p.running_var = Tensor({1, channels, 1, 1}, 1.0f);
  return p;
}

DenseParams make_dense(int features_in, int features_out, std::mt19937& rng) {
  DenseParams p;
  p.weight = Tensor({features_out, features_in, 1, 1}, 0.0f);
  fill_normal(p.weight, rng, 0.0f, std::sqrt(2.0f / static_cast<float>(features_in)));
  p.bias = Tensor({1, features_out, 1, 1}, 0.0f);
  return p;
}

NodeId conv2d(Graph& g, NodeId x, ConvParams& p) {
  const Tensor& in = g.value(x);
  const Shape is = in.shape();
  const Shape ks = p.kernel.shape();
  const int co = ks.n, cig = ks.c, kh = ks.h, kw = ks.w;
  const int groups = p.groups;
  if (is.c != cig * groups) {
    throw ShapeError("conv2d input channels " + std::to_string(is.c) + " != kernel expects " +
                     std::to_string(cig * groups));
  }
  if (co % groups != 0) throw ConfigError("conv2d C_out not divisible by groups");
  const ConvGeom geo = conv_geometry(is, kh, kw, p.stride, p.dilation, p.padding);
  const int oh_n = geo.out_h, ow_n = geo.out_w;
  const int co_per_g = co / groups;
  const int stride = p.stride, dil = p.dilation;
  const int pad_t = geo.pad_top, pad_l = geo.pad_left;

  Tensor out({is.n, co, oh_n, ow_n}, 0.0f);
  const float* px = in.data();
  const float* pk = p.kernel.data();
  const float* pb = p.bias.data();
  float* po = out.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < is.n; ++n) {
    for (int oc = 0; oc < co; ++oc) {
      const int gi = oc / co_per_g;
      const int ic0 = gi * cig;
      for (int oh = 0; oh < oh_n; ++oh) {
        for (int ow = 0; ow < ow_n; ++ow) {
          float acc = pb[oc];
          for (int ick = 0; ick < cig; ++ick) {
            const float* xc = px + ((static_cast<long long>(n) * is.c + ic0 + ick) * is.h) * is.w;
            const float* kc = pk + ((static_cast<long long>(oc) * cig + ick) * kh) * kw;
            for (int ki = 0; ki < kh; ++ki) {
              const int ih = oh * stride - pad_t + ki * dil;
              if (ih < 0 || ih >= is.h) continue;
              for (int kj = 0; kj < kw; ++kj) {
                const int iw = ow * stride - pad_l + kj * dil;
                if (iw < 0 || iw >= is.w) continue;
                acc += xc[ih * is.w + iw] * kc[ki * kw + kj];
              }
            }
          }
          po[((static_cast<long long>(n) * co + oc) * oh_n + oh) * ow_n + ow] = acc;
        }
      }
    }
  }

  g.add_flops(2LL * is.n * co * oh_n * ow_n * cig * kh * kw);

  ConvParams* pp = &p;
  return g.push(
      std::move(out), {x},
      [=](Graph& gr, const Tensor& gout) {
        const Tensor& vin = gr.value(x);
        const Shape isb = vin.shape();
        const float* gop = gout.data();
        const float* pxv = vin.data();
        const float* pkv = pp->kernel.data();

        {  // bias gradient
          std::vector<float>& gb = pp->bias.grad();
          for (int n = 0; n < isb.n; ++n)
            for (int oc = 0; oc < co; ++oc) {
              const float* go = gop + ((static_cast<long long>(n) * co + oc) * oh_n) * ow_n;
              float acc = 0.0f;
              for (long long i = 0; i < static_cast<long long>(oh_n) * ow_n; ++i) acc += go[i];
              gb[oc] += acc;
            }
        }

        {  // kernel gradient (each oc slice is disjoint)
          std::vector<float>& gk = pp->kernel.grad();
#pragma omp parallel for schedule(static)
          for (int oc = 0; oc < co; ++oc) {
            const int gi = oc / co_per_g;
            const int ic0 = gi * cig;
            for (int ick = 0; ick < cig; ++ick)
              for (int ki = 0; ki < kh; ++ki)
                for (int kj = 0; kj < kw; ++kj) {
                  float acc = 0.0f;
                  for (int n = 0; n < isb.n; ++n) {
                    const float* xc =
                        pxv + ((static_cast<long long>(n) * isb.c + ic0 + ick) * isb.h) * isb.w;
                    const float* go =
                        gop + ((static_cast<long long>(n) * co + oc) * oh_n) * ow_n;
                    for (int oh = 0; oh < oh_n; ++oh) {
                      const int ih = oh * stride - pad_t + ki * dil;
                      if (ih < 0 || ih >= isb.h) continue;
                      for (int ow = 0; ow < ow_n; ++ow) {
                        const int iw = ow * stride - pad_l + kj * dil;
                        if (iw < 0 || iw >= isb.w) continue;
                        acc += xc[ih * isb.w + iw] * go[oh * ow_n + ow];
                      }
                    }
                  }
                  gk[((static_cast<long long>(oc) * cig + ick) * kh + ki) * kw + kj] += acc;
                }
          }
        }

        if (gr.needs_grad(x)) {  // input gradient, gather form
          std::vector<float> gx(static_cast<size_t>(vin.size()), 0.0f);
#pragma omp parallel for collapse(2) schedule(static)
          for (int n = 0; n < isb.n; ++n) {
            for (int ic = 0; ic < isb.c; ++ic) {
              const int gi = ic / cig;
              const int ick = ic % cig;
              float* gxc = gx.data() + ((static_cast<long long>(n) * isb.c + ic) * isb.h) * isb.w;
              for (int ih = 0; ih < isb.h; ++ih)
                for (int iw = 0; iw < isb.w; ++iw) {
                  float acc = 0.0f;
                  for (int ocl = 0; ocl < co_per_g; ++ocl) {
                    const int oc = gi * co_per_g + ocl;
                    const float* go =
                        gop + ((static_cast<long long>(n) * co + oc) * oh_n) * ow_n;
                    const float* kc = pkv + ((static_cast<long long>(oc) * cig + ick) * kh) * kw;
                    for (int ki = 0; ki < kh; ++ki) {
                      const int t = ih + pad_t - ki * dil;
                      if (t < 0 || t % stride != 0) continue;
                      const int oh = t / stride;
                      if (oh >= oh_n) continue;
                      for (int kj = 0; kj < kw; ++kj) {
                        const int u = iw + pad_l - kj * dil;
                        if (u < 0 || u % stride != 0) continue;
                        const int ow = u / stride;
                        if (ow >= ow_n) continue;
                        acc += go[oh * ow_n + ow] * kc[ki * kw + kj];
                      }
                    }
                  }
                  gxc[ih * isb.w + iw] += acc;
                }
            }
          }
          gr.accumulate_grad(x, gx);
        }
      },
      /*touches_params=*/true);
}

NodeId transposed_conv2d(Graph& g, NodeId x, ConvParams& p) {
  const Tensor& in = g.value(x);
  const Shape is = in.shape();
  const Shape ks = p.kernel.shape();  // (C_in, C_out, kh, kw)
  const int ci = ks.n, co = ks.c, kh = ks.h, kw = ks.w;
  if (p.groups != 1) throw ConfigError("transposed_conv2d supports groups=1 only");
  if (is.c != ci) {
    throw ShapeError("transposed_conv2d input channels " + std::to_string(is.c) +
                     " != kernel " + std::to_string(ci));
  }
  const int stride = p.stride;
  const int oh_n = (is.h - 1) * stride + kh;
  const int ow_n = (is.w - 1) * stride + kw;

  Tensor out({is.n, co, oh_n, ow_n}, 0.0f);
  const float* px = in.data();
  const float* pk = p.kernel.data();
  const float* pb = p.bias.data();
  float* po = out.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < is.n; ++n) {
    for (int oc = 0; oc < co; ++oc) {
      for (int oh = 0; oh < oh_n; ++oh) {
        for (int ow = 0; ow < ow_n; ++ow) {
          float acc = pb[oc];
          for (int ic = 0; ic < ci; ++ic) {
            const float* xc = px + ((static_cast<long long>(n) * ci + ic) * is.h) * is.w;
            const float* kc = pk + ((static_cast<long long>(ic) * co + oc) * kh) * kw;
            for (int ki = 0; ki < kh; ++ki) {
              const int t = oh - ki;
              if (t < 0 || t % stride != 0) continue;
              const int ih = t / stride;
              if (ih >= is.h) continue;
              for (int kj = 0; kj < kw; ++kj) {
                const int u = ow - kj;
                if (u < 0 || u % stride != 0) continue;
                const int iw = u / stride;
                if (iw >= is.w) continue;
                acc += xc[ih * is.w + iw] * kc[ki * kw + kj];
              }
            }
          }
          po[((static_cast<long long>(n) * co + oc) * oh_n + oh) * ow_n + ow] = acc;
        }
      }
    }
  }

  g.add_flops(2LL * is.n * ci * is.h * is.w * co * kh * kw);

  ConvParams* pp = &p;
  return g.push(
      std::move(out), {x},
      [=](Graph& gr, const Tensor& gout) {
        const Tensor& vin = gr.value(x);
        const Shape isb = vin.shape();
        const float* gop = gout.data();
        const float* pxv = vin.data();
        const float* pkv = pp->kernel.data();

        {
          std::vector<float>& gb = pp->bias.grad();
          for (int n = 0; n < isb.n; ++n)
            for (int oc = 0; oc < co; ++oc) {
              const float* go = gop + ((static_cast<long long>(n) * co + oc) * oh_n) * ow_n;
              float acc = 0.0f;
              for (long long i = 0; i < static_cast<long long>(oh_n) * ow_n; ++i) acc += go[i];
              gb[oc] += acc;
            }
        }

        {
          std::vector<float>& gk = pp->kernel.grad();
#pragma omp parallel for schedule(static)
          for (int ic = 0; ic < ci; ++ic) {
            for (int oc = 0; oc < co; ++oc)
              for (int ki = 0; ki < kh; ++ki)
                for (int kj = 0; kj < kw; ++kj) {
                  float acc = 0.0f;
                  for (int n = 0; n < isb.n; ++n) {
                    const float* xc =
                        pxv + ((static_cast<long long>(n) * ci + ic) * isb.h) * isb.w;
                    const float* go =
                        gop + ((static_cast<long long>(n) * co + oc) * oh_n) * ow_n;
                    for (int ih = 0; ih < isb.h; ++ih)
                      for (int iw = 0; iw < isb.w; ++iw) {
                        acc += xc[ih * isb.w + iw] *
                               go[(ih * stride + ki) * ow_n + (iw * stride + kj)];
                      }
                  }
                  gk[((static_cast<long long>(ic) * co + oc) * kh + ki) * kw + kj] += acc;
                }
          }
        }

        if (gr.needs_grad(x)) {
          std::vector<float> gx(static_cast<size_t>(vin.size()), 0.0f);
#pragma omp parallel for collapse(2) schedule(static)
          for (int n = 0; n < isb.n; ++n) {
            for (int ic = 0; ic < ci; ++ic) {
              float* gxc = gx.data() + ((static_cast<long long>(n) * ci + ic) * isb.h) * isb.w;
              for (int ih = 0; ih < isb.h; ++ih)
                for (int iw = 0; iw < isb.w; ++iw) {
                  float acc = 0.0f;
                  for (int oc = 0; oc < co; ++oc) {
                    const float* go =
                        gop + ((static_cast<long long>(n) * co + oc) * oh_n) * ow_n;
                    const float* kc = pkv + ((static_cast<long long>(ic) * co + oc) * kh) * kw;
                    for (int ki = 0; ki < kh; ++ki)
                      for (int kj = 0; kj < kw; ++kj) {
                        acc += go[(ih * stride + ki) * ow_n + (iw * stride + kj)] *
                               kc[ki * kw + kj];
                      }
                  }
                  gxc[ih * isb.w + iw] = acc;
                }
            }
          }
          gr.accumulate_grad(x, gx);
        }
      },
      /*touches_params=*/true);
}

NodeId pool2d(Graph& g, NodeId x, PoolMode mode, int window, int stride) {
  const Tensor& in = g.value(x);
  const Shape is = in.shape();
  if (window < 1 || stride < 1) throw ConfigError("pool window/stride must be >= 1");
  if (window > is.h || window > is.w) {
    throw ShapeError("pool window " + std::to_string(window) + " exceeds input " + is.str());
  }
  const int oh_n = (is.h - window) / stride + 1;
  const int ow_n = (is.w - window) / stride + 1;
  Tensor out({is.n, is.c, oh_n, ow_n}, 0.0f);
  auto argmax = std::make_shared<std::vector<long long>>();
  if (mode == PoolMode::Max) argmax->resize(static_cast<size_t>(out.size()));
  const float inv_area = 1.0f / (static_cast<float>(window) * window);

  const float* px = in.data();
  float* po = out.data();
  for (int n = 0; n < is.n; ++n)
    for (int c = 0; c < is.c; ++c) {
      const float* xc = px + ((static_cast<long long>(n) * is.c + c) * is.h) * is.w;
      for (int oh = 0; oh < oh_n; ++oh)
        for (int ow = 0; ow < ow_n; ++ow) {
          const long long oidx = ((static_cast<long long>(n) * is.c + c) * oh_n + oh) * ow_n + ow;
          if (mode == PoolMode::Max) {
            float best = -std::numeric_limits<float>::infinity();
            long long best_idx = 0;
            for (int i = 0; i < window; ++i)
              for (int j = 0; j < window; ++j) {
                const long long idx = (oh * stride + i) * is.w + (ow * stride + j);
                if (xc[idx] > best) {  // ties break to first in scan order
                  best = xc[idx];
                  best_idx = idx;
                }
              }
            po[oidx] = best;
            (*argmax)[oidx] = ((static_cast<long long>(n) * is.c + c) * is.h) * is.w + best_idx;
          } else {
            float acc = 0.0f;
            for (int i = 0; i < window; ++i)
              for (int j = 0; j < window; ++j)
                acc += xc[(oh * stride + i) * is.w + (ow * stride + j)];
            po[oidx] = acc * inv_area;
          }
        }
    }

  g.add_flops(out.size());

  return g.push(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
    if (!gr.needs_grad(x)) return;
    const Tensor& vin = gr.value(x);
    std::vector<float> gx(static_cast<size_t>(vin.size()), 0.0f);
    const float* gop = gout.data();
    if (mode == PoolMode::Max) {
      for (long long o = 0; o < gout.size(); ++o) gx[(*argmax)[o]] += gop[o];
    } else {
      const Shape isb = vin.shape();
      for (int n = 0; n < isb.n; ++n)
        for (int c = 0; c < isb.c; ++c) {
          float* gxc = gx.data() + ((static_cast<long long>(n) * isb.c + c) * isb.h) * isb.w;
          for (int oh = 0; oh < oh_n; ++oh)
            for (int ow = 0; ow < ow_n; ++ow) {
              const float go =
                  gop[((static_cast<long long>(n) * isb.c + c) * oh_n + oh) * ow_n + ow] *
                  inv_area;
              for (int i = 0; i < window; ++i)
                for (int j = 0; j < window; ++j)
                  gxc[(oh * stride + i) * isb.w + (ow * stride + j)] += go;
            }
        }
    }
    gr.accumulate_grad(x, gx);
  });
}

NodeId global_pool(Graph& g, NodeId x, PoolMode mode) {
  const Tensor& in = g.value(x);
  const Shape is = in.shape();
  const long long hw = static_cast<long long>(is.h) * is.w;
  Tensor out({is.n, is.c, 1, 1}, 0.0f);
  auto argmax = std::make_shared<std::vector<long long>>();
  if (mode == PoolMode::Max) argmax->resize(static_cast<size_t>(out.size()));
  const float* px = in.data();
  float* po = out.data();
  for (long long nc = 0; nc < static_cast<long long>(is.n) * is.c; ++nc) {
    const float* xc = px + nc * hw;
    if (mode == PoolMode::Max) {
      float best = xc[0];
      long long best_idx = 0;
      for (long long i = 1; i < hw; ++i)
        if (xc[i] > best) {
          best = xc[i];
          best_idx = i;
        }
      po[nc] = best;
      (*argmax)[nc] = nc * hw + best_idx;
    } else {
      double acc = 0.0;
      for (long long i = 0; i < hw; ++i) acc += xc[i];
      po[nc] = static_cast<float>(acc / static_cast<double>(hw));
    }
  }
  g.add_flops(in.size());

  return g.push(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
    if (!gr.needs_grad(x)) return;
    const Tensor& vin = gr.value(x);
    std::vector<float> gx(static_cast<size_t>(vin.size()), 0.0f);
    const long long hwb = static_cast<long long>(vin.shape().h) * vin.shape().w;
    const float* gop = gout.data();
    if (mode == PoolMode::Max) {
      for (long long nc = 0; nc < gout.size(); ++nc) gx[(*argmax)[nc]] += gop[nc];
    } else {
      const float inv = 1.0f / static_cast<float>(hwb);
      for (long long nc = 0; nc < gout.size(); ++nc)
        for (long long i = 0; i < hwb; ++i) gx[nc * hwb + i] = gop[nc] * inv;
    }
    gr.accumulate_grad(x, gx);
  });
}

NodeId batch_norm(Graph& g, NodeId x, NormParams& p) {
  const Tensor& in = g.value(x);
  const Shape is = in.shape();
  if (is.c != p.scale.shape().c) {
    throw ShapeError("batch_norm channel mismatch: input " + is.str());
  }
  const long long per_channel = static_cast<long long>(is.n) * is.h * is.w;
  const bool train = g.mode == Mode::Train;
  if (train && per_channel < 2) {
    throw DomainError("batch_norm train mode needs at least 2 values per channel");
  }

  auto mean = std::make_shared<std::vector<float>>(is.c);
  auto inv_std = std::make_shared<std::vector<float>>(is.c);
  auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(in.size()));

  const long long hw = static_cast<long long>(is.h) * is.w;
  const float* px = in.data();
  for (int c = 0; c < is.c; ++c) {
    double m, v;
    if (train) {
      double sum = 0.0, sq = 0.0;
      for (int n = 0; n < is.n; ++n) {
        const float* xc = px + (static_cast<long long>(n) * is.c + c) * hw;
        for (long long i = 0; i < hw; ++i) {
          sum += xc[i];
          sq += static_cast<double>(xc[i]) * xc[i];
        }
      }
      m = sum / static_cast<double>(per_channel);
      v = std::max(0.0, sq / static_cast<double>(per_channel) - m * m);
      p.running_mean.values()[c] =
          p.momentum * p.running_mean.values()[c] + (1.0f - p.momentum) * static_cast<float>(m);
      p.running_var.values()[c] =
          p.momentum * p.running_var.values()[c] + (1.0f - p.momentum) * static_cast<float>(v);
    } else {
      m = p.running_mean.values()[c];
      v = p.running_var.values()[c];
    }
    (*mean)[c] = static_cast<float>(m);
    (*inv_std)[c] = static_cast<float>(1.0 / std::sqrt(v + p.epsilon));
  }

  Tensor out(is, 0.0f);
  float* po = out.data();
  const float* sc = p.scale.data();
  const float* sh = p.shift.data();
  for (int n = 0; n < is.n; ++n)
    for (int c = 0; c < is.c; ++c) {
      const long long base = (static_cast<long long>(n) * is.c + c) * hw;
      for (long long i = 0; i < hw; ++i) {
        const float h = (px[base + i] - (*mean)[c]) * (*inv_std)[c];
        (*xhat)[base + i] = h;
        po[base + i] = sc[c] * h + sh[c];
      }
    }
  g.add_flops(in.size());

  NormParams* pp = &p;
  return g.push(
      std::move(out), {x},
      [=](Graph& gr, const Tensor& gout) {
        const Tensor& vin = gr.value(x);
        const Shape isb = vin.shape();
        const long long hwb = static_cast<long long>(isb.h) * isb.w;
        const long long per_ch = static_cast<long long>(isb.n) * hwb;
        const float* gop = gout.data();
        std::vector<float>& gsc = pp->scale.grad();
        std::vector<float>& gsh = pp->shift.grad();
        std::vector<float> sum_go(isb.c, 0.0f), sum_go_xhat(isb.c, 0.0f);
        for (int n = 0; n < isb.n; ++n)
          for (int c = 0; c < isb.c; ++c) {
            const long long base = (static_cast<long long>(n) * isb.c + c) * hwb;
            double a = 0.0, b = 0.0;
            for (long long i = 0; i < hwb; ++i) {
              a += gop[base + i];
              b += static_cast<double>(gop[base + i]) * (*xhat)[base + i];
            }
            sum_go[c] += static_cast<float>(a);
            sum_go_xhat[c] += static_cast<float>(b);
          }
        for (int c = 0; c < isb.c; ++c) {
          gsh[c] += sum_go[c];
          gsc[c] += sum_go_xhat[c];
        }
        if (!gr.needs_grad(x)) return;
        std::vector<float> gx(static_cast<size_t>(vin.size()));
        const float* scv = pp->scale.data();
        for (int n = 0; n < isb.n; ++n)
          for (int c = 0; c < isb.c; ++c) {
            const long long base = (static_cast<long long>(n) * isb.c + c) * hwb;
            const float k = scv[c] * (*inv_std)[c];
            if (train) {
              const float mg = sum_go[c] / static_cast<float>(per_ch);
              const float mgx = sum_go_xhat[c] / static_cast<float>(per_ch);
              for (long long i = 0; i < hwb; ++i) {
                gx[base + i] = k * (gop[base + i] - mg - (*xhat)[base + i] * mgx);
              }
            } else {
              for (long long i = 0; i < hwb; ++i) gx[base + i] = k * gop[base + i];
            }
          }
        gr.accumulate_grad(x, gx);
      },
      /*touches_params=*/true);
}

NodeId layer_norm(Graph& g, NodeId x, NormParams& p) {
  const Tensor& in = g.value(x);
  const Shape is = in.shape();
  if (is.c != p.scale.shape().c) {
    throw ShapeError("layer_norm channel mismatch: input " + is.str());
  }
  const long long hw = static_cast<long long>(is.h) * is.w;
  auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(in.size()));
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(is.n) * hw);

  Tensor out(is, 0.0f);
  const float* px = in.data();
  float* po = out.data();
  const float* sc = p.scale.data();
  const float* sh = p.shift.data();
  for (int n = 0; n < is.n; ++n)
    for (long long s = 0; s < hw; ++s) {
      double sum = 0.0, sq = 0.0;
      for (int c = 0; c < is.c; ++c) {
        const float v = px[(static_cast<long long>(n) * is.c + c) * hw + s];
        sum += v;
        sq += static_cast<double>(v) * v;
      }
      const double m = sum / is.c;
      const double var = std::max(0.0, sq / is.c - m * m);
      const float istd = static_cast<float>(1.0 / std::sqrt(var + p.epsilon));
      (*inv_std)[static_cast<long long>(n) * hw + s] = istd;
      for (int c = 0; c < is.c; ++c) {
        const long long idx = (static_cast<long long>(n) * is.c + c) * hw + s;
        const float h = (px[idx] - static_cast<float>(m)) * istd;
        (*xhat)[idx] = h;
        po[idx] = sc[c] * h + sh[c];
      }
    }
  g.add_flops(in.size());

  NormParams* pp = &p;
  return g.push(
      std::move(out), {x},
      [=](Graph& gr, const Tensor& gout) {
        const Tensor& vin = gr.value(x);
        const Shape isb = vin.shape();
        const long long hwb = static_cast<long long>(isb.h) * isb.w;
        const float* gop = gout.data();
        std::vector<float>& gsc = pp->scale.grad();
        std::vector<float>& gsh = pp->shift.grad();
        const float* scv = pp->scale.data();
        std::vector<float> gx;
        const bool want_x = gr.needs_grad(x);
        if (want_x) gx.assign(static_cast<size_t>(vin.size()), 0.0f);
        for (int n = 0; n < isb.n; ++n)
          for (long long s = 0; s < hwb; ++s) {
            double mean_a = 0.0, mean_ax = 0.0;
            for (int c = 0; c < isb.c; ++c) {
              const long long idx = (static_cast<long long>(n) * isb.c + c) * hwb + s;
              const float a = gop[idx] * scv[c];
              mean_a += a;
              mean_ax += static_cast<double>(a) * (*xhat)[idx];
              gsh[c] += gop[idx];
              gsc[c] += gop[idx] * (*xhat)[idx];
            }
            if (!want_x) continue;
            mean_a /= isb.c;
            mean_ax /= isb.c;
            const float istd = (*inv_std)[static_cast<long long>(n) * hwb + s];
            for (int c = 0; c < isb.c; ++c) {
              const long long idx = (static_cast<long long>(n) * isb.c + c) * hwb + s;
              const float a = gop[idx] * scv[c];
              gx[idx] = istd * (a - static_cast<float>(mean_a) -
                                (*xhat)[idx] * static_cast<float>(mean_ax));
            }
          }
        if (want_x) gr.accumulate_grad(x, gx);
      },
      /*touches_params=*/true);
}

NodeId dense(Graph& g, NodeId x, DenseParams& p) {
  const Tensor& in = g.value(x);
  const Shape is = in.shape();
  const int fo = p.weight.shape().n;
  const int fi = p.weight.shape().c;
  if (is.c != fi) {
    throw ShapeError("dense features_in " + std::to_string(fi) + " != input channels " +
                     std::to_string(is.c));
  }
  const long long hw = static_cast<long long>(is.h) * is.w;
  Tensor out({is.n, fo, is.h, is.w}, 0.0f);
  const float* px = in.data();
  const float* pw = p.weight.data();
  const float* pb = p.bias.data();
  float* po = out.data();
  for (int n = 0; n < is.n; ++n)
    for (int o = 0; o < fo; ++o)
      for (long long s = 0; s < hw; ++s) {
        float acc = pb[o];
        for (int i = 0; i < fi; ++i) {
          acc += px[(static_cast<long long>(n) * fi + i) * hw + s] * pw[o * fi + i];
        }
        po[(static_cast<long long>(n) * fo + o) * hw + s] = acc;
      }
  g.add_flops(2LL * is.n * fo * fi * hw);

  DenseParams* pp = &p;
  return g.push(
      std::move(out), {x},
      [=](Graph& gr, const Tensor& gout) {
        const Tensor& vin = gr.value(x);
        const long long hwb = static_cast<long long>(vin.shape().h) * vin.shape().w;
        const int nb = vin.shape().n;
        const float* gop = gout.data();
        const float* pxv = vin.data();
        std::vector<float>& gw = pp->weight.grad();
        std::vector<float>& gb = pp->bias.grad();
        for (int n = 0; n < nb; ++n)
          for (int o = 0; o < fo; ++o) {
            const float* go = gop + (static_cast<long long>(n) * fo + o) * hwb;
            float acc_b = 0.0f;
            for (long long s = 0; s < hwb; ++s) acc_b += go[s];
            gb[o] += acc_b;
            for (int i = 0; i < fi; ++i) {
              const float* xi = pxv + (static_cast<long long>(n) * fi + i) * hwb;
              float acc = 0.0f;
              for (long long s = 0; s < hwb; ++s) acc += go[s] * xi[s];
              gw[o * fi + i] += acc;
            }
          }
        if (!gr.needs_grad(x)) return;
        std::vector<float> gx(static_cast<size_t>(vin.size()), 0.0f);
        const float* pwv = pp->weight.data();
        for (int n = 0; n < nb; ++n)
          for (int i = 0; i < fi; ++i) {
            float* gxc = gx.data() + (static_cast<long long>(n) * fi + i) * hwb;
            for (int o = 0; o < fo; ++o) {
              const float* go = gop + (static_cast<long long>(n) * fo + o) * hwb;
              const float w = pwv[o * fi + i];
              for (long long s = 0; s < hwb; ++s) gxc[s] += go[s] * w;
            }
          }
        gr.accumulate_grad(x, gx);
      },
      /*touches_params=*/true);
}

}  // namespace lfa
