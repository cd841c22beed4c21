#pragma once

// Loop-nest reference implementations, written independently of the graph
// ops. Accumulation order matches the engine (bias first, then input channel,
// kernel row, kernel column) so direct convolutions can be compared bitwise.

#include <random>

#include "lfa/layers.hpp"

namespace ref {

inline lfa::Tensor conv2d(const lfa::Tensor& x, const lfa::Tensor& kernel,
                          const lfa::Tensor& bias, int stride, int dilation, int groups,
                          lfa::Padding padding) {
  const lfa::Shape is = x.shape();
  const lfa::Shape ks = kernel.shape();
  const int co = ks.n, cig = ks.c, kh = ks.h, kw = ks.w;
  const int eff_kh = dilation * (kh - 1) + 1;
  const int eff_kw = dilation * (kw - 1) + 1;
  int out_h, out_w, pad_top = 0, pad_left = 0;
  if (padding == lfa::Padding::Same) {
    out_h = (is.h + stride - 1) / stride;
    out_w = (is.w + stride - 1) / stride;
    pad_top = std::max(0, (out_h - 1) * stride + eff_kh - is.h) / 2;
    pad_left = std::max(0, (out_w - 1) * stride + eff_kw - is.w) / 2;
  } else {
    out_h = (is.h - eff_kh) / stride + 1;
    out_w = (is.w - eff_kw) / stride + 1;
  }
  const int co_per_g = co / groups;
  lfa::Tensor out({is.n, co, out_h, out_w}, 0.0f);
  for (int n = 0; n < is.n; ++n)
    for (int oc = 0; oc < co; ++oc)
      for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow) {
          float acc = bias.data()[oc];
          const int ic0 = (oc / co_per_g) * cig;
          for (int ick = 0; ick < cig; ++ick)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const int ih = oh * stride - pad_top + ki * dilation;
                const int iw = ow * stride - pad_left + kj * dilation;
                if (ih < 0 || ih >= is.h || iw < 0 || iw >= is.w) continue;
                acc += x.at(n, ic0 + ick, ih, iw) * kernel.at(oc, ick, ki, kj);
              }
          out.at(n, oc, oh, ow) = acc;
        }
  return out;
}

inline lfa::Tensor pool2d(const lfa::Tensor& x, lfa::PoolMode mode, int window, int stride) {
  const lfa::Shape is = x.shape();
  const int out_h = (is.h - window) / stride + 1;
  const int out_w = (is.w - window) / stride + 1;
  lfa::Tensor out({is.n, is.c, out_h, out_w}, 0.0f);
  for (int n = 0; n < is.n; ++n)
    for (int c = 0; c < is.c; ++c)
      for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow) {
          if (mode == lfa::PoolMode::Max) {
            float best = x.at(n, c, oh * stride, ow * stride);
            for (int i = 0; i < window; ++i)
              for (int j = 0; j < window; ++j)
                best = std::max(best, x.at(n, c, oh * stride + i, ow * stride + j));
            out.at(n, c, oh, ow) = best;
          } else {
            float acc = 0.0f;
            for (int i = 0; i < window; ++i)
              for (int j = 0; j < window; ++j) acc += x.at(n, c, oh * stride + i, ow * stride + j);
            out.at(n, c, oh, ow) = acc / (static_cast<float>(window) * window);
          }
        }
  return out;
}

inline lfa::Tensor random_tensor(lfa::Shape s, std::mt19937& rng, float lo = -1.0f,
                                 float hi = 1.0f) {
  lfa::Tensor t(s, 0.0f);
  lfa::fill_uniform(t, rng, lo, hi);
  return t;
}

inline double dot(const lfa::Tensor& a, const lfa::Tensor& b) {
  double s = 0.0;
  for (long long i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a.data()[i]) * b.data()[i];
  }
  return s;
}

}  // namespace ref
