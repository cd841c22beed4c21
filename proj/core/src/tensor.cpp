#include "lfa/tensor.hpp"

#include <cmath>
#include <sstream>

namespace lfa {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

namespace {

void check_extents(const Shape& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw ShapeError("tensor extents must be >= 1, got " + s.str());
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
  check_extents(shape);
  data_.assign(static_cast<size_t>(shape.elems()), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(shape) {
  check_extents(shape);
  if (static_cast<long long>(values.size()) != shape.elems()) {
    throw ShapeError("value list of length " + std::to_string(values.size()) +
                     " does not fill shape " + shape.str());
  }
  data_ = std::move(values);
}

std::vector<float>& Tensor::grad() {
  if (grad_.empty()) {
    grad_.assign(data_.size(), 0.0f);
  }
  return grad_;
}

void Tensor::zero_grad() {
  grad_.assign(data_.size(), 0.0f);
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool broadcast = sb.n == sa.n && sb.c == sa.c && sb.h == 1 && sb.w == 1;
  if (!(sa == sb) && !broadcast) {
    throw ShapeError("elementwise shapes incompatible: " + sa.str() + " vs " + sb.str());
  }
  Tensor out(sa, 0.0f);
  const long long hw = static_cast<long long>(sa.h) * sa.w;
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (long long i = 0; i < a.size(); ++i) {
    float vb = broadcast ? pb[i / hw] : pb[i];
    po[i] = kind == EwKind::Add ? pa[i] + vb : pa[i] * vb;
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.size() < 2) {
    throw ShapeError("concat_channels needs at least 2 parts");
  }
  const Shape& s0 = parts[0].shape();
  int c_total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels mismatch: " + s0.str() + " vs " + s.str());
    }
    c_total += s.c;
  }
  Tensor out({s0.n, c_total, s0.h, s0.w}, 0.0f);
  const long long hw = static_cast<long long>(s0.h) * s0.w;
  for (int n = 0; n < s0.n; ++n) {
    long long c_off = 0;
    for (const Tensor& p : parts) {
      const long long chunk = static_cast<long long>(p.shape().c) * hw;
      const float* src = p.data() + static_cast<long long>(n) * chunk;
      float* dst = out.data() + (static_cast<long long>(n) * c_total + c_off) * hw;
      std::copy(src, src + chunk, dst);
      c_off += p.shape().c;
    }
  }
  return out;
}

double sum_all(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.values()) acc += v;
  return acc;
}

void fill_normal(Tensor& t, std::mt19937& rng, float mean, float stddev) {
  std::normal_distribution<float> d(mean, stddev);
  for (float& v : t.values()) v = d(rng);
}

void fill_uniform(Tensor& t, std::mt19937& rng, float lo, float hi) {
  std::uniform_real_distribution<float> d(lo, hi);
  for (float& v : t.values()) v = d(rng);
}

}  // namespace lfa
