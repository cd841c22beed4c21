#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lfa/errors.hpp"

namespace lfa {

enum class Mode { Train, Infer };

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  long long elems() const {
    return static_cast<long long>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense rank-4 (N,C,H,W) float tensor with an optional gradient buffer.
// Data is contiguous row-major in (N,C,H,W) order.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, float fill);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  long long size() const { return shape_.elems(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  long long index(int n, int c, int h, int w) const {
    return ((static_cast<long long>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  float& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  float at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  bool has_grad() const { return !grad_.empty(); }
  // Lazily allocates a zeroed buffer of the tensor's shape.
  std::vector<float>& grad();
  const std::vector<float>& grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<float> data_;
  std::vector<float> grad_;
};

enum class EwKind { Add, Mul };

// Elementwise add/mul; b may be broadcast from (N,C,1,1) over H and W.
Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b);

// Channel concatenation; parts must agree on N, H, W.
Tensor concat_channels(const std::vector<Tensor>& parts);

// Sum of all elements, accumulated in double.
double sum_all(const Tensor& t);

void fill_normal(Tensor& t, std::mt19937& rng, float mean, float stddev);
void fill_uniform(Tensor& t, std::mt19937& rng, float lo, float hi);

}  // namespace lfa
