#pragma once

#include "lfa/graph.hpp"
#include "lfa/tensor.hpp"

namespace lfa {

enum class Padding { Same, Valid };
enum class PoolMode { Max, Avg };

struct ConvParams {
  // Regular conv: kernel is (C_out, C_in/groups, kH, kW).
  // Transposed conv: kernel is (C_in, C_out/groups, kH, kW), so a conv and
  // its adjoint can tie the same tensor.
  Tensor kernel;
  Tensor bias;  // (1, C_out, 1, 1)
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  Padding padding = Padding::Same;
};

// Builds conv parameters with He-normal kernels and zero bias.
ConvParams make_conv(int c_in, int c_out, int k, std::mt19937& rng, int stride = 1,
                     int dilation = 1, int groups = 1, Padding padding = Padding::Same);
ConvParams make_transposed_conv(int c_in, int c_out, int k, int stride, std::mt19937& rng);

struct NormParams {
  Tensor scale;  // (1,C,1,1), init 1
  Tensor shift;  // (1,C,1,1), init 0
  Tensor running_mean;
  Tensor running_var;
  float epsilon = 1e-5f;
  float momentum = 0.9f;
};

NormParams make_norm(int channels);

struct DenseParams {
  Tensor weight;  // (features_out, features_in, 1, 1)
  Tensor bias;    // (1, features_out, 1, 1)
};

DenseParams make_dense(int features_in, int features_out, std::mt19937& rng);

// Cross-correlation (no kernel flip) plus bias.
NodeId conv2d(Graph& g, NodeId x, ConvParams& p);

// Adjoint of a strided valid conv2d; spatial extent grows to (H-1)*stride + k.
NodeId transposed_conv2d(Graph& g, NodeId x, ConvParams& p);

// Square-window pooling; non-divisible extents truncate (floor).
NodeId pool2d(Graph& g, NodeId x, PoolMode mode, int window, int stride);

// Reduction over all spatial positions to (N,C,1,1).
NodeId global_pool(Graph& g, NodeId x, PoolMode mode);

// Per-channel stats over (N,H,W); Train mode updates running stats.
NodeId batch_norm(Graph& g, NodeId x, NormParams& p);

// Per-(n,h,w) stats over channels.
NodeId layer_norm(Graph& g, NodeId x, NormParams& p);

// Pointwise channel map applied at every spatial position.
NodeId dense(Graph& g, NodeId x, DenseParams& p);

}  // namespace lfa
