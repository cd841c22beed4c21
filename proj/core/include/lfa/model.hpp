#pragma once

#include <array>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lfa/attention.hpp"
#include "lfa/layers.hpp"

namespace lfa {

struct ModelConfig {
  int in_channels = 3;
  std::array<int, 3> stage_widths{20, 32, 36};
  bool use_multiscale = true;
  bool use_skips = true;
  std::set<int> raa_on_skips{1, 2};
  bool use_lf_bottleneck = true;
  bool use_raa_bottleneck = true;
  float alpha = 0.25f;
  float gamma = 2.0f;
  float drop_rate = 0.5f;
  float leaky_slope = 0.01f;

  void validate() const;
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
};

struct EncoderStage {
  // Multiscale branches (1x1, 3x3, dilated 3x3) or a single 3x3 conv.
  ConvParams pw, c3, dil;
  ConvParams single;
  NormParams bn;
  int out_channels = 0;
};

struct DecoderStage {
  ConvParams up;     // transposed conv, x2 upsample
  ConvParams fuse3;  // 3x3 conv over (skip ++ up)
  int out_channels = 0;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

struct Model {
  ModelConfig config;
  uint64_t rng_seed = 0;

  std::array<EncoderStage, 3> enc;
  std::array<std::optional<RaaParams>, 3> raa_skip;  // index 0 = skip 1
  std::optional<LiteFusionParams> lf;
  std::optional<RaaParams> raa_bottleneck;
  std::array<DecoderStage, 2> dec;  // [0] = stage 2, [1] = stage 1
  ConvParams final_up;
  ConvParams head;

  // Learnable tensors, in a fixed construction order.
  NamedTensors trainable();
  // Non-learnable persistent state (batch-norm running stats).
  NamedTensors state_tensors();
};

// He-normal kernels, zero biases, unit norm scales; (config, seed) fully
// determines every parameter byte.
Model build_model(const ModelConfig& config, uint64_t seed);

// Eqs-style single stage entry points, exposed for testing.
NodeId encoder_block(Graph& g, NodeId x, int stage, Model& m);
NodeId bottleneck(Graph& g, NodeId c3, Model& m);
NodeId decoder_stage(Graph& g, NodeId skip, NodeId below, int stage, Model& m);

// Full pipeline; input (N, in_channels, H, W) with H, W divisible by 8.
// Output (N,1,H,W) of per-pixel vessel probabilities in (0,1).
NodeId model_forward(Graph& g, NodeId image, Model& m);
Tensor model_forward(Model& m, const Tensor& image, Mode mode, uint64_t dropout_seed = 0);

// Named ablation rows of the architecture study.
ModelConfig ablation_config(const std::string& name);
std::vector<std::pair<std::string, std::string>> ablation_rows();  // name, description

}  // namespace lfa
