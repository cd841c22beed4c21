#pragma once

#include "lfa/layers.hpp"

namespace lfa {

// Region-Aware Attention: per-channel gate from multi-scale pooled spatial
// statistics, applied multiplicatively to the input.
struct RaaParams {
  ConvParams conv3;  // 3x3, C -> C
  NormParams bn;
};

RaaParams make_raa(int channels, std::mt19937& rng);

// Requires H, W >= 8 (the 2x2 then 4x4 pooling cascade must leave >= 1x1).
NodeId raa_forward(Graph& g, NodeId input, RaaParams& p);

// LiteFusion-Attention: sigmoid channel attention, focal modulation, token
// mixer, and channel mixer, each with a residual path. Channel count is
// preserved throughout.
struct LiteFusionParams {
  ConvParams entry_pw;       // 1x1 entry projection
  NormParams entry_ln;
  ConvParams entry_conv3;    // 3x3 after entry norm
  ConvParams ctx_conv3;      // attention-weight branch
  ConvParams ctx_pw;
  ConvParams att_pw;
  ConvParams spatial_conv3;  // spatially filtered branch
  ConvParams mod_pw;         // focal modulation pointwise map
  ConvParams proj_a;         // residual projection of the fused map
  ConvParams proj_b;         // residual projection of the modulated map
  NormParams tok_ln;
  ConvParams tok_dwc;        // depthwise 1x1 token map
  NormParams chan_ln;
  DenseParams chan_dense1;   // expansion to 2x width
  DenseParams chan_dense2;
  float alpha = 0.25f;
  float gamma = 2.0f;
  float drop_rate = 0.5f;
};

LiteFusionParams make_litefusion(int width, std::mt19937& rng, float alpha = 0.25f,
                                 float gamma = 2.0f, float drop_rate = 0.5f);

// Focal modulation stage: alpha-scaled max-avg contrast, sigmoid gate,
// gamma-power enhancement, multiplied back onto the fused features.
NodeId focal_modulation(Graph& g, NodeId fused, LiteFusionParams& p,
                        NodeId* modulated_out = nullptr);

NodeId litefusion_forward(Graph& g, NodeId f_map, LiteFusionParams& p);

}  // namespace lfa
