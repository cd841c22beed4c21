#include "lfa/attention.hpp"

namespace lfa {

RaaParams make_raa(int channels, std::mt19937& rng) {
  RaaParams p;
  p.conv3 = make_conv(channels, channels, 3, rng);
  p.bn = make_norm(channels);
  return p;
}

NodeId raa_forward(Graph& g, NodeId input, RaaParams& p) {
  const Shape is = g.value(input).shape();
  if (is.h < 8 || is.w < 8) {
    throw ShapeError("raa_forward needs spatial extent >= 8, got " + is.str());
  }
  NodeId m = relu(g, batch_norm(g, conv2d(g, input, p.conv3), p.bn));
  NodeId m1 = pool2d(g, pool2d(g, m, PoolMode::Max, 2, 2), PoolMode::Max, 4, 4);
  NodeId m2 = pool2d(g, pool2d(g, m, PoolMode::Avg, 2, 2), PoolMode::Avg, 4, 4);
  NodeId s = ew_mul(g, m1, m2);
  // One scalar gate per channel: spatial mean of S times spatial mean of m.
  NodeId att = ew_mul(g, global_pool(g, s, PoolMode::Avg), global_pool(g, m, PoolMode::Avg));
  return ew_mul(g, input, att);
}

LiteFusionParams make_litefusion(int width, std::mt19937& rng, float alpha, float gamma,
                                 float drop_rate) {
  LiteFusionParams p;
  p.entry_pw = make_conv(width, width, 1, rng);
  p.entry_ln = make_norm(width);
  p.entry_conv3 = make_conv(width, width, 3, rng);
  p.ctx_conv3 = make_conv(width, width, 3, rng);
  p.ctx_pw = make_conv(width, width, 1, rng);
  p.att_pw = make_conv(width, width, 1, rng);
  p.spatial_conv3 = make_conv(width, width, 3, rng);
  p.mod_pw = make_conv(width, width, 1, rng);
  p.proj_a = make_conv(width, width, 1, rng);
  p.proj_b = make_conv(width, width, 1, rng);
  p.tok_ln = make_norm(width);
  p.tok_dwc = make_conv(width, width, 1, rng, 1, 1, /*groups=*/width);
  p.chan_ln = make_norm(width);
  p.chan_dense1 = make_dense(width, 2 * width, rng);
  p.chan_dense2 = make_dense(2 * width, width, rng);
  p.alpha = alpha;
  p.gamma = gamma;
  p.drop_rate = drop_rate;
  return p;
}

NodeId focal_modulation(Graph& g, NodeId fused, LiteFusionParams& p, NodeId* modulated_out) {
  ScopeGuard scope(g, "focal");
  NodeId contrast = scale(
      g, ew_sub(g, global_pool(g, fused, PoolMode::Max), global_pool(g, fused, PoolMode::Avg)),
      p.alpha);
  NodeId gate = sigmoid(g, conv2d(g, contrast, p.mod_pw));  // (N,C,1,1)
  NodeId modulated = ew_mul(g, fused, gate);
  NodeId enhanced = power_clamped(g, modulated, p.gamma);
  if (modulated_out) *modulated_out = enhanced;
  return ew_mul(g, enhanced, fused);
}

NodeId litefusion_forward(Graph& g, NodeId f_map, LiteFusionParams& p) {
  NodeId l1 = conv2d(g, layer_norm(g, conv2d(g, f_map, p.entry_pw), p.entry_ln), p.entry_conv3);

  // Channel-attention weights, shaped (N,C,1,1).
  NodeId ctx = relu(g, conv2d(g, relu(g, conv2d(g, l1, p.ctx_conv3)), p.ctx_pw));
  NodeId l2 = sigmoid(g, conv2d(g, global_pool(g, ctx, PoolMode::Avg), p.att_pw));

  NodeId l3 = conv2d(g, l1, p.spatial_conv3);
  NodeId l4 = ew_mul(g, l3, l2);

  NodeId enhanced{};
  NodeId l5 = focal_modulation(g, l4, p, &enhanced);
  NodeId l6 = ew_add(g, conv2d(g, l5, p.proj_a), conv2d(g, enhanced, p.proj_b));

  NodeId tok = dropout(g, gelu(g, conv2d(g, layer_norm(g, l6, p.tok_ln), p.tok_dwc)), p.drop_rate);
  NodeId tok_res = ew_add(g, tok, l6);

  NodeId chan = dense(g, layer_norm(g, tok_res, p.chan_ln), p.chan_dense1);
  chan = dense(g, dropout(g, relu(g, chan), p.drop_rate), p.chan_dense2);
  chan = dropout(g, chan, p.drop_rate);
  return ew_add(g, chan, tok_res);
}

}  // namespace lfa
