#include "lfa/model.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace lfa {

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  for (int w : stage_widths) {
    if (w < 3) throw ConfigError("stage widths must be >= 3");
  }
  for (int s : raa_on_skips) {
    if (s < 1 || s > 3) throw ConfigError("raa_on_skips entries must be in {1,2,3}");
  }
  if (!use_skips && !raa_on_skips.empty()) {
    throw ConfigError("raa_on_skips requires use_skips=true");
  }
  if (!(alpha > 0.0f && alpha <= 1.0f)) throw ConfigError("alpha must lie in (0,1]");
  if (gamma < 1.0f) throw ConfigError("gamma must be >= 1");
  if (drop_rate < 0.0f || drop_rate >= 1.0f) throw ConfigError("drop_rate must lie in [0,1)");
}

namespace {

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string float_str(float v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": " + v);
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "in_channels = " << in_channels << "\n";
  os << "stage_widths = " << stage_widths[0] << "," << stage_widths[1] << "," << stage_widths[2]
     << "\n";
  os << "use_multiscale = " << bool_str(use_multiscale) << "\n";
  os << "use_skips = " << bool_str(use_skips) << "\n";
  os << "raa_on_skips = ";
  bool first = true;
  for (int s : raa_on_skips) {
    if (!first) os << ",";
    os << s;
    first = false;
  }
  os << "\n";
  os << "use_lf_bottleneck = " << bool_str(use_lf_bottleneck) << "\n";
  os << "use_raa_bottleneck = " << bool_str(use_raa_bottleneck) << "\n";
  os << "alpha = " << float_str(alpha) << "\n";
  os << "gamma = " << float_str(gamma) << "\n";
  os << "drop_rate = " << float_str(drop_rate) << "\n";
  os << "leaky_slope = " << float_str(leaky_slope) << "\n";
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig cfg;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line missing '=': " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "in_channels") {
      cfg.in_channels = std::stoi(val);
    } else if (key == "stage_widths") {
      auto ws = parse_int_list(val);
      if (ws.size() != 3) throw ConfigError("stage_widths needs 3 entries");
      std::copy(ws.begin(), ws.end(), cfg.stage_widths.begin());
    } else if (key == "use_multiscale") {
      cfg.use_multiscale = parse_bool(val, key);
    } else if (key == "use_skips") {
      cfg.use_skips = parse_bool(val, key);
    } else if (key == "raa_on_skips") {
      cfg.raa_on_skips.clear();
      for (int s : parse_int_list(val)) cfg.raa_on_skips.insert(s);
    } else if (key == "use_lf_bottleneck") {
      cfg.use_lf_bottleneck = parse_bool(val, key);
    } else if (key == "use_raa_bottleneck") {
      cfg.use_raa_bottleneck = parse_bool(val, key);
    } else if (key == "alpha") {
      cfg.alpha = std::stof(val);
    } else if (key == "gamma") {
      cfg.gamma = std::stof(val);
    } else if (key == "drop_rate") {
      cfg.drop_rate = std::stof(val);
    } else if (key == "leaky_slope") {
      cfg.leaky_slope = std::stof(val);
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  cfg.validate();
  return cfg;
}

namespace {

// Width of the single-conv encoder stage used when multiscale is off. Kept
// below the multiscale stage's parameter count so the ablation ladder grows
// monotonically.
int single_branch_width(int stage_width) { return std::max(1, (2 * stage_width) / 3); }

}  // namespace

Model build_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  m.rng_seed = seed;
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));

  int c_prev = config.in_channels;
  for (int k = 0; k < 3; ++k) {
    EncoderStage& st = m.enc[k];
    const int width = config.stage_widths[k];
    if (config.use_multiscale) {
      // Branch split: remainder goes to the 3x3 branch.
      const int wa = width / 3;
      const int wd = width / 3;
      const int wb = width - wa - wd;
      st.pw = make_conv(c_prev, wa, 1, rng);
      st.c3 = make_conv(c_prev, wb, 3, rng);
      st.dil = make_conv(c_prev, wd, 3, rng, 1, /*dilation=*/2);
      st.out_channels = width;
    } else {
      st.single = make_conv(c_prev, single_branch_width(width), 3, rng);
      st.out_channels = single_branch_width(width);
    }
    st.bn = make_norm(st.out_channels);
    c_prev = st.out_channels;
  }

  for (int s = 1; s <= 3; ++s) {
    if (config.raa_on_skips.count(s)) {
      m.raa_skip[s - 1] = make_raa(m.enc[s - 1].out_channels, rng);
    }
  }

  const int c3_ch = m.enc[2].out_channels;
  if (config.use_lf_bottleneck) {
    m.lf = make_litefusion(c3_ch, rng, config.alpha, config.gamma, config.drop_rate);
  }
  if (config.use_raa_bottleneck) {
    m.raa_bottleneck = make_raa(c3_ch, rng);
  }
  const bool bottleneck_attn = config.use_lf_bottleneck || config.use_raa_bottleneck;
  const int bott_ch = bottleneck_attn ? 2 * c3_ch : c3_ch;

  const int w2 = m.enc[1].out_channels;
  const int w1 = m.enc[0].out_channels;
  m.dec[0].up = make_transposed_conv(bott_ch, w2, 2, 2, rng);
  m.dec[0].fuse3 = make_conv((config.use_skips ? w2 : 0) + w2, w2, 3, rng);
  m.dec[0].out_channels = w2;
  m.dec[1].up = make_transposed_conv(w2, w1, 2, 2, rng);
  m.dec[1].fuse3 = make_conv((config.use_skips ? w1 : 0) + w1, w1, 3, rng);
  m.dec[1].out_channels = w1;

  m.final_up = make_transposed_conv(w1, w1, 2, 2, rng);
  m.head = make_conv(w1, 1, 1, rng);
  return m;
}

namespace {

void add_conv(NamedTensors& out, const std::string& name, ConvParams& p) {
  out.emplace_back(name + ".kernel", &p.kernel);
  out.emplace_back(name + ".bias", &p.bias);
}

void add_norm(NamedTensors& out, const std::string& name, NormParams& p) {
  out.emplace_back(name + ".scale", &p.scale);
  out.emplace_back(name + ".shift", &p.shift);
}

void add_norm_state(NamedTensors& out, const std::string& name, NormParams& p) {
  out.emplace_back(name + ".running_mean", &p.running_mean);
  out.emplace_back(name + ".running_var", &p.running_var);
}

void add_dense(NamedTensors& out, const std::string& name, DenseParams& p) {
  out.emplace_back(name + ".weight", &p.weight);
  out.emplace_back(name + ".bias", &p.bias);
}

void add_raa(NamedTensors& out, const std::string& name, RaaParams& p) {
  add_conv(out, name + ".conv3", p.conv3);
  add_norm(out, name + ".bn", p.bn);
}

void add_lf(NamedTensors& out, const std::string& name, LiteFusionParams& p) {
  add_conv(out, name + ".entry_pw", p.entry_pw);
  add_norm(out, name + ".entry_ln", p.entry_ln);
  add_conv(out, name + ".entry_conv3", p.entry_conv3);
  add_conv(out, name + ".ctx_conv3", p.ctx_conv3);
  add_conv(out, name + ".ctx_pw", p.ctx_pw);
  add_conv(out, name + ".att_pw", p.att_pw);
  add_conv(out, name + ".spatial_conv3", p.spatial_conv3);
  add_conv(out, name + ".mod_pw", p.mod_pw);
  add_conv(out, name + ".proj_a", p.proj_a);
  add_conv(out, name + ".proj_b", p.proj_b);
  add_norm(out, name + ".tok_ln", p.tok_ln);
  add_conv(out, name + ".tok_dwc", p.tok_dwc);
  add_norm(out, name + ".chan_ln", p.chan_ln);
  add_dense(out, name + ".chan_dense1", p.chan_dense1);
  add_dense(out, name + ".chan_dense2", p.chan_dense2);
}

}  // namespace

NamedTensors Model::trainable() {
  NamedTensors out;
  for (int k = 0; k < 3; ++k) {
    const std::string base = "enc" + std::to_string(k + 1);
    if (config.use_multiscale) {
      add_conv(out, base + ".pw", enc[k].pw);
      add_conv(out, base + ".c3", enc[k].c3);
      add_conv(out, base + ".dil", enc[k].dil);
    } else {
      add_conv(out, base + ".single", enc[k].single);
    }
    add_norm(out, base + ".bn", enc[k].bn);
  }
  for (int s = 1; s <= 3; ++s) {
    if (raa_skip[s - 1]) add_raa(out, "raa_skip" + std::to_string(s), *raa_skip[s - 1]);
  }
  if (lf) add_lf(out, "lf", *lf);
  if (raa_bottleneck) add_raa(out, "raa_bottleneck", *raa_bottleneck);
  for (int d = 0; d < 2; ++d) {
    const std::string base = "dec" + std::to_string(2 - d);
    add_conv(out, base + ".up", dec[d].up);
    add_conv(out, base + ".fuse3", dec[d].fuse3);
  }
  add_conv(out, "final_up", final_up);
  add_conv(out, "head", head);
  return out;
}

NamedTensors Model::state_tensors() {
  NamedTensors out;
  for (int k = 0; k < 3; ++k) {
    add_norm_state(out, "enc" + std::to_string(k + 1) + ".bn", enc[k].bn);
  }
  for (int s = 1; s <= 3; ++s) {
    if (raa_skip[s - 1]) {
      add_norm_state(out, "raa_skip" + std::to_string(s) + ".bn", raa_skip[s - 1]->bn);
    }
  }
  if (raa_bottleneck) add_norm_state(out, "raa_bottleneck.bn", raa_bottleneck->bn);
  return out;
}

NodeId encoder_block(Graph& g, NodeId x, int stage, Model& m) {
  EncoderStage& st = m.enc[stage - 1];
  ScopeGuard scope(g, "enc" + std::to_string(stage));
  NodeId merged;
  if (m.config.use_multiscale) {
    NodeId a = conv2d(g, x, st.pw);
    NodeId b = conv2d(g, x, st.c3);
    NodeId c = conv2d(g, x, st.dil);
    merged = concat_channels(g, {a, b, c});
  } else {
    merged = conv2d(g, x, st.single);
  }
  NodeId pooled = pool2d(g, batch_norm(g, merged, st.bn), PoolMode::Max, 2, 2);
  return leaky_relu(g, pooled, m.config.leaky_slope);
}

NodeId bottleneck(Graph& g, NodeId c3, Model& m) {
  ScopeGuard scope(g, "bottleneck");
  NodeId skip = c3;
  if (m.config.raa_on_skips.count(3) && m.raa_skip[2]) {
    ScopeGuard s(g, "raa_skip3");
    skip = raa_forward(g, c3, *m.raa_skip[2]);
  }
  NodeId attn{};
  if (m.lf) {
    ScopeGuard s(g, "lf");
    attn = litefusion_forward(g, c3, *m.lf);
  }
  if (m.raa_bottleneck) {
    ScopeGuard s(g, "raa_bottleneck");
    attn = raa_forward(g, attn.valid() ? attn : c3, *m.raa_bottleneck);
  }
  if (!attn.valid()) return skip;
  return concat_channels(g, {attn, skip});
}

NodeId decoder_stage(Graph& g, NodeId skip, NodeId below, int stage, Model& m) {
  DecoderStage& ds = m.dec[stage == 2 ? 0 : 1];
  ScopeGuard scope(g, "dec" + std::to_string(stage));
  NodeId up = relu(g, transposed_conv2d(g, below, ds.up));
  NodeId fused = up;
  if (skip.valid()) {
    NodeId s = skip;
    if (m.config.raa_on_skips.count(stage) && m.raa_skip[stage - 1]) {
      ScopeGuard sg(g, "raa_skip" + std::to_string(stage));
      s = raa_forward(g, skip, *m.raa_skip[stage - 1]);
    }
    fused = concat_channels(g, {s, up});
  }
  return relu(g, conv2d(g, fused, ds.fuse3));
}

NodeId model_forward(Graph& g, NodeId image, Model& m) {
  const Shape is = g.value(image).shape();
  if (is.c != m.config.in_channels) {
    throw ShapeError("model_forward expects " + std::to_string(m.config.in_channels) +
                     " input channels, got " + std::to_string(is.c));
  }
  if (is.h % 8 != 0 || is.w % 8 != 0) {
    throw ShapeError("model_forward input spatial extents must be multiples of 8, got " +
                     is.str());
  }
  NodeId c1 = encoder_block(g, image, 1, m);
  NodeId c2 = encoder_block(g, c1, 2, m);
  NodeId c3 = encoder_block(g, c2, 3, m);
  NodeId s3 = bottleneck(g, c3, m);
  NodeId d2 = decoder_stage(g, m.config.use_skips ? c2 : NodeId{}, s3, 2, m);
  NodeId d1 = decoder_stage(g, m.config.use_skips ? c1 : NodeId{}, d2, 1, m);
  NodeId up;
  {
    ScopeGuard scope(g, "final_up");
    up = relu(g, transposed_conv2d(g, d1, m.final_up));
  }
  ScopeGuard scope(g, "head");
  return sigmoid(g, conv2d(g, up, m.head));
}

Tensor model_forward(Model& m, const Tensor& image, Mode mode, uint64_t dropout_seed) {
  Graph g(mode, dropout_seed);
  NodeId in = g.leaf(image);
  NodeId out = model_forward(g, in, m);
  return g.value(out);
}

namespace {

struct AblationRow {
  const char* name;
  const char* description;
  bool multiscale, skips;
  std::set<int> raa;
  bool lf, raab;
};

const std::vector<AblationRow>& ablation_table() {
  static const std::vector<AblationRow> rows = {
      {"LU-NS", "lightweight U-Net, no skip connections", false, false, {}, false, false},
      {"MLU-NS", "multiscale encoder, no skip connections", true, false, {}, false, false},
      {"MLU", "multiscale encoder with plain skips", true, true, {}, false, false},
      {"MLU+R-Skip", "RAA on all skip connections", true, true, {1, 2, 3}, false, false},
      {"MLU+LF-Bottleneck", "LiteFusion bottleneck", true, true, {}, true, false},
      {"MLU+R-Skip+LF-Bottleneck", "RAA skips plus LiteFusion bottleneck", true, true,
       {1, 2, 3}, true, false},
      {"MLU+LF+R-Bottleneck", "LiteFusion and RAA in the bottleneck", true, true, {}, true,
       true},
      {"MLU+R13-Skip+LF+R-Bottleneck", "RAA on skips 1 and 3, both bottleneck blocks", true,
       true, {1, 3}, true, true},
      {"MLU+R23-Skip+LF+R-Bottleneck", "RAA on skips 2 and 3, both bottleneck blocks", true,
       true, {2, 3}, true, true},
      {"MLU+R12-Skip+LF+R-Bottleneck", "RAA on skips 1 and 2, both bottleneck blocks (final)",
       true, true, {1, 2}, true, true},
  };
  return rows;
}

}  // namespace

ModelConfig ablation_config(const std::string& name) {
  for (const AblationRow& row : ablation_table()) {
    if (name == row.name) {
      ModelConfig cfg;
      cfg.use_multiscale = row.multiscale;
      cfg.use_skips = row.skips;
      cfg.raa_on_skips = row.raa;
      cfg.use_lf_bottleneck = row.lf;
      cfg.use_raa_bottleneck = row.raab;
      cfg.validate();
      return cfg;
    }
  }
  std::string valid;
  for (const AblationRow& row : ablation_table()) {
    if (!valid.empty()) valid += ", ";
    valid += row.name;
  }
  throw ConfigError("unknown ablation row '" + name + "'; valid rows: " + valid);
}

std::vector<std::pair<std::string, std::string>> ablation_rows() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const AblationRow& row : ablation_table()) out.emplace_back(row.name, row.description);
  return out;
}

}  // namespace lfa
