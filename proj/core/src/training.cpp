#include "lfa/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lfa/data_io.hpp"
#include "lfa/evalx.hpp"
#include "lfa/graph.hpp"

namespace lfa {

void DiceLossConfig::validate() const {
  if (weight_vessel < 0.0f || weight_background < 0.0f) {
    throw ConfigError("dice class weights must be non-negative");
  }
  if (std::abs(weight_vessel + weight_background - 1.0f) > 1e-6f) {
    throw ConfigError("dice class weights must sum to 1");
  }
  if (smoothing <= 0.0f) throw ConfigError("dice smoothing must be positive");
}

DiceLossResult weighted_dice_loss(const Tensor& s, const Tensor& g, const DiceLossConfig& cfg) {
  cfg.validate();
  if (!(s.shape() == g.shape())) {
    throw ShapeError("dice loss shape mismatch: " + s.shape().str() + " vs " + g.shape().str());
  }
  const float* ps = s.data();
  const float* pg = g.data();
  const long long n = s.size();
  for (long long i = 0; i < n; ++i) {
    if (!(ps[i] >= 0.0f && ps[i] <= 1.0f)) {
      throw DomainError("dice loss expects probabilities in [0,1]");
    }
    if (pg[i] != 0.0f && pg[i] != 1.0f) {
      throw DomainError("dice loss expects a binary ground truth");
    }
  }

  // Class 1: (S, G); class 2: (1-S, 1-G). All sums in double.
  double inter1 = 0.0, s1_sq = 0.0, g1_sq = 0.0;
  double inter2 = 0.0, s2_sq = 0.0, g2_sq = 0.0;
  for (long long i = 0; i < n; ++i) {
    const double sv = ps[i], gv = pg[i];
    inter1 += sv * gv;
    s1_sq += sv * sv;
    g1_sq += gv * gv;
    const double sb = 1.0 - sv, gb = 1.0 - gv;
    inter2 += sb * gb;
    s2_sq += sb * sb;
    g2_sq += gb * gb;
  }
  const double xi = cfg.smoothing;
  const double b1 = s1_sq + g1_sq + xi;
  const double b2 = s2_sq + g2_sq + xi;
  const double w1 = cfg.weight_vessel, w2 = cfg.weight_background;

  DiceLossResult res;
  res.loss = 1.0 - (w1 * 2.0 * inter1 / b1 + w2 * 2.0 * inter2 / b2);
  res.grad = Tensor(s.shape(), 0.0f);
  float* pd = res.grad.data();
  for (long long i = 0; i < n; ++i) {
    const double sv = ps[i], gv = pg[i];
    const double d1 = 2.0 * (gv * b1 - inter1 * 2.0 * sv) / (b1 * b1);
    const double d2 = -2.0 * ((1.0 - gv) * b2 - inter2 * 2.0 * (1.0 - sv)) / (b2 * b2);
    pd[i] = static_cast<float>(-(w1 * d1 + w2 * d2));
  }
  return res;
}

void AdamState::init(const NamedTensors& params) {
  m.clear();
  v.clear();
  step = 0;
  for (const auto& [name, t] : params) {
    m.emplace_back(static_cast<size_t>(t->size()), 0.0f);
    v.emplace_back(static_cast<size_t>(t->size()), 0.0f);
  }
}

AdamStepResult adam_step(NamedTensors& params, AdamState& state) {
  if (state.m.size() != params.size()) state.init(params);
  for (auto& [name, t] : params) {
    for (float gv : t->grad()) {
      if (!std::isfinite(gv)) {
        for (auto& [n2, t2] : params) t2->zero_grad();
        return {false, "non-finite gradient in " + name + "; step rejected"};
      }
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = *params[pi].second;
    std::vector<float>& grad = t.grad();
    std::vector<float>& mom = state.m[pi];
    std::vector<float>& vel = state.v[pi];
    float* w = t.data();
    for (size_t i = 0; i < grad.size(); ++i) {
      const float g = grad[i];
      mom[i] = state.beta1 * mom[i] + (1.0f - state.beta1) * g;
      vel[i] = state.beta2 * vel[i] + (1.0f - state.beta2) * g * g;
      const double mhat = mom[i] / bc1;
      const double vhat = vel[i] / bc2;
      w[i] -= static_cast<float>(state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon));
    }
    t.zero_grad();
  }
  return {true, ""};
}

std::string epoch_log_line(int epoch, const EpochStats& stats) {
  std::ostringstream os;
  os << epoch << "," << stats.mean_loss << "," << stats.train_dice << "," << stats.val_dice;
  return os.str();
}

namespace {

Tensor stack_batch(const std::vector<const Tensor*>& parts) {
  const Shape s0 = parts[0]->shape();
  Tensor out({static_cast<int>(parts.size()) * s0.n, s0.c, s0.h, s0.w}, 0.0f);
  float* dst = out.data();
  for (const Tensor* p : parts) {
    std::copy(p->data(), p->data() + p->size(), dst);
    dst += p->size();
  }
  return out;
}

void clip_gradients(NamedTensors& params, float max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : params)
    for (float g : t->grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const float factor = static_cast<float>(max_norm / norm);
  for (auto& [name, t] : params)
    for (float& g : t->grad()) g *= factor;
}

}  // namespace

EpochStats train_epoch(Model& model, const Dataset& data, const TrainRunConfig& run_cfg,
                       const DiceLossConfig& loss_cfg, AdamState& adam, int epoch) {
  if (data.samples.empty() || data.train_idx.empty()) {
    throw DataError("training requires a non-empty dataset");
  }
  if (run_cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");

  const uint64_t epoch_seed = run_cfg.seed * 1000003ULL + static_cast<uint64_t>(epoch);
  std::mt19937 shuffle_rng(static_cast<std::mt19937::result_type>(epoch_seed));
  std::vector<int> order = data.train_idx;
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  NamedTensors params = model.trainable();
  std::mt19937 aug_rng(static_cast<std::mt19937::result_type>(epoch_seed ^ 0x5bd1e995u));

  double loss_sum = 0.0;
  int batch_count = 0;
  ConfusionCounts train_counts;

  std::vector<Sample> augmented;  // holds per-batch augmented copies
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(run_cfg.batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(run_cfg.batch_size));
    std::vector<const Tensor*> images, masks;
    augmented.clear();
    augmented.reserve(end - start);
    for (size_t i = start; i < end; ++i) {
      const Sample& s = data.samples[static_cast<size_t>(order[i])];
      if (run_cfg.augment_multiplicity > 0) {
        augmented.push_back(augment(s, aug_rng));
        images.push_back(&augmented.back().image);
        masks.push_back(&augmented.back().mask);
      } else {
        images.push_back(&s.image);
        masks.push_back(&s.mask);
      }
    }
    Tensor image_batch = stack_batch(images);
    Tensor mask_batch = stack_batch(masks);

    Graph g(Mode::Train, epoch_seed * 7919ULL + static_cast<uint64_t>(batch_count));
    NodeId in = g.leaf(image_batch);
    NodeId out = model_forward(g, in, model);
    DiceLossResult loss = weighted_dice_loss(g.value(out), mask_batch, loss_cfg);
    loss_sum += loss.loss;
    train_counts += confusion_counts(g.value(out), mask_batch, run_cfg.threshold);
    g.backward(out, loss.grad);
    if (run_cfg.clip_grads) clip_gradients(params, run_cfg.clip_max_norm);
    adam_step(params, adam);
    ++batch_count;
  }

  EpochStats stats;
  stats.mean_loss = loss_sum / std::max(1, batch_count);
  stats.train_dice = metrics(train_counts).dice;

  if (!data.val_idx.empty()) {
    ConfusionCounts val_counts;
    for (int vi : data.val_idx) {
      const Sample& s = data.samples[static_cast<size_t>(vi)];
      Tensor out = model_forward(model, s.image, Mode::Infer);
      val_counts += confusion_counts(out, s.mask, run_cfg.threshold);
    }
    stats.val_dice = metrics(val_counts).dice;
  }
  return stats;
}

}  // namespace lfa
