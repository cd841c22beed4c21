#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lfa/gradcheck.hpp"
#include "lfa/training.hpp"
#include "naive_ref.hpp"

using namespace lfa;

namespace {

// Straight-from-the-definition scalar evaluation, organized differently from
// the library (per-class helper instead of fused accumulators).
double brute_force_dice(const Tensor& s, const Tensor& g, const DiceLossConfig& cfg) {
  auto class_dice = [&](bool complement) {
    double inter = 0.0, denom = 0.0;
    for (long long i = 0; i < s.size(); ++i) {
      const double sv = complement ? 1.0 - s.data()[i] : s.data()[i];
      const double gv = complement ? 1.0 - g.data()[i] : g.data()[i];
      inter += sv * gv;
      denom += sv * sv + gv * gv;
    }
    return 2.0 * inter / (denom + cfg.smoothing);
  };
  return 1.0 - cfg.weight_vessel * class_dice(false) - cfg.weight_background * class_dice(true);
}

Tensor random_probs(std::mt19937& rng, float lo = 0.05f, float hi = 0.95f) {
  return ref::random_tensor({1, 1, 4, 4}, rng, lo, hi);
}

Tensor random_mask(std::mt19937& rng) {
  Tensor g({1, 1, 4, 4}, 0.0f);
  std::bernoulli_distribution coin(0.4);
  for (long long i = 0; i < g.size(); ++i) g.data()[i] = coin(rng) ? 1.0f : 0.0f;
  return g;
}

}  // namespace

TEST_CASE("weighted dice matches the brute-force evaluation on random cases") {
  std::mt19937 rng(21);
  DiceLossConfig cfg;
  for (int rep = 0; rep < 10; ++rep) {
    Tensor s = random_probs(rng);
    Tensor g = random_mask(rng);
    DiceLossResult res = weighted_dice_loss(s, g, cfg);
    CHECK(res.loss == doctest::Approx(brute_force_dice(s, g, cfg)).epsilon(1e-6));
    CHECK(res.loss >= 0.0);
    CHECK(res.loss <= 1.0);
  }
}

TEST_CASE("perfect overlap drives the loss to zero") {
  std::mt19937 rng(22);
  Tensor g = random_mask(rng);
  DiceLossResult res = weighted_dice_loss(g, g, DiceLossConfig{});
  CHECK(res.loss <= 1e-3);
}

TEST_CASE("total miss drives the loss toward one") {
  Tensor g({1, 1, 4, 4}, 1.0f);
  Tensor s({1, 1, 4, 4}, 0.0f);
  DiceLossResult res = weighted_dice_loss(s, g, DiceLossConfig{});
  CHECK(res.loss >= 0.99);
}

TEST_CASE("dice gradient passes the finite-difference check at 1e-4") {
  std::mt19937 rng(23);
  DiceLossConfig cfg;
  Tensor s = random_probs(rng, 0.1f, 0.9f);
  const Tensor g = random_mask(rng);
  ScalarFn fn = [&](const Tensor& sv, Tensor* gout) -> double {
    DiceLossResult res = weighted_dice_loss(sv, g, cfg);
    if (gout) *gout = res.grad;
    return res.loss;
  };
  GradReport report = grad_check("dice", fn, s, 1e-3, 1e-4);
  CHECK(report.passed);
}

TEST_CASE("dice rejects out-of-domain inputs") {
  Tensor ok({1, 1, 2, 2}, 0.5f);
  Tensor bad_s({1, 1, 2, 2}, 1.25f);
  Tensor soft_g({1, 1, 2, 2}, 0.5f);
  Tensor mask({1, 1, 2, 2}, 1.0f);
  Tensor other_shape({1, 1, 2, 3}, 1.0f);
  CHECK_THROWS_AS(weighted_dice_loss(bad_s, mask, DiceLossConfig{}), DomainError);
  CHECK_THROWS_AS(weighted_dice_loss(ok, soft_g, DiceLossConfig{}), DomainError);
  CHECK_THROWS_AS(weighted_dice_loss(ok, other_shape, DiceLossConfig{}), ShapeError);
  DiceLossConfig bad_weights;
  bad_weights.weight_vessel = 0.9f;  // no longer sums to 1
  CHECK_THROWS_AS(weighted_dice_loss(ok, mask, bad_weights), ConfigError);
  DiceLossConfig bad_xi;
  bad_xi.smoothing = 0.0f;
  CHECK_THROWS_AS(weighted_dice_loss(ok, mask, bad_xi), ConfigError);
}

TEST_CASE("boundary probabilities 0 and 1 are accepted") {
  Tensor s({1, 1, 2, 2}, std::vector<float>{0.0f, 1.0f, 0.5f, 1.0f});
  Tensor g({1, 1, 2, 2}, std::vector<float>{0.0f, 1.0f, 1.0f, 1.0f});
  CHECK_NOTHROW(weighted_dice_loss(s, g, DiceLossConfig{}));
}

TEST_CASE("adam reproduces a hand-traced update") {
  Tensor w({1, 1, 1, 2}, std::vector<float>{1.0f, -2.0f});
  NamedTensors params{{"w", &w}};
  AdamState st;
  st.init(params);

  const float grads[2][2] = {{0.5f, -1.0f}, {0.25f, 0.5f}};
  float m[2] = {0, 0}, v[2] = {0, 0};
  float expect[2] = {1.0f, -2.0f};
  for (int step = 1; step <= 2; ++step) {
    w.zero_grad();
    for (int i = 0; i < 2; ++i) w.grad()[i] = grads[step - 1][i];
    AdamStepResult res = adam_step(params, st);
    REQUIRE(res.applied);
    for (int i = 0; i < 2; ++i) {
      const float g = grads[step - 1][i];
      m[i] = 0.9f * m[i] + 0.1f * g;
      v[i] = 0.999f * v[i] + 0.001f * g * g;
      const double mhat = m[i] / (1.0 - std::pow(0.9, step));
      const double vhat = v[i] / (1.0 - std::pow(0.999, step));
      expect[i] -= static_cast<float>(0.002 * mhat / (std::sqrt(vhat) + 1e-8));
      CHECK(w.data()[i] == doctest::Approx(expect[i]).epsilon(1e-6));
    }
    for (float gv : w.grad()) CHECK(gv == 0.0f);  // cleared on success
  }
  CHECK(st.step == 2);
}

TEST_CASE("adam rejects non-finite gradients without touching the weights") {
  Tensor w({1, 1, 1, 2}, std::vector<float>{1.0f, 2.0f});
  NamedTensors params{{"w", &w}};
  AdamState st;
  st.init(params);
  w.grad()[0] = std::numeric_limits<float>::quiet_NaN();
  w.grad()[1] = 1.0f;
  AdamStepResult res = adam_step(params, st);
  CHECK(!res.applied);
  CHECK(!res.message.empty());
  CHECK(w.data()[0] == 1.0f);
  CHECK(w.data()[1] == 2.0f);
  CHECK(st.step == 0);
  CHECK(w.grad()[1] == 0.0f);  // poisoned batch is discarded entirely
}

TEST_CASE("epoch log line is comma separated") {
  EpochStats st;
  st.mean_loss = 0.5;
  st.train_dice = 0.25;
  st.val_dice = 0.125;
  CHECK(epoch_log_line(3, st) == "3,0.5,0.25,0.125");
}

TEST_CASE("train_epoch runs, reports sane stats, and changes the weights") {
  std::mt19937 rng(31);
  Dataset data;
  for (int i = 0; i < 3; ++i) {
    Sample s;
    s.image = ref::random_tensor({1, 3, 16, 16}, rng, 0.0f, 1.0f);
    s.mask = Tensor({1, 1, 16, 16}, 0.0f);
    for (int h = 0; h < 16; ++h)
      for (int w = 0; w < 8; ++w) s.mask.at(0, 0, h, w) = 1.0f;
    data.samples.push_back(std::move(s));
  }
  data.train_idx = {0, 1};
  data.val_idx = {2};

  Model m = build_model(ablation_config("MLU"), 11);  // no 8x8 minimum at 16x16
  AdamState adam;
  adam.init(m.trainable());
  TrainRunConfig rc;
  rc.batch_size = 2;
  rc.seed = 11;
  const Tensor before = m.head.kernel;
  EpochStats st = train_epoch(m, data, rc, DiceLossConfig{}, adam, 0);
  CHECK(st.mean_loss >= 0.0);
  CHECK(st.mean_loss <= 1.0);
  CHECK(st.train_dice >= 0.0);
  CHECK(st.val_dice >= 0.0);
  CHECK(m.head.kernel.values() != before.values());
  CHECK(adam.step == 1);
}

TEST_CASE("train_epoch validates its inputs") {
  Dataset empty;
  Model m = build_model(ablation_config("MLU"), 1);
  AdamState adam;
  TrainRunConfig rc;
  CHECK_THROWS_AS(train_epoch(m, empty, rc, DiceLossConfig{}, adam, 0), DataError);
}
