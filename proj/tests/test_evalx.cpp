#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "lfa/evalx.hpp"
#include "naive_ref.hpp"

using namespace lfa;

TEST_CASE("dice and jaccard satisfy dice = 2J/(1+J) on random counts") {
  std::mt19937 rng(41);
  std::uniform_int_distribution<long long> pick(0, 5000);
  for (int rep = 0; rep < 1000; ++rep) {
    ConfusionCounts c{pick(rng), pick(rng), pick(rng), pick(rng)};
    MetricsReport r = metrics(c);
    CHECK(std::abs(r.dice - 2.0 * r.jaccard / (1.0 + r.jaccard)) <= 1e-9);
    CHECK(r.accuracy ==
          doctest::Approx(static_cast<double>(c.tp + c.tn) / c.total()).epsilon(1e-12));
  }
}

TEST_CASE("vacuous ratios evaluate to one") {
  MetricsReport r = metrics(ConfusionCounts{0, 0, 100, 0});
  CHECK(r.dice == 1.0);
  CHECK(r.jaccard == 1.0);
  CHECK(r.sensitivity == 1.0);
}

TEST_CASE("confusion_counts matches a per-pixel oracle on random pairs") {
  std::mt19937 rng(43);
  std::uniform_real_distribution<float> prob(0.0f, 1.0f);
  std::bernoulli_distribution coin(0.3);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor pred({1, 1, 16, 16}, 0.0f);
    Tensor gt({1, 1, 16, 16}, 0.0f);
    for (long long i = 0; i < pred.size(); ++i) {
      pred.data()[i] = prob(rng);
      gt.data()[i] = coin(rng) ? 1.0f : 0.0f;
    }
    const float threshold = 0.5f;
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    for (long long i = 0; i < pred.size(); ++i) {
      const bool p = pred.data()[i] >= threshold;
      const bool g = gt.data()[i] != 0.0f;
      tp += p && g;
      fp += p && !g;
      tn += !p && !g;
      fn += !p && g;
    }
    ConfusionCounts c = confusion_counts(pred, gt, threshold);
    CHECK(c.tp == tp);
    CHECK(c.fp == fp);
    CHECK(c.tn == tn);
    CHECK(c.fn == fn);

    MetricsReport r = metrics(c);
    const double dice =
        (tp + fn + fp) == 0 ? 1.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    CHECK(r.dice == doctest::Approx(dice).epsilon(1e-12));
    if (tp + fn > 0) {
      CHECK(r.sensitivity == doctest::Approx(static_cast<double>(tp) / (tp + fn)).epsilon(1e-12));
    }
    if (tn + fp > 0) {
      CHECK(r.specificity == doctest::Approx(static_cast<double>(tn) / (tn + fp)).epsilon(1e-12));
    }
  }
}

TEST_CASE("confusion counts accumulate with +=") {
  ConfusionCounts a{1, 2, 3, 4}, b{10, 20, 30, 40};
  a += b;
  CHECK(a.tp == 11);
  CHECK(a.fn == 44);
  CHECK(a.total() == 110);
}

TEST_CASE("csv header and rows stay aligned") {
  MetricsReport r;
  r.dice = 0.5;
  const std::string header = metrics_csv_header();
  const std::string row = metrics_csv_row("sample1", r);
  CHECK(std::count(header.begin(), header.end(), ',') ==
        std::count(row.begin(), row.end(), ','));
  CHECK(row.find("sample1") == 0);
  const std::string table = metrics_table({{"overall", r}});
  CHECK(table.find("overall") != std::string::npos);
}

TEST_CASE("count_params sums every trainable tensor") {
  Model m = build_model(ModelConfig{}, 1);
  long long total = 0;
  for (auto& [name, t] : m.trainable()) total += t->size();
  CHECK(count_params(m) == total);
}

TEST_CASE("complexity report is internally consistent") {
  Model m = build_model(ModelConfig{}, 1);
  ComplexityReport rep = estimate_flops(m, {1, 3, 64, 64});
  CHECK(rep.param_count == count_params(m));
  CHECK(rep.model_size_bytes == 4 * rep.param_count);
  CHECK(rep.flops > 0);
  long long layer_sum = 0;
  for (const LayerCost& lc : rep.per_layer) layer_sum += lc.flops;
  CHECK(layer_sum == rep.flops);
}

TEST_CASE("flops scale with the squared spatial extent") {
  Model m = build_model(ModelConfig{}, 1);
  const long long f64 = estimate_flops(m, {1, 3, 64, 64}).flops;
  const long long f128 = estimate_flops(m, {1, 3, 128, 128}).flops;
  CHECK(f128 > 3 * f64);
  CHECK(f128 < 5 * f64);
}
