#pragma once

#include <string>
#include <vector>

#include "lfa/model.hpp"

namespace lfa {

struct ConfusionCounts {
  long long tp = 0, fp = 0, tn = 0, fn = 0;
  long long total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
};

struct MetricsReport {
  double dice = 0.0, jaccard = 0.0, accuracy = 0.0, sensitivity = 0.0, specificity = 0.0;
};

// Binarizes pred at threshold (>= is positive) and counts against gt.
ConfusionCounts confusion_counts(const Tensor& pred, const Tensor& gt, float threshold);

// Vacuous ratios (no positives in gt, none predicted) evaluate to 1.
MetricsReport metrics(const ConfusionCounts& c);

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& label, const MetricsReport& r);
// Aligned table mirroring the Dice, J, Sn, Sp, Acc column order, in percent.
std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

struct LayerCost {
  std::string name;
  long long params = 0;
  long long flops = 0;
};

struct ComplexityReport {
  long long param_count = 0;
  long long flops = 0;  // one forward pass at input_shape
  long long model_size_bytes = 0;
  Shape input_shape;
  std::vector<LayerCost> per_layer;
};

long long count_params(Model& m);

// Walks the same graph the forward pass executes; convs and dense layers
// count 2 ops per multiply-accumulate, everything else 1 op per output.
ComplexityReport estimate_flops(Model& m, const Shape& input_shape);

}  // namespace lfa
