#include "lfa/evalx.hpp"

#include <iomanip>
#include <sstream>

namespace lfa {

ConfusionCounts confusion_counts(const Tensor& pred, const Tensor& gt, float threshold) {
  if (!(pred.shape() == gt.shape())) {
    throw ShapeError("confusion_counts shape mismatch: " + pred.shape().str() + " vs " +
                     gt.shape().str());
  }
  if (!(threshold > 0.0f && threshold < 1.0f)) {
    throw DomainError("threshold must lie in (0,1)");
  }
  ConfusionCounts c;
  const float* pp = pred.data();
  const float* pg = gt.data();
  for (long long i = 0; i < pred.size(); ++i) {
    const bool p = pp[i] >= threshold;
    const bool g = pg[i] >= 0.5f;
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

namespace {

double safe_ratio(double num, double den, bool vacuous) {
  if (den == 0.0) return vacuous ? 1.0 : 0.0;
  return num / den;
}

}  // namespace

MetricsReport metrics(const ConfusionCounts& c) {
  if (c.total() <= 0) throw DomainError("metrics require a non-empty confusion count");
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  MetricsReport r;
  r.dice = safe_ratio(2.0 * tp, 2.0 * tp + fp + fn, c.fp == 0 && c.fn == 0);
  r.jaccard = safe_ratio(tp, tp + fp + fn, c.fp == 0 && c.fn == 0);
  r.accuracy = (tp + tn) / static_cast<double>(c.total());
  r.sensitivity = safe_ratio(tp, tp + fn, c.fp == 0);
  r.specificity = safe_ratio(tn, tn + fp, c.fn == 0);
  return r;
}

std::string metrics_csv_header() { return "label,dice,jaccard,accuracy,sensitivity,specificity"; }

std::string metrics_csv_row(const std::string& label, const MetricsReport& r) {
  std::ostringstream os;
  os << label << "," << std::fixed << std::setprecision(6) << r.dice << "," << r.jaccard << ","
     << r.accuracy << "," << r.sensitivity << "," << r.specificity;
  return os.str();
}

std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream os;
  size_t label_w = 8;
  for (const auto& [label, r] : rows) label_w = std::max(label_w, label.size());
  os << std::left << std::setw(static_cast<int>(label_w) + 2) << "Image" << std::right
     << std::setw(8) << "Dice" << std::setw(8) << "J" << std::setw(8) << "Sn" << std::setw(8)
     << "Sp" << std::setw(8) << "Acc" << "\n";
  for (const auto& [label, r] : rows) {
    os << std::left << std::setw(static_cast<int>(label_w) + 2) << label << std::right
       << std::fixed << std::setprecision(2) << std::setw(8) << 100.0 * r.dice << std::setw(8)
       << 100.0 * r.jaccard << std::setw(8) << 100.0 * r.sensitivity << std::setw(8)
       << 100.0 * r.specificity << std::setw(8) << 100.0 * r.accuracy << "\n";
  }
  return os.str();
}

long long count_params(Model& m) {
  long long total = 0;
  for (auto& [name, t] : m.trainable()) total += t->size();
  return total;
}

ComplexityReport estimate_flops(Model& m, const Shape& input_shape) {
  ComplexityReport report;
  report.input_shape = input_shape;
  report.param_count = count_params(m);
  report.model_size_bytes = 4 * report.param_count;

  ComplexityTrace trace;
  Graph g(Mode::Infer);
  g.trace = &trace;
  NodeId in = g.leaf(Tensor(input_shape, 0.0f));
  model_forward(g, in, m);
  report.flops = trace.total;

  // Per-parameter-group totals, matched to trace scopes by component name.
  std::vector<std::pair<std::string, long long>> group_params;
  for (auto& [name, t] : m.trainable()) {
    const std::string group = name.substr(0, name.find('.'));
    bool found = false;
    for (auto& [gname, count] : group_params) {
      if (gname == group) {
        count += t->size();
        found = true;
        break;
      }
    }
    if (!found) group_params.emplace_back(group, t->size());
  }

  auto group_index = [&](const std::string& scope_path) -> int {
    // Deepest path component that names a parameter group wins.
    int best = -1;
    size_t start = 0;
    while (start <= scope_path.size()) {
      const size_t end = scope_path.find('/', start);
      const std::string comp =
          scope_path.substr(start, end == std::string::npos ? std::string::npos : end - start);
      for (size_t gi = 0; gi < group_params.size(); ++gi) {
        if (group_params[gi].first == comp) best = static_cast<int>(gi);
      }
      if (end == std::string::npos) break;
      start = end + 1;
    }
    return best;
  };

  for (auto& [gname, count] : group_params) {
    report.per_layer.push_back(LayerCost{gname, count, 0});
  }
  LayerCost other{"(other)", 0, 0};
  for (const auto& [scope, flops] : trace.per_scope) {
    const int gi = group_index(scope);
    if (gi >= 0) {
      report.per_layer[static_cast<size_t>(gi)].flops += flops;
    } else {
      other.flops += flops;
    }
  }
  if (other.flops > 0) report.per_layer.push_back(other);
  return report;
}

}  // namespace lfa
