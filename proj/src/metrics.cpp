#include "cle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cle/io_util.hpp"

namespace cle {

double window_weight(std::size_t t, std::size_t T, double a) {
  if (T == 0 || t < 1 || t > T) {
    throw std::out_of_range("window index " + std::to_string(t) + " outside 1.." + std::to_string(T));
  }
  if (a < 0.0) throw std::invalid_argument("weight exponent must be >= 0");
  return std::pow(static_cast<double>(t) / static_cast<double>(T), a);
}

std::vector<double> aggregate_predictions(const std::vector<std::vector<double>>& per_window, double a) {
  if (per_window.empty()) throw std::invalid_argument("no window predictions to aggregate");
  const std::size_t k = per_window.front().size();
  const std::size_t T = per_window.size();
  std::vector<double> out(k, 0.0);
  double wsum = 0.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const auto& p = per_window[t - 1];
    if (p.size() != k) throw std::invalid_argument("window predictions differ in length");
    const double w = window_weight(t, T, a);
    wsum += w;
    for (std::size_t i = 0; i < k; ++i) out[i] += w * p[i];
  }
  for (auto& v : out) v /= wsum;
  return out;
}

MetricsReport make_report(const std::vector<int>& truth, const std::vector<int>& predicted,
                          std::size_t num_classes, std::size_t max_pairs) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("truth/prediction count mismatch");
  if (truth.empty()) throw std::invalid_argument("empty evaluation split");
  MetricsReport r;
  r.total = truth.size();
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto a = static_cast<std::size_t>(truth[i]), b = static_cast<std::size_t>(predicted[i]);
    if (a >= num_classes || b >= num_classes) throw std::out_of_range("class index out of range");
    ++r.confusion[a][b];
  }
  std::size_t correct = 0;
  r.class_count.assign(num_classes, 0);
  r.per_class.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    r.class_count[c] = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    correct += r.confusion[c][c];
    if (r.class_count[c]) {
      r.per_class[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(r.class_count[c]);
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);

  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (r.class_count[c]) order.push_back(c);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.per_class[a] < r.per_class[b]; });
  for (auto c : order) {
    if (r.confused_pairs.size() >= max_pairs) break;
    std::size_t best = c, count = 0;
    for (std::size_t p = 0; p < num_classes; ++p) {
      if (p != c && r.confusion[c][p] > count) {
        best = p;
        count = r.confusion[c][p];
      }
    }
    if (count == 0) continue;
    r.confused_pairs.push_back({static_cast<int>(c), static_cast<int>(best), count, r.per_class[c]});
  }
  return r;
}

std::string confusion_csv(const MetricsReport& r) {
  std::string out = "true";
  for (std::size_t p = 0; p < r.confusion.size(); ++p) out += ",pred_" + std::to_string(p);
  out += "\n";
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    out += std::to_string(t);
    for (auto v : r.confusion[t]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

std::string per_class_csv(const MetricsReport& r) {
  std::string out = "class,count,accuracy\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    out += std::to_string(c) + "," + std::to_string(r.class_count[c]) + "," + format_double(r.per_class[c]) + "\n";
  }
  return out;
}

std::string pairs_summary(const MetricsReport& r) {
  std::string out = "accuracy " + format_double(r.accuracy) + " over " + std::to_string(r.total) + " videos\n";
  out += "confused pairs (true → predicted, count, true-class accuracy):\n";
  for (const auto& p : r.confused_pairs) {
    out += "  class " + std::to_string(p.truth) + " → class " + std::to_string(p.predicted) + "  " +
           std::to_string(p.count) + "  " + format_double(p.truth_accuracy) + "\n";
  }
  return out;
}

}  // namespace cle
