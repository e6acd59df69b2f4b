#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace cle {

/// (t/T)^a: the last window weighs 1 and earlier windows fade.
double window_weight(std::size_t t, std::size_t T, double a = 3.0);

/// Weighted mean of per-window probability vectors (windows in order
/// t = 1..T); still a probability vector.
std::vector<double> aggregate_predictions(const std::vector<std::vector<double>>& per_window, double a = 3.0);

struct ConfusedPair {
  int truth = 0;
  int predicted = 0;
  std::size_t count = 0;
  double truth_accuracy = 0.0;
};

struct MetricsReport {
  std::size_t total = 0;
  double accuracy = 0.0;
  double loss = 0.0;  // mean cross-entropy of the final predictions
  std::vector<std::size_t> class_count;
  std::vector<double> per_class;                   // 0 for classes without samples
  std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
  std::vector<ConfusedPair> confused_pairs;         // worst classes first
};

MetricsReport make_report(const std::vector<int>& truth, const std::vector<int>& predicted,
                          std::size_t num_classes, std::size_t max_pairs = 10);

std::string confusion_csv(const MetricsReport& r);
/// One "true → predicted" line per confused pair, then the headline numbers.
std::string pairs_summary(const MetricsReport& r);
std::string per_class_csv(const MetricsReport& r);

}  // namespace cle
