#pragma once

#include <optional>
#include <vector>

namespace fusenas {

struct BinaryMetrics {
  double f1 = 0;
  std::optional<double> auc;  // absent when only one class is present
  double balanced_accuracy = 0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double positive_prevalence = 0;

  bool operator==(const BinaryMetrics&) const = default;
};

// Threshold defaults to 0.5; AUC is the rank statistic with tied scores
// assigned their average rank.
BinaryMetrics binary_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                             double threshold = 0.5);

struct MulticlassMetrics {
  double accuracy = 0;
  double macro_f1 = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
  std::vector<int> absent_classes;                  // contributed F1 = 0
};

MulticlassMetrics multiclass_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                                     int class_count);

}  // namespace fusenas
