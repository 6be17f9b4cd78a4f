#include "fusenas/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "fusenas/errors.hpp"

namespace fusenas {

BinaryMetrics binary_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                             double threshold) {
  if (probs.size() != labels.size() || probs.empty())
    throw ValidationError("metrics", "probs and labels must have equal nonzero length");

  BinaryMetrics m;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool y = labels[i] == 1;
    const bool p = probs[i] >= threshold;
    if (y) ++pos; else ++neg;
    if (y && p) ++m.tp;
    else if (y && !p) ++m.fn;
    else if (!y && p) ++m.fp;
    else ++m.tn;
  }
  m.positive_prevalence = static_cast<double>(pos) / static_cast<double>(probs.size());

  const double denom = static_cast<double>(2 * m.tp + m.fp + m.fn);
  m.f1 = denom > 0 ? 2.0 * static_cast<double>(m.tp) / denom : 0.0;

  const double tpr = pos > 0 ? static_cast<double>(m.tp) / static_cast<double>(pos) : 0.0;
  const double tnr = neg > 0 ? static_cast<double>(m.tn) / static_cast<double>(neg) : 0.0;
  m.balanced_accuracy = 0.5 * (tpr + tnr);

  if (pos > 0 && neg > 0) {
    // average ranks over ties, then the Mann-Whitney statistic
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
    std::vector<double> rank(probs.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && probs[order[j + 1]] == probs[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
      i = j + 1;
    }
    double rank_sum_pos = 0;
    for (std::size_t k = 0; k < probs.size(); ++k)
      if (labels[k] == 1) rank_sum_pos += rank[k];
    const double p = static_cast<double>(pos), n = static_cast<double>(neg);
    m.auc = (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
  }
  return m;
}

MulticlassMetrics multiclass_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                                     int class_count) {
  if (preds.size() != labels.size() || preds.empty())
    throw ValidationError("metrics", "preds and labels must have equal nonzero length");

  MulticlassMetrics m;
  const std::size_t c = static_cast<std::size_t>(class_count);
  m.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ++m.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
    if (preds[i] == labels[i]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());

  double f1_sum = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t tp = m.confusion[k][k], fp = 0, fn = 0, support = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j != k) {
        fp += m.confusion[j][k];
        fn += m.confusion[k][j];
      }
      support += m.confusion[k][j];
    }
    if (support == 0) m.absent_classes.push_back(static_cast<int>(k));
    const double denom = static_cast<double>(2 * tp + fp + fn);
    f1_sum += denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }
  m.macro_f1 = f1_sum / static_cast<double>(c);
  return m;
}

}  // namespace fusenas
