#include <cmath>
#include <vector>

#include "doctest.h"
#include "fusenas/metrics.hpp"
#include "fusenas/rng.hpp"

using namespace fusenas;

namespace {

// Independent slow references: confusion counts by direct loops, AUC by
// exhaustive pair counting with half-credit for ties.
struct SlowBinary {
  double f1, balanced_accuracy;
  std::optional<double> auc;
  std::size_t tp, fp, tn, fn;
};

SlowBinary slow_binary(const std::vector<double>& probs, const std::vector<int>& labels,
                       double threshold) {
  SlowBinary s{0, 0, std::nullopt, 0, 0, 0, 0};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    if (labels[i] == 1)
      pred ? ++s.tp : ++s.fn;
    else
      pred ? ++s.fp : ++s.tn;
  }
  const double prec = s.tp + s.fp ? static_cast<double>(s.tp) / (s.tp + s.fp) : 0;
  const double rec = s.tp + s.fn ? static_cast<double>(s.tp) / (s.tp + s.fn) : 0;
  s.f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
  const double tpr = s.tp + s.fn ? rec : 0;
  const double tnr = s.fp + s.tn ? static_cast<double>(s.tn) / (s.fp + s.tn) : 0;
  s.balanced_accuracy = (tpr + tnr) / 2;

  const std::size_t pos = s.tp + s.fn, neg = s.fp + s.tn;
  if (pos && neg) {
    double wins = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (labels[i] != 1) continue;
      for (std::size_t j = 0; j < probs.size(); ++j) {
        if (labels[j] != 0) continue;
        if (probs[i] > probs[j])
          wins += 1;
        else if (probs[i] == probs[j])
          wins += 0.5;
      }
    }
    s.auc = wins / (static_cast<double>(pos) * static_cast<double>(neg));
  }
  return s;
}

double slow_macro_f1(const std::vector<int>& preds, const std::vector<int>& labels, int classes) {
  double total = 0;
  for (int c = 0; c < classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i] == c, l = labels[i] == c;
      if (p && l) ++tp;
      if (p && !l) ++fp;
      if (!p && l) ++fn;
    }
    const double prec = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0;
    const double rec = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0;
    total += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
  }
  return total / classes;
}

}  // namespace

TEST_CASE("binary metrics agree with the quadratic reference on random instances") {
  DetRng rng(1234);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> probs(n);
    std::vector<int> labels(n);
    const bool coarse = rng.below(2) == 0;  // coarse grids force score ties
    for (std::size_t i = 0; i < n; ++i) {
      probs[i] = coarse ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
      labels[i] = rng.below(2) ? 1 : 0;
    }
    const double threshold = rng.uniform(0.2, 0.8);

    const BinaryMetrics got = binary_metrics(probs, labels, threshold);
    const SlowBinary want = slow_binary(probs, labels, threshold);

    CHECK(got.tp == want.tp);
    CHECK(got.fp == want.fp);
    CHECK(got.tn == want.tn);
    CHECK(got.fn == want.fn);
    CHECK(got.f1 == doctest::Approx(want.f1).epsilon(1e-12));
    CHECK(got.balanced_accuracy == doctest::Approx(want.balanced_accuracy).epsilon(1e-12));
    CHECK(got.auc.has_value() == want.auc.has_value());
    if (got.auc) CHECK(std::abs(*got.auc - *want.auc) < 1e-12);
    CHECK(got.positive_prevalence ==
          doctest::Approx(static_cast<double>(want.tp + want.fn) / static_cast<double>(n)));
  }
}

TEST_CASE("binary metrics handle degenerate label sets") {
  const BinaryMetrics all_pos = binary_metrics({0.9, 0.8, 0.2}, {1, 1, 1});
  CHECK(!all_pos.auc.has_value());
  CHECK(all_pos.positive_prevalence == 1.0);
  const BinaryMetrics all_neg = binary_metrics({0.9, 0.1}, {0, 0});
  CHECK(!all_neg.auc.has_value());
  CHECK(all_neg.f1 == 0.0);
}

TEST_CASE("tied scores earn half credit in AUC") {
  // one positive tied with one negative, one clean win
  const BinaryMetrics m = binary_metrics({0.5, 0.5, 0.9}, {1, 0, 1});
  CHECK(*m.auc == doctest::Approx((0.5 + 1.0) / 2.0));
}

TEST_CASE("multiclass metrics agree with the quadratic reference") {
  DetRng rng(77);
  for (int inst = 0; inst < 100; ++inst) {
    const int classes = 2 + static_cast<int>(rng.below(5));
    const std::size_t n = 5 + rng.below(195);
    std::vector<int> preds(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = static_cast<int>(rng.below(classes));
      labels[i] = static_cast<int>(rng.below(classes));
    }
    const MulticlassMetrics got = multiclass_metrics(preds, labels, classes);

    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (preds[i] == labels[i]) ++hits;
    CHECK(got.accuracy == doctest::Approx(static_cast<double>(hits) / n).epsilon(1e-12));
    CHECK(got.macro_f1 == doctest::Approx(slow_macro_f1(preds, labels, classes)).epsilon(1e-12));

    // confusion row/column sums match the label/pred histograms
    std::size_t total = 0;
    for (int a = 0; a < classes; ++a)
      for (int b = 0; b < classes; ++b) total += got.confusion[a][b];
    CHECK(total == n);
    for (std::size_t i = 0; i < n; ++i) {
      // spot check one cell per instance
      CHECK(got.confusion[labels[i]][preds[i]] > 0);
      break;
    }
  }
}

TEST_CASE("absent classes contribute zero F1 and are reported") {
  // class 2 never appears in labels or predictions
  const MulticlassMetrics m = multiclass_metrics({0, 1, 0, 1}, {0, 1, 1, 0}, 3);
  CHECK(m.absent_classes == std::vector<int>{2});
  CHECK(m.macro_f1 == doctest::Approx(slow_macro_f1({0, 1, 0, 1}, {0, 1, 1, 0}, 3)));
  CHECK(m.accuracy == 0.5);
}
