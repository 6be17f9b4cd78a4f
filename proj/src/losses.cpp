#include "fusenas/losses.hpp"

#include <algorithm>
#include <cmath>

namespace fusenas {

double clamp_prob(double p) { return std::min(1.0 - kProbClamp, std::max(kProbClamp, p)); }

double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ScalarLoss weighted_bce(double p, int y, double w_pos, double w_neg) {
  const double pc = clamp_prob(p);
  if (y == 1) return {-w_pos * std::log(pc), -w_pos / pc};
  return {-w_neg * std::log(1.0 - pc), w_neg / (1.0 - pc)};
}

ScalarLoss focal(double p, int y, double gamma, double alpha) {
  const double pc = clamp_prob(p);
  if (y == 1) {
    const double q = 1.0 - pc;
    const double value = -alpha * std::pow(q, gamma) * std::log(pc);
    double grad = -alpha * std::pow(q, gamma) / pc;
    if (gamma > 0.0) grad += alpha * gamma * std::pow(q, gamma - 1.0) * std::log(pc);
    return {value, grad};
  }
  const double value = -(1.0 - alpha) * std::pow(pc, gamma) * std::log(1.0 - pc);
  double grad = (1.0 - alpha) * std::pow(pc, gamma) / (1.0 - pc);
  if (gamma > 0.0) grad -= (1.0 - alpha) * gamma * std::pow(pc, gamma - 1.0) * std::log(1.0 - pc);
  return {value, grad};
}

namespace {

// Chain through sigmoid; dp/dlogit vanishes where the clamp is active,
// matching the clamped forward value exactly.
ScalarLoss through_sigmoid(double logit, ScalarLoss on_p, double p_raw) {
  const double dp = (p_raw > kProbClamp && p_raw < 1.0 - kProbClamp) ? p_raw * (1.0 - p_raw) : 0.0;
  return {on_p.value, on_p.grad * dp};
}

}  // namespace

ScalarLoss weighted_bce_on_logit(double logit, int y, double w_pos, double w_neg) {
  const double p = sigmoid_value(logit);
  return through_sigmoid(logit, weighted_bce(p, y, w_pos, w_neg), p);
}

ScalarLoss focal_on_logit(double logit, int y, double gamma, double alpha) {
  const double p = sigmoid_value(logit);
  return through_sigmoid(logit, focal(p, y, gamma, alpha), p);
}

Tensor softmax_probs(const Tensor& logits) {
  Tensor out = logits;
  real mx = out.v.empty() ? 0 : out.v[0];
  for (real v : out.v) mx = std::max(mx, v);
  real sum = 0;
  for (real& v : out.v) {
    v = static_cast<real>(std::exp(static_cast<double>(v - mx)));
    sum += v;
  }
  for (real& v : out.v) v /= sum;
  return out;
}

VectorLoss softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  Tensor p = softmax_probs(logits);
  VectorLoss out;
  out.value = -std::log(clamp_prob(static_cast<double>(p.v[label])));
  out.grad = p;
  out.grad.v[label] -= 1;
  return out;
}

}  // namespace fusenas
