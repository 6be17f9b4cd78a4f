#pragma once

#include "fusenas/tensor.hpp"

namespace fusenas {

// All log-losses clamp probabilities to [kProbClamp, 1 - kProbClamp].
constexpr double kProbClamp = 1e-7;

struct ScalarLoss {
  double value;
  double grad;  // d(loss)/d(input)
};

double clamp_prob(double p);

// L = -[w_pos * y * ln p + w_neg * (1-y) * ln(1-p)], grad w.r.t. p.
ScalarLoss weighted_bce(double p, int y, double w_pos, double w_neg);

// L = -alpha*y*(1-p)^gamma*ln p - (1-alpha)*(1-y)*p^gamma*ln(1-p), grad w.r.t. p.
ScalarLoss focal(double p, int y, double gamma, double alpha);

// Loss on a raw logit: p = sigmoid(logit), gradient w.r.t. the logit.
ScalarLoss weighted_bce_on_logit(double logit, int y, double w_pos, double w_neg);
ScalarLoss focal_on_logit(double logit, int y, double gamma, double alpha);

// Softmax cross-entropy on logits; returns loss and d(loss)/d(logits).
struct VectorLoss {
  double value;
  Tensor grad;
};
VectorLoss softmax_cross_entropy(const Tensor& logits, std::size_t label);

// Softmax probabilities of a logit vector (shift-invariant).
Tensor softmax_probs(const Tensor& logits);

double sigmoid_value(double x);

}  // namespace fusenas
