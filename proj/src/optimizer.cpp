#include "fusenas/optimizer.hpp"

#include <cmath>

#include "fusenas/errors.hpp"

namespace fusenas {

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "weighted-bce") return LossKind::WeightedBce;
  if (s == "focal") return LossKind::Focal;
  if (s == "cross-entropy") return LossKind::CrossEntropy;
  throw ValidationError("protocol.loss", "unknown loss kind '" + s + "'");
}

std::string loss_kind_to_string(LossKind k) {
  switch (k) {
    case LossKind::WeightedBce: return "weighted-bce";
    case LossKind::Focal: return "focal";
    case LossKind::CrossEntropy: return "cross-entropy";
  }
  return "weighted-bce";
}

Adam::Adam(std::vector<Param*> params, const TrainProtocol& protocol)
    : params_(std::move(params)),
      lr_(protocol.learning_rate),
      beta1_(protocol.beta1),
      beta2_(protocol.beta2),
      eps_(protocol.epsilon) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Param* p : params_) {
    m_.emplace_back(p->value.size(), real(0));
    v_.emplace_back(p->value.size(), real(0));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Param* p = params_[pi];
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = static_cast<double>(p->grad.v[i]);
      if (!std::isfinite(g)) throw TrialFailure("numerical_divergence", p->name);
      m[i] = static_cast<real>(beta1_ * m[i] + (1.0 - beta1_) * g);
      v[i] = static_cast<real>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p->value.v[i] -= static_cast<real>(lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

}  // namespace fusenas
