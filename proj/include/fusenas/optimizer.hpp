#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusenas/layers.hpp"

namespace fusenas {

enum class LossKind { WeightedBce, Focal, CrossEntropy };

// Training settings fixed for the duration of one search run.
struct TrainProtocol {
  std::string optimizer = "adam";
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  LossKind loss = LossKind::WeightedBce;
  double focal_gamma = 2.0;
  double focal_alpha = 0.5;
  std::uint64_t master_seed = 0;
};

LossKind loss_kind_from_string(const std::string& s);
std::string loss_kind_to_string(LossKind k);

// Adam with bias correction; one state slot per parameter.
class Adam {
 public:
  Adam(std::vector<Param*> params, const TrainProtocol& protocol);

  // Applies one update from the accumulated grad slots. Throws TrialFailure
  // ("numerical_divergence") on non-finite gradients.
  void step();

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Param*> params_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<real>> m_, v_;
};

}  // namespace fusenas
