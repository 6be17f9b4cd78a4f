#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "fusenas/experts.hpp"

namespace fusenas {

struct ExpertSlot {
  ExpertKey key;
  TrialStatus status = TrialStatus::Failed;
  std::size_t width = 0;             // declared embedding width
  std::optional<ExpertModel> model;  // present iff status == ok
};

// Width the compiled network's penultimate layer would have on this input.
std::size_t declared_embed_width(const ArchDescriptor& d, std::array<std::size_t, 2> input_shape);

// Frozen experts feeding the fusion head, in grid order (modality-major).
// Slots without a usable model contribute zeros of their declared width, so
// the concatenated layout is stable across trial outcomes.
struct ExpertBank {
  std::size_t modalities = 0;
  int classes = 0;
  std::vector<ExpertSlot> slots;

  ExpertSlot& slot(std::size_t m, int c);
  const ExpertSlot& slot(std::size_t m, int c) const;
  std::size_t total_width() const;
  Tensor embed_concat(const MultimodalSample& sample);
  // Per-slot parameter checksums (zero for empty slots); the freeze audit.
  std::vector<std::uint64_t> checksums();
};

struct FusionConfig {
  std::vector<std::size_t> hidden = {256, 128};
  double dropout = 0.3;
};

// MLP over the concatenated expert embeddings. Inputs are z-scored per
// dimension with train-split statistics captured at training time.
struct FusionModel {
  ComputeGraph graph;
  std::vector<double> mean, istd;
  int class_count = 0;
  std::uint64_t seed = 0;

  Tensor normalize(const Tensor& z) const;
  Tensor logits_eval(const Tensor& z);  // normalizes, evaluation mode
  // argmax over class probabilities; ties resolve to the lowest index
  int predict(const Tensor& z);
};

struct FusionTrainResult {
  TrialStatus status = TrialStatus::Failed;
  std::optional<FusionModel> model;
  MulticlassMetrics val_metrics;
  LearningCurveSummary curve;  // val_f1_best carries macro-F1 here
  std::string failure_kind;
  std::string failure_context;
};

// Stage two: experts stay frozen (verified via checksums before and after).
FusionTrainResult train_fusion(ExpertBank& bank, const DatasetBundle& data,
                               const TrainProtocol& protocol, const FusionConfig& config,
                               std::uint64_t cycle);

// Jointly trained comparison model: one backbone per modality sharing the
// expert architecture, concatenated embeddings, one C-way linear head.
struct EndToEndModel {
  std::vector<Chain> bodies;
  std::vector<std::vector<PreprocStep>> preproc;
  std::vector<std::size_t> widths;
  std::unique_ptr<Dense> head;
  int class_count = 0;
  std::uint64_t seed = 0;

  Tensor forward(const MultimodalSample& sample, bool training, DetRng& rng);
  void backward(const Tensor& logit_grad);
  std::vector<Param*> params();
  void zero_grads();
  void init_params(DetRng& rng);
  int predict(const MultimodalSample& sample);
};

struct EndToEndTrainResult {
  TrialStatus status = TrialStatus::Failed;
  std::optional<EndToEndModel> model;
  MulticlassMetrics val_metrics;
  LearningCurveSummary curve;
  std::string failure_kind;
  std::string failure_context;
};

EndToEndTrainResult train_end_to_end(const ArchDescriptor& descriptor, const DatasetBundle& data,
                                     const TrainProtocol& protocol, std::uint64_t cycle);

}  // namespace fusenas
