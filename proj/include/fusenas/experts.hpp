#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fusenas/dataset.hpp"
#include "fusenas/descriptor.hpp"
#include "fusenas/metrics.hpp"
#include "fusenas/optimizer.hpp"

namespace fusenas {

struct ExpertKey {
  std::size_t modality = 0;
  int cls = 0;

  bool operator==(const ExpertKey&) const = default;
  // modality-major grid order
  bool operator<(const ExpertKey& o) const {
    return modality != o.modality ? modality < o.modality : cls < o.cls;
  }
  std::string str() const { return "m" + std::to_string(modality) + "_c" + std::to_string(cls); }
};

std::vector<ExpertKey> expert_grid(std::size_t modalities, int classes);

// output[i] = 1 iff labels[i] == c
std::vector<int> one_vs_rest_labels(const std::vector<int>& labels, int c);

struct LearningCurveSummary {
  std::size_t epochs_run = 0;
  double train_loss_first = 0;
  double train_loss_last = 0;
  double val_loss_min = 0;
  double val_f1_best = 0;

  bool operator==(const LearningCurveSummary&) const = default;
};

enum class TrialStatus { Ok, Failed, SkippedDegenerate };
std::string trial_status_to_string(TrialStatus s);
TrialStatus trial_status_from_string(const std::string& s);

// A trained binary expert for one (modality, class) pair.
struct ExpertModel {
  ExpertKey key;
  std::string descriptor_hash;
  ArchDescriptor descriptor;
  ComputeGraph graph;
  std::uint64_t seed = 0;

  // Preprocesses the raw modality input and returns the penultimate
  // activation (length graph.penultimate_width).
  Tensor embed(const Tensor& raw_x);
  double predict_prob(const Tensor& raw_x);
  std::size_t embed_width() const { return graph.penultimate_width; }

  void save(const std::string& path) { graph.save_checkpoint(path, descriptor_hash, seed); }
  void load(const std::string& path);
};

struct ExpertTrainResult {
  TrialStatus status = TrialStatus::Failed;
  std::optional<ExpertModel> model;
  BinaryMetrics metrics;
  LearningCurveSummary curve;
  std::string failure_kind;
  std::string failure_context;
};

// Trains one expert on the train split with early stopping on validation
// loss; the returned metrics come from the restored best-epoch parameters.
// Seed derivation: (master_seed, cycle, modality, class).
ExpertTrainResult train_expert(const ExpertKey& key, const ArchDescriptor& descriptor,
                               const DatasetBundle& data, const TrainProtocol& protocol,
                               std::uint64_t cycle);

namespace test_hooks {
// Invoked at the start of every training epoch when set; lets tests inject
// raw failures to exercise the redaction path.
extern std::function<void(const ExpertKey&)> train_fault;
}  // namespace test_hooks

}  // namespace fusenas
