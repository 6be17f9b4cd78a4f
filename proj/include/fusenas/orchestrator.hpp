#pragma once

#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "fusenas/controller.hpp"
#include "fusenas/fusion.hpp"
#include "fusenas/protocol.hpp"

namespace fusenas {

// Where the samples come from: a seeded generator or a .ts file on disk.
struct DatasetRef {
  std::string kind = "synthetic";  // synthetic | ts

  std::uint64_t seed = 0;
  std::uint64_t modalities = 2;
  int classes = 3;
  std::uint64_t series_length = 64;
  std::uint64_t channels = 2;
  std::uint64_t count = 500;
  std::string difficulty = "separable";

  std::string path;                                // ts
  std::vector<std::vector<std::size_t>> groups;    // ts; empty = one modality
  std::array<double, 3> splits{0.6, 0.2, 0.2};
  std::uint64_t split_seed = 1;
};

struct RunConfig {
  DatasetRef dataset;
  TrainProtocol protocol;
  FusionConfig fusion;
  std::uint64_t budget = 10;
  std::string controller = "heuristic";  // heuristic | remote
  std::string initial_descriptor = "baseline";  // baseline | dense-only
  std::size_t workers = 1;
};

RunConfig parse_run_config(const std::string& text);
std::string serialize_run_config(const RunConfig& cfg);  // canonical, sorted keys
std::string run_config_hash(const RunConfig& cfg);
DatasetBundle load_dataset(const DatasetRef& ref);

struct RunOutcome {
  int exit_code = 0;  // 0 completed, 2 skipped, 3 failed
  SearchState state;
  nlohmann::json report;
};

// Drives the whole research loop against one run directory. Every decision
// derives from (config, seed, ledger); re-running after a crash replays the
// same deterministic sequence and appends only what is missing, so resumed
// and uninterrupted runs produce identical artifacts.
class Orchestrator {
 public:
  Orchestrator(RunConfig config, std::string run_dir, std::shared_ptr<Controller> controller);

  // Creates the directory, pins the config (config.json + ledger record 0).
  // Refuses a non-empty directory.
  static void init_run(const RunConfig& config, const std::string& run_dir);

  // Baseline, skip check, budgeted cycles, final test evaluation, report.
  RunOutcome run();

  const Ledger& ledger() const { return *ledger_; }
  const DatasetBundle& data() const { return data_; }

 private:
  struct ExpertOutcome {
    ExpertTrainResult result;
    std::string checkpoint_ref;  // empty unless status ok
  };

  bool ensure(TrialRecord r);  // appends unless the cursor record already exists
  std::string rel(const std::string& name) const;
  void write_candidate_files(const std::string& candidate_id, const ArchDescriptor& d);
  ArchDescriptor descriptor_of_candidate(const std::string& candidate_id) const;
  std::optional<nlohmann::json> descriptor_doc_by_hash(const std::string& hash) const;
  ExpertModel load_expert(const ExpertKey& key, const TrialRecord& record) const;
  ExpertBank bank_from_best(const SearchState& state) const;
  ExpertBank bank_for_candidate(const std::string& candidate_id,
                                const std::vector<ExpertKey>& keys) const;

  std::vector<ExpertOutcome> train_experts(const std::vector<ExpertKey>& keys,
                                           const ArchDescriptor& d, const std::string& candidate_id,
                                           std::uint64_t cycle);
  void run_baseline();
  void run_cycle(std::uint64_t cycle);
  void final_eval(SearchState& state);
  void refresh_manifest();

  RunConfig config_;
  std::string run_dir_;
  std::shared_ptr<Controller> controller_;
  DatasetBundle data_;
  std::unique_ptr<Ledger> ledger_;
  std::size_t cursor_ = 0;
  std::optional<EndToEndModel> e2e_model_;
};

// Advisory presence lock: `lock` file holding a pid, checked for liveness.
class RunLock {
 public:
  explicit RunLock(const std::string& run_dir);  // throws StateError if held
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
  bool held_ = false;
};

// Report helpers; pure functions of the ledger.
nlohmann::json report_table(const std::vector<TrialRecord>& records);
std::string report_trajectories_csv(const std::vector<TrialRecord>& records);

}  // namespace fusenas
