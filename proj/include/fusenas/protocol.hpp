#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fusenas/dataset.hpp"
#include "fusenas/experts.hpp"
#include "fusenas/metrics.hpp"
#include "fusenas/optimizer.hpp"

namespace fusenas {

struct DirectiveTarget {
  std::size_t modality = 0;
  int cls = 0;

  bool operator==(const DirectiveTarget&) const = default;
};

// Controller -> executor instruction for one cycle.
struct Directive {
  int schema_version = 1;
  std::uint64_t cycle = 0;
  std::vector<DirectiveTarget> targets;
  std::string candidate_id;  // [a-z0-9_-]{1,64}
  std::string descriptor_path;
  std::string preprocessing_path;
  std::string rationale;

  bool operator==(const Directive&) const = default;
};

bool valid_candidate_id(const std::string& id);

std::string serialize_directive(const Directive& d);
// Throws ValidationError naming the offending field on any schema violation,
// including unknown fields (the document vocabulary is closed).
Directive parse_directive(const std::string& text);
// Range checks against the live dataset shape.
void check_directive_targets(const Directive& d, std::size_t modalities, int classes);

struct RedactedFailure {
  std::string kind;     // error category
  std::string message;  // structural context only, never raw diagnostics

  bool operator==(const RedactedFailure&) const = default;
};

struct TargetRecord {
  DirectiveTarget target;
  TrialStatus status = TrialStatus::Failed;
  BinaryMetrics metrics;  // meaningful iff status == ok
  LearningCurveSummary curve;
  double runtime_seconds = 0;
  std::optional<RedactedFailure> failure;

  bool operator==(const TargetRecord&) const = default;
};

struct FusedBlock {
  double val_accuracy = 0;
  double val_macro_f1 = 0;

  bool operator==(const FusedBlock&) const = default;
};

// Executor -> controller outcome for one cycle.
struct ResultsFile {
  int schema_version = 1;
  std::uint64_t cycle = 0;
  std::string candidate_id;
  std::vector<TargetRecord> per_target;
  std::optional<FusedBlock> fused;

  bool operator==(const ResultsFile&) const = default;
};

std::string serialize_results(const ResultsFile& r);
ResultsFile parse_results(const std::string& text);

// One ledger line. Flat on purpose: every field is always serialized, which
// keeps round-trips and replay trivial. `kind` is one of config, expert,
// fusion, end_to_end, cycle, final, run_status.
struct TrialRecord {
  std::uint64_t seq = 0;
  std::string kind;
  std::uint64_t cycle = 0;
  DirectiveTarget target;  // expert records only
  std::string descriptor_hash;
  std::string candidate_id;
  std::string status;  // trial status, or run status for kind run_status
  double f1 = 0;
  double val_accuracy = 0;
  double val_macro_f1 = 0;
  std::string results_digest;
  std::string checkpoint_ref;
  std::string controller_kind;  // heuristic | remote | fallback | baseline
  std::uint64_t timestamp = 0;  // logical clock (== seq) in deterministic mode
  double runtime_seconds = 0;
  std::uint64_t modalities = 0;  // config record only
  std::uint64_t classes = 0;     // config record only
  std::string note;

  bool operator==(const TrialRecord&) const = default;
};

std::string serialize_trial_record(const TrialRecord& r);
TrialRecord parse_trial_record(const std::string& line);

struct BestSoFar {
  double f1 = -1;  // -1 until the first successful trial
  std::string descriptor_hash;
  std::string checkpoint_ref;
};

// Everything resumable: reconstructed from the ledger alone.
struct SearchState {
  std::string config_hash;
  std::size_t modalities = 0;
  int classes = 0;
  std::vector<BestSoFar> best;  // grid order
  std::vector<FusedBlock> fused_history;
  std::string run_status = "running";  // running | completed | skipped | failed
  std::uint64_t next_cycle = 0;
  std::uint64_t next_seq = 0;
  bool baseline_done = false;

  BestSoFar& best_for(std::size_t m, int c);
  const BestSoFar& best_for(std::size_t m, int c) const;
};

// Append-only journal. Construction loads existing records; a corrupt or
// partial trailing line is dropped with a warning and never rewritten.
class Ledger {
 public:
  explicit Ledger(std::string path);

  std::uint64_t append(TrialRecord r);  // assigns seq, writes one line, syncs
  const std::vector<TrialRecord>& records() const { return records_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const std::string& path() const { return path_; }

  SearchState replay() const { return replay(records_); }
  static SearchState replay(const std::vector<TrialRecord>& records);

 private:
  std::string path_;
  std::vector<TrialRecord> records_;
  std::vector<std::string> warnings_;
};

// Write-temp-then-rename; readers never observe partial content.
void write_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);
std::string sha256_file_bytes(const std::string& bytes);

// Dataset shape metadata allowed through the firewall. Carries counts and
// shapes only, never values.
struct DatasetMeta {
  std::uint64_t modalities = 0;
  std::uint64_t classes = 0;
  std::vector<std::array<std::uint64_t, 2>> modality_shapes;  // [T, d]
  std::array<std::uint64_t, 3> split_sizes{};
  std::vector<double> class_prevalence;  // train split
};

DatasetMeta dataset_meta(const DatasetBundle& data);

// The only document the controller ever sees (besides the manifest text).
// Contents are restricted by construction to: dataset shape metadata,
// training hyperparameters, budgets, per-expert bests with descriptor
// documents, and last-cycle trial outcomes.
nlohmann::json summarize_for_controller(const SearchState& state, const DatasetMeta& meta,
                                        const TrainProtocol& protocol,
                                        std::uint64_t budget_remaining,
                                        const std::optional<ResultsFile>& last_results,
                                        const std::function<std::optional<nlohmann::json>(
                                            const std::string&)>& descriptor_by_hash);

// Deterministic markdown view of the ledger; regenerated, never parsed.
std::string render_manifest(const std::vector<TrialRecord>& records);

namespace test_hooks {
// Called after every durable protocol write (atomic rename or ledger line);
// crash-injection tests throw from here.
extern std::function<void(const std::string& path)> after_write;
}  // namespace test_hooks

}  // namespace fusenas
