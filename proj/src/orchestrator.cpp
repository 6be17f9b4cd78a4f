#include "fusenas/orchestrator.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#ifndef _WIN32
#include <signal.h>
#include <unistd.h>
#endif

#include "fusenas/errors.hpp"
#include "fusenas/rng.hpp"
#include "fusenas/sha256.hpp"

namespace fusenas {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& rule) {
  throw ValidationError(path, rule);
}

void check_keys(const json& o, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!o.is_object()) fail(path, "must be an object");
  for (auto it = o.begin(); it != o.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) fail(path + "." + it.key(), "unknown field");
  }
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

json protocol_to_json(const TrainProtocol& p) {
  return json{{"batch_size", p.batch_size},
              {"beta1", p.beta1},
              {"beta2", p.beta2},
              {"epsilon", p.epsilon},
              {"focal_alpha", p.focal_alpha},
              {"focal_gamma", p.focal_gamma},
              {"learning_rate", p.learning_rate},
              {"loss", loss_kind_to_string(p.loss)},
              {"master_seed", p.master_seed},
              {"max_epochs", p.max_epochs},
              {"optimizer", p.optimizer},
              {"patience", p.patience}};
}

TrainProtocol protocol_from_json(const json& o) {
  check_keys(o, "protocol",
             {"batch_size", "beta1", "beta2", "epsilon", "focal_alpha", "focal_gamma",
              "learning_rate", "loss", "master_seed", "max_epochs", "optimizer", "patience"});
  TrainProtocol p;
  if (o.contains("optimizer")) p.optimizer = o["optimizer"].get<std::string>();
  if (p.optimizer != "adam") fail("protocol.optimizer", "only 'adam' is supported");
  if (o.contains("learning_rate")) p.learning_rate = o["learning_rate"].get<double>();
  if (p.learning_rate <= 0) fail("protocol.learning_rate", "must be positive");
  if (o.contains("beta1")) p.beta1 = o["beta1"].get<double>();
  if (o.contains("beta2")) p.beta2 = o["beta2"].get<double>();
  if (o.contains("epsilon")) p.epsilon = o["epsilon"].get<double>();
  if (o.contains("batch_size")) p.batch_size = o["batch_size"].get<std::size_t>();
  if (p.batch_size == 0) fail("protocol.batch_size", "must be positive");
  if (o.contains("max_epochs")) p.max_epochs = o["max_epochs"].get<std::size_t>();
  if (o.contains("patience")) p.patience = o["patience"].get<std::size_t>();
  if (o.contains("loss")) p.loss = loss_kind_from_string(o["loss"].get<std::string>());
  if (o.contains("focal_gamma")) p.focal_gamma = o["focal_gamma"].get<double>();
  if (o.contains("focal_alpha")) p.focal_alpha = o["focal_alpha"].get<double>();
  if (o.contains("master_seed")) p.master_seed = o["master_seed"].get<std::uint64_t>();
  return p;
}

}  // namespace

std::string serialize_run_config(const RunConfig& cfg) {
  json ds;
  ds["kind"] = cfg.dataset.kind;
  ds["splits"] = json::array(
      {cfg.dataset.splits[0], cfg.dataset.splits[1], cfg.dataset.splits[2]});
  ds["split_seed"] = cfg.dataset.split_seed;
  if (cfg.dataset.kind == "synthetic") {
    ds["seed"] = cfg.dataset.seed;
    ds["modalities"] = cfg.dataset.modalities;
    ds["classes"] = cfg.dataset.classes;
    ds["series_length"] = cfg.dataset.series_length;
    ds["channels"] = cfg.dataset.channels;
    ds["count"] = cfg.dataset.count;
    ds["difficulty"] = cfg.dataset.difficulty;
  } else {
    ds["path"] = cfg.dataset.path;
    ds["groups"] = cfg.dataset.groups;
  }
  json j{{"budget", cfg.budget},
         {"controller", cfg.controller},
         {"dataset", std::move(ds)},
         {"fusion", json{{"dropout", cfg.fusion.dropout}, {"hidden", cfg.fusion.hidden}}},
         {"initial_descriptor", cfg.initial_descriptor},
         {"protocol", protocol_to_json(cfg.protocol)},
         {"workers", cfg.workers}};
  return j.dump() + "\n";
}

RunConfig parse_run_config(const std::string& text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) fail("config", "not well-formed JSON");
  check_keys(doc, "config",
             {"budget", "controller", "dataset", "fusion", "initial_descriptor", "protocol",
              "workers"});

  RunConfig cfg;
  if (doc.contains("budget")) cfg.budget = doc["budget"].get<std::uint64_t>();
  if (doc.contains("controller")) cfg.controller = doc["controller"].get<std::string>();
  if (cfg.controller != "heuristic" && cfg.controller != "remote")
    fail("config.controller", "must be 'heuristic' or 'remote'");
  if (doc.contains("initial_descriptor"))
    cfg.initial_descriptor = doc["initial_descriptor"].get<std::string>();
  if (cfg.initial_descriptor != "baseline" && cfg.initial_descriptor != "dense-only")
    fail("config.initial_descriptor", "must be 'baseline' or 'dense-only'");
  if (doc.contains("workers")) cfg.workers = doc["workers"].get<std::size_t>();
  if (cfg.workers == 0) fail("config.workers", "must be positive");
  if (doc.contains("protocol")) cfg.protocol = protocol_from_json(doc["protocol"]);
  if (doc.contains("fusion")) {
    check_keys(doc["fusion"], "config.fusion", {"dropout", "hidden"});
    if (doc["fusion"].contains("dropout"))
      cfg.fusion.dropout = doc["fusion"]["dropout"].get<double>();
    if (cfg.fusion.dropout < 0 || cfg.fusion.dropout > 0.9)
      fail("config.fusion.dropout", "must be within [0, 0.9]");
    if (doc["fusion"].contains("hidden"))
      cfg.fusion.hidden = doc["fusion"]["hidden"].get<std::vector<std::size_t>>();
  }

  if (!doc.contains("dataset")) fail("config.dataset", "missing required field");
  const json& ds = doc["dataset"];
  check_keys(ds, "config.dataset",
             {"channels", "classes", "count", "difficulty", "groups", "kind", "modalities",
              "path", "seed", "series_length", "split_seed", "splits"});
  if (!ds.contains("kind")) fail("config.dataset.kind", "missing required field");
  cfg.dataset.kind = ds["kind"].get<std::string>();
  if (ds.contains("splits")) {
    const auto v = ds["splits"].get<std::vector<double>>();
    if (v.size() != 3) fail("config.dataset.splits", "must have three fractions");
    cfg.dataset.splits = {v[0], v[1], v[2]};
  }
  if (ds.contains("split_seed")) cfg.dataset.split_seed = ds["split_seed"].get<std::uint64_t>();
  if (cfg.dataset.kind == "synthetic") {
    if (ds.contains("seed")) cfg.dataset.seed = ds["seed"].get<std::uint64_t>();
    if (ds.contains("modalities")) cfg.dataset.modalities = ds["modalities"].get<std::uint64_t>();
    if (ds.contains("classes")) cfg.dataset.classes = ds["classes"].get<int>();
    if (ds.contains("series_length"))
      cfg.dataset.series_length = ds["series_length"].get<std::uint64_t>();
    if (ds.contains("channels")) cfg.dataset.channels = ds["channels"].get<std::uint64_t>();
    if (ds.contains("count")) cfg.dataset.count = ds["count"].get<std::uint64_t>();
    if (ds.contains("difficulty")) cfg.dataset.difficulty = ds["difficulty"].get<std::string>();
    difficulty_from_string(cfg.dataset.difficulty);  // validates
  } else if (cfg.dataset.kind == "ts") {
    if (!ds.contains("path")) fail("config.dataset.path", "missing required field");
    cfg.dataset.path = ds["path"].get<std::string>();
    if (ds.contains("groups"))
      cfg.dataset.groups = ds["groups"].get<std::vector<std::vector<std::size_t>>>();
  } else {
    fail("config.dataset.kind", "must be 'synthetic' or 'ts'");
  }
  return cfg;
}

std::string run_config_hash(const RunConfig& cfg) { return sha256_hex(serialize_run_config(cfg)); }

DatasetBundle load_dataset(const DatasetRef& ref) {
  DatasetBundle b;
  if (ref.kind == "synthetic") {
    b = generate_synthetic(ref.seed, ref.modalities, ref.classes, ref.series_length, ref.channels,
                           ref.count, difficulty_from_string(ref.difficulty));
  } else {
    const RawSeries raw = parse_ts(read_file(ref.path));
    const ModalitySpec spec =
        ref.groups.empty() ? default_modality_spec(raw.dimensions) : ModalitySpec{ref.groups};
    b = group_modalities(raw, spec);
  }
  apply_splits(b, ref.splits, ref.split_seed);
  return b;
}

Orchestrator::Orchestrator(RunConfig config, std::string run_dir,
                           std::shared_ptr<Controller> controller)
    : config_(std::move(config)), run_dir_(std::move(run_dir)), controller_(std::move(controller)) {
  data_ = load_dataset(config_.dataset);
  ledger_ = std::make_unique<Ledger>(rel("ledger.jsonl"));
}

std::string Orchestrator::rel(const std::string& name) const { return run_dir_ + "/" + name; }

void Orchestrator::init_run(const RunConfig& config, const std::string& run_dir) {
  if (fs::exists(run_dir) && !fs::is_empty(run_dir))
    throw StateError("run directory " + run_dir + " already exists and is not empty");
  fs::create_directories(run_dir + "/models");

  write_atomic(run_dir + "/config.json", serialize_run_config(config));

  const DatasetBundle data = load_dataset(config.dataset);
  Ledger ledger(run_dir + "/ledger.jsonl");
  TrialRecord pin;
  pin.kind = "config";
  pin.descriptor_hash = run_config_hash(config);
  pin.modalities = data.modality_count();
  pin.classes = static_cast<std::uint64_t>(data.class_count);
  pin.controller_kind = config.controller;
  pin.status = "running";
  ledger.append(std::move(pin));
}

bool Orchestrator::ensure(TrialRecord r) {
  if (cursor_ < ledger_->records().size()) {
    const TrialRecord& have = ledger_->records()[cursor_];
    if (have.kind != r.kind || have.cycle != r.cycle)
      throw StateError("ledger does not match the recomputed run at seq " +
                       std::to_string(cursor_));
    ++cursor_;
    return false;
  }
  ledger_->append(std::move(r));
  ++cursor_;
  return true;
}

void Orchestrator::write_candidate_files(const std::string& candidate_id,
                                         const ArchDescriptor& d) {
  const std::string dir = rel("models/" + candidate_id);
  fs::create_directories(dir + "/experts");
  // contents are a pure function of the descriptor; skip rewrites on resume
  if (!fs::exists(dir + "/model.json"))
    write_atomic(dir + "/model.json", serialize_model_file(d));
  if (!fs::exists(dir + "/preprocessing.json"))
    write_atomic(dir + "/preprocessing.json", serialize_preprocessing_file(d));
}

ArchDescriptor Orchestrator::descriptor_of_candidate(const std::string& candidate_id) const {
  const std::string dir = rel("models/" + candidate_id);
  return parse_descriptor_files(read_file(dir + "/model.json"),
                                read_file(dir + "/preprocessing.json"));
}

std::optional<json> Orchestrator::descriptor_doc_by_hash(const std::string& hash) const {
  for (const TrialRecord& r : ledger_->records()) {
    if (r.kind == "expert" && r.descriptor_hash == hash) {
      const ArchDescriptor d = descriptor_of_candidate(r.candidate_id);
      return descriptor_to_json(d);
    }
  }
  return std::nullopt;
}

ExpertModel Orchestrator::load_expert(const ExpertKey& key, const TrialRecord& record) const {
  ExpertModel m;
  m.key = key;
  m.descriptor = descriptor_of_candidate(record.candidate_id);
  m.descriptor_hash = canonical_hash(m.descriptor);
  m.graph = compile_descriptor(m.descriptor, data_.modality_shape(key.modality));
  m.load(rel(record.checkpoint_ref));
  return m;
}

namespace {

// checkpoint_ref is "models/<candidate_id>/experts/<key>.ckpt"
std::string candidate_of_ref(const std::string& checkpoint_ref) {
  const std::size_t a = checkpoint_ref.find('/');
  const std::size_t b = checkpoint_ref.find('/', a + 1);
  if (a == std::string::npos || b == std::string::npos)
    throw StateError("malformed checkpoint reference " + checkpoint_ref);
  return checkpoint_ref.substr(a + 1, b - a - 1);
}

}  // namespace

ExpertBank Orchestrator::bank_from_best(const SearchState& state) const {
  ExpertBank bank;
  bank.modalities = data_.modality_count();
  bank.classes = data_.class_count;
  const ArchDescriptor d0 = config_.initial_descriptor == "dense-only" ? dense_only_descriptor()
                                                                       : baseline_descriptor();
  for (const ExpertKey& key : expert_grid(bank.modalities, bank.classes)) {
    ExpertSlot slot;
    slot.key = key;
    const BestSoFar& b = state.best_for(key.modality, key.cls);
    if (b.f1 >= 0) {
      TrialRecord ref;
      ref.candidate_id = candidate_of_ref(b.checkpoint_ref);
      ref.checkpoint_ref = b.checkpoint_ref;
      ExpertModel m = load_expert(key, ref);
      slot.width = m.embed_width();
      slot.status = TrialStatus::Ok;
      slot.model.emplace(std::move(m));
    } else {
      slot.status = TrialStatus::Failed;
      slot.width = declared_embed_width(d0, data_.modality_shape(key.modality));
    }
    bank.slots.push_back(std::move(slot));
  }
  return bank;
}

ExpertBank Orchestrator::bank_for_candidate(const std::string& candidate_id,
                                            const std::vector<ExpertKey>& keys) const {
  const ArchDescriptor d = descriptor_of_candidate(candidate_id);
  ExpertBank bank;
  bank.modalities = data_.modality_count();
  bank.classes = data_.class_count;
  for (const ExpertKey& key : keys) {
    ExpertSlot slot;
    slot.key = key;
    const TrialRecord* found = nullptr;
    for (const TrialRecord& r : ledger_->records())
      if (r.kind == "expert" && r.candidate_id == candidate_id &&
          r.target == DirectiveTarget{key.modality, key.cls})
        found = &r;
    if (found && found->status == "ok") {
      ExpertModel m = load_expert(key, *found);
      slot.width = m.embed_width();
      slot.status = TrialStatus::Ok;
      slot.model.emplace(std::move(m));
    } else {
      slot.status = TrialStatus::Failed;
      slot.width = declared_embed_width(d, data_.modality_shape(key.modality));
    }
    bank.slots.push_back(std::move(slot));
  }
  return bank;
}

std::vector<Orchestrator::ExpertOutcome> Orchestrator::train_experts(
    const std::vector<ExpertKey>& keys, const ArchDescriptor& d, const std::string& candidate_id,
    std::uint64_t cycle) {
  std::vector<ExpertOutcome> out(keys.size());
  auto work = [&](std::size_t i) {
    out[i].result = train_expert(keys[i], d, data_, config_.protocol, cycle);
  };
  if (config_.workers > 1 && keys.size() > 1) {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t n = std::min(config_.workers, keys.size());
    for (std::size_t t = 0; t < n; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < keys.size();) work(i);
      });
    for (std::thread& t : pool) t.join();
  } else {
    for (std::size_t i = 0; i < keys.size(); ++i) work(i);
  }

  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (out[i].result.status == TrialStatus::Ok) {
      out[i].checkpoint_ref = "models/" + candidate_id + "/experts/" + keys[i].str() + ".ckpt";
      out[i].result.model->save(rel(out[i].checkpoint_ref));
    }
  }
  return out;
}

void Orchestrator::run_baseline() {
  const ArchDescriptor d0 = config_.initial_descriptor == "dense-only" ? dense_only_descriptor()
                                                                       : baseline_descriptor();
  const std::string cid = "baseline";
  const std::string d0_hash = canonical_hash(d0);
  write_candidate_files(cid, d0);

  const auto keys = expert_grid(data_.modality_count(), data_.class_count);
  const auto& recs = ledger_->records();

  std::size_t n_done = 0;
  while (n_done < keys.size() && cursor_ + n_done < recs.size() &&
         recs[cursor_ + n_done].kind == "expert")
    ++n_done;

  std::vector<std::optional<ExpertModel>> models(keys.size());
  for (std::size_t i = 0; i < n_done; ++i) {
    const TrialRecord r = recs[cursor_];
    if (r.status == "ok") models[i].emplace(load_expert(keys[i], r));
    ++cursor_;
  }

  if (n_done < keys.size()) {
    const std::vector<ExpertKey> pending(keys.begin() + static_cast<std::ptrdiff_t>(n_done),
                                         keys.end());
    auto outcomes = train_experts(pending, d0, cid, 0);
    for (std::size_t j = 0; j < pending.size(); ++j) {
      ExpertOutcome& o = outcomes[j];
      TrialRecord r;
      r.kind = "expert";
      r.cycle = 0;
      r.target = {pending[j].modality, pending[j].cls};
      r.descriptor_hash = d0_hash;
      r.candidate_id = cid;
      r.controller_kind = "baseline";
      r.status = trial_status_to_string(o.result.status);
      if (o.result.status == TrialStatus::Ok) {
        r.f1 = o.result.metrics.f1;
        r.checkpoint_ref = o.checkpoint_ref;
        models[n_done + j].emplace(std::move(*o.result.model));
      } else {
        r.note = o.result.failure_kind +
                 (o.result.failure_context.empty() ? "" : " at " + o.result.failure_context);
      }
      ensure(std::move(r));
    }
  }

  // stage two: fusion over the frozen bank
  if (cursor_ < recs.size() && recs[cursor_].kind == "fusion") {
    ++cursor_;
  } else {
    ExpertBank bank;
    bank.modalities = data_.modality_count();
    bank.classes = data_.class_count;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      ExpertSlot slot;
      slot.key = keys[i];
      if (models[i]) {
        slot.status = TrialStatus::Ok;
        slot.width = models[i]->embed_width();
        slot.model.emplace(std::move(*models[i]));
      } else {
        slot.status = TrialStatus::Failed;
        slot.width = declared_embed_width(d0, data_.modality_shape(keys[i].modality));
      }
      bank.slots.push_back(std::move(slot));
    }
    FusionTrainResult fr = train_fusion(bank, data_, config_.protocol, config_.fusion, 0);
    TrialRecord r;
    r.kind = "fusion";
    r.cycle = 0;
    r.candidate_id = cid;
    r.controller_kind = "baseline";
    r.status = trial_status_to_string(fr.status);
    if (fr.status == TrialStatus::Ok) {
      r.val_accuracy = fr.val_metrics.accuracy;
      r.val_macro_f1 = fr.val_metrics.macro_f1;
    } else {
      r.note = fr.failure_kind;
    }
    ensure(std::move(r));
  }

  // jointly trained comparison model
  if (cursor_ < recs.size() && recs[cursor_].kind == "end_to_end") {
    ++cursor_;
  } else {
    EndToEndTrainResult er = train_end_to_end(d0, data_, config_.protocol, 0);
    TrialRecord r;
    r.kind = "end_to_end";
    r.cycle = 0;
    r.candidate_id = cid;
    r.descriptor_hash = d0_hash;
    r.controller_kind = "baseline";
    r.status = trial_status_to_string(er.status);
    if (er.status == TrialStatus::Ok) {
      r.val_accuracy = er.val_metrics.accuracy;
      r.val_macro_f1 = er.val_metrics.macro_f1;
      e2e_model_.emplace(std::move(*er.model));
    } else {
      r.note = er.failure_kind;
    }
    ensure(std::move(r));
  }
}

void Orchestrator::run_cycle(std::uint64_t cycle) {
  const auto& recs = ledger_->records();

  // already completed: advance the cursor past this cycle's records
  for (std::size_t i = cursor_; i < recs.size(); ++i) {
    if (recs[i].kind == "cycle" && recs[i].cycle == cycle) {
      cursor_ = i + 1;
      return;
    }
    if (recs[i].cycle != cycle) break;
  }

  // proposal inputs come from the pre-cycle ledger prefix, never from
  // partially recorded work of this cycle
  const std::vector<TrialRecord> prefix(recs.begin(),
                                        recs.begin() + static_cast<std::ptrdiff_t>(cursor_));
  SearchState state = Ledger::replay(prefix);

  std::optional<ResultsFile> last_results;
  if (fs::exists(rel("results.json"))) {
    const ResultsFile prev = parse_results(read_file(rel("results.json")));
    if (prev.cycle + 1 == cycle) last_results = prev;
  }

  const json summary = summarize_for_controller(
      state, dataset_meta(data_), config_.protocol, config_.budget - (cycle - 1), last_results,
      [this](const std::string& h) { return descriptor_doc_by_hash(h); });
  const std::string manifest = render_manifest(prefix);

  const std::uint64_t propose_seed =
      derive_seed(config_.protocol.master_seed, cycle, seed_tag("propose"));
  Proposal proposal = controller_->propose(summary, manifest, propose_seed);
  if (proposal.targets.empty()) throw StateError("controller proposed no targets");

  const std::string cand_hash = canonical_hash(proposal.descriptor);
  const std::string cid = "cycle" + std::to_string(cycle) + "_" + cand_hash.substr(0, 8);
  write_candidate_files(cid, proposal.descriptor);

  Directive directive;
  directive.cycle = cycle;
  directive.targets = proposal.targets;
  directive.candidate_id = cid;
  directive.descriptor_path = "models/" + cid + "/model.json";
  directive.preprocessing_path = "models/" + cid + "/preprocessing.json";
  directive.rationale = proposal.rationale;
  write_atomic(rel("directive.json"), serialize_directive(directive));

  // executor side: consume the directive from disk, re-validating everything
  const Directive received = parse_directive(read_file(rel("directive.json")));
  check_directive_targets(received, data_.modality_count(), data_.class_count);
  const ArchDescriptor candidate = parse_descriptor_files(
      read_file(rel(received.descriptor_path)), read_file(rel(received.preprocessing_path)));

  std::vector<ExpertKey> keys;
  for (const DirectiveTarget& t : received.targets) keys.push_back({t.modality, t.cls});
  auto outcomes = train_experts(keys, candidate, cid, cycle);

  bool improved = false;
  for (std::size_t i = 0; i < keys.size(); ++i)
    if (outcomes[i].result.status == TrialStatus::Ok &&
        outcomes[i].result.metrics.f1 > state.best_for(keys[i].modality, keys[i].cls).f1 + 1e-12)
      improved = true;

  ResultsFile results;
  results.cycle = cycle;
  results.candidate_id = cid;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    TargetRecord t;
    t.target = {keys[i].modality, keys[i].cls};
    t.status = outcomes[i].result.status;
    t.metrics = outcomes[i].result.metrics;
    t.curve = outcomes[i].result.curve;
    if (outcomes[i].result.status != TrialStatus::Ok)
      t.failure = RedactedFailure{outcomes[i].result.failure_kind,
                                  outcomes[i].result.failure_context};
    results.per_target.push_back(std::move(t));
  }

  FusionTrainResult refresh;
  if (improved) {
    // apply this cycle's winners on top of the pre-cycle bests
    SearchState updated = state;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      BestSoFar& b = updated.best_for(keys[i].modality, keys[i].cls);
      if (outcomes[i].result.status == TrialStatus::Ok &&
          outcomes[i].result.metrics.f1 > b.f1 + 1e-12) {
        b.f1 = outcomes[i].result.metrics.f1;
        b.descriptor_hash = cand_hash;
        b.checkpoint_ref = outcomes[i].checkpoint_ref;
      }
    }
    ExpertBank bank = bank_from_best(updated);
    refresh = train_fusion(bank, data_, config_.protocol, config_.fusion, cycle);
    if (refresh.status == TrialStatus::Ok)
      results.fused = FusedBlock{refresh.val_metrics.accuracy, refresh.val_metrics.macro_f1};
  }

  const std::string results_bytes = serialize_results(results);
  write_atomic(rel("results.json"), results_bytes);

  for (std::size_t i = 0; i < keys.size(); ++i) {
    TrialRecord r;
    r.kind = "expert";
    r.cycle = cycle;
    r.target = {keys[i].modality, keys[i].cls};
    r.descriptor_hash = cand_hash;
    r.candidate_id = cid;
    r.controller_kind = proposal.controller_kind;
    r.status = trial_status_to_string(outcomes[i].result.status);
    if (outcomes[i].result.status == TrialStatus::Ok) {
      r.f1 = outcomes[i].result.metrics.f1;
      r.checkpoint_ref = outcomes[i].checkpoint_ref;
    } else {
      r.note = outcomes[i].result.failure_kind +
               (outcomes[i].result.failure_context.empty()
                    ? ""
                    : " at " + outcomes[i].result.failure_context);
    }
    ensure(std::move(r));
  }

  if (improved) {
    TrialRecord r;
    r.kind = "fusion";
    r.cycle = cycle;
    r.candidate_id = cid;
    r.controller_kind = proposal.controller_kind;
    r.status = trial_status_to_string(refresh.status);
    if (refresh.status == TrialStatus::Ok) {
      r.val_accuracy = refresh.val_metrics.accuracy;
      r.val_macro_f1 = refresh.val_metrics.macro_f1;
    } else {
      r.note = refresh.failure_kind;
    }
    ensure(std::move(r));
  }

  TrialRecord done;
  done.kind = "cycle";
  done.cycle = cycle;
  done.candidate_id = cid;
  done.descriptor_hash = cand_hash;
  done.controller_kind = proposal.controller_kind;
  done.status = "ok";
  done.results_digest = sha256_file_bytes(results_bytes);
  done.note = proposal.rationale;
  ensure(std::move(done));

  refresh_manifest();
}

void Orchestrator::final_eval(SearchState& state) {
  const auto& recs = ledger_->records();
  const bool have_all = cursor_ + 3 <= recs.size() && recs[cursor_].kind == "final" &&
                        recs[cursor_ + 1].kind == "final" && recs[cursor_ + 2].kind == "final";
  if (have_all) {
    cursor_ += 3;
  } else {
    const ArchDescriptor d0 = config_.initial_descriptor == "dense-only"
                                  ? dense_only_descriptor()
                                  : baseline_descriptor();
    const auto keys = expert_grid(data_.modality_count(), data_.class_count);

    // the single test-split access of the whole run
    const std::vector<std::size_t> test_idx = data_.test_indices();
    std::vector<int> labels;
    for (std::size_t i : test_idx) labels.push_back(data_.samples[i].label);

    // end-to-end
    if (!e2e_model_) {
      EndToEndTrainResult er = train_end_to_end(d0, data_, config_.protocol, 0);
      if (er.status == TrialStatus::Ok) e2e_model_.emplace(std::move(*er.model));
    }
    MulticlassMetrics e2e_m;
    if (e2e_model_) {
      std::vector<int> preds;
      for (std::size_t i : test_idx) preds.push_back(e2e_model_->predict(data_.samples[i]));
      e2e_m = multiclass_metrics(preds, labels, data_.class_count);
    }

    auto eval_staged = [&](ExpertBank& bank, std::uint64_t fusion_cycle) {
      MulticlassMetrics m;
      FusionTrainResult fr =
          train_fusion(bank, data_, config_.protocol, config_.fusion, fusion_cycle);
      if (fr.status == TrialStatus::Ok) {
        std::vector<int> preds;
        for (std::size_t i : test_idx)
          preds.push_back(fr.model->predict(bank.embed_concat(data_.samples[i])));
        m = multiclass_metrics(preds, labels, data_.class_count);
      }
      return m;
    };

    // staged baseline: every expert at the initial descriptor; retraining the
    // fusion with the baseline seed reproduces the baseline-stage weights
    ExpertBank base_bank = bank_for_candidate("baseline", keys);
    const MulticlassMetrics staged_m = eval_staged(base_bank, 0);

    // searched configuration: every expert at its best-so-far descriptor
    ExpertBank best_bank = bank_from_best(state);
    const MulticlassMetrics nas_m = eval_staged(best_bank, config_.budget + 1);

    const struct {
      const char* name;
      const MulticlassMetrics* m;
    } rows[] = {{"end_to_end", &e2e_m}, {"staged", &staged_m}, {"nas", &nas_m}};
    for (const auto& row : rows) {
      TrialRecord r;
      r.kind = "final";
      r.cycle = state.next_cycle;
      r.candidate_id = "final";
      r.status = "ok";
      r.note = row.name;
      r.val_accuracy = row.m->accuracy;
      r.val_macro_f1 = row.m->macro_f1;
      ensure(std::move(r));
    }
  }

  write_atomic(rel("report.json"), report_table(ledger_->records()).dump() + "\n");
}

void Orchestrator::refresh_manifest() {
  write_atomic(rel("manifest.md"), render_manifest(ledger_->records()));
}

RunOutcome Orchestrator::run() {
  cursor_ = 0;
  const auto& recs = ledger_->records();
  if (recs.empty() || recs[0].kind != "config")
    throw StateError("run directory is not initialized (missing config record)");
  if (recs[0].descriptor_hash != run_config_hash(config_))
    throw StateError("configuration does not match the hash pinned in the ledger");
  cursor_ = 1;

  {
    const SearchState st = ledger_->replay();
    if (st.run_status == "completed" || st.run_status == "skipped") {
      RunOutcome out;
      out.state = st;
      out.exit_code = st.run_status == "skipped" ? 2 : 0;
      out.report = report_table(recs);
      return out;
    }
  }

  run_baseline();
  refresh_manifest();

  const SearchState after_baseline = ledger_->replay();
  const bool skip = !after_baseline.fused_history.empty() &&
                    after_baseline.fused_history.front().val_accuracy == 1.0;

  if (!skip)
    for (std::uint64_t k = 1; k <= config_.budget; ++k) run_cycle(k);

  SearchState st = Ledger::replay(std::vector<TrialRecord>(
      recs.begin(), recs.begin() + static_cast<std::ptrdiff_t>(cursor_)));
  final_eval(st);

  TrialRecord status;
  status.kind = "run_status";
  status.cycle = st.next_cycle;
  status.status = skip ? "skipped" : "completed";
  ensure(std::move(status));
  refresh_manifest();

  RunOutcome out;
  out.state = ledger_->replay();
  out.exit_code = skip ? 2 : 0;
  out.report = report_table(ledger_->records());
  return out;
}

RunLock::RunLock(const std::string& run_dir) : path_(run_dir + "/lock") {
#ifndef _WIN32
  if (fs::exists(path_)) {
    long pid = -1;
    std::ifstream in(path_);
    in >> pid;
    if (pid > 0 && ::kill(static_cast<pid_t>(pid), 0) == 0)
      throw StateError("run directory is in use by process " + std::to_string(pid));
    fs::remove(path_);  // stale lock from a dead process
  }
  std::ofstream out(path_, std::ios::trunc);
  out << ::getpid() << "\n";
  held_ = true;
#endif
}

RunLock::~RunLock() {
  if (held_) {
    std::error_code ec;
    fs::remove(path_, ec);
  }
}

json report_table(const std::vector<TrialRecord>& records) {
  json rows = json::array();
  for (const TrialRecord& r : records) {
    if (r.kind == "final")
      rows.push_back(json{{"accuracy", r.val_accuracy},
                          {"configuration", r.note},
                          {"macro_f1", r.val_macro_f1},
                          {"runtime_seconds", r.runtime_seconds}});
  }
  if (rows.empty()) {
    // run not finished yet: report the baseline validation numbers
    for (const TrialRecord& r : records) {
      if (r.kind == "end_to_end" && r.cycle == 0)
        rows.push_back(json{{"accuracy", r.val_accuracy},
                            {"configuration", "end_to_end"},
                            {"macro_f1", r.val_macro_f1},
                            {"runtime_seconds", r.runtime_seconds}});
      if (r.kind == "fusion" && r.cycle == 0)
        rows.push_back(json{{"accuracy", r.val_accuracy},
                            {"configuration", "staged"},
                            {"macro_f1", r.val_macro_f1},
                            {"runtime_seconds", r.runtime_seconds}});
    }
  }
  return json{{"configurations", std::move(rows)}};
}

std::string report_trajectories_csv(const std::vector<TrialRecord>& records) {
  std::string out = "expert,cycle,trained_f1,best_so_far_f1\n";
  std::vector<std::pair<DirectiveTarget, double>> best;
  for (const TrialRecord& r : records) {
    if (r.kind != "expert") continue;
    double* b = nullptr;
    for (auto& e : best)
      if (e.first == r.target) b = &e.second;
    if (!b) {
      best.push_back({r.target, -1.0});
      b = &best.back().second;
    }
    if (r.status == "ok" && r.f1 > *b + 1e-12) *b = r.f1;
    out += "m" + std::to_string(r.target.modality) + "_c" + std::to_string(r.target.cls) + "," +
           std::to_string(r.cycle) + "," + fixed6(r.status == "ok" ? r.f1 : 0.0) + "," +
           fixed6(*b >= 0 ? *b : 0.0) + "\n";
  }
  return out;
}

}  // namespace fusenas
