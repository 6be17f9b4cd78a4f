#include "fusenas/protocol.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef _WIN32
#include <fcntl.h>
#include <unistd.h>
#endif

#include "fusenas/errors.hpp"
#include "fusenas/sha256.hpp"

namespace fusenas {

using json = nlohmann::json;

namespace test_hooks {
std::function<void(const std::string&)> after_write;
}  // namespace test_hooks

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& rule) {
  throw ValidationError(path, rule);
}

json parse_json_text(const std::string& text, const std::string& what) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) fail(what, "not well-formed JSON");
  return doc;
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

const json& need(const json& o, const std::string& path, const char* key) {
  auto it = o.find(key);
  if (it == o.end()) fail(path + "." + key, "missing required field");
  return *it;
}

std::uint64_t get_u64(const json& o, const std::string& path, const char* key) {
  const json& v = need(o, path, key);
  if (!v.is_number_unsigned()) fail(path + "." + key, "must be a non-negative integer");
  return v.get<std::uint64_t>();
}

int get_int(const json& o, const std::string& path, const char* key) {
  const json& v = need(o, path, key);
  if (!v.is_number_integer()) fail(path + "." + key, "must be an integer");
  return v.get<int>();
}

double get_num(const json& o, const std::string& path, const char* key) {
  const json& v = need(o, path, key);
  if (!v.is_number()) fail(path + "." + key, "must be a number");
  return v.get<double>();
}

std::string get_str(const json& o, const std::string& path, const char* key) {
  const json& v = need(o, path, key);
  if (!v.is_string()) fail(path + "." + key, "must be a string");
  return v.get<std::string>();
}

void check_schema_version(const json& o, const std::string& path) {
  if (get_int(o, path, "schema_version") != 1)
    fail(path + ".schema_version", "unsupported schema version");
}

json target_to_json(const DirectiveTarget& t) {
  return json{{"class", t.cls}, {"modality", t.modality}};
}

DirectiveTarget target_from_json(const json& o, const std::string& path) {
  check_keys(o, path, {"class", "modality"});
  DirectiveTarget t;
  t.modality = get_u64(o, path, "modality");
  t.cls = get_int(o, path, "class");
  if (t.cls < 0) fail(path + ".class", "must be non-negative");
  return t;
}

json metrics_to_json(const BinaryMetrics& m) {
  json j{{"auc", nullptr},
         {"balanced_accuracy", m.balanced_accuracy},
         {"f1", m.f1},
         {"fn", m.fn},
         {"fp", m.fp},
         {"positive_prevalence", m.positive_prevalence},
         {"tn", m.tn},
         {"tp", m.tp}};
  if (m.auc) j["auc"] = *m.auc;
  return j;
}

BinaryMetrics metrics_from_json(const json& o, const std::string& path) {
  check_keys(o, path,
             {"auc", "balanced_accuracy", "f1", "fn", "fp", "positive_prevalence", "tn", "tp"});
  BinaryMetrics m;
  m.f1 = get_num(o, path, "f1");
  const json& auc = need(o, path, "auc");
  if (auc.is_number()) m.auc = auc.get<double>();
  else if (!auc.is_null()) fail(path + ".auc", "must be a number or null");
  m.balanced_accuracy = get_num(o, path, "balanced_accuracy");
  m.tp = get_u64(o, path, "tp");
  m.fp = get_u64(o, path, "fp");
  m.tn = get_u64(o, path, "tn");
  m.fn = get_u64(o, path, "fn");
  m.positive_prevalence = get_num(o, path, "positive_prevalence");
  return m;
}

json curve_to_json(const LearningCurveSummary& c) {
  return json{{"epochs_run", c.epochs_run},
              {"train_loss_first", c.train_loss_first},
              {"train_loss_last", c.train_loss_last},
              {"val_f1_best", c.val_f1_best},
              {"val_loss_min", c.val_loss_min}};
}

LearningCurveSummary curve_from_json(const json& o, const std::string& path) {
  check_keys(o, path,
             {"epochs_run", "train_loss_first", "train_loss_last", "val_f1_best", "val_loss_min"});
  LearningCurveSummary c;
  c.epochs_run = get_u64(o, path, "epochs_run");
  c.train_loss_first = get_num(o, path, "train_loss_first");
  c.train_loss_last = get_num(o, path, "train_loss_last");
  c.val_loss_min = get_num(o, path, "val_loss_min");
  c.val_f1_best = get_num(o, path, "val_f1_best");
  return c;
}

json results_to_json(const ResultsFile& r) {
  json per = json::array();
  for (const TargetRecord& t : r.per_target) {
    json rec{{"curve", curve_to_json(t.curve)},
             {"failure", nullptr},
             {"metrics", metrics_to_json(t.metrics)},
             {"runtime_seconds", t.runtime_seconds},
             {"status", trial_status_to_string(t.status)},
             {"target", target_to_json(t.target)}};
    if (t.failure) rec["failure"] = json{{"kind", t.failure->kind}, {"message", t.failure->message}};
    per.push_back(std::move(rec));
  }
  json j{{"candidate_id", r.candidate_id},
         {"cycle", r.cycle},
         {"fused", nullptr},
         {"per_target", std::move(per)},
         {"schema_version", r.schema_version}};
  if (r.fused)
    j["fused"] = json{{"val_accuracy", r.fused->val_accuracy},
                      {"val_macro_f1", r.fused->val_macro_f1}};
  return j;
}

}  // namespace

bool valid_candidate_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id)
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-')) return false;
  return true;
}

std::string serialize_directive(const Directive& d) {
  json targets = json::array();
  for (const DirectiveTarget& t : d.targets) targets.push_back(target_to_json(t));
  json j{{"candidate_id", d.candidate_id},
         {"cycle", d.cycle},
         {"descriptor_path", d.descriptor_path},
         {"preprocessing_path", d.preprocessing_path},
         {"rationale", d.rationale},
         {"schema_version", d.schema_version},
         {"targets", std::move(targets)}};
  return j.dump() + "\n";
}

Directive parse_directive(const std::string& text) {
  const json doc = parse_json_text(text, "directive");
  check_keys(doc, "directive",
             {"candidate_id", "cycle", "descriptor_path", "preprocessing_path", "rationale",
              "schema_version", "targets"});
  check_schema_version(doc, "directive");

  Directive d;
  d.cycle = get_u64(doc, "directive", "cycle");
  d.candidate_id = get_str(doc, "directive", "candidate_id");
  if (!valid_candidate_id(d.candidate_id))
    fail("directive.candidate_id", "must match [a-z0-9_-]{1,64}");
  d.descriptor_path = get_str(doc, "directive", "descriptor_path");
  if (d.descriptor_path.empty()) fail("directive.descriptor_path", "must be non-empty");
  d.preprocessing_path = get_str(doc, "directive", "preprocessing_path");
  if (d.preprocessing_path.empty()) fail("directive.preprocessing_path", "must be non-empty");
  d.rationale = get_str(doc, "directive", "rationale");

  const json& targets = need(doc, "directive", "targets");
  if (!targets.is_array() || targets.empty()) fail("directive.targets", "must be a non-empty array");
  for (std::size_t i = 0; i < targets.size(); ++i)
    d.targets.push_back(
        target_from_json(targets[i], "directive.targets[" + std::to_string(i) + "]"));
  return d;
}

void check_directive_targets(const Directive& d, std::size_t modalities, int classes) {
  for (std::size_t i = 0; i < d.targets.size(); ++i) {
    const std::string path = "directive.targets[" + std::to_string(i) + "]";
    if (d.targets[i].modality >= modalities)
      fail(path + ".modality", "out of range for " + std::to_string(modalities) + " modalities");
    if (d.targets[i].cls >= classes)
      fail(path + ".class", "out of range for " + std::to_string(classes) + " classes");
  }
}

std::string serialize_results(const ResultsFile& r) { return results_to_json(r).dump() + "\n"; }

ResultsFile parse_results(const std::string& text) {
  const json doc = parse_json_text(text, "results");
  check_keys(doc, "results", {"candidate_id", "cycle", "fused", "per_target", "schema_version"});
  check_schema_version(doc, "results");

  ResultsFile r;
  r.cycle = get_u64(doc, "results", "cycle");
  r.candidate_id = get_str(doc, "results", "candidate_id");
  if (!valid_candidate_id(r.candidate_id)) fail("results.candidate_id", "must match [a-z0-9_-]{1,64}");

  const json& per = need(doc, "results", "per_target");
  if (!per.is_array() || per.empty()) fail("results.per_target", "must be a non-empty array");
  for (std::size_t i = 0; i < per.size(); ++i) {
    const std::string path = "results.per_target[" + std::to_string(i) + "]";
    const json& rec = per[i];
    check_keys(rec, path, {"curve", "failure", "metrics", "runtime_seconds", "status", "target"});
    TargetRecord t;
    t.target = target_from_json(need(rec, path, "target"), path + ".target");
    t.status = trial_status_from_string(get_str(rec, path, "status"));
    t.metrics = metrics_from_json(need(rec, path, "metrics"), path + ".metrics");
    t.curve = curve_from_json(need(rec, path, "curve"), path + ".curve");
    t.runtime_seconds = get_num(rec, path, "runtime_seconds");
    if (t.runtime_seconds < 0) fail(path + ".runtime_seconds", "must be non-negative");
    const json& f = need(rec, path, "failure");
    if (f.is_object()) {
      check_keys(f, path + ".failure", {"kind", "message"});
      t.failure = RedactedFailure{get_str(f, path + ".failure", "kind"),
                                  get_str(f, path + ".failure", "message")};
    } else if (!f.is_null()) {
      fail(path + ".failure", "must be an object or null");
    }
    r.per_target.push_back(std::move(t));
  }

  const json& fused = need(doc, "results", "fused");
  if (fused.is_object()) {
    check_keys(fused, "results.fused", {"val_accuracy", "val_macro_f1"});
    FusedBlock fb;
    fb.val_accuracy = get_num(fused, "results.fused", "val_accuracy");
    fb.val_macro_f1 = get_num(fused, "results.fused", "val_macro_f1");
    if (fb.val_accuracy < 0 || fb.val_accuracy > 1)
      fail("results.fused.val_accuracy", "must be within [0, 1]");
    r.fused = fb;
  } else if (!fused.is_null()) {
    fail("results.fused", "must be an object or null");
  }
  return r;
}

std::string serialize_trial_record(const TrialRecord& r) {
  json j{{"candidate_id", r.candidate_id},
         {"checkpoint_ref", r.checkpoint_ref},
         {"classes", r.classes},
         {"controller_kind", r.controller_kind},
         {"cycle", r.cycle},
         {"descriptor_hash", r.descriptor_hash},
         {"f1", r.f1},
         {"kind", r.kind},
         {"modalities", r.modalities},
         {"note", r.note},
         {"results_digest", r.results_digest},
         {"runtime_seconds", r.runtime_seconds},
         {"seq", r.seq},
         {"status", r.status},
         {"target", target_to_json(r.target)},
         {"timestamp", r.timestamp},
         {"val_accuracy", r.val_accuracy},
         {"val_macro_f1", r.val_macro_f1}};
  return j.dump();
}

TrialRecord parse_trial_record(const std::string& line) {
  const json doc = parse_json_text(line, "record");
  check_keys(doc, "record",
             {"candidate_id", "checkpoint_ref", "classes", "controller_kind", "cycle",
              "descriptor_hash", "f1", "kind", "modalities", "note", "results_digest",
              "runtime_seconds", "seq", "status", "target", "timestamp", "val_accuracy",
              "val_macro_f1"});
  TrialRecord r;
  r.seq = get_u64(doc, "record", "seq");
  r.kind = get_str(doc, "record", "kind");
  if (r.kind != "config" && r.kind != "expert" && r.kind != "fusion" && r.kind != "end_to_end" &&
      r.kind != "cycle" && r.kind != "final" && r.kind != "run_status")
    fail("record.kind", "unknown record kind '" + r.kind + "'");
  r.cycle = get_u64(doc, "record", "cycle");
  r.target = target_from_json(need(doc, "record", "target"), "record.target");
  r.descriptor_hash = get_str(doc, "record", "descriptor_hash");
  r.candidate_id = get_str(doc, "record", "candidate_id");
  r.status = get_str(doc, "record", "status");
  r.f1 = get_num(doc, "record", "f1");
  r.val_accuracy = get_num(doc, "record", "val_accuracy");
  r.val_macro_f1 = get_num(doc, "record", "val_macro_f1");
  r.results_digest = get_str(doc, "record", "results_digest");
  r.checkpoint_ref = get_str(doc, "record", "checkpoint_ref");
  r.controller_kind = get_str(doc, "record", "controller_kind");
  r.timestamp = get_u64(doc, "record", "timestamp");
  r.runtime_seconds = get_num(doc, "record", "runtime_seconds");
  r.modalities = get_u64(doc, "record", "modalities");
  r.classes = get_u64(doc, "record", "classes");
  r.note = get_str(doc, "record", "note");
  return r;
}

BestSoFar& SearchState::best_for(std::size_t m, int c) {
  return best.at(m * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c));
}

const BestSoFar& SearchState::best_for(std::size_t m, int c) const {
  return best.at(m * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c));
}

Ledger::Ledger(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) return;  // fresh ledger
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);

  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      TrialRecord r = parse_trial_record(lines[i]);
      if (r.seq != records_.size())
        throw StateError("sequence gap at line " + std::to_string(i + 1));
      records_.push_back(std::move(r));
    } catch (const ValidationError&) {
      if (i + 1 == lines.size()) {
        // interrupted final append: recover by ignoring the partial line
        warnings_.push_back("dropped corrupt trailing record at line " + std::to_string(i + 1));
        break;
      }
      throw StateError(path_ + ": corrupt record at line " + std::to_string(i + 1));
    }
  }
}

std::uint64_t Ledger::append(TrialRecord r) {
  r.seq = records_.size();
  if (r.timestamp == 0) r.timestamp = r.seq;
  const std::string line = serialize_trial_record(r) + "\n";

  std::FILE* f = std::fopen(path_.c_str(), "ab");
  if (!f) throw StateError("cannot open ledger " + path_);
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() &&
                  std::fflush(f) == 0;
#ifndef _WIN32
  if (ok) ::fsync(::fileno(f));
#endif
  std::fclose(f);
  if (!ok) throw StateError("short write to ledger " + path_);

  records_.push_back(std::move(r));
  if (test_hooks::after_write) test_hooks::after_write(path_);
  return records_.back().seq;
}

SearchState Ledger::replay(const std::vector<TrialRecord>& records) {
  SearchState s;
  for (const TrialRecord& r : records) {
    if (r.kind == "config") {
      s.config_hash = r.descriptor_hash;
      s.modalities = r.modalities;
      s.classes = static_cast<int>(r.classes);
      s.best.assign(s.modalities * r.classes, BestSoFar{});
    } else if (r.kind == "expert") {
      if (r.status == "ok") {
        BestSoFar& b = s.best_for(r.target.modality, r.target.cls);
        if (r.f1 > b.f1 + 1e-12) {
          b.f1 = r.f1;
          b.descriptor_hash = r.descriptor_hash;
          b.checkpoint_ref = r.checkpoint_ref;
        }
      }
    } else if (r.kind == "fusion") {
      s.fused_history.push_back({r.val_accuracy, r.val_macro_f1});
    } else if (r.kind == "end_to_end") {
      s.baseline_done = true;
    } else if (r.kind == "cycle") {
      s.next_cycle = r.cycle + 1;
    } else if (r.kind == "run_status") {
      s.run_status = r.status;
    }
    s.next_seq = r.seq + 1;
  }
  return s;
}

void write_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StateError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw StateError("short write to " + tmp);
  }
#ifndef _WIN32
  const int fd = ::open(tmp.c_str(), O_RDONLY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
#endif
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw StateError("cannot rename " + tmp + " to " + path);
  if (test_hooks::after_write) test_hooks::after_write(path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_file_bytes(const std::string& bytes) { return sha256_hex(bytes); }

DatasetMeta dataset_meta(const DatasetBundle& data) {
  DatasetMeta m;
  m.modalities = data.modality_count();
  m.classes = static_cast<std::uint64_t>(data.class_count);
  for (std::size_t i = 0; i < data.modality_count(); ++i) {
    const auto sh = data.modality_shape(i);
    m.modality_shapes.push_back({sh[0], sh[1]});
  }
  m.split_sizes = {data.indices_of(Split::Train).size(), data.indices_of(Split::Val).size(),
                   data.indices_of(Split::Test).size()};
  const auto counts = data.class_counts(Split::Train);
  const double total = static_cast<double>(m.split_sizes[0]);
  for (std::size_t c : counts)
    m.class_prevalence.push_back(total > 0 ? static_cast<double>(c) / total : 0.0);
  return m;
}

json summarize_for_controller(
    const SearchState& state, const DatasetMeta& meta, const TrainProtocol& protocol,
    std::uint64_t budget_remaining, const std::optional<ResultsFile>& last_results,
    const std::function<std::optional<json>(const std::string&)>& descriptor_by_hash) {
  json experts = json::array();
  for (std::size_t m = 0; m < state.modalities; ++m) {
    for (int c = 0; c < state.classes; ++c) {
      const BestSoFar& b = state.best_for(m, c);
      json e{{"best_descriptor", nullptr},
             {"best_descriptor_hash", nullptr},
             {"best_f1", nullptr},
             {"class", c},
             {"modality", m}};
      if (b.f1 >= 0) {
        e["best_f1"] = b.f1;
        e["best_descriptor_hash"] = b.descriptor_hash;
        if (descriptor_by_hash) {
          if (auto doc = descriptor_by_hash(b.descriptor_hash)) e["best_descriptor"] = *doc;
        }
      }
      experts.push_back(std::move(e));
    }
  }

  json shapes = json::array();
  for (const auto& sh : meta.modality_shapes) shapes.push_back(json::array({sh[0], sh[1]}));

  json j{{"budget_remaining", budget_remaining},
         {"dataset",
          json{{"class_prevalence", meta.class_prevalence},
               {"classes", meta.classes},
               {"modalities", meta.modalities},
               {"modality_shapes", std::move(shapes)},
               {"split_sizes", json::array({meta.split_sizes[0], meta.split_sizes[1],
                                            meta.split_sizes[2]})}}},
         {"experts", std::move(experts)},
         {"fused_history", json::array()},
         {"last_results", nullptr},
         {"protocol",
          json{{"batch_size", protocol.batch_size},
               {"beta1", protocol.beta1},
               {"beta2", protocol.beta2},
               {"epsilon", protocol.epsilon},
               {"focal_alpha", protocol.focal_alpha},
               {"focal_gamma", protocol.focal_gamma},
               {"learning_rate", protocol.learning_rate},
               {"loss", loss_kind_to_string(protocol.loss)},
               {"master_seed", protocol.master_seed},
               {"max_epochs", protocol.max_epochs},
               {"optimizer", protocol.optimizer},
               {"patience", protocol.patience}}}};
  for (const FusedBlock& fb : state.fused_history)
    j["fused_history"].push_back(
        json{{"val_accuracy", fb.val_accuracy}, {"val_macro_f1", fb.val_macro_f1}});
  if (last_results) j["last_results"] = results_to_json(*last_results);
  return j;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string render_manifest(const std::vector<TrialRecord>& records) {
  const SearchState s = Ledger::replay(records);
  std::string out;
  out += "# Search Manifest\n\n";

  out += "## Current Best Table\n\n";
  out += "| expert | best F1 | descriptor |\n";
  out += "| --- | --- | --- |\n";
  for (std::size_t m = 0; m < s.modalities; ++m) {
    for (int c = 0; c < s.classes; ++c) {
      const BestSoFar& b = s.best_for(m, c);
      out += "| m" + std::to_string(m) + "_c" + std::to_string(c) + " | ";
      out += b.f1 >= 0 ? fixed6(b.f1) : "(none)";
      out += " | " + (b.f1 >= 0 ? b.descriptor_hash : "(none)") + " |\n";
    }
  }

  out += "\n## Recent Findings\n\n";
  std::vector<const TrialRecord*> cycles;
  for (const TrialRecord& r : records)
    if (r.kind == "cycle") cycles.push_back(&r);
  const std::size_t k = cycles.size() > 5 ? cycles.size() - 5 : 0;
  for (std::size_t i = k; i < cycles.size(); ++i) {
    const TrialRecord& cy = *cycles[i];
    out += "- cycle " + std::to_string(cy.cycle) + ": candidate " + cy.candidate_id;
    for (const TrialRecord& r : records) {
      if (r.kind == "expert" && r.cycle == cy.cycle && r.candidate_id == cy.candidate_id) {
        out += ", m" + std::to_string(r.target.modality) + "_c" + std::to_string(r.target.cls) +
               " " + r.status;
        if (r.status == "ok") out += " F1 " + fixed6(r.f1);
      }
    }
    out += "\n";
  }
  if (cycles.size() == k) out += "(no cycles yet)\n";

  out += "\n## Rationale Log\n\n";
  bool any = false;
  for (const TrialRecord* cy : cycles) {
    out += "- cycle " + std::to_string(cy->cycle) + ": " +
           (cy->note.empty() ? "(none given)" : cy->note) + "\n";
    any = true;
  }
  if (!any) out += "(empty)\n";
  return out;
}

}  // namespace fusenas
