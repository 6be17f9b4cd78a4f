#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "fusenas/controller.hpp"
#include "fusenas/errors.hpp"
#include "fusenas/orchestrator.hpp"

namespace {

using fusenas::json;
namespace fs = std::filesystem;

// Flag > environment > config file.
std::optional<std::string> env_value(const char* name) {
  const char* v = std::getenv(name);
  if (v && *v) return std::string(v);
  return std::nullopt;
}

struct GlobalOpts {
  std::string run_dir;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> budget;
};

void apply_overrides(fusenas::RunConfig& cfg, const GlobalOpts& g) {
  if (g.seed)
    cfg.protocol.master_seed = *g.seed;
  else if (auto e = env_value("FUSENAS_SEED"))
    cfg.protocol.master_seed = std::stoull(*e);
  if (g.workers)
    cfg.workers = *g.workers;
  else if (auto e = env_value("FUSENAS_WORKERS"))
    cfg.workers = std::stoull(*e);
  if (g.budget)
    cfg.budget = *g.budget;
  else if (auto e = env_value("FUSENAS_BUDGET"))
    cfg.budget = std::stoull(*e);
}

std::string resolve_run_dir(const GlobalOpts& g) {
  if (!g.run_dir.empty()) return g.run_dir;
  if (auto e = env_value("FUSENAS_RUN_DIR")) return *e;
  throw fusenas::StateError("no run directory given (--run-dir or FUSENAS_RUN_DIR)");
}

std::shared_ptr<fusenas::Controller> make_controller(const fusenas::RunConfig& cfg) {
  if (cfg.controller == "heuristic") return std::make_shared<fusenas::HeuristicController>();
#ifdef FUSENAS_WITH_HTTP
  if (auto endpoint = env_value("FUSENAS_REMOTE_ENDPOINT"))
    return std::make_shared<fusenas::RemoteController>(fusenas::make_http_transport(*endpoint));
#endif
  throw fusenas::StateError(
      "remote controller requested but FUSENAS_REMOTE_ENDPOINT is not set "
      "(or HTTP support is not compiled in)");
}

int run_or_resume(const GlobalOpts& g) {
  const std::string dir = resolve_run_dir(g);
  fusenas::RunConfig cfg = fusenas::parse_run_config(fusenas::read_file(dir + "/config.json"));
  apply_overrides(cfg, g);
  fusenas::RunLock lock(dir);
  fusenas::Orchestrator orch(cfg, dir, make_controller(cfg));
  const fusenas::RunOutcome out = orch.run();
  std::cout << out.report.dump(2) << "\n";
  return out.exit_code;
}

// The generator produces modality groups directly; flatten them back into
// one multivariate record per sample for the .ts container.
fusenas::RawSeries bundle_to_raw(const fusenas::DatasetBundle& b, const std::string& name) {
  fusenas::RawSeries raw;
  raw.problem_name = name;
  std::size_t dims = 0;
  for (const auto& g : b.spec.groups) dims += g.size();
  raw.dimensions = dims;
  raw.series_length = b.samples.at(0).modalities.at(0).shape[0];
  for (int c = 0; c < b.class_count; ++c) raw.label_names.push_back(std::to_string(c));
  for (const auto& s : b.samples) {
    fusenas::Tensor x({raw.series_length, dims});
    std::size_t col = 0;
    for (const auto& xm : s.modalities)
      for (std::size_t j = 0; j < xm.shape[1]; ++j, ++col)
        for (std::size_t t = 0; t < raw.series_length; ++t) x.at(t, col) = xm.at(t, j);
    raw.series.push_back(std::move(x));
    raw.labels.push_back(s.label);
  }
  return raw;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Staged expert-fusion architecture search for multimodal time series"};
  app.require_subcommand(1);
  // global flags may appear before or after the subcommand name
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--run-dir", g.run_dir, "Run directory");
  app.add_option("--config", g.config_path, "Configuration file");
  std::uint64_t seed_flag = 0;
  auto* seed_opt = app.add_option("--seed", seed_flag, "Master seed override");
  std::size_t workers_flag = 0;
  auto* workers_opt = app.add_option("--workers", workers_flag, "Parallel training workers");
  std::uint64_t budget_flag = 0;
  auto* budget_opt = app.add_option("--budget", budget_flag, "Cycle budget override");

  auto* cmd_init = app.add_subcommand("init", "Create and pin a new run directory");
  auto* cmd_run = app.add_subcommand("run", "Execute the search in a run directory");
  auto* cmd_resume = app.add_subcommand("resume", "Continue an interrupted run");

  auto* cmd_report = app.add_subcommand("report", "Emit report data from the ledger");
  std::string report_kind = "table";
  cmd_report->add_option("--kind", report_kind, "table or trajectories")
      ->check(CLI::IsMember({"table", "trajectories"}));
  std::string report_out;
  cmd_report->add_option("--out", report_out, "Write to this file instead of stdout");

  auto* cmd_eval = app.add_subcommand("eval", "Train and score one expert in isolation");
  std::string eval_model, eval_pre;
  std::size_t eval_modality = 0;
  int eval_class = 0;
  cmd_eval->add_option("--model", eval_model, "model.json")->required();
  cmd_eval->add_option("--preprocessing", eval_pre, "preprocessing.json")->required();
  cmd_eval->add_option("--modality", eval_modality, "Target modality index");
  cmd_eval->add_option("--class", eval_class, "Target class index");

  auto* cmd_validate = app.add_subcommand("validate-descriptor", "Check descriptor files");
  std::string val_model, val_pre;
  cmd_validate->add_option("--model", val_model, "model.json")->required();
  cmd_validate->add_option("--preprocessing", val_pre, "preprocessing.json")->required();

  auto* cmd_gen = app.add_subcommand("gen-synthetic", "Write a seeded synthetic dataset as .ts");
  std::uint64_t gs_seed = 0, gs_modalities = 2, gs_length = 64, gs_channels = 2, gs_count = 120;
  int gs_classes = 3;
  std::string gs_difficulty = "separable", gs_out;
  cmd_gen->add_option("--gen-seed", gs_seed, "Generator seed");
  cmd_gen->add_option("--modalities", gs_modalities, "Modalities");
  cmd_gen->add_option("--classes", gs_classes, "Classes");
  cmd_gen->add_option("--length", gs_length, "Series length");
  cmd_gen->add_option("--channels", gs_channels, "Channels per modality");
  cmd_gen->add_option("--count", gs_count, "Sample count");
  cmd_gen->add_option("--difficulty", gs_difficulty, "separable or hard");
  cmd_gen->add_option("--out", gs_out, "Output .ts path")->required();

  auto* cmd_parse = app.add_subcommand("parse-ts", "Parse a .ts file and print its shape");
  std::string ts_in;
  cmd_parse->add_option("--in", ts_in, "Input .ts path")->required();

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed_flag;
  if (*workers_opt) g.workers = workers_flag;
  if (*budget_opt) g.budget = budget_flag;

  try {
    if (*cmd_init) {
      std::string cfg_path = g.config_path;
      if (cfg_path.empty()) {
        if (auto e = env_value("FUSENAS_CONFIG")) cfg_path = *e;
      }
      if (cfg_path.empty()) throw fusenas::StateError("init requires --config");
      fusenas::RunConfig cfg = fusenas::parse_run_config(fusenas::read_file(cfg_path));
      apply_overrides(cfg, g);
      const std::string dir = resolve_run_dir(g);
      fusenas::Orchestrator::init_run(cfg, dir);
      std::cout << "initialized " << dir << "\n";
      return 0;
    }
    if (*cmd_run || *cmd_resume) return run_or_resume(g);

    if (*cmd_report) {
      const std::string dir = resolve_run_dir(g);
      fusenas::Ledger ledger(dir + "/ledger.jsonl");
      if (ledger.records().empty()) throw fusenas::StateError("ledger is empty");
      const std::string data = report_kind == "table"
                                   ? fusenas::report_table(ledger.records()).dump(2) + "\n"
                                   : fusenas::report_trajectories_csv(ledger.records());
      if (report_out.empty())
        std::cout << data;
      else
        fusenas::write_atomic(report_out, data);
      return 0;
    }

    if (*cmd_eval) {
      if (g.config_path.empty()) throw fusenas::StateError("eval requires --config");
      fusenas::RunConfig cfg = fusenas::parse_run_config(fusenas::read_file(g.config_path));
      apply_overrides(cfg, g);
      const fusenas::ArchDescriptor d = fusenas::parse_descriptor_files(
          fusenas::read_file(eval_model), fusenas::read_file(eval_pre));
      const fusenas::DatasetBundle data = fusenas::load_dataset(cfg.dataset);
      const fusenas::ExpertTrainResult r = fusenas::train_expert(
          {eval_modality, eval_class}, d, data, cfg.protocol, 0);
      json out{{"status", fusenas::trial_status_to_string(r.status)}};
      if (r.status == fusenas::TrialStatus::Ok) {
        out["f1"] = r.metrics.f1;
        out["balanced_accuracy"] = r.metrics.balanced_accuracy;
        out["epochs_run"] = r.curve.epochs_run;
        if (r.metrics.auc) out["auc"] = *r.metrics.auc;
      } else {
        out["failure_kind"] = r.failure_kind;
      }
      std::cout << out.dump(2) << "\n";
      return r.status == fusenas::TrialStatus::Ok ? 0 : 1;
    }

    if (*cmd_validate) {
      try {
        const fusenas::ArchDescriptor d = fusenas::parse_descriptor_files(
            fusenas::read_file(val_model), fusenas::read_file(val_pre));
        std::cout << json{{"hash", fusenas::canonical_hash(d)}, {"valid", true}}.dump(2) << "\n";
        return 0;
      } catch (const fusenas::ValidationError& e) {
        json errs = json::array();
        for (const auto& fe : e.errors()) errs.push_back({{"path", fe.path}, {"rule", fe.rule}});
        std::cout << json{{"errors", errs}, {"valid", false}}.dump(2) << "\n";
        return 1;
      }
    }

    if (*cmd_gen) {
      const fusenas::DatasetBundle b = fusenas::generate_synthetic(
          gs_seed, gs_modalities, gs_classes, gs_length, gs_channels, gs_count,
          fusenas::difficulty_from_string(gs_difficulty));
      fusenas::write_atomic(gs_out, fusenas::serialize_ts(bundle_to_raw(b, "synthetic")));
      std::cout << "wrote " << gs_out << "\n";
      return 0;
    }

    if (*cmd_parse) {
      const fusenas::RawSeries raw = fusenas::parse_ts(fusenas::read_file(ts_in));
      std::cout << json{{"classes", raw.label_names.size()},
                        {"dimensions", raw.dimensions},
                        {"problem_name", raw.problem_name},
                        {"samples", raw.series.size()},
                        {"series_length", raw.series_length}}
                       .dump(2)
                << "\n";
      return 0;
    }
  } catch (const fusenas::ValidationError& e) {
    json errs = json::array();
    for (const auto& fe : e.errors()) errs.push_back({{"path", fe.path}, {"rule", fe.rule}});
    std::cerr << json{{"errors", errs}}.dump(2) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
