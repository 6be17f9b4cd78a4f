#include "fusenas/controller.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#ifdef FUSENAS_WITH_HTTP
#include "httplib.h"
#endif

#include "fusenas/errors.hpp"
#include "fusenas/rng.hpp"

namespace fusenas {

using json = nlohmann::json;

namespace {

constexpr MutOp kOpRotation[kMutOpCount] = {
    MutOp::Widen,        MutOp::Deepen,      MutOp::KernelSwap,
    MutOp::ToggleNorm,   MutOp::DropoutShift, MutOp::PreprocToggleZscore,
    MutOp::PreprocSetDownsample, MutOp::Shrink,
};

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

Proposal HeuristicController::propose(const json& summary, const std::string& manifest,
                                      std::uint64_t seed) {
  (void)manifest;  // the heuristic needs only the structured summary
  if (!summary.contains("experts") || !summary["experts"].is_array() ||
      summary["experts"].empty())
    throw StateError("controller summary lacks expert entries");

  // argmin over best-so-far F1; experts without a result sort first so they
  // get attention before tuning starts
  const json* chosen = nullptr;
  double chosen_f1 = 0;
  for (const json& e : summary["experts"]) {
    const bool has = e.contains("best_f1") && e["best_f1"].is_number();
    const double f1 = has ? e["best_f1"].get<double>() : -1.0;
    if (!chosen || f1 < chosen_f1) {
      chosen = &e;
      chosen_f1 = f1;
    }
  }

  Proposal p;
  p.controller_kind = "heuristic";
  p.targets.push_back(DirectiveTarget{(*chosen)["modality"].get<std::size_t>(),
                                      (*chosen)["class"].get<int>()});

  ArchDescriptor base = baseline_descriptor();
  if (chosen->contains("best_descriptor") && (*chosen)["best_descriptor"].is_object())
    base = descriptor_from_json((*chosen)["best_descriptor"]);

  DetRng policy(derive_seed(seed, seed_tag("policy")));
  const std::uint64_t budget =
      summary.contains("budget_remaining") && summary["budget_remaining"].is_number_unsigned()
          ? summary["budget_remaining"].get<std::uint64_t>()
          : 0;
  MutOp op = kOpRotation[budget % kMutOpCount];
  const bool explored = policy.uniform() < 0.2;
  if (explored) op = static_cast<MutOp>(policy.below(kMutOpCount));

  p.descriptor = mutate_descriptor(base, derive_seed(seed, seed_tag("mutate")), op);
  p.rationale = "weakest expert m" + std::to_string(p.targets[0].modality) + "_c" +
                std::to_string(p.targets[0].cls) + " (best F1 " +
                (chosen_f1 >= 0 ? fixed6(chosen_f1) : std::string("none")) + "); op " +
                mut_op_name(op) + (explored ? " (explore)" : "");
  return p;
}

FixtureTransport::FixtureTransport(std::vector<std::string> responses)
    : responses_(responses.begin(), responses.end()) {}

std::string FixtureTransport::exchange(const std::string& request) {
  requests_.push_back(request);
  if (responses_.empty()) throw StateError("fixture transport exhausted");
  std::string r = std::move(responses_.front());
  responses_.pop_front();
  return r;
}

std::string FailingTransport::exchange(const std::string&) {
  throw StateError("transport unavailable");
}

RemoteController::RemoteController(std::shared_ptr<Transport> transport, int transport_retries,
                                   int repair_attempts)
    : transport_(std::move(transport)),
      transport_retries_(transport_retries),
      repair_attempts_(repair_attempts) {}

Proposal RemoteController::propose(const json& summary, const std::string& manifest,
                                   std::uint64_t seed) {
  const std::string request = summary.dump() + "\n\n" + manifest;

  std::string response;
  bool got_response = false;
  for (int attempt = 0; attempt <= transport_retries_ && !got_response; ++attempt) {
    try {
      response = transport_->exchange(request);
      got_response = true;
    } catch (const std::exception&) {
      // retry; backoff is pointless against fixtures and bounded anyway
    }
  }

  if (got_response) {
    try {
      const json doc = json::parse(response, nullptr, false);
      if (doc.is_discarded() || !doc.is_object()) throw ValidationError("response", "not an object");
      if (!doc.contains("target") || !doc["target"].is_object())
        throw ValidationError("response.target", "missing");
      Proposal p;
      p.controller_kind = "remote";
      p.targets.push_back(DirectiveTarget{doc["target"].value("modality", std::size_t{0}),
                                          doc["target"].value("class", 0)});
      p.rationale = doc.value("rationale", std::string{});
      if (!doc.contains("descriptor"))
        throw ValidationError("response.descriptor", "missing");

      json cand = doc["descriptor"];
      for (int r = 0;; ++r) {
        try {
          p.descriptor = descriptor_from_json(cand);
          return p;
        } catch (const ValidationError&) {
          if (r >= repair_attempts_) throw;
          cand = repair_descriptor_json(cand);
        }
      }
    } catch (const std::exception&) {
      // fall through to the heuristic
    }
  }

  Proposal p = fallback_.propose(summary, manifest, seed);
  p.controller_kind = "fallback";
  return p;
}

namespace {

std::int64_t round_int(const json& v, std::int64_t fallback) {
  if (v.is_number_integer() || v.is_number_unsigned()) return v.get<std::int64_t>();
  if (v.is_number_float()) return std::llround(v.get<double>());
  return fallback;
}

std::int64_t fix_kernel(std::int64_t k) {
  if (k < 1) k = 1;
  if (k % 2 == 0) ++k;  // nearest odd, rounding up
  if (k > 101) k = 101;
  return k;
}

std::int64_t clamp_i(std::int64_t v, std::int64_t lo, std::int64_t hi) {
  return std::min(hi, std::max(lo, v));
}

void keep_keys(json& o, std::initializer_list<const char*> allowed) {
  for (auto it = o.begin(); it != o.end();) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    it = ok ? std::next(it) : o.erase(it);
  }
}

bool one_of(const json& v, std::initializer_list<const char*> values) {
  if (!v.is_string()) return false;
  for (const char* s : values)
    if (v.get<std::string>() == s) return true;
  return false;
}

}  // namespace

json repair_descriptor_json(const json& in) {
  if (!in.is_object()) throw ValidationError("$", "unrepairable: document is not an object");
  const json base = descriptor_to_json(baseline_descriptor());

  json doc = in;
  keep_keys(doc, {"schema_version", "preprocessing", "stem", "blocks", "head"});
  for (const char* key : {"schema_version", "preprocessing", "stem", "blocks", "head"})
    if (!doc.contains(key)) doc[key] = base[key];
  doc["schema_version"] = 1;

  json& pre = doc["preprocessing"];
  if (!pre.is_array()) pre = base["preprocessing"];
  for (std::size_t i = 0; i < pre.size(); ++i) {
    json& step = pre[i];
    if (!step.is_object() || !step.contains("kind"))
      throw ValidationError("preprocessing[" + std::to_string(i) + "]",
                            "unrepairable: not a tagged step");
    if (step["kind"] == "downsample") {
      keep_keys(step, {"kind", "factor"});
      std::int64_t f = round_int(step.value("factor", json(1)), 1);
      std::int64_t best = 1;
      for (std::int64_t cand : {1, 2, 4, 8})
        if (std::llabs(cand - f) < std::llabs(best - f)) best = cand;
      step["factor"] = best;
    } else if (step["kind"] == "clip") {
      keep_keys(step, {"kind", "sigma"});
      double s = step.contains("sigma") && step["sigma"].is_number()
                     ? step["sigma"].get<double>()
                     : 3.0;
      step["sigma"] = std::clamp(s, 1e-6, 10.0);
    } else if (one_of(step["kind"],
                      {"zscore-per-channel", "minmax-per-channel", "detrend-linear"})) {
      keep_keys(step, {"kind"});
    } else {
      throw ValidationError("preprocessing[" + std::to_string(i) + "].kind",
                            "unrepairable: unknown preprocessing kind");
    }
  }

  json& stem = doc["stem"];
  if (!stem.is_object() || !stem.contains("kind")) stem = base["stem"];
  if (stem["kind"] == "conv1d") {
    keep_keys(stem, {"kind", "out_channels", "kernel", "stride", "dilation"});
    stem["out_channels"] = clamp_i(round_int(stem.value("out_channels", json(32)), 32), 1, 1024);
    stem["kernel"] = fix_kernel(round_int(stem.value("kernel", json(7)), 7));
    if (stem.contains("stride")) stem["stride"] = clamp_i(round_int(stem["stride"], 1), 1, 8);
    if (stem.contains("dilation")) stem["dilation"] = clamp_i(round_int(stem["dilation"], 1), 1, 8);
  } else if (stem["kind"] == "flatten") {
    keep_keys(stem, {"kind"});
  } else {
    throw ValidationError("stem.kind", "unrepairable: unknown stem kind");
  }

  json& blocks = doc["blocks"];
  if (!blocks.is_array()) blocks = base["blocks"];
  if (stem["kind"] == "conv1d" && blocks.empty())
    throw ValidationError("blocks", "unrepairable: a convolutional stem requires blocks");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    json& b = blocks[i];
    const std::string path = "blocks[" + std::to_string(i) + "]";
    if (!b.is_object() || !b.contains("kind"))
      throw ValidationError(path, "unrepairable: not a tagged block");
    if (b.contains("norm") && !one_of(b["norm"], {"none", "batch-norm", "layer-norm"}))
      b["norm"] = "batch-norm";
    if (b.contains("activation") && !one_of(b["activation"], {"gelu", "relu"}))
      b["activation"] = "gelu";
    if (b["kind"] == "conv1d") {
      keep_keys(b, {"kind", "out_channels", "kernel", "residual", "norm", "activation"});
      b["out_channels"] = clamp_i(round_int(b.value("out_channels", json(32)), 32), 1, 1024);
      b["kernel"] = fix_kernel(round_int(b.value("kernel", json(5)), 5));
      if (!b.contains("norm")) b["norm"] = "batch-norm";
      if (!b.contains("activation")) b["activation"] = "gelu";
      if (!b.contains("residual")) b["residual"] = false;
    } else if (b["kind"] == "inception") {
      keep_keys(b, {"kind", "branch_kernels", "bottleneck_channels", "out_channels_per_branch",
                    "residual", "norm", "activation"});
      json fixed = json::array();
      const json bk = b.value("branch_kernels", json::array({9, 19, 39}));
      if (bk.is_array() && !bk.empty())
        for (const json& k : bk) fixed.push_back(fix_kernel(round_int(k, 9)));
      else
        fixed = json::array({9, 19, 39});
      b["branch_kernels"] = fixed;
      b["bottleneck_channels"] =
          clamp_i(round_int(b.value("bottleneck_channels", json(32)), 32), 1, 1024);
      b["out_channels_per_branch"] =
          clamp_i(round_int(b.value("out_channels_per_branch", json(32)), 32), 1, 1024);
      if (!b.contains("norm")) b["norm"] = "batch-norm";
      if (!b.contains("activation")) b["activation"] = "gelu";
      if (!b.contains("residual")) b["residual"] = false;
    } else if (b["kind"] == "dense") {
      keep_keys(b, {"kind", "units", "activation"});
      b["units"] = clamp_i(round_int(b.value("units", json(64)), 64), 1, 1024);
      if (!b.contains("activation")) b["activation"] = "gelu";
    } else {
      throw ValidationError(path + ".kind", "unrepairable: unknown layer kind");
    }
  }

  json& head = doc["head"];
  if (!head.is_object()) head = base["head"];
  keep_keys(head, {"pooling", "dropout", "output_units"});
  if (!head.contains("pooling")) head["pooling"] = base["head"]["pooling"];
  if (!one_of(head["pooling"], {"global-average", "none"}))
    throw ValidationError("head.pooling", "unrepairable: unknown pooling kind");
  double drop = head.contains("dropout") && head["dropout"].is_number()
                    ? head["dropout"].get<double>()
                    : 0.2;
  head["dropout"] = std::clamp(drop, 0.0, 0.9);
  head["output_units"] = clamp_i(round_int(head.value("output_units", json(1)), 1), 1, 4096);

  return doc;
}

#ifdef FUSENAS_WITH_HTTP
namespace {

class HttpTransport : public Transport {
 public:
  explicit HttpTransport(std::string url) : url_(std::move(url)) {}

  std::string exchange(const std::string& request) override {
    const std::size_t scheme = url_.find("://");
    const std::size_t slash = url_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    const std::string host = slash == std::string::npos
                                 ? url_
                                 : url_.substr(0, slash);
    const std::string path = slash == std::string::npos ? "/" : url_.substr(slash);
    httplib::Client client(host);
    auto res = client.Post(path, request, "text/plain");
    if (!res || res->status != 200) throw StateError("remote endpoint request failed");
    return res->body;
  }

 private:
  std::string url_;
};

}  // namespace

std::unique_ptr<Transport> make_http_transport(const std::string& endpoint_url) {
  return std::make_unique<HttpTransport>(endpoint_url);
}
#endif

ArchDescriptor repair_descriptor(const std::string& text, int attempts) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ValidationError("$", "unrepairable: not well-formed JSON");
  for (int r = 0;; ++r) {
    try {
      return descriptor_from_json(doc);
    } catch (const ValidationError&) {
      if (r >= attempts) throw;
      doc = repair_descriptor_json(doc);
    }
  }
}

}  // namespace fusenas
