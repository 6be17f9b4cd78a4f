#pragma once

#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "fusenas/descriptor.hpp"
#include "fusenas/protocol.hpp"

namespace fusenas {

struct Proposal {
  std::vector<DirectiveTarget> targets;  // exactly one by default
  ArchDescriptor descriptor;
  std::string rationale;
  std::string controller_kind;  // heuristic | remote | fallback
};

// Search policy. The summary document and rendered manifest are the only
// run-state inputs that exist on this interface; nothing else can leak.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual Proposal propose(const nlohmann::json& summary, const std::string& manifest,
                           std::uint64_t seed) = 0;
  virtual std::string kind() const = 0;
};

// Deterministic policy: target the expert with the lowest best-so-far F1
// (ties resolve to the lowest grid position) and mutate its best descriptor.
// Operator choice is epsilon-greedy (epsilon = 0.2) over a fixed rotation.
class HeuristicController : public Controller {
 public:
  Proposal propose(const nlohmann::json& summary, const std::string& manifest,
                   std::uint64_t seed) override;
  std::string kind() const override { return "heuristic"; }
};

// One request/response text exchange; implementations may throw on failure.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string exchange(const std::string& request) = 0;
};

// Canned responses for hermetic tests; throws StateError when exhausted.
class FixtureTransport : public Transport {
 public:
  explicit FixtureTransport(std::vector<std::string> responses);
  std::string exchange(const std::string& request) override;
  const std::vector<std::string>& requests_seen() const { return requests_; }

 private:
  std::deque<std::string> responses_;
  std::vector<std::string> requests_;
};

// Always fails; exercises the fallback path.
class FailingTransport : public Transport {
 public:
  std::string exchange(const std::string&) override;
};

#ifdef FUSENAS_WITH_HTTP
// Live HTTP POST transport (opt-in; never used by the automated tests).
std::unique_ptr<Transport> make_http_transport(const std::string& endpoint_url);
#endif

// Wire client. Expected response document:
//   {"target": {"modality": m, "class": c}, "descriptor": {...}, "rationale": "..."}
// Invalid descriptors go through the repairer up to `repair_attempts` times;
// any remaining failure falls back to the heuristic policy (kind "fallback").
class RemoteController : public Controller {
 public:
  explicit RemoteController(std::shared_ptr<Transport> transport, int transport_retries = 2,
                            int repair_attempts = 2);
  Proposal propose(const nlohmann::json& summary, const std::string& manifest,
                   std::uint64_t seed) override;
  std::string kind() const override { return "remote"; }

 private:
  std::shared_ptr<Transport> transport_;
  int transport_retries_;
  int repair_attempts_;
  HeuristicController fallback_;
};

// One pass of the deterministic repair rules: drop unknown fields, fill
// missing required fields from the baseline descriptor, round non-integer
// numerics, bump even kernels to the next odd value, clamp out-of-range
// numerics, replace unknown norm/activation values with defaults. Unknown
// layer/stem/pooling kinds and a conv stem without blocks are unrepairable
// (throws ValidationError).
nlohmann::json repair_descriptor_json(const nlohmann::json& doc);

// Parse-with-repair: up to `attempts` repair passes, then give up.
ArchDescriptor repair_descriptor(const std::string& text, int attempts = 2);

}  // namespace fusenas
