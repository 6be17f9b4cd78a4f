#include <memory>
#include <set>

#include "doctest.h"
#include "fusenas/controller.hpp"

using namespace fusenas;
using nlohmann::json;

namespace {

json expert_entry(std::size_t m, int c, double f1) {
  json e{{"best_descriptor", nullptr},
         {"best_descriptor_hash", nullptr},
         {"best_f1", nullptr},
         {"class", c},
         {"modality", m}};
  if (f1 >= 0) {
    e["best_f1"] = f1;
    e["best_descriptor"] = descriptor_to_json(baseline_descriptor());
    e["best_descriptor_hash"] = canonical_hash(baseline_descriptor());
  }
  return e;
}

// 2x2 grid in modality-major order
json summary_with(std::vector<double> f1s, std::uint64_t budget = 5) {
  json experts = json::array();
  std::size_t i = 0;
  for (std::size_t m = 0; m < 2; ++m)
    for (int c = 0; c < 2; ++c) experts.push_back(expert_entry(m, c, f1s[i++]));
  return json{{"budget_remaining", budget}, {"experts", experts}};
}

std::string remote_response(std::size_t m, int c, const json& descriptor,
                            const std::string& rationale) {
  return json{{"target", {{"modality", m}, {"class", c}}},
              {"descriptor", descriptor},
              {"rationale", rationale}}
      .dump();
}

}  // namespace

TEST_CASE("the heuristic targets the weakest expert") {
  HeuristicController ctl;
  const Proposal p = ctl.propose(summary_with({0.9, 0.4, 0.7, 0.8}), "", 1);
  REQUIRE(p.targets.size() == 1);
  CHECK(p.targets[0] == DirectiveTarget{0, 1});
  CHECK(p.controller_kind == "heuristic");
  CHECK(validate_descriptor(p.descriptor).empty());
  CHECK(p.rationale.find("m0_c1") != std::string::npos);
  CHECK(p.rationale.find("op ") != std::string::npos);
}

TEST_CASE("ties resolve to the lowest grid position") {
  HeuristicController ctl;
  const Proposal p = ctl.propose(summary_with({0.5, 0.5, 0.5, 0.5}), "", 1);
  CHECK(p.targets[0] == DirectiveTarget{0, 0});

  // an untried expert outranks any scored one
  const Proposal q = ctl.propose(summary_with({0.2, 0.3, -1, 0.1}), "", 1);
  CHECK(q.targets[0] == DirectiveTarget{1, 0});
  CHECK(q.rationale.find("none") != std::string::npos);
}

TEST_CASE("proposals are deterministic in (summary, seed)") {
  HeuristicController ctl;
  const json s = summary_with({0.9, 0.4, 0.7, 0.8});
  const Proposal a = ctl.propose(s, "", 42);
  const Proposal b = ctl.propose(s, "", 42);
  CHECK(a.targets == b.targets);
  CHECK(a.descriptor == b.descriptor);
  CHECK(a.rationale == b.rationale);
}

TEST_CASE("the operator rotation follows the remaining budget") {
  HeuristicController ctl;
  // collect ops over one full rotation; non-explore draws must differ across
  // budget values, so at least several distinct operators appear
  std::set<std::string> ops;
  for (std::uint64_t budget = 0; budget < 8; ++budget) {
    const Proposal p = ctl.propose(summary_with({0.9, 0.4, 0.7, 0.8}, budget), "", 7);
    const auto pos = p.rationale.find("op ");
    REQUIRE(pos != std::string::npos);
    ops.insert(p.rationale.substr(pos + 3));
  }
  CHECK(ops.size() >= 4);
}

TEST_CASE("proposals mutated from missing bests start at the pinned default") {
  HeuristicController ctl;
  json s = summary_with({-1, -1, -1, -1});
  const Proposal p = ctl.propose(s, "", 3);
  CHECK(validate_descriptor(p.descriptor).empty());
  // a summary without experts is a protocol violation, not a silent default
  CHECK_THROWS_AS(ctl.propose(json{{"budget_remaining", 1}}, "", 1), StateError);
}

TEST_CASE("the remote controller accepts a valid response") {
  const json desc = descriptor_to_json(baseline_descriptor());
  auto transport = std::make_shared<FixtureTransport>(
      std::vector<std::string>{remote_response(1, 0, desc, "wider nets")});
  RemoteController ctl(transport);
  const Proposal p = ctl.propose(summary_with({0.9, 0.4, 0.7, 0.8}), "MANIFEST TEXT", 1);
  CHECK(p.controller_kind == "remote");
  CHECK(p.targets[0] == DirectiveTarget{1, 0});
  CHECK(p.rationale == "wider nets");
  CHECK(p.descriptor == baseline_descriptor());

  // the request carries the summary document and the manifest, nothing else
  REQUIRE(transport->requests_seen().size() == 1);
  const std::string& req = transport->requests_seen()[0];
  CHECK(req.find("budget_remaining") != std::string::npos);
  CHECK(req.find("MANIFEST TEXT") != std::string::npos);
}

TEST_CASE("invalid remote descriptors go through the repairer") {
  json desc = descriptor_to_json(baseline_descriptor());
  desc["stem"]["kernel"] = 8;       // repairable
  desc["surprise"] = "field";       // repairable
  auto transport = std::make_shared<FixtureTransport>(
      std::vector<std::string>{remote_response(0, 1, desc, "tweak")});
  RemoteController ctl(transport);
  const Proposal p = ctl.propose(summary_with({0.9, 0.4, 0.7, 0.8}), "", 1);
  CHECK(p.controller_kind == "remote");
  CHECK(p.descriptor.stem.kernel == 9);
  CHECK(validate_descriptor(p.descriptor).empty());
}

TEST_CASE("unrepairable responses fall back to the heuristic") {
  json desc = descriptor_to_json(baseline_descriptor());
  desc["blocks"][0]["kind"] = "transformer";
  auto transport = std::make_shared<FixtureTransport>(
      std::vector<std::string>{remote_response(0, 0, desc, "bad idea")});
  RemoteController ctl(transport);
  const Proposal p = ctl.propose(summary_with({0.9, 0.4, 0.7, 0.8}), "", 1);
  CHECK(p.controller_kind == "fallback");
  CHECK(p.targets[0] == DirectiveTarget{0, 1});  // heuristic argmin
  CHECK(validate_descriptor(p.descriptor).empty());
}

TEST_CASE("transport failure falls back to the heuristic after retries") {
  RemoteController ctl(std::make_shared<FailingTransport>());
  const Proposal p = ctl.propose(summary_with({0.9, 0.4, 0.7, 0.8}), "", 1);
  CHECK(p.controller_kind == "fallback");
  CHECK(p.targets[0] == DirectiveTarget{0, 1});

  // non-JSON responses take the same path
  auto garbage = std::make_shared<FixtureTransport>(std::vector<std::string>{"oops not json"});
  RemoteController ctl2(garbage);
  CHECK(ctl2.propose(summary_with({0.9, 0.4, 0.7, 0.8}), "", 1).controller_kind == "fallback");
}
