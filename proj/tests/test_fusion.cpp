#include <cmath>

#include "doctest.h"
#include "fd_check.hpp"
#include "fusenas/fusion.hpp"

using namespace fusenas;

namespace {

DatasetBundle separable(std::size_t modalities, int classes, std::size_t count) {
  DatasetBundle b = generate_synthetic(7, modalities, classes, 24, 1, count, Difficulty::Separable);
  apply_splits(b, {0.6, 0.2, 0.2}, 1);
  return b;
}

TrainProtocol fast_protocol() {
  TrainProtocol p;
  p.max_epochs = 6;
  p.patience = 2;
  p.batch_size = 8;
  p.master_seed = 5;
  return p;
}

ExpertBank trained_bank(const DatasetBundle& data, const TrainProtocol& protocol) {
  ExpertBank bank;
  bank.modalities = data.modality_count();
  bank.classes = data.class_count;
  for (const ExpertKey& key : expert_grid(bank.modalities, bank.classes)) {
    ExpertSlot slot;
    slot.key = key;
    slot.width = declared_embed_width(dense_only_descriptor(), data.modality_shape(key.modality));
    auto r = train_expert(key, dense_only_descriptor(), data, protocol, 0);
    slot.status = r.status;
    if (r.status == TrialStatus::Ok) slot.model = std::move(r.model);
    bank.slots.push_back(std::move(slot));
  }
  return bank;
}

}  // namespace

TEST_CASE("declared embedding width matches the compiled penultimate layer") {
  CHECK(declared_embed_width(dense_only_descriptor(), {24, 2}) == 48);
  const auto g = compile_descriptor(baseline_descriptor(), {64, 2});
  CHECK(declared_embed_width(baseline_descriptor(), {64, 2}) == g.penultimate_width);
}

TEST_CASE("bank layout is stable and empty slots contribute zeros") {
  const DatasetBundle data = separable(2, 2, 60);
  const TrainProtocol protocol = fast_protocol();
  ExpertBank bank = trained_bank(data, protocol);

  REQUIRE(bank.slots.size() == 4);
  CHECK(bank.slot(1, 0).key.str() == "m1_c0");
  const std::size_t w = bank.slots[0].width;
  CHECK(bank.total_width() == 4 * w);

  const Tensor full = bank.embed_concat(data.samples[0]);
  REQUIRE(full.size() == 4 * w);

  // knock out one slot: its span must read zero, the rest must not move
  bank.slot(0, 1).status = TrialStatus::Failed;
  bank.slot(0, 1).model.reset();
  const Tensor holed = bank.embed_concat(data.samples[0]);
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (i >= w && i < 2 * w)
      CHECK(holed.v[i] == 0.0);
    else
      CHECK(holed.v[i] == full.v[i]);
  }

  // checksums: zero marks the empty slot, nonzero the live ones
  const auto sums = bank.checksums();
  REQUIRE(sums.size() == 4);
  CHECK(sums[1] == 0);
  CHECK(sums[0] != 0);
  CHECK(sums[2] != 0);
}

TEST_CASE("fusion learns the multiclass problem and freezes the experts") {
  const DatasetBundle data = separable(2, 3, 120);
  const TrainProtocol protocol = fast_protocol();
  ExpertBank bank = trained_bank(data, protocol);
  const auto before = bank.checksums();

  auto r = train_fusion(bank, data, protocol, FusionConfig{{32}, 0.1}, 1);
  REQUIRE_MESSAGE(r.status == TrialStatus::Ok, r.failure_kind, " ", r.failure_context);
  CHECK(bank.checksums() == before);  // stage two never touches stage one
  CHECK(r.val_metrics.accuracy > 0.8);
  CHECK(r.curve.val_f1_best == r.val_metrics.macro_f1);

  // determinism across repeated invocations
  auto r2 = train_fusion(bank, data, protocol, FusionConfig{{32}, 0.1}, 1);
  REQUIRE(r2.status == TrialStatus::Ok);
  CHECK(r2.model->graph.checksum() == r.model->graph.checksum());
  CHECK(r2.val_metrics.accuracy == r.val_metrics.accuracy);
}

TEST_CASE("an all-empty bank fails as degenerate") {
  const DatasetBundle data = separable(1, 2, 40);
  ExpertBank bank;
  bank.modalities = 1;
  bank.classes = 2;
  for (const ExpertKey& key : expert_grid(1, 2)) {
    ExpertSlot slot;
    slot.key = key;
    slot.width = 0;
    bank.slots.push_back(std::move(slot));
  }
  auto r = train_fusion(bank, data, fast_protocol(), FusionConfig{}, 0);
  CHECK(r.status == TrialStatus::Failed);
  CHECK(r.failure_kind == "degenerate_bank");
  CHECK(r.failure_context == "fusion");
}

TEST_CASE("fusion prediction ties resolve to the lowest class index") {
  const DatasetBundle data = separable(1, 3, 60);
  const TrainProtocol protocol = fast_protocol();
  ExpertBank bank = trained_bank(data, protocol);
  auto r = train_fusion(bank, data, protocol, FusionConfig{{8}, 0.0}, 0);
  REQUIRE(r.status == TrialStatus::Ok);
  FusionModel& m = *r.model;

  // zero every parameter: all logits become equal, so argmax must pick 0
  for (Param* p : m.graph.params()) p->value.zero();
  const Tensor z = bank.embed_concat(data.samples[1]);
  const Tensor logits = m.logits_eval(z);
  for (std::size_t i = 1; i < logits.size(); ++i) CHECK(logits.v[i] == logits.v[0]);
  CHECK(m.predict(z) == 0);
}

TEST_CASE("end-to-end model gradients match finite differences") {
  const DatasetBundle data = separable(2, 3, 60);

  // assemble an untrained joint model the same way training does
  ArchDescriptor d = dense_only_descriptor();
  EndToEndModel m;
  m.class_count = 3;
  std::size_t total = 0;
  for (std::size_t mm = 0; mm < 2; ++mm) {
    auto g = compile_descriptor(d, data.modality_shape(mm));
    m.widths.push_back(g.penultimate_width);
    m.preproc.push_back(d.preprocessing);
    m.bodies.push_back(std::move(g.body));
    total += m.widths.back();
  }
  m.head = std::make_unique<Dense>("joint.head", total, 3);

  DetRng rng(derive_seed(1, seed_tag("fd")));
  m.init_params(rng);

  const MultimodalSample& sample = data.samples[2];
  DetRng unused(0);
  auto fwd = [&] { return m.forward(sample, false, unused); };
  const std::vector<double> c = fdtest::random_weights(3, rng);

  m.zero_grads();
  const Tensor y = fwd();
  Tensor gy(y.shape);
  for (std::size_t i = 0; i < gy.v.size(); ++i) gy.v[i] = static_cast<real>(c[i]);
  m.backward(gy);

  double max_rel = 0;
  const double eps = 1e-4;
  for (Param* p : m.params())
    for (std::size_t i = 0; i < p->value.v.size(); ++i) {
      const real keep = p->value.v[i];
      p->value.v[i] = static_cast<real>(keep + eps);
      const double up = fdtest::dot_loss(fwd(), c);
      p->value.v[i] = static_cast<real>(keep - eps);
      const double dn = fdtest::dot_loss(fwd(), c);
      p->value.v[i] = keep;
      const double numeric = (up - dn) / (2 * eps);
      max_rel = std::max(max_rel, fdtest::rel_err(p->grad.v[i], numeric));
    }
  CHECK(max_rel < 1e-3);
}

TEST_CASE("joint training learns the separable problem") {
  const DatasetBundle data = separable(2, 3, 120);
  TrainProtocol protocol = fast_protocol();
  protocol.max_epochs = 8;
  auto r = train_end_to_end(dense_only_descriptor(), data, protocol, 0);
  REQUIRE_MESSAGE(r.status == TrialStatus::Ok, r.failure_kind);
  CHECK(r.val_metrics.accuracy > 0.8);
  CHECK(r.model->predict(data.samples[0]) >= 0);
  CHECK(r.model->predict(data.samples[0]) < 3);
}
