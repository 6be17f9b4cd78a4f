#include "fusenas/experts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fusenas/errors.hpp"
#include "fusenas/losses.hpp"
#include "fusenas/rng.hpp"

namespace fusenas {

namespace test_hooks {
std::function<void(const ExpertKey&)> train_fault;
}  // namespace test_hooks

std::vector<ExpertKey> expert_grid(std::size_t modalities, int classes) {
  std::vector<ExpertKey> grid;
  grid.reserve(modalities * static_cast<std::size_t>(classes));
  for (std::size_t m = 0; m < modalities; ++m)
    for (int c = 0; c < classes; ++c) grid.push_back({m, c});
  return grid;
}

std::vector<int> one_vs_rest_labels(const std::vector<int>& labels, int c) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == c ? 1 : 0;
  return out;
}

std::string trial_status_to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::Ok: return "ok";
    case TrialStatus::Failed: return "failed";
    case TrialStatus::SkippedDegenerate: return "skipped_degenerate";
  }
  return "failed";
}

TrialStatus trial_status_from_string(const std::string& s) {
  if (s == "ok") return TrialStatus::Ok;
  if (s == "failed") return TrialStatus::Failed;
  if (s == "skipped_degenerate") return TrialStatus::SkippedDegenerate;
  throw ValidationError("status", "unknown trial status '" + s + "'");
}

Tensor ExpertModel::embed(const Tensor& raw_x) {
  return graph.embed(apply_preprocessing(descriptor.preprocessing, raw_x));
}

double ExpertModel::predict_prob(const Tensor& raw_x) {
  DetRng unused(0);
  const Tensor logits =
      graph.forward(apply_preprocessing(descriptor.preprocessing, raw_x), false, unused);
  return sigmoid_value(logits.v.at(0));
}

void ExpertModel::load(const std::string& path) {
  const std::string stored = graph.load_checkpoint(path);
  if (stored != descriptor_hash)
    throw StateError("checkpoint " + path + " was trained from a different descriptor");
}

namespace {

ScalarLoss binary_sample_loss(const TrainProtocol& protocol, double logit, int y, double w_pos,
                              double w_neg) {
  switch (protocol.loss) {
    case LossKind::WeightedBce:
      return weighted_bce_on_logit(logit, y, w_pos, w_neg);
    case LossKind::Focal:
      return focal_on_logit(logit, y, protocol.focal_gamma, protocol.focal_alpha);
    case LossKind::CrossEntropy:
      break;
  }
  throw ValidationError("protocol.loss", "cross-entropy is not a binary expert loss");
}

std::vector<std::vector<real>> snapshot(std::vector<Param*>& params) {
  std::vector<std::vector<real>> out;
  out.reserve(params.size());
  for (Param* p : params) out.push_back(p->value.v);
  return out;
}

void restore(std::vector<Param*>& params, const std::vector<std::vector<real>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.v = snap[i];
}

}  // namespace

ExpertTrainResult train_expert(const ExpertKey& key, const ArchDescriptor& descriptor,
                               const DatasetBundle& data, const TrainProtocol& protocol,
                               std::uint64_t cycle) {
  ExpertTrainResult r;

  const std::vector<std::size_t> train_idx = data.indices_of(Split::Train);
  const std::vector<std::size_t> val_idx = data.indices_of(Split::Val);
  if (train_idx.empty()) {
    r.status = TrialStatus::Failed;
    r.failure_kind = "empty_split";
    r.failure_context = "train";
    return r;
  }

  std::size_t n_pos = 0;
  for (std::size_t i : train_idx)
    if (data.samples[i].label == key.cls) ++n_pos;
  const std::size_t n_neg = train_idx.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    // The one-vs-rest problem collapses to a constant; training would only
    // fit a bias, so the trial is skipped rather than reported as a score.
    r.status = TrialStatus::SkippedDegenerate;
    r.failure_kind = "degenerate_class";
    r.failure_context = key.str();
    return r;
  }
  const double w_pos =
      std::clamp(static_cast<double>(n_neg) / static_cast<double>(n_pos), 0.1, 10.0);
  const double w_neg = 1.0;

  try {
    const std::uint64_t seed =
        derive_seed(protocol.master_seed, cycle, key.modality,
                    static_cast<std::uint64_t>(key.cls), seed_tag("expert"));

    ExpertModel model;
    model.key = key;
    model.descriptor = descriptor;
    model.descriptor_hash = canonical_hash(descriptor);
    model.seed = seed;
    model.graph = compile_descriptor(descriptor, data.modality_shape(key.modality));
    if (model.graph.output_units != 1)
      throw ValidationError("head.output_units", "expert heads must emit one logit");

    DetRng init_rng(derive_seed(seed, seed_tag("init")));
    model.graph.init_params(init_rng);

    // Preprocessing is input-deterministic; apply once up front.
    std::vector<Tensor> inputs(data.samples.size());
    for (std::size_t i : train_idx)
      inputs[i] = apply_preprocessing(descriptor.preprocessing, data.samples[i].modalities[key.modality]);
    for (std::size_t i : val_idx)
      inputs[i] = apply_preprocessing(descriptor.preprocessing, data.samples[i].modalities[key.modality]);

    auto params = model.graph.params();
    Adam opt(params, protocol);
    DetRng shuffle_rng(derive_seed(seed, seed_tag("shuffle")));
    DetRng drop_rng(derive_seed(seed, seed_tag("dropout")));

    // With no validation split the train split doubles as the selection set.
    const std::vector<std::size_t>& sel_idx = val_idx.empty() ? train_idx : val_idx;

    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::vector<std::vector<real>> best_params;
    BinaryMetrics best_metrics;

    std::vector<std::size_t> order = train_idx;
    for (std::size_t epoch = 0; epoch < protocol.max_epochs; ++epoch) {
      if (test_hooks::train_fault) test_hooks::train_fault(key);

      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);

      double epoch_loss = 0;
      for (std::size_t start = 0; start < order.size(); start += protocol.batch_size) {
        const std::size_t end = std::min(order.size(), start + protocol.batch_size);
        const double inv_batch = 1.0 / static_cast<double>(end - start);
        model.graph.zero_grads();
        for (std::size_t k = start; k < end; ++k) {
          const std::size_t i = order[k];
          const int y = data.samples[i].label == key.cls ? 1 : 0;
          const Tensor logits = model.graph.forward(inputs[i], true, drop_rng);
          const ScalarLoss sl = binary_sample_loss(protocol, logits.v[0], y, w_pos, w_neg);
          if (!std::isfinite(sl.value)) throw TrialFailure("numerical_divergence", "loss");
          epoch_loss += sl.value;
          Tensor g({1});
          g.v[0] = static_cast<real>(sl.grad * inv_batch);
          model.graph.backward(g);
        }
        opt.step();
      }
      epoch_loss /= static_cast<double>(order.size());

      double val_loss = 0;
      std::vector<double> probs;
      std::vector<int> ys;
      probs.reserve(sel_idx.size());
      ys.reserve(sel_idx.size());
      for (std::size_t i : sel_idx) {
        const int y = data.samples[i].label == key.cls ? 1 : 0;
        const double logit = model.graph.forward(inputs[i], false, drop_rng).v[0];
        val_loss += binary_sample_loss(protocol, logit, y, w_pos, w_neg).value;
        probs.push_back(sigmoid_value(logit));
        ys.push_back(y);
      }
      val_loss /= static_cast<double>(sel_idx.size());
      const BinaryMetrics vm = binary_metrics(probs, ys);

      if (epoch == 0) r.curve.train_loss_first = epoch_loss;
      r.curve.train_loss_last = epoch_loss;
      r.curve.epochs_run = epoch + 1;
      r.curve.val_f1_best = std::max(r.curve.val_f1_best, vm.f1);

      if (val_loss < best_val - 1e-12) {
        best_val = val_loss;
        best_params = snapshot(params);
        best_metrics = vm;
        since_best = 0;
      } else if (++since_best > protocol.patience) {
        break;
      }
    }

    r.curve.val_loss_min = std::isfinite(best_val) ? best_val : 0.0;
    if (!best_params.empty()) restore(params, best_params);
    r.metrics = best_metrics;
    r.status = TrialStatus::Ok;
    r.model.emplace(std::move(model));
  } catch (const TrialFailure& f) {
    r.status = TrialStatus::Failed;
    r.failure_kind = f.kind();
    r.failure_context = f.context();
  } catch (const std::exception&) {
    // Raw diagnostics from lower layers never leave this frame.
    r.status = TrialStatus::Failed;
    r.failure_kind = "executor_error";
    r.failure_context = key.str();
  }
  return r;
}

}  // namespace fusenas
