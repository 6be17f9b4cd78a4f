#include "fusenas/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "fusenas/errors.hpp"
#include "fusenas/losses.hpp"

namespace fusenas {

std::size_t declared_embed_width(const ArchDescriptor& d, std::array<std::size_t, 2> input_shape) {
  return compile_descriptor(d, input_shape).penultimate_width;
}

ExpertSlot& ExpertBank::slot(std::size_t m, int c) {
  return slots.at(m * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c));
}

const ExpertSlot& ExpertBank::slot(std::size_t m, int c) const {
  return slots.at(m * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c));
}

std::size_t ExpertBank::total_width() const {
  std::size_t w = 0;
  for (const ExpertSlot& s : slots) w += s.width;
  return w;
}

Tensor ExpertBank::embed_concat(const MultimodalSample& sample) {
  Tensor z({total_width()});
  std::size_t pos = 0;
  for (ExpertSlot& s : slots) {
    if (s.status == TrialStatus::Ok && s.model) {
      const Tensor h = s.model->embed(sample.modalities.at(s.key.modality));
      if (h.size() != s.width)
        throw StateError("expert " + s.key.str() + " embedding width drifted");
      std::copy(h.v.begin(), h.v.end(), z.v.begin() + static_cast<std::ptrdiff_t>(pos));
    }
    pos += s.width;  // empty slots stay zero
  }
  return z;
}

std::vector<std::uint64_t> ExpertBank::checksums() {
  std::vector<std::uint64_t> out;
  out.reserve(slots.size());
  for (ExpertSlot& s : slots)
    out.push_back(s.status == TrialStatus::Ok && s.model ? s.model->graph.checksum() : 0);
  return out;
}

Tensor FusionModel::normalize(const Tensor& z) const {
  Tensor out({z.size()});
  for (std::size_t j = 0; j < z.size(); ++j)
    out.v[j] = static_cast<real>((static_cast<double>(z.v[j]) - mean[j]) * istd[j]);
  return out;
}

Tensor FusionModel::logits_eval(const Tensor& z) {
  DetRng unused(0);
  return graph.forward(normalize(z), false, unused);
}

int FusionModel::predict(const Tensor& z) {
  const Tensor l = logits_eval(z);
  std::size_t best = 0;
  for (std::size_t c = 1; c < l.size(); ++c)
    if (l.v[c] > l.v[best]) best = c;
  return static_cast<int>(best);
}

namespace {

std::vector<std::vector<real>> snapshot(std::vector<Param*>& params) {
  std::vector<std::vector<real>> out;
  out.reserve(params.size());
  for (Param* p : params) out.push_back(p->value.v);
  return out;
}

void restore(std::vector<Param*>& params, const std::vector<std::vector<real>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.v = snap[i];
}

// Shared epoch loop for the C-way heads: cross-entropy training with early
// stopping on the selection-split loss; best-epoch parameters are restored
// into `params` before returning.
struct MulticlassLoop {
  MulticlassMetrics val_metrics;
  LearningCurveSummary curve;
};

MulticlassLoop run_multiclass_training(
    const DatasetBundle& data, const TrainProtocol& protocol, std::uint64_t seed,
    std::vector<Param*> params, std::function<void()> zero_grads,
    const std::function<Tensor(std::size_t, bool, DetRng&)>& fwd,
    const std::function<void(const Tensor&)>& bwd) {
  MulticlassLoop out;
  const std::vector<std::size_t> train_idx = data.indices_of(Split::Train);
  const std::vector<std::size_t> val_idx = data.indices_of(Split::Val);
  const std::vector<std::size_t>& sel_idx = val_idx.empty() ? train_idx : val_idx;
  if (train_idx.empty()) throw TrialFailure("empty_split", "train");

  Adam opt(params, protocol);
  DetRng shuffle_rng(derive_seed(seed, seed_tag("shuffle")));
  DetRng drop_rng(derive_seed(seed, seed_tag("dropout")));

  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::vector<real>> best_params;

  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 0; epoch < protocol.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += protocol.batch_size) {
      const std::size_t end = std::min(order.size(), start + protocol.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      zero_grads();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const Tensor logits = fwd(i, true, drop_rng);
        VectorLoss vl = softmax_cross_entropy(
            logits, static_cast<std::size_t>(data.samples[i].label));
        if (!std::isfinite(vl.value)) throw TrialFailure("numerical_divergence", "loss");
        epoch_loss += vl.value;
        for (real& g : vl.grad.v) g = static_cast<real>(g * inv_batch);
        bwd(vl.grad);
      }
      opt.step();
    }
    epoch_loss /= static_cast<double>(order.size());

    double val_loss = 0;
    std::vector<int> preds, ys;
    preds.reserve(sel_idx.size());
    ys.reserve(sel_idx.size());
    for (std::size_t i : sel_idx) {
      const Tensor logits = fwd(i, false, drop_rng);
      val_loss +=
          softmax_cross_entropy(logits, static_cast<std::size_t>(data.samples[i].label)).value;
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.size(); ++c)
        if (logits.v[c] > logits.v[best]) best = c;
      preds.push_back(static_cast<int>(best));
      ys.push_back(data.samples[i].label);
    }
    val_loss /= static_cast<double>(sel_idx.size());
    const MulticlassMetrics vm = multiclass_metrics(preds, ys, data.class_count);

    if (epoch == 0) out.curve.train_loss_first = epoch_loss;
    out.curve.train_loss_last = epoch_loss;
    out.curve.epochs_run = epoch + 1;
    out.curve.val_f1_best = std::max(out.curve.val_f1_best, vm.macro_f1);

    if (val_loss < best_val - 1e-12) {
      best_val = val_loss;
      best_params = snapshot(params);
      out.val_metrics = vm;
      since_best = 0;
    } else if (++since_best > protocol.patience) {
      break;
    }
  }
  out.curve.val_loss_min = std::isfinite(best_val) ? best_val : 0.0;
  if (!best_params.empty()) restore(params, best_params);
  return out;
}

ComputeGraph build_fusion_graph(std::size_t in_width, int classes, const FusionConfig& config) {
  ComputeGraph g;
  g.input_shape = {in_width};
  std::size_t w = in_width;
  for (std::size_t i = 0; i < config.hidden.size(); ++i) {
    const std::string tag = std::to_string(i);
    g.body.layers.push_back(std::make_unique<Dense>("fusion.dense" + tag, w, config.hidden[i]));
    g.body.layers.push_back(std::make_unique<Activation>("fusion.act" + tag, ActKind::Gelu));
    if (config.dropout > 0)
      g.body.layers.push_back(std::make_unique<Dropout>("fusion.drop" + tag, config.dropout));
    w = config.hidden[i];
  }
  g.penultimate_width = w;
  g.output_units = static_cast<std::size_t>(classes);
  g.head = std::make_unique<Dense>("fusion.head", w, g.output_units);
  return g;
}

}  // namespace

FusionTrainResult train_fusion(ExpertBank& bank, const DatasetBundle& data,
                               const TrainProtocol& protocol, const FusionConfig& config,
                               std::uint64_t cycle) {
  FusionTrainResult r;
  const std::vector<std::uint64_t> before = bank.checksums();

  try {
    const std::size_t z_width = bank.total_width();
    if (z_width == 0) throw TrialFailure("degenerate_bank", "fusion");

    const std::vector<std::size_t> train_idx = data.indices_of(Split::Train);
    const std::vector<std::size_t> val_idx = data.indices_of(Split::Val);

    std::vector<Tensor> z(data.samples.size());
    for (std::size_t i : train_idx) z[i] = bank.embed_concat(data.samples[i]);
    for (std::size_t i : val_idx) z[i] = bank.embed_concat(data.samples[i]);

    FusionModel model;
    model.class_count = data.class_count;
    model.seed = derive_seed(protocol.master_seed, cycle, seed_tag("fusion"));
    model.mean.assign(z_width, 0.0);
    model.istd.assign(z_width, 0.0);
    for (std::size_t i : train_idx)
      for (std::size_t j = 0; j < z_width; ++j) model.mean[j] += static_cast<double>(z[i].v[j]);
    for (double& m : model.mean) m /= static_cast<double>(train_idx.size());
    for (std::size_t i : train_idx)
      for (std::size_t j = 0; j < z_width; ++j) {
        const double d = static_cast<double>(z[i].v[j]) - model.mean[j];
        model.istd[j] += d * d;
      }
    for (double& v : model.istd)
      v = 1.0 / std::sqrt(v / static_cast<double>(train_idx.size()) + 1e-8);

    model.graph = build_fusion_graph(z_width, data.class_count, config);
    DetRng init_rng(derive_seed(model.seed, seed_tag("init")));
    model.graph.init_params(init_rng);

    std::vector<Tensor> zn(data.samples.size());
    for (std::size_t i : train_idx) zn[i] = model.normalize(z[i]);
    for (std::size_t i : val_idx) zn[i] = model.normalize(z[i]);

    MulticlassLoop loop = run_multiclass_training(
        data, protocol, model.seed, model.graph.params(),
        [&] { model.graph.zero_grads(); },
        [&](std::size_t i, bool training, DetRng& rng) {
          return model.graph.forward(zn[i], training, rng);
        },
        [&](const Tensor& g) { model.graph.backward(g); });

    r.val_metrics = loop.val_metrics;
    r.curve = loop.curve;
    r.status = TrialStatus::Ok;
    r.model.emplace(std::move(model));
  } catch (const TrialFailure& f) {
    r.status = TrialStatus::Failed;
    r.failure_kind = f.kind();
    r.failure_context = f.context();
  } catch (const std::exception&) {
    r.status = TrialStatus::Failed;
    r.failure_kind = "executor_error";
    r.failure_context = "fusion";
  }

  if (bank.checksums() != before)
    throw StateError("expert parameters changed during fusion training");
  return r;
}

Tensor EndToEndModel::forward(const MultimodalSample& sample, bool training, DetRng& rng) {
  Tensor z({0});
  std::size_t total = 0;
  for (std::size_t w : widths) total += w;
  z = Tensor({total});
  std::size_t pos = 0;
  for (std::size_t m = 0; m < bodies.size(); ++m) {
    const Tensor h =
        bodies[m].forward(apply_preprocessing(preproc[m], sample.modalities[m]), training, rng);
    if (h.size() != widths[m]) throw StateError("backbone output width drifted");
    std::copy(h.v.begin(), h.v.end(), z.v.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += widths[m];
  }
  return head->forward(z, training, rng);
}

void EndToEndModel::backward(const Tensor& logit_grad) {
  const Tensor gz = head->backward(logit_grad);
  std::size_t pos = 0;
  for (std::size_t m = 0; m < bodies.size(); ++m) {
    Tensor gm({widths[m]});
    std::copy(gz.v.begin() + static_cast<std::ptrdiff_t>(pos),
              gz.v.begin() + static_cast<std::ptrdiff_t>(pos + widths[m]), gm.v.begin());
    bodies[m].backward(gm);
    pos += widths[m];
  }
}

std::vector<Param*> EndToEndModel::params() {
  std::vector<Param*> out;
  for (Chain& b : bodies) b.collect_params(out);
  head->collect_params(out);
  return out;
}

void EndToEndModel::zero_grads() {
  for (Param* p : params()) p->grad.zero();
}

void EndToEndModel::init_params(DetRng& rng) {
  for (Chain& b : bodies) b.init_params(rng);
  head->init_params(rng);
}

int EndToEndModel::predict(const MultimodalSample& sample) {
  DetRng unused(0);
  const Tensor l = forward(sample, false, unused);
  std::size_t best = 0;
  for (std::size_t c = 1; c < l.size(); ++c)
    if (l.v[c] > l.v[best]) best = c;
  return static_cast<int>(best);
}

EndToEndTrainResult train_end_to_end(const ArchDescriptor& descriptor, const DatasetBundle& data,
                                     const TrainProtocol& protocol, std::uint64_t cycle) {
  EndToEndTrainResult r;
  try {
    EndToEndModel model;
    model.class_count = data.class_count;
    model.seed = derive_seed(protocol.master_seed, cycle, seed_tag("e2e"));

    std::size_t total = 0;
    for (std::size_t m = 0; m < data.modality_count(); ++m) {
      ComputeGraph g = compile_descriptor(descriptor, data.modality_shape(m));
      model.widths.push_back(g.penultimate_width);
      model.bodies.push_back(std::move(g.body));
      model.preproc.push_back(descriptor.preprocessing);
      total += model.widths.back();
    }
    model.head = std::make_unique<Dense>("joint.head", total,
                                         static_cast<std::size_t>(data.class_count));
    DetRng init_rng(derive_seed(model.seed, seed_tag("init")));
    model.init_params(init_rng);

    // Cache preprocessed inputs; the per-epoch work is the network itself.
    const std::vector<std::size_t> train_idx = data.indices_of(Split::Train);
    const std::vector<std::size_t> val_idx = data.indices_of(Split::Val);
    std::vector<std::vector<Tensor>> pre(data.modality_count(),
                                         std::vector<Tensor>(data.samples.size()));
    for (std::size_t m = 0; m < data.modality_count(); ++m) {
      for (std::size_t i : train_idx)
        pre[m][i] = apply_preprocessing(model.preproc[m], data.samples[i].modalities[m]);
      for (std::size_t i : val_idx)
        pre[m][i] = apply_preprocessing(model.preproc[m], data.samples[i].modalities[m]);
    }

    auto fwd = [&](std::size_t i, bool training, DetRng& rng) {
      Tensor z({total});
      std::size_t pos = 0;
      for (std::size_t m = 0; m < model.bodies.size(); ++m) {
        const Tensor h = model.bodies[m].forward(pre[m][i], training, rng);
        std::copy(h.v.begin(), h.v.end(), z.v.begin() + static_cast<std::ptrdiff_t>(pos));
        pos += model.widths[m];
      }
      return model.head->forward(z, training, rng);
    };

    MulticlassLoop loop = run_multiclass_training(
        data, protocol, model.seed, model.params(), [&] { model.zero_grads(); }, fwd,
        [&](const Tensor& g) { model.backward(g); });

    r.val_metrics = loop.val_metrics;
    r.curve = loop.curve;
    r.status = TrialStatus::Ok;
    r.model.emplace(std::move(model));
  } catch (const TrialFailure& f) {
    r.status = TrialStatus::Failed;
    r.failure_kind = f.kind();
    r.failure_context = f.context();
  } catch (const std::exception&) {
    r.status = TrialStatus::Failed;
    r.failure_kind = "executor_error";
    r.failure_context = "end_to_end";
  }
  return r;
}

}  // namespace fusenas
