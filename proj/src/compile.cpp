#include "fusenas/descriptor.hpp"

namespace fusenas {

namespace {

LayerPtr make_norm(NormKind kind, const std::string& name, std::size_t channels) {
  switch (kind) {
    case NormKind::BatchNorm: return std::make_unique<BatchNorm>(name, channels);
    case NormKind::LayerNorm: return std::make_unique<LayerNorm>(name, channels);
    case NormKind::None: return nullptr;
  }
  return nullptr;
}

LayerPtr make_act(ActivationKind kind, const std::string& name) {
  return std::make_unique<Activation>(name, kind == ActivationKind::Gelu ? ActKind::Gelu : ActKind::Relu);
}

}  // namespace

ComputeGraph compile_descriptor(const ArchDescriptor& d, std::array<std::size_t, 2> input_shape) {
  auto rule_errs = validate_descriptor(d);
  if (!rule_errs.empty()) throw ValidationError(std::move(rule_errs));

  const auto shaped = preprocessed_shape(d.preprocessing, input_shape);
  const std::size_t t = shaped[0], in_dim = shaped[1];

  ComputeGraph g;
  g.input_shape = {t, in_dim};
  std::size_t ch = in_dim;  // current channel count (conv path) or width (dense path)

  if (d.stem.kind == StemKind::Conv1d) {
    g.body.layers.push_back(std::make_unique<Conv1D>("stem", in_dim, d.stem.out_channels,
                                                     d.stem.kernel, d.stem.stride, d.stem.dilation));
    ch = d.stem.out_channels;
  } else {
    g.body.layers.push_back(std::make_unique<Flatten>("stem"));
    ch = t * in_dim;
  }

  for (std::size_t i = 0; i < d.blocks.size(); ++i) {
    const auto& b = d.blocks[i];
    const std::string bn = "blocks[" + std::to_string(i) + "]";
    switch (b.kind) {
      case BlockKind::Conv1d: {
        Chain inner;
        inner.layers.push_back(std::make_unique<Conv1D>(bn + ".conv", ch, b.out_channels, b.kernel));
        if (auto n = make_norm(b.norm, bn + ".norm", b.out_channels)) inner.layers.push_back(std::move(n));
        if (b.residual) {
          LayerPtr proj;
          if (ch != b.out_channels)
            proj = std::make_unique<Conv1D>(bn + ".proj", ch, b.out_channels, 1);
          g.body.layers.push_back(
              std::make_unique<ResidualWrap>(bn + ".residual", std::move(inner), std::move(proj)));
        } else {
          for (auto& l : inner.layers) g.body.layers.push_back(std::move(l));
        }
        g.body.layers.push_back(make_act(b.activation, bn + ".act"));
        ch = b.out_channels;
        break;
      }
      case BlockKind::Inception: {
        Chain inner;
        inner.layers.push_back(
            std::make_unique<Conv1D>(bn + ".bottleneck", ch, b.bottleneck_channels, 1));
        std::vector<Chain> branches;
        for (std::size_t k = 0; k < b.branch_kernels.size(); ++k) {
          Chain br;
          br.layers.push_back(std::make_unique<Conv1D>(
              bn + ".branches[" + std::to_string(k) + "]", b.bottleneck_channels,
              b.out_channels_per_branch, b.branch_kernels[k]));
          branches.push_back(std::move(br));
        }
        const std::size_t merged = b.branch_kernels.size() * b.out_channels_per_branch;
        inner.layers.push_back(std::make_unique<BranchConcat>(bn + ".concat", std::move(branches)));
        if (auto n = make_norm(b.norm, bn + ".norm", merged)) inner.layers.push_back(std::move(n));
        if (b.residual) {
          LayerPtr proj;
          if (ch != merged) proj = std::make_unique<Conv1D>(bn + ".proj", ch, merged, 1);
          g.body.layers.push_back(
              std::make_unique<ResidualWrap>(bn + ".residual", std::move(inner), std::move(proj)));
        } else {
          for (auto& l : inner.layers) g.body.layers.push_back(std::move(l));
        }
        g.body.layers.push_back(make_act(b.activation, bn + ".act"));
        ch = merged;
        break;
      }
      case BlockKind::Dense: {
        g.body.layers.push_back(std::make_unique<Dense>(bn + ".dense", ch, b.units));
        g.body.layers.push_back(make_act(b.activation, bn + ".act"));
        ch = b.units;
        break;
      }
    }
  }

  if (d.head.pooling == PoolKind::GlobalAverage)
    g.body.layers.push_back(std::make_unique<GlobalAvgPool>("head.pool"));
  if (d.head.dropout > 0.0)
    g.body.layers.push_back(std::make_unique<Dropout>("head.dropout", d.head.dropout));

  g.penultimate_width = ch;
  g.output_units = d.head.output_units;
  g.head = std::make_unique<Dense>("head.linear", ch, d.head.output_units);

  // Fail fast on impossible shapes (e.g. zero-length time axis).
  g.body.output_shape(g.input_shape);
  return g;
}

}  // namespace fusenas
