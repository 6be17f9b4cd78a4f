#include <algorithm>
#include <cmath>

#include "fusenas/descriptor.hpp"

namespace fusenas {

namespace {

const std::vector<std::size_t> kSmallKernels = {3, 5, 7};
const std::vector<std::size_t> kLargeKernels = {9, 19, 39};

std::size_t widen_width(std::size_t w) {
  return std::min<std::size_t>(1024, static_cast<std::size_t>(std::llround(w * 1.5)));
}

// Minimal temporal pipeline a blockless dense descriptor is promoted to when
// "deepen" is drawn; gives the search a route out of the flatten-only space.
ArchDescriptor promote_to_conv(const ArchDescriptor& d) {
  ArchDescriptor out = d;
  out.stem = {StemKind::Conv1d, 16, 5, 1, 1};
  BlockSpec b;
  b.kind = BlockKind::Conv1d;
  b.out_channels = 16;
  b.kernel = 5;
  b.residual = true;
  b.norm = NormKind::BatchNorm;
  b.activation = ActivationKind::Gelu;
  out.blocks = {b};
  out.head.pooling = PoolKind::GlobalAverage;
  return out;
}

ArchDescriptor apply_op(const ArchDescriptor& d, MutOp op, DetRng& rng) {
  ArchDescriptor out = d;
  switch (op) {
    case MutOp::Widen:
      for (auto& b : out.blocks) {
        switch (b.kind) {
          case BlockKind::Conv1d: b.out_channels = widen_width(b.out_channels); break;
          case BlockKind::Inception: b.out_channels_per_branch = widen_width(b.out_channels_per_branch); break;
          case BlockKind::Dense: b.units = widen_width(b.units); break;
        }
      }
      break;
    case MutOp::Deepen:
      if (out.blocks.empty()) return promote_to_conv(out);
      out.blocks.push_back(out.blocks.back());
      break;
    case MutOp::Shrink:
      if (out.blocks.size() > 1) out.blocks.pop_back();
      break;
    case MutOp::KernelSwap: {
      std::vector<std::size_t> conv_blocks;
      for (std::size_t i = 0; i < out.blocks.size(); ++i)
        if (out.blocks[i].kind != BlockKind::Dense) conv_blocks.push_back(i);
      if (conv_blocks.empty()) break;
      auto& b = out.blocks[conv_blocks[rng.below(conv_blocks.size())]];
      if (b.kind == BlockKind::Conv1d) {
        std::vector<std::size_t> opts;
        for (auto k : kSmallKernels)
          if (k != b.kernel) opts.push_back(k);
        if (!opts.empty()) b.kernel = opts[rng.below(opts.size())];
      } else {
        const std::size_t bi = rng.below(b.branch_kernels.size());
        b.branch_kernels[bi] = kLargeKernels[rng.below(kLargeKernels.size())];
      }
      break;
    }
    case MutOp::DropoutShift: {
      const double delta = rng.below(2) == 0 ? 0.1 : -0.1;
      out.head.dropout = std::clamp(out.head.dropout + delta, 0.0, 0.9);
      // keep one decimal so hashes stay on the grid
      out.head.dropout = std::round(out.head.dropout * 10.0) / 10.0;
      break;
    }
    case MutOp::ToggleNorm: {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < out.blocks.size(); ++i)
        if (out.blocks[i].kind != BlockKind::Dense) idx.push_back(i);
      if (idx.empty()) break;
      auto& b = out.blocks[idx[rng.below(idx.size())]];
      b.norm = b.norm == NormKind::BatchNorm ? NormKind::LayerNorm : NormKind::BatchNorm;
      break;
    }
    case MutOp::PreprocToggleZscore: {
      auto it = std::find_if(out.preprocessing.begin(), out.preprocessing.end(),
                             [](const PreprocStep& s) { return s.kind == "zscore-per-channel"; });
      if (it != out.preprocessing.end()) {
        out.preprocessing.erase(it);
      } else {
        out.preprocessing.insert(out.preprocessing.begin(), {"zscore-per-channel", 1, 3.0});
      }
      break;
    }
    case MutOp::PreprocSetDownsample: {
      const int factors[] = {1, 2, 4, 8};
      const int f = factors[rng.below(4)];
      auto it = std::find_if(out.preprocessing.begin(), out.preprocessing.end(),
                             [](const PreprocStep& s) { return s.kind == "downsample"; });
      if (f == 1) {
        if (it != out.preprocessing.end()) out.preprocessing.erase(it);
      } else if (it != out.preprocessing.end()) {
        it->factor = f;
      } else {
        out.preprocessing.push_back({"downsample", f, 3.0});
      }
      break;
    }
  }
  return out;
}

}  // namespace

std::string mut_op_name(MutOp op) {
  switch (op) {
    case MutOp::Widen: return "widen";
    case MutOp::Deepen: return "deepen";
    case MutOp::Shrink: return "shrink";
    case MutOp::KernelSwap: return "kernel-swap";
    case MutOp::DropoutShift: return "dropout-shift";
    case MutOp::ToggleNorm: return "toggle-norm";
    case MutOp::PreprocToggleZscore: return "preproc-toggle-zscore";
    case MutOp::PreprocSetDownsample: return "preproc-set-downsample";
  }
  return "?";
}

ArchDescriptor mutate_descriptor(const ArchDescriptor& d, std::uint64_t seed,
                                 std::optional<MutOp> op) {
  DetRng rng(derive_seed(seed, seed_tag("mutate")));
  for (int attempt = 0; attempt < 16; ++attempt) {
    const MutOp chosen = op ? *op : static_cast<MutOp>(rng.below(kMutOpCount));
    ArchDescriptor cand = apply_op(d, chosen, rng);
    if (validate_descriptor(cand).empty()) return cand;
  }
  return d;
}

}  // namespace fusenas
