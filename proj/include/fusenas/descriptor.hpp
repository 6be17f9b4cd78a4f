#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fusenas/errors.hpp"
#include "fusenas/graph.hpp"

namespace fusenas {

using json = nlohmann::json;

enum class NormKind { None, BatchNorm, LayerNorm };
enum class ActivationKind { Gelu, Relu };
enum class StemKind { Conv1d, Flatten };
enum class BlockKind { Conv1d, Inception, Dense };
enum class PoolKind { GlobalAverage, None };

// Closed preprocessing vocabulary: zscore-per-channel, minmax-per-channel,
// detrend-linear, downsample{factor in {1,2,4,8}}, clip{sigma}.
struct PreprocStep {
  std::string kind;
  int factor = 1;      // downsample
  double sigma = 3.0;  // clip

  bool operator==(const PreprocStep&) const = default;
};

struct StemSpec {
  StemKind kind = StemKind::Conv1d;
  std::size_t out_channels = 32;
  std::size_t kernel = 7;
  std::size_t stride = 1;
  std::size_t dilation = 1;

  bool operator==(const StemSpec&) const = default;
};

struct BlockSpec {
  BlockKind kind = BlockKind::Conv1d;
  std::size_t out_channels = 32;             // conv1d
  std::size_t kernel = 5;                    // conv1d
  std::vector<std::size_t> branch_kernels;   // inception
  std::size_t bottleneck_channels = 32;      // inception
  std::size_t out_channels_per_branch = 32;  // inception
  std::size_t units = 64;                    // dense
  bool residual = false;
  NormKind norm = NormKind::BatchNorm;
  ActivationKind activation = ActivationKind::Gelu;

  bool operator==(const BlockSpec&) const = default;
};

struct HeadSpec {
  PoolKind pooling = PoolKind::GlobalAverage;
  double dropout = 0.2;
  std::size_t output_units = 1;

  bool operator==(const HeadSpec&) const = default;
};

// The declarative search point: preprocessing plus network. Immutable value
// type; canonical serialization with sorted keys defines identity.
struct ArchDescriptor {
  int schema_version = 1;
  std::vector<PreprocStep> preprocessing;
  StemSpec stem;
  std::vector<BlockSpec> blocks;
  HeadSpec head;

  bool operator==(const ArchDescriptor&) const = default;
};

// Rule checks; empty result means valid.
std::vector<FieldError> validate_descriptor(const ArchDescriptor& d);

// Canonical combined document (keys: blocks, head, preprocessing,
// schema_version, stem; sorted by nlohmann::json).
json descriptor_to_json(const ArchDescriptor& d);
std::string serialize_descriptor(const ArchDescriptor& d);

// Throws ValidationError carrying one FieldError per violation.
ArchDescriptor parse_descriptor(const std::string& text);
ArchDescriptor descriptor_from_json(const json& doc);

// Split across the two on-disk files. model.json holds schema_version, stem,
// blocks, head; preprocessing.json holds schema_version, preprocessing.
std::string serialize_model_file(const ArchDescriptor& d);
std::string serialize_preprocessing_file(const ArchDescriptor& d);
ArchDescriptor parse_descriptor_files(const std::string& model_text, const std::string& preproc_text);

// SHA-256 of the canonical combined serialization.
std::string canonical_hash(const ArchDescriptor& d);

// Shape after preprocessing; throws when T collapses to zero.
std::array<std::size_t, 2> preprocessed_shape(const std::vector<PreprocStep>& steps,
                                              std::array<std::size_t, 2> in);
Tensor apply_preprocessing(const std::vector<PreprocStep>& steps, const Tensor& x);

// Compiles a valid descriptor against a raw [T, d] input shape.
ComputeGraph compile_descriptor(const ArchDescriptor& d, std::array<std::size_t, 2> input_shape);

// Pinned defaults: the residual-Inception baseline and the minimal
// flatten+linear descriptor.
ArchDescriptor baseline_descriptor();
ArchDescriptor dense_only_descriptor();

enum class MutOp {
  Widen,
  Deepen,
  Shrink,
  KernelSwap,
  DropoutShift,
  ToggleNorm,
  PreprocToggleZscore,
  PreprocSetDownsample,
};
constexpr int kMutOpCount = 8;
std::string mut_op_name(MutOp op);

// Deterministic in (descriptor, seed, op). Invalid draws are re-drawn up to
// 16 times, then the input descriptor is returned unchanged.
ArchDescriptor mutate_descriptor(const ArchDescriptor& d, std::uint64_t seed,
                                 std::optional<MutOp> op = std::nullopt);

}  // namespace fusenas
