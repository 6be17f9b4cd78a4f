#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fusenas/tensor.hpp"
#include "fusenas/ts_parser.hpp"

namespace fusenas {

enum class Split { Train, Val, Test };

// Partition of raw variate indices into modalities.
struct ModalitySpec {
  std::vector<std::vector<std::size_t>> groups;
};

struct MultimodalSample {
  std::vector<Tensor> modalities;  // x_m: [T_m, d_m]
  int label = 0;
};

// Immutable after construction; splits are fixed for an experiment.
struct DatasetBundle {
  std::vector<MultimodalSample> samples;
  int class_count = 0;
  ModalitySpec spec;
  std::vector<Split> split;  // parallel to samples; empty until apply_splits
  std::string provenance;

  std::size_t modality_count() const { return spec.groups.size(); }
  std::array<std::size_t, 2> modality_shape(std::size_t m) const;
  std::vector<std::size_t> indices_of(Split s) const;
  // per-class counts within one split
  std::vector<std::size_t> class_counts(Split s) const;

  // Test-split access audit: cycle-time code must never touch it.
  mutable std::size_t test_access_count = 0;
  std::vector<std::size_t> test_indices() const {
    ++test_access_count;
    return indices_of(Split::Test);
  }
};

// Validates the partition (disjoint, exhaustive) and groups raw variates.
DatasetBundle group_modalities(const RawSeries& raw, const ModalitySpec& spec);

// All variates in one modality.
ModalitySpec default_modality_spec(std::size_t variates);

// Stratified assignment; fractions must sum to 1. Deterministic per seed.
void apply_splits(DatasetBundle& bundle, std::array<double, 3> fractions, std::uint64_t seed);

enum class Difficulty { Separable, Hard };

// Seeded synthetic generator. "separable" plants class-specific frequency and
// amplitude signatures with fixed phase and noise sigma 0.1. "hard" makes
// classes 0 and 1 distinguishable only by the cross-modality frequency
// pattern (equal per-modality marginals) and randomizes phases so raw-value
// linear models carry no signal; recipe documented in docs/formats.md.
DatasetBundle generate_synthetic(std::uint64_t seed, std::size_t modalities, int classes,
                                 std::size_t series_length, std::size_t channels, std::size_t count,
                                 Difficulty difficulty);

Difficulty difficulty_from_string(const std::string& s);

}  // namespace fusenas
