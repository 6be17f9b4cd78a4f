#include "fusenas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fusenas/errors.hpp"
#include "fusenas/rng.hpp"

namespace fusenas {

std::array<std::size_t, 2> DatasetBundle::modality_shape(std::size_t m) const {
  const Tensor& x = samples.at(0).modalities.at(m);
  return {x.shape[0], x.shape[1]};
}

std::vector<std::size_t> DatasetBundle::indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> DatasetBundle::class_counts(Split s) const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(class_count), 0);
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) ++counts[static_cast<std::size_t>(samples[i].label)];
  return counts;
}

ModalitySpec default_modality_spec(std::size_t variates) {
  ModalitySpec spec;
  spec.groups.emplace_back(variates);
  std::iota(spec.groups.back().begin(), spec.groups.back().end(), 0);
  return spec;
}

DatasetBundle group_modalities(const RawSeries& raw, const ModalitySpec& spec) {
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    if (spec.groups[g].empty())
      throw ValidationError("modalities[" + std::to_string(g) + "]", "empty variate group");
    for (std::size_t v : spec.groups[g]) {
      if (v >= raw.dimensions)
        throw ValidationError("modalities[" + std::to_string(g) + "]",
                              "variate index " + std::to_string(v) + " out of range");
      if (!seen.insert(v).second)
        throw ValidationError("modalities[" + std::to_string(g) + "]",
                              "variate index " + std::to_string(v) + " appears twice");
      ++total;
    }
  }
  if (total != raw.dimensions)
    throw ValidationError("modalities", "groups must cover all " + std::to_string(raw.dimensions) +
                                            " variates");

  DatasetBundle b;
  b.spec = spec;
  b.class_count = static_cast<int>(raw.label_names.size());
  b.provenance = "ts:" + raw.problem_name;
  for (std::size_t s = 0; s < raw.series.size(); ++s) {
    MultimodalSample ms;
    ms.label = raw.labels[s];
    for (const auto& group : spec.groups) {
      Tensor xm({raw.series_length, group.size()});
      for (std::size_t i = 0; i < raw.series_length; ++i)
        for (std::size_t j = 0; j < group.size(); ++j) xm.at(i, j) = raw.series[s].at(i, group[j]);
      ms.modalities.push_back(std::move(xm));
    }
    b.samples.push_back(std::move(ms));
  }
  return b;
}

void apply_splits(DatasetBundle& bundle, std::array<double, 3> fractions, std::uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("splits", "fractions must sum to 1");

  bundle.split.assign(bundle.samples.size(), Split::Train);

  for (int c = 0; c < bundle.class_count; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < bundle.samples.size(); ++i)
      if (bundle.samples[i].label == c) idx.push_back(i);
    if (idx.size() < 3)
      throw ValidationError("splits", "class " + std::to_string(c) +
                                          " has fewer samples than splits");
    // Fisher-Yates with the deterministic stream
    DetRng rng(derive_seed(seed, static_cast<std::uint64_t>(c), seed_tag("split")));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);

    // largest-remainder apportionment, ties resolved train > val > test
    const double n = static_cast<double>(idx.size());
    std::array<std::size_t, 3> take{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double target = fractions[static_cast<std::size_t>(s)] * n;
      take[static_cast<std::size_t>(s)] = static_cast<std::size_t>(std::floor(target));
      frac[static_cast<std::size_t>(s)] = target - std::floor(target);
      assigned += take[static_cast<std::size_t>(s)];
    }
    while (assigned < idx.size()) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (frac[static_cast<std::size_t>(s)] > frac[static_cast<std::size_t>(best)]) best = s;
      ++take[static_cast<std::size_t>(best)];
      frac[static_cast<std::size_t>(best)] = -1;
      ++assigned;
    }
    if (take[0] == 0)
      throw ValidationError("splits", "class " + std::to_string(c) + " absent from train split");

    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < take[static_cast<std::size_t>(s)]; ++k)
        bundle.split[idx[pos++]] = static_cast<Split>(s);
  }
}

Difficulty difficulty_from_string(const std::string& s) {
  if (s == "separable") return Difficulty::Separable;
  if (s == "hard") return Difficulty::Hard;
  throw ValidationError("difficulty", "must be 'separable' or 'hard'");
}

DatasetBundle generate_synthetic(std::uint64_t seed, std::size_t modalities, int classes,
                                 std::size_t series_length, std::size_t channels, std::size_t count,
                                 Difficulty difficulty) {
  if (modalities < 1 || classes < 2 || series_length < 4 || channels < 1 || count < 6)
    throw ValidationError("synthetic", "degenerate generator configuration");

  constexpr double kTwoPi = 6.283185307179586;
  DatasetBundle b;
  b.class_count = classes;
  b.spec.groups.resize(modalities);
  b.provenance = "synthetic:" + std::to_string(seed) + ":" + std::to_string(modalities) + ":" +
                 std::to_string(classes) + ":" + std::to_string(series_length) + ":" +
                 std::to_string(channels) + ":" + std::to_string(count) + ":" +
                 (difficulty == Difficulty::Separable ? "separable" : "hard");
  for (std::size_t m = 0; m < modalities; ++m) {
    b.spec.groups[m].resize(channels);
    std::iota(b.spec.groups[m].begin(), b.spec.groups[m].end(), m * channels);
  }

  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
    DetRng rng(derive_seed(seed, i, seed_tag("sample")));
    MultimodalSample ms;
    ms.label = label;

    // cross-modality frequency signature for the hard regime
    std::vector<int> hard_sym(modalities, 0);
    if (difficulty == Difficulty::Hard) {
      int s0, s1;
      if (label == 0) {
        s0 = s1 = static_cast<int>(rng.below(2));  // (0,0) or (1,1)
      } else if (label == 1) {
        s0 = static_cast<int>(rng.below(2));  // (0,1) or (1,0)
        s1 = 1 - s0;
      } else {
        s0 = s1 = label;  // class-specific frequency on every modality
      }
      for (std::size_t m = 0; m < modalities; ++m) hard_sym[m] = (m % 2 == 0) ? s0 : s1;
    }

    for (std::size_t m = 0; m < modalities; ++m) {
      Tensor xm({series_length, channels});
      double freq, amp, noise;
      if (difficulty == Difficulty::Separable) {
        const int sig = (label + static_cast<int>(m)) % classes;
        freq = 3.0 + 2.0 * sig;
        amp = 1.0 + 0.25 * label;
        noise = 0.1;
      } else {
        const int sym = hard_sym[m];
        freq = sym <= 1 ? (sym == 0 ? 3.0 : 7.0) : 7.0 + 4.0 * (sym - 1);
        amp = 1.0;
        noise = 0.3;
      }
      for (std::size_t j = 0; j < channels; ++j) {
        const double phase = difficulty == Difficulty::Separable
                                 ? 0.5 * static_cast<double>(j)
                                 : rng.uniform(0.0, kTwoPi);
        for (std::size_t t = 0; t < series_length; ++t) {
          const double base =
              amp * std::sin(kTwoPi * freq * static_cast<double>(t) / static_cast<double>(series_length) +
                             phase);
          xm.at(t, j) = static_cast<real>(base + noise * rng.normal());
        }
      }
      ms.modalities.push_back(std::move(xm));
    }
    b.samples.push_back(std::move(ms));
  }
  return b;
}

}  // namespace fusenas
