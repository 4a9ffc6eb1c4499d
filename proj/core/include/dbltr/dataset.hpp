#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dbltr/errors.hpp"

namespace dbltr {

// Per-class sample counts, head classes first (non-increasing, all >= 1).
struct CountProfile {
  std::vector<std::size_t> counts;

  std::size_t num_classes() const { return counts.size(); }
  std::size_t total() const;
  double imbalance_factor() const;
  void validate() const;
};

// Which denominator the exponential decay exponent i/denom uses. The source
// formulation fixes the denominator at 100 regardless of class count, which
// only reaches the full imbalance factor asymptotically; kClassesMinusOne
// makes the last class hit floor(n_base / mu) exactly.
enum class ExponentDenominator { kClassesMinusOne, kFixed100 };

// counts[i] = max(1, floor(n_base / mu^(i/denom))).
CountProfile exponential_profile(std::size_t n_base, double mu, std::size_t classes,
                                 ExponentDenominator denom = ExponentDenominator::kClassesMinusOne);

// Power-law decay pinned to both endpoints: counts[0] = max_count,
// counts[C-1] = min_count, interior follows (1 + s*x)^(-power).
CountProfile pareto_profile(std::size_t classes, std::size_t max_count,
                            std::size_t min_count, double power);

enum class Shot { kMany, kMedium, kFew };

// Many: count > 100, Medium: 20 <= count <= 100, Few: count < 20.
struct ShotSplits {
  std::vector<Shot> shot_of;  // indexed by class id
  std::vector<std::uint32_t> many;
  std::vector<std::uint32_t> medium;
  std::vector<std::uint32_t> few;
};

ShotSplits shot_splits(const CountProfile& profile);

struct LongTailDataset {
  std::size_t dim = 0;
  std::vector<double> features;  // row-major [total, dim]
  std::vector<std::uint32_t> labels;
  CountProfile profile;
  ShotSplits splits;
  std::vector<std::vector<std::size_t>> indices_by_class;

  std::size_t size() const { return labels.size(); }
  std::span<const double> sample(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }

  void rebuild_index();  // splits + indices_by_class from profile/labels
  void validate() const;
};

struct SynthConfig {
  std::size_t dim = 16;
  double class_separation = 3.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
  // Class mean placement draws from its own stream so two datasets (e.g. a
  // long-tailed train set and a balanced eval set) can share means while
  // using independent sample noise. Defaults to `seed`.
  std::uint64_t means_seed = 0;
  bool means_seed_set = false;
};

// Gaussian blobs: class c ~ N(mu_c, noise_sigma^2 I) with the means placed on
// a seeded random-orthogonal frame at pairwise distance class_separation.
// Requires num_classes <= dim.
LongTailDataset synth_gaussian(const CountProfile& profile, const SynthConfig& cfg);

// The class means the above placement produces, one row per class.
std::vector<std::vector<double>> synth_class_means(std::size_t classes,
                                                   const SynthConfig& cfg);

// Binary container (see docs/formats.md) plus a JSON manifest sidecar at
// path + ".json". Round-trips are bit-exact.
void save_dataset(const LongTailDataset& ds, const std::filesystem::path& path);
LongTailDataset load_dataset(const std::filesystem::path& path);

}  // namespace dbltr
