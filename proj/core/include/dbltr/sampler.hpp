#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "dbltr/dataset.hpp"
#include "dbltr/rng.hpp"

namespace dbltr {

// One epoch of instance-balanced batches: a seeded permutation of all sample
// indices, chunked; the last batch may be short.
std::vector<std::vector<std::size_t>> uniform_batches(std::size_t dataset_size,
                                                      std::size_t batch_size, Rng& rng);
std::vector<std::vector<std::size_t>> uniform_batches(std::size_t dataset_size,
                                                      std::size_t batch_size,
                                                      std::uint64_t seed);

// Which classes the tail sampler may draw from.
enum class EpisodePool { kWhole, kMediumFew, kFew };

std::vector<std::uint32_t> pool_classes(const LongTailDataset& ds, EpisodePool pool);

// An N-way episode: per sampled class, N_sup support and N_qry query sample
// indices. The row position of a class is its episode-local label.
struct Episode {
  std::vector<std::uint32_t> class_ids;           // N global class ids
  std::vector<std::vector<std::size_t>> support;  // N rows of N_sup indices
  std::vector<std::vector<std::size_t>> query;    // N rows of N_qry indices
  std::unordered_map<std::uint32_t, std::size_t> local_of;
  // set when some class had fewer than N_sup+N_qry samples and was drawn
  // with replacement
  bool with_replacement = false;

  std::size_t n_way() const { return class_ids.size(); }
  std::size_t local_label(std::uint32_t global_class) const;
};

// Draws N distinct classes uniformly from the pool, then N_sup+N_qry
// instances per class (without replacement when the class is large enough).
Episode sample_episode(const LongTailDataset& ds, const std::vector<std::uint32_t>& pool,
                       std::size_t n_way, std::size_t n_sup, std::size_t n_qry, Rng& rng);

// The subset of a batch whose class is in the Many split. May be empty.
std::vector<std::size_t> head_instances(const std::vector<std::size_t>& batch_indices,
                                        const LongTailDataset& ds);

}  // namespace dbltr
