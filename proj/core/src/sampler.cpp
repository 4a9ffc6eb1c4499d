#include "dbltr/sampler.hpp"

#include <algorithm>
#include <numeric>

namespace dbltr {

std::vector<std::vector<std::size_t>> uniform_batches(std::size_t dataset_size,
                                                      std::size_t batch_size, Rng& rng) {
  if (dataset_size == 0) throw ValidationError("uniform_batches: empty dataset");
  if (batch_size == 0) throw ValidationError("uniform_batches: batch_size must be >= 1");
  std::vector<std::size_t> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> batches;
  batches.reserve((dataset_size + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < dataset_size; start += batch_size) {
    const std::size_t end = std::min(dataset_size, start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::vector<std::size_t>> uniform_batches(std::size_t dataset_size,
                                                      std::size_t batch_size,
                                                      std::uint64_t seed) {
  Rng rng(seed);
  return uniform_batches(dataset_size, batch_size, rng);
}

std::vector<std::uint32_t> pool_classes(const LongTailDataset& ds, EpisodePool pool) {
  std::vector<std::uint32_t> out;
  switch (pool) {
    case EpisodePool::kWhole:
      out.resize(ds.profile.num_classes());
      std::iota(out.begin(), out.end(), 0);
      break;
    case EpisodePool::kMediumFew:
      out = ds.splits.medium;
      out.insert(out.end(), ds.splits.few.begin(), ds.splits.few.end());
      std::sort(out.begin(), out.end());
      break;
    case EpisodePool::kFew:
      out = ds.splits.few;
      break;
  }
  return out;
}

std::size_t Episode::local_label(std::uint32_t global_class) const {
  auto it = local_of.find(global_class);
  if (it == local_of.end())
    throw ValidationError("Episode: class " + std::to_string(global_class) +
                          " is not part of this episode");
  return it->second;
}

Episode sample_episode(const LongTailDataset& ds, const std::vector<std::uint32_t>& pool,
                       std::size_t n_way, std::size_t n_sup, std::size_t n_qry, Rng& rng) {
  if (n_way == 0 || n_sup == 0 || n_qry == 0)
    throw ValidationError("sample_episode: n_way, n_sup and n_qry must be >= 1");
  if (pool.size() < n_way)
    throw ValidationError("sample_episode: pool has " + std::to_string(pool.size()) +
                          " classes, episode needs " + std::to_string(n_way));
  Episode ep;
  ep.class_ids = rng.sample_without_replacement(pool, n_way);
  ep.support.resize(n_way);
  ep.query.resize(n_way);
  const std::size_t need = n_sup + n_qry;
  for (std::size_t j = 0; j < n_way; ++j) {
    const std::uint32_t cls = ep.class_ids[j];
    ep.local_of.emplace(cls, j);
    const auto& members = ds.indices_by_class.at(cls);
    std::vector<std::size_t> picks;
    if (members.size() >= need) {
      picks = rng.sample_without_replacement(members, need);
    } else {
      // class too small for a disjoint support/query split
      ep.with_replacement = true;
      picks.reserve(need);
      for (std::size_t k = 0; k < need; ++k)
        picks.push_back(members[rng.uniform_int(members.size())]);
    }
    ep.support[j].assign(picks.begin(), picks.begin() + static_cast<std::ptrdiff_t>(n_sup));
    ep.query[j].assign(picks.begin() + static_cast<std::ptrdiff_t>(n_sup), picks.end());
  }
  return ep;
}

std::vector<std::size_t> head_instances(const std::vector<std::size_t>& batch_indices,
                                        const LongTailDataset& ds) {
  std::vector<std::size_t> out;
  for (std::size_t i : batch_indices)
    if (ds.splits.shot_of[ds.labels[i]] == Shot::kMany) out.push_back(i);
  return out;
}

}  // namespace dbltr
