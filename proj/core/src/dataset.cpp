#include "dbltr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dbltr/rng.hpp"

namespace dbltr {

namespace {

constexpr std::uint64_t kMeansStream = 0x6D65616E73ULL;  // "means"
constexpr std::uint64_t kNoiseStream = 0x6E6F697365ULL;  // "noise"

}  // namespace

std::size_t CountProfile::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  return n;
}

double CountProfile::imbalance_factor() const {
  validate();
  return static_cast<double>(counts.front()) / static_cast<double>(counts.back());
}

void CountProfile::validate() const {
  if (counts.empty()) throw ValidationError("CountProfile: no classes");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 1)
      throw ValidationError("CountProfile: class " + std::to_string(i) + " has count 0");
    if (i > 0 && counts[i] > counts[i - 1])
      throw ValidationError("CountProfile: counts increase at class " + std::to_string(i));
  }
}

CountProfile exponential_profile(std::size_t n_base, double mu, std::size_t classes,
                                 ExponentDenominator denom) {
  if (mu < 1.0) throw ValidationError("exponential_profile: imbalance factor must be >= 1");
  if (static_cast<double>(n_base) < mu)
    throw ValidationError("exponential_profile: base count must be >= imbalance factor");
  if (classes < 2) throw ValidationError("exponential_profile: need at least 2 classes");
  const double d = denom == ExponentDenominator::kClassesMinusOne
                       ? static_cast<double>(classes - 1)
                       : 100.0;
  CountProfile p;
  p.counts.resize(classes);
  for (std::size_t i = 0; i < classes; ++i) {
    const double raw = static_cast<double>(n_base) /
                       std::pow(mu, static_cast<double>(i) / d);
    p.counts[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(raw)));
  }
  p.validate();
  return p;
}

CountProfile pareto_profile(std::size_t classes, std::size_t max_count,
                            std::size_t min_count, double power) {
  if (min_count < 1) throw ValidationError("pareto_profile: min_count must be >= 1");
  if (max_count <= min_count)
    throw ValidationError("pareto_profile: max_count must exceed min_count");
  if (power <= 0.0) throw ValidationError("pareto_profile: power must be positive");
  if (classes < 2) throw ValidationError("pareto_profile: need at least 2 classes");
  const double ratio = static_cast<double>(max_count) / static_cast<double>(min_count);
  const double s = std::pow(ratio, 1.0 / power) - 1.0;
  CountProfile p;
  p.counts.resize(classes);
  for (std::size_t i = 0; i < classes; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(classes - 1);
    const double raw = static_cast<double>(max_count) * std::pow(1.0 + s * x, -power);
    const auto c = static_cast<std::size_t>(std::llround(raw));
    p.counts[i] = std::clamp(c, min_count, max_count);
  }
  p.counts.front() = max_count;
  p.counts.back() = min_count;
  p.validate();
  return p;
}

ShotSplits shot_splits(const CountProfile& profile) {
  profile.validate();
  ShotSplits s;
  s.shot_of.resize(profile.num_classes());
  for (std::uint32_t c = 0; c < profile.num_classes(); ++c) {
    const std::size_t n = profile.counts[c];
    if (n > 100) {
      s.shot_of[c] = Shot::kMany;
      s.many.push_back(c);
    } else if (n >= 20) {
      s.shot_of[c] = Shot::kMedium;
      s.medium.push_back(c);
    } else {
      s.shot_of[c] = Shot::kFew;
      s.few.push_back(c);
    }
  }
  return s;
}

void LongTailDataset::rebuild_index() {
  splits = shot_splits(profile);
  indices_by_class.assign(profile.num_classes(), {});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= profile.num_classes())
      throw ValidationError("dataset: label " + std::to_string(labels[i]) +
                            " out of range for " + std::to_string(profile.num_classes()) +
                            " classes");
    indices_by_class[labels[i]].push_back(i);
  }
  for (std::size_t c = 0; c < profile.num_classes(); ++c)
    if (indices_by_class[c].size() != profile.counts[c])
      throw ValidationError("dataset: class " + std::to_string(c) + " has " +
                            std::to_string(indices_by_class[c].size()) +
                            " samples, profile says " + std::to_string(profile.counts[c]));
}

void LongTailDataset::validate() const {
  profile.validate();
  if (dim == 0) throw ValidationError("dataset: feature dimension is 0");
  if (labels.size() != profile.total())
    throw ValidationError("dataset: " + std::to_string(labels.size()) +
                          " labels vs profile total " + std::to_string(profile.total()));
  if (features.size() != labels.size() * dim)
    throw ValidationError("dataset: feature buffer size mismatch");
}

std::vector<std::vector<double>> synth_class_means(std::size_t classes,
                                                   const SynthConfig& cfg) {
  if (cfg.dim < 2) throw ValidationError("synth_gaussian: dim must be >= 2");
  if (cfg.class_separation <= 0.0)
    throw ValidationError("synth_gaussian: class_separation must be positive");
  if (classes > cfg.dim)
    throw ValidationError("synth_gaussian: placement scheme supports at most dim=" +
                          std::to_string(cfg.dim) + " distinct class means, profile asks for " +
                          std::to_string(classes));
  const std::uint64_t means_seed = cfg.means_seed_set ? cfg.means_seed : cfg.seed;
  Rng rng(Rng::derive(means_seed, kMeansStream));

  // Random orthonormal frame via modified Gram-Schmidt on Gaussian columns.
  std::vector<std::vector<double>> frame;
  frame.reserve(classes);
  while (frame.size() < classes) {
    std::vector<double> v(cfg.dim);
    for (double& x : v) x = rng.normal();
    for (const auto& q : frame) {
      double dot = 0.0;
      for (std::size_t i = 0; i < cfg.dim; ++i) dot += v[i] * q[i];
      for (std::size_t i = 0; i < cfg.dim; ++i) v[i] -= dot * q[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;  // degenerate draw, retry
    for (double& x : v) x /= norm;
    frame.push_back(std::move(v));
  }
  // Orthonormal directions scaled so pairwise distance is exactly the
  // requested separation (|s*q_a - s*q_b| = s*sqrt(2)).
  const double scale = cfg.class_separation / std::sqrt(2.0);
  for (auto& q : frame)
    for (double& x : q) x *= scale;
  return frame;
}

LongTailDataset synth_gaussian(const CountProfile& profile, const SynthConfig& cfg) {
  profile.validate();
  if (cfg.noise_sigma <= 0.0)
    throw ValidationError("synth_gaussian: noise_sigma must be positive");
  const auto means = synth_class_means(profile.num_classes(), cfg);

  LongTailDataset ds;
  ds.dim = cfg.dim;
  ds.profile = profile;
  ds.features.reserve(profile.total() * cfg.dim);
  ds.labels.reserve(profile.total());
  Rng noise(Rng::derive(cfg.seed, kNoiseStream));
  for (std::uint32_t c = 0; c < profile.num_classes(); ++c) {
    for (std::size_t k = 0; k < profile.counts[c]; ++k) {
      ds.labels.push_back(c);
      for (std::size_t j = 0; j < cfg.dim; ++j)
        ds.features.push_back(means[c][j] + cfg.noise_sigma * noise.normal());
    }
  }
  ds.rebuild_index();
  ds.validate();
  return ds;
}

// --- binary container ----------------------------------------------------------
// magic "DBLT" | u32 version | u32 classes | u32 dim | u64 counts[C]
// | f64 features[total*dim] | u32 labels[total], all little-endian.

namespace {

constexpr char kMagic[4] = {'D', 'B', 'L', 'T'};
constexpr std::uint32_t kVersion = 1;

class Reader {
 public:
  explicit Reader(std::ifstream& in) : in_(in) {}

  void read(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw ParseError(std::string("dataset file truncated reading ") + what,
                       offset_ + static_cast<std::size_t>(std::max<std::streamsize>(0, in_.gcount())));
    offset_ += n;
  }

  template <class T>
  T scalar(const char* what) {
    T v{};
    read(&v, sizeof(T), what);
    return v;
  }

  std::size_t offset() const { return offset_; }

 private:
  std::ifstream& in_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_dataset(const LongTailDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("save_dataset: cannot open " + path.string());
  out.write(kMagic, 4);
  auto put = [&out](const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  };
  const std::uint32_t version = kVersion;
  const std::uint32_t classes = static_cast<std::uint32_t>(ds.profile.num_classes());
  const std::uint32_t dim = static_cast<std::uint32_t>(ds.dim);
  put(&version, 4);
  put(&classes, 4);
  put(&dim, 4);
  for (std::size_t c : ds.profile.counts) {
    const std::uint64_t n = c;
    put(&n, 8);
  }
  put(ds.features.data(), ds.features.size() * sizeof(double));
  put(ds.labels.data(), ds.labels.size() * sizeof(std::uint32_t));
  if (!out) throw ValidationError("save_dataset: write failed for " + path.string());
  out.close();

  nlohmann::json manifest;
  manifest["format"] = "dbltr-dataset";
  manifest["version"] = kVersion;
  manifest["classes"] = classes;
  manifest["dim"] = dim;
  manifest["total"] = ds.size();
  manifest["counts"] = ds.profile.counts;
  manifest["splits"] = {
      {"many", ds.splits.many}, {"medium", ds.splits.medium}, {"few", ds.splits.few}};
  std::ofstream side(path.string() + ".json", std::ios::trunc);
  if (!side) throw ValidationError("save_dataset: cannot open " + path.string() + ".json");
  side << manifest.dump(2) << "\n";
}

LongTailDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("load_dataset: cannot open " + path.string());
  Reader r(in);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("dataset file has wrong magic", 0);
  const auto version = r.scalar<std::uint32_t>("version");
  if (version != kVersion)
    throw ParseError("unsupported dataset version " + std::to_string(version), 4);
  const auto classes = r.scalar<std::uint32_t>("class count");
  const auto dim = r.scalar<std::uint32_t>("dimension");
  if (classes == 0 || dim == 0)
    throw ParseError("dataset header has zero classes or dimension", 8);

  LongTailDataset ds;
  ds.dim = dim;
  ds.profile.counts.resize(classes);
  for (std::uint32_t c = 0; c < classes; ++c)
    ds.profile.counts[c] = r.scalar<std::uint64_t>("class count table");
  ds.profile.validate();
  const std::size_t total = ds.profile.total();
  ds.features.resize(total * dim);
  r.read(ds.features.data(), ds.features.size() * sizeof(double), "features");
  ds.labels.resize(total);
  r.read(ds.labels.data(), ds.labels.size() * sizeof(std::uint32_t), "labels");
  // trailing bytes mean the file is not what the header claims
  char extra;
  in.read(&extra, 1);
  if (in.gcount() != 0)
    throw ParseError("dataset file has trailing bytes", r.offset());
  ds.rebuild_index();
  ds.validate();
  return ds;
}

}  // namespace dbltr
