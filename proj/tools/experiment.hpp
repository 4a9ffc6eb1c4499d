#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dbltr/trainer.hpp"

namespace dbltr {

std::string fnv1a64_file(const std::filesystem::path& path);

// Flat-key JSON <-> TrainConfig. merge_config applies only the keys present
// in `j` on top of `base` and rejects unknown keys; a top-level "config"
// object (as written into run manifests) is unwrapped first.
TrainConfig merge_config(const TrainConfig& base, const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& cfg);

Method method_from_string(const std::string& s);
std::string method_to_string(Method m);
EpisodePool pool_from_string(const std::string& s);
std::string pool_to_string(EpisodePool p);

struct SeedStats {
  double mean = 0.0;
  double std = 0.0;  // sample std (n-1); 0 for a single seed
};
SeedStats seed_stats(const std::vector<double>& xs);

struct RunOptions {
  std::filesystem::path dataset_path;
  std::optional<std::filesystem::path> eval_path;
  TrainConfig config;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path out_dir;
  bool save_checkpoints = false;
  std::string label;  // row label inside manifests / CSV file names
};

nlohmann::json eval_report_json(std::uint64_t seed, const EvalReport& r);
nlohmann::json aggregate_json(const std::vector<EvalReport>& reports);

// Trains every seed, writes loss_<label>_seed<k>.csv files, and returns the
// per-seed reports plus the JSON block describing the run.
struct SeedRunResult {
  std::vector<EvalReport> reports;
  nlohmann::json block;  // seeds / reports / aggregate
};
SeedRunResult run_seeds(const RunOptions& opts, const LongTailDataset& data,
                        const LongTailDataset* eval_data);

// `train` command: writes <out>/manifest.json (+ loss CSVs) and returns the
// manifest.
nlohmann::json cmd_train(const RunOptions& opts);

// The six on/off combinations of {metric, intra, inter} evaluated by the
// ablation grid, baseline (all off, single branch) first.
struct AblationRow {
  std::string label;
  bool metric;
  bool intra;
  bool inter;
};
const std::vector<AblationRow>& ablation_rows();

// `train --ablate colb-losses`: one manifest with a row per combination. If
// the full three-loss row is not the best overall in at least 4 of 5 seeds,
// the manifest records the deviation.
nlohmann::json cmd_train_ablation(const RunOptions& opts);

// `report` command: renders Many/Medium/Few/Overall mean+-std rows from one
// or more manifests (they must describe the same dataset), sorted by overall
// mean, best first. Returns the table text; optionally writes CSV.
std::string cmd_report(const std::vector<std::filesystem::path>& manifest_paths,
                       const std::optional<std::filesystem::path>& csv_out);

// 17 significant digits: parses back to the identical double.
std::string fmt17(double v);

}  // namespace dbltr
