#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dbltr/dataset.hpp"
#include "experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

fs::path default_out_dir() {
  if (const char* env = std::getenv("DBLTR_OUT_DIR")) return env;
  return ".";
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    const std::string tok = s.substr(pos, next - pos);
    if (!tok.empty()) seeds.push_back(std::stoull(tok));
    pos = next + 1;
  }
  if (seeds.empty()) throw dbltr::ValidationError("--seeds: no seeds given");
  return seeds;
}

struct GenDataArgs {
  std::string profile = "exponential";
  std::size_t classes = 10;
  std::size_t base = 500;
  double mu = 100.0;
  std::size_t max_count = 1280;
  std::size_t min_count = 5;
  double power = 6.0;
  std::string exponent_denominator = "classes-minus-one";
  std::size_t dim = 16;
  double separation = 3.0;
  double sigma = 1.0;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> means_seed;
  std::string out;
};

int run_gen_data(const GenDataArgs& a) {
  dbltr::CountProfile profile;
  if (a.profile == "exponential") {
    dbltr::ExponentDenominator denom;
    if (a.exponent_denominator == "classes-minus-one")
      denom = dbltr::ExponentDenominator::kClassesMinusOne;
    else if (a.exponent_denominator == "fixed-100")
      denom = dbltr::ExponentDenominator::kFixed100;
    else
      throw dbltr::ValidationError(
          "--exponent-denominator must be classes-minus-one or fixed-100");
    profile = dbltr::exponential_profile(a.base, a.mu, a.classes, denom);
  } else if (a.profile == "pareto") {
    profile = dbltr::pareto_profile(a.classes, a.max_count, a.min_count, a.power);
  } else {
    throw dbltr::ValidationError("--profile must be exponential or pareto");
  }
  dbltr::SynthConfig cfg;
  cfg.dim = a.dim;
  cfg.class_separation = a.separation;
  cfg.noise_sigma = a.sigma;
  cfg.seed = a.seed;
  if (a.means_seed) {
    cfg.means_seed = *a.means_seed;
    cfg.means_seed_set = true;
  }
  dbltr::LongTailDataset ds = dbltr::synth_gaussian(profile, cfg);
  dbltr::save_dataset(ds, a.out);
  std::cout << "wrote " << a.out << " (" << ds.size() << " samples, "
            << profile.num_classes() << " classes, dim " << ds.dim << ")\n";
  return kExitOk;
}

struct TrainArgs {
  std::string dataset;
  std::string eval;
  std::string config_path;
  std::string seeds = "0";
  std::string out_dir;
  std::string ablate;
  bool save_checkpoints = false;
  json flag_overrides = json::object();
};

int run_train(const TrainArgs& a) {
  dbltr::TrainConfig cfg;
  if (!a.config_path.empty()) {
    std::ifstream in(a.config_path);
    if (!in) throw dbltr::ValidationError("cannot open config " + a.config_path);
    json file_cfg = json::parse(in);
    cfg = dbltr::merge_config(cfg, file_cfg);
  }
  cfg = dbltr::merge_config(cfg, a.flag_overrides);  // flags win over the file

  dbltr::RunOptions opts;
  opts.dataset_path = a.dataset;
  if (!a.eval.empty()) opts.eval_path = a.eval;
  opts.config = cfg;
  opts.seeds = parse_seeds(a.seeds);
  opts.out_dir = a.out_dir.empty() ? default_out_dir() : fs::path(a.out_dir);
  opts.save_checkpoints = a.save_checkpoints;

  // The model must match the dataset; fill the dims in from the file header.
  dbltr::LongTailDataset probe = dbltr::load_dataset(opts.dataset_path);
  opts.config.model.input_dim = probe.dim;
  opts.config.model.num_classes = probe.profile.num_classes();

  json manifest;
  if (!a.ablate.empty()) {
    if (a.ablate != "colb-losses")
      throw dbltr::ValidationError("--ablate supports only: colb-losses");
    manifest = dbltr::cmd_train_ablation(opts);
  } else {
    manifest = dbltr::cmd_train(opts);
  }
  std::cout << "wrote " << (opts.out_dir / "manifest.json").string() << "\n";
  const json agg = manifest.contains("aggregate") ? manifest["aggregate"] : json();
  if (agg.is_object() && agg.contains("overall") && !agg["overall"].is_null())
    std::cout << "overall accuracy mean " << agg["overall"]["mean"].get<double>() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-branch long-tailed recognition experiments"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic long-tailed dataset");
  gen_cmd->add_option("--profile", gen.profile, "exponential | pareto");
  gen_cmd->add_option("--classes", gen.classes, "Number of classes");
  gen_cmd->add_option("--base", gen.base, "Head class count (exponential profile)");
  gen_cmd->add_option("--mu", gen.mu, "Imbalance factor (exponential profile)");
  gen_cmd->add_option("--max-count", gen.max_count, "Head class count (pareto profile)");
  gen_cmd->add_option("--min-count", gen.min_count, "Tail class count (pareto profile)");
  gen_cmd->add_option("--power", gen.power, "Pareto power");
  gen_cmd->add_option("--exponent-denominator", gen.exponent_denominator,
                      "classes-minus-one | fixed-100");
  gen_cmd->add_option("--dim", gen.dim, "Feature dimension");
  gen_cmd->add_option("--separation", gen.separation, "Pairwise distance between class means");
  gen_cmd->add_option("--sigma", gen.sigma, "Per-class Gaussian noise sigma");
  gen_cmd->add_option("--seed", gen.seed, "Sampling seed");
  std::uint64_t means_seed_opt = 0;
  CLI::Option* ms =
      gen_cmd->add_option("--means-seed", means_seed_opt,
                          "Separate seed for class mean placement (defaults to --seed)");
  gen_cmd->add_option("-o,--out", gen.out, "Output dataset path")->required();

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train and evaluate over a list of seeds");
  train_cmd->add_option("--dataset", tr.dataset, "Training dataset path")->required();
  train_cmd->add_option("--eval", tr.eval,
                        "Held-out evaluation dataset (defaults to the training set; "
                        "split columns always use the training profile)");
  train_cmd->add_option("--config", tr.config_path, "JSON config (flat keys; flags override)");
  train_cmd->add_option("--seeds", tr.seeds, "Comma-separated seed list, e.g. 0,1,2,3,4");
  train_cmd->add_option("-o,--out", tr.out_dir,
                        "Output directory (default $DBLTR_OUT_DIR or .)");
  train_cmd->add_option("--ablate", tr.ablate, "Run an ablation grid: colb-losses");
  train_cmd->add_flag("--save-params", tr.save_checkpoints, "Write per-seed checkpoints");
  // config overrides as explicit flags
  std::string method, pool;
  std::size_t epochs = 0, batch_size = 0, n_way = 0, n_support = 0, n_query = 0;
  double base_lr = 0, momentum = -1, weight_decay = -1, margin_h = -1, temperature = 0,
         lambda = -1, alpha_override = -1;
  CLI::Option* o_method = train_cmd->add_option("--method", method, "ce | ldam | dbltr");
  CLI::Option* o_epochs = train_cmd->add_option("--epochs", epochs);
  CLI::Option* o_batch = train_cmd->add_option("--batch-size", batch_size);
  CLI::Option* o_lr = train_cmd->add_option("--base-lr", base_lr);
  CLI::Option* o_mom = train_cmd->add_option("--momentum", momentum);
  CLI::Option* o_wd = train_cmd->add_option("--weight-decay", weight_decay);
  CLI::Option* o_h = train_cmd->add_option("--margin-h", margin_h);
  CLI::Option* o_tau = train_cmd->add_option("--temperature", temperature);
  CLI::Option* o_lam = train_cmd->add_option("--lambda", lambda);
  CLI::Option* o_nway = train_cmd->add_option("--n-way", n_way);
  CLI::Option* o_nsup = train_cmd->add_option("--n-support", n_support);
  CLI::Option* o_nqry = train_cmd->add_option("--n-query", n_query);
  CLI::Option* o_pool = train_cmd->add_option("--pool", pool, "whole | medium+few | few");
  CLI::Option* o_alpha = train_cmd->add_option("--alpha-override", alpha_override);

  std::vector<std::string> report_paths;
  std::string report_csv;
  CLI::App* report_cmd =
      app.add_subcommand("report", "Tabulate manifests (same dataset) side by side");
  report_cmd->add_option("manifests", report_paths, "manifest.json paths")->required();
  report_cmd->add_option("--csv", report_csv, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen_cmd) {
      if (*ms) gen.means_seed = means_seed_opt;
      return run_gen_data(gen);
    }
    if (*train_cmd) {
      json& ov = tr.flag_overrides;
      if (*o_method) ov["method"] = method;
      if (*o_epochs) ov["epochs"] = epochs;
      if (*o_batch) ov["batch_size"] = batch_size;
      if (*o_lr) ov["base_lr"] = base_lr;
      if (*o_mom) ov["momentum"] = momentum;
      if (*o_wd) ov["weight_decay"] = weight_decay;
      if (*o_h) ov["margin_h"] = margin_h;
      if (*o_tau) ov["temperature"] = temperature;
      if (*o_lam) ov["lambda"] = lambda;
      if (*o_nway) ov["n_way"] = n_way;
      if (*o_nsup) ov["n_support"] = n_support;
      if (*o_nqry) ov["n_query"] = n_query;
      if (*o_pool) ov["pool"] = pool;
      if (*o_alpha) ov["alpha_override"] = alpha_override;
      return run_train(tr);
    }
    if (*report_cmd) {
      std::vector<fs::path> paths(report_paths.begin(), report_paths.end());
      std::optional<fs::path> csv;
      if (!report_csv.empty()) csv = report_csv;
      std::cout << dbltr::cmd_report(paths, csv);
      return kExitOk;
    }
  } catch (const dbltr::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const dbltr::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const dbltr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
