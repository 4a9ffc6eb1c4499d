#include "experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dbltr {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fnv1a64_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checksum: cannot open " + path.string());
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
  }
  char out[24];
  std::snprintf(out, sizeof(out), "fnv1a:%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Method method_from_string(const std::string& s) {
  if (s == "ce") return Method::kCrossEntropy;
  if (s == "ldam") return Method::kLdam;
  if (s == "dbltr") return Method::kDbltr;
  throw ValidationError("unknown method '" + s + "' (expected ce, ldam or dbltr)");
}

std::string method_to_string(Method m) {
  switch (m) {
    case Method::kCrossEntropy: return "ce";
    case Method::kLdam: return "ldam";
    case Method::kDbltr: return "dbltr";
  }
  throw ValidationError("unknown method enum value");
}

EpisodePool pool_from_string(const std::string& s) {
  if (s == "whole") return EpisodePool::kWhole;
  if (s == "medium+few") return EpisodePool::kMediumFew;
  if (s == "few") return EpisodePool::kFew;
  throw ValidationError("unknown pool '" + s + "' (expected whole, medium+few or few)");
}

std::string pool_to_string(EpisodePool p) {
  switch (p) {
    case EpisodePool::kWhole: return "whole";
    case EpisodePool::kMediumFew: return "medium+few";
    case EpisodePool::kFew: return "few";
  }
  throw ValidationError("unknown pool enum value");
}

json config_to_json(const TrainConfig& cfg) {
  json j;
  j["method"] = method_to_string(cfg.method);
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["base_lr"] = cfg.schedule.base_lr;
  j["warmup_epochs"] = cfg.schedule.warmup_epochs;
  j["milestones"] = cfg.schedule.milestones;
  j["lr_decay"] = cfg.schedule.decay;
  j["cosine"] = cfg.schedule.cosine;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["decay_biases"] = cfg.decay_biases;
  j["margin_h"] = cfg.margin_h;
  j["temperature"] = cfg.temperature;
  j["lambda"] = cfg.lambda_inter;
  j["n_way"] = cfg.n_way;
  j["n_support"] = cfg.n_support;
  j["n_query"] = cfg.n_query;
  j["pool"] = pool_to_string(cfg.pool);
  j["use_metric"] = cfg.use_metric;
  j["use_intra"] = cfg.use_intra;
  j["use_inter"] = cfg.use_inter;
  j["drw"] = cfg.drw;
  j["drw_epoch"] = cfg.drw_epoch;
  j["drw_beta"] = cfg.drw_beta;
  j["include_positive_in_denominator"] = cfg.include_positive_in_denominator;
  j["alpha_override"] = cfg.alpha_override ? json(*cfg.alpha_override) : json(nullptr);
  j["seed"] = cfg.seed;
  j["backbone"] = cfg.model.backbone_widths;
  j["proj_hidden"] = cfg.model.projection_hidden;
  j["proj_dim"] = cfg.model.projection_dim;
  return j;
}

TrainConfig merge_config(const TrainConfig& base, const json& raw) {
  const json& j = raw.contains("config") && raw["config"].is_object() ? raw["config"] : raw;
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  TrainConfig cfg = base;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "method") cfg.method = method_from_string(v.get<std::string>());
      else if (key == "epochs") cfg.epochs = v.get<std::size_t>();
      else if (key == "batch_size") cfg.batch_size = v.get<std::size_t>();
      else if (key == "base_lr") cfg.schedule.base_lr = v.get<double>();
      else if (key == "warmup_epochs") cfg.schedule.warmup_epochs = v.get<std::size_t>();
      else if (key == "milestones") cfg.schedule.milestones = v.get<std::vector<std::size_t>>();
      else if (key == "lr_decay") cfg.schedule.decay = v.get<double>();
      else if (key == "cosine") cfg.schedule.cosine = v.get<bool>();
      else if (key == "momentum") cfg.momentum = v.get<double>();
      else if (key == "weight_decay") cfg.weight_decay = v.get<double>();
      else if (key == "decay_biases") cfg.decay_biases = v.get<bool>();
      else if (key == "margin_h") cfg.margin_h = v.get<double>();
      else if (key == "temperature") cfg.temperature = v.get<double>();
      else if (key == "lambda") cfg.lambda_inter = v.get<double>();
      else if (key == "n_way") cfg.n_way = v.get<std::size_t>();
      else if (key == "n_support") cfg.n_support = v.get<std::size_t>();
      else if (key == "n_query") cfg.n_query = v.get<std::size_t>();
      else if (key == "pool") cfg.pool = pool_from_string(v.get<std::string>());
      else if (key == "use_metric") cfg.use_metric = v.get<bool>();
      else if (key == "use_intra") cfg.use_intra = v.get<bool>();
      else if (key == "use_inter") cfg.use_inter = v.get<bool>();
      else if (key == "drw") cfg.drw = v.get<bool>();
      else if (key == "drw_epoch") cfg.drw_epoch = v.get<std::size_t>();
      else if (key == "drw_beta") cfg.drw_beta = v.get<double>();
      else if (key == "include_positive_in_denominator")
        cfg.include_positive_in_denominator = v.get<bool>();
      else if (key == "alpha_override")
        cfg.alpha_override = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "backbone") cfg.model.backbone_widths = v.get<std::vector<std::size_t>>();
      else if (key == "proj_hidden") cfg.model.projection_hidden = v.get<std::size_t>();
      else if (key == "proj_dim") cfg.model.projection_dim = v.get<std::size_t>();
      else throw ValidationError("config: unknown key '" + key + "'");
    } catch (const json::exception& e) {
      throw ValidationError("config: bad value for '" + key + "': " + e.what());
    }
  }
  return cfg;
}

SeedStats seed_stats(const std::vector<double>& xs) {
  SeedStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
  return s;
}

json eval_report_json(std::uint64_t seed, const EvalReport& r) {
  auto num_or_null = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  json j;
  j["seed"] = seed;
  j["overall"] = r.overall;
  j["many"] = num_or_null(r.many);
  j["medium"] = num_or_null(r.medium);
  j["few"] = num_or_null(r.few);
  j["per_class"] = r.per_class;
  j["correct"] = r.correct;
  j["total"] = r.total;
  return j;
}

json aggregate_json(const std::vector<EvalReport>& reports) {
  auto stat = [&](auto field) {
    std::vector<double> xs;
    for (const auto& r : reports) {
      const double v = field(r);
      if (!std::isnan(v)) xs.push_back(v);
    }
    if (xs.empty()) return json(nullptr);
    const SeedStats s = seed_stats(xs);
    return json{{"mean", s.mean}, {"std", s.std}};
  };
  json j;
  j["overall"] = stat([](const EvalReport& r) { return r.overall; });
  j["many"] = stat([](const EvalReport& r) { return r.many; });
  j["medium"] = stat([](const EvalReport& r) { return r.medium; });
  j["few"] = stat([](const EvalReport& r) { return r.few; });
  return j;
}

namespace {

void write_loss_csv(const fs::path& path, std::ofstream& out) {
  if (!out) throw ValidationError("cannot open " + path.string());
  out << "epoch,alpha,l_imb,l_m,l_intra,l_inter,l_con,total,inter_empty\n";
}

json dataset_block(const fs::path& path, const LongTailDataset& ds) {
  json j;
  j["path"] = path.string();
  j["checksum"] = fnv1a64_file(path);
  j["classes"] = ds.profile.num_classes();
  j["samples"] = ds.size();
  j["dim"] = ds.dim;
  return j;
}

}  // namespace

SeedRunResult run_seeds(const RunOptions& opts, const LongTailDataset& data,
                        const LongTailDataset* eval_data) {
  SeedRunResult out;
  json reports = json::array();
  for (std::uint64_t seed : opts.seeds) {
    TrainConfig cfg = opts.config;
    cfg.seed = seed;
    const std::string stem =
        "loss_" + (opts.label.empty() ? "" : opts.label + "_") + "seed" + std::to_string(seed);
    const fs::path csv_path = opts.out_dir / (stem + ".csv");
    std::ofstream csv(csv_path, std::ios::trunc);
    write_loss_csv(csv_path, csv);
    // Rows stream out per epoch so an aborted run keeps its partial history.
    auto on_epoch = [&csv](std::size_t epoch, const LossBreakdown& bd) {
      csv << epoch << ',' << fmt17(bd.alpha) << ',' << fmt17(bd.l_imb) << ','
          << fmt17(bd.l_m) << ',' << fmt17(bd.l_intra) << ',' << fmt17(bd.l_inter) << ','
          << fmt17(bd.l_con) << ',' << fmt17(bd.total) << ',' << (bd.inter_empty ? 1 : 0)
          << '\n';
      csv.flush();
    };
    TrainResult res = train(data, cfg, eval_data, on_epoch);
    if (opts.save_checkpoints) {
      const std::string ck =
          "params_" + (opts.label.empty() ? "" : opts.label + "_") + "seed" +
          std::to_string(seed) + ".ckpt";
      save_params(res.params, opts.out_dir / ck);
    }
    reports.push_back(eval_report_json(seed, res.eval));
    out.reports.push_back(res.eval);
  }
  out.block["seeds"] = opts.seeds;
  out.block["reports"] = std::move(reports);
  out.block["aggregate"] = aggregate_json(out.reports);
  return out;
}

namespace {

json manifest_header(const RunOptions& opts, const LongTailDataset& data,
                     const std::optional<LongTailDataset>& eval_data) {
  json m;
  m["schema"] = "dbltr-manifest-v1";
  m["method"] = method_to_string(opts.config.method);
  m["config"] = config_to_json(opts.config);
  m["dataset"] = dataset_block(opts.dataset_path, data);
  m["eval_dataset"] =
      opts.eval_path ? dataset_block(*opts.eval_path, *eval_data) : json(nullptr);
  return m;
}

void write_manifest(const json& m, const fs::path& out_dir) {
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + (out_dir / "manifest.json").string());
  out << m.dump(2) << "\n";
}

}  // namespace

json cmd_train(const RunOptions& opts) {
  if (opts.seeds.empty()) throw ValidationError("train: need at least one seed");
  fs::create_directories(opts.out_dir);
  LongTailDataset data = load_dataset(opts.dataset_path);
  std::optional<LongTailDataset> eval_data;
  if (opts.eval_path) eval_data = load_dataset(*opts.eval_path);

  const auto t0 = std::chrono::steady_clock::now();
  SeedRunResult run = run_seeds(opts, data, eval_data ? &*eval_data : nullptr);
  const auto t1 = std::chrono::steady_clock::now();

  json m = manifest_header(opts, data, eval_data);
  m.update(run.block);
  m["wall_clock_seconds"] = std::chrono::duration<double>(t1 - t0).count();
  write_manifest(m, opts.out_dir);
  return m;
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows = {
      {"none", false, false, false},       {"metric", true, false, false},
      {"metric+intra", true, true, false}, {"metric+inter", true, false, true},
      {"intra+inter", false, true, true},  {"metric+intra+inter", true, true, true},
  };
  return rows;
}

json cmd_train_ablation(const RunOptions& opts) {
  if (opts.seeds.empty()) throw ValidationError("train: need at least one seed");
  if (opts.config.method != Method::kDbltr)
    throw ValidationError("ablation grid requires --method dbltr");
  fs::create_directories(opts.out_dir);
  LongTailDataset data = load_dataset(opts.dataset_path);
  std::optional<LongTailDataset> eval_data;
  if (opts.eval_path) eval_data = load_dataset(*opts.eval_path);

  const auto t0 = std::chrono::steady_clock::now();
  json rows = json::array();
  std::vector<std::vector<double>> overall_by_row;  // [row][seed]
  for (const AblationRow& ab : ablation_rows()) {
    RunOptions row_opts = opts;
    row_opts.label = ab.label;
    if (!ab.metric && !ab.intra && !ab.inter) {
      // the no-CoLB baseline is the plain single-branch imbalanced learner
      row_opts.config.method = Method::kLdam;
    } else {
      row_opts.config.use_metric = ab.metric;
      row_opts.config.use_intra = ab.intra;
      row_opts.config.use_inter = ab.inter;
    }
    SeedRunResult run = run_seeds(row_opts, data, eval_data ? &*eval_data : nullptr);
    json row;
    row["label"] = ab.label;
    row["metric"] = ab.metric;
    row["intra"] = ab.intra;
    row["inter"] = ab.inter;
    row["method"] = method_to_string(row_opts.config.method);
    row.update(run.block);
    rows.push_back(std::move(row));
    std::vector<double> overall;
    for (const auto& r : run.reports) overall.push_back(r.overall);
    overall_by_row.push_back(std::move(overall));
  }
  const auto t1 = std::chrono::steady_clock::now();

  // Per seed, does the full three-loss row beat every other row?
  const std::size_t full_row = overall_by_row.size() - 1;
  std::size_t full_wins = 0;
  for (std::size_t s = 0; s < opts.seeds.size(); ++s) {
    bool best = true;
    for (std::size_t r = 0; r < full_row; ++r)
      if (overall_by_row[r][s] >= overall_by_row[full_row][s]) best = false;
    if (best) ++full_wins;
  }

  json m = manifest_header(opts, data, eval_data);
  m["ablation"] = {{"grid", "colb-losses"}, {"rows", rows}, {"full_row_wins", full_wins}};
  const std::size_t need = opts.seeds.size() - std::min<std::size_t>(opts.seeds.size(), 1);
  if (full_wins < need) {
    m["ablation"]["deviation"] =
        "full metric+intra+inter row was best overall in " + std::to_string(full_wins) +
        " of " + std::to_string(opts.seeds.size()) + " seeds";
  }
  m["seeds"] = opts.seeds;
  m["wall_clock_seconds"] = std::chrono::duration<double>(t1 - t0).count();
  write_manifest(m, opts.out_dir);
  return m;
}

// --- report ------------------------------------------------------------------

namespace {

struct ReportRow {
  std::string label;
  json aggregate;
};

double agg_mean(const json& aggregate, const char* field) {
  if (aggregate[field].is_null()) return std::numeric_limits<double>::quiet_NaN();
  return aggregate[field]["mean"].get<double>();
}

std::string cell(const json& aggregate, const char* field) {
  if (aggregate[field].is_null()) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", 100.0 * aggregate[field]["mean"].get<double>(),
                100.0 * aggregate[field]["std"].get<double>());
  return buf;
}

}  // namespace

std::string cmd_report(const std::vector<fs::path>& manifest_paths,
                       const std::optional<fs::path>& csv_out) {
  if (manifest_paths.empty()) throw ValidationError("report: need at least one manifest");
  std::vector<ReportRow> rows;
  std::string checksum;
  for (const fs::path& p : manifest_paths) {
    std::ifstream in(p);
    if (!in) throw ValidationError("report: cannot open " + p.string());
    json m = json::parse(in, nullptr, true);
    const std::string sum = m.at("dataset").at("checksum").get<std::string>();
    if (checksum.empty()) checksum = sum;
    if (sum != checksum)
      throw ValidationError("report: manifests describe different datasets (" + checksum +
                            " vs " + sum + ")");
    if (m.contains("ablation")) {
      for (const auto& row : m["ablation"]["rows"])
        rows.push_back({m.at("method").get<std::string>() + "/" +
                            row.at("label").get<std::string>(),
                        row.at("aggregate")});
    } else {
      rows.push_back({m.at("method").get<std::string>(), m.at("aggregate")});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    const double ma = agg_mean(a.aggregate, "overall");
    const double mb = agg_mean(b.aggregate, "overall");
    if (ma != mb) return ma > mb;  // best first
    return a.label < b.label;
  });

  std::ostringstream table;
  char line[256];
  std::snprintf(line, sizeof(line), "%-28s %14s %14s %14s %14s\n", "method", "many",
                "medium", "few", "overall");
  table << line;
  for (const ReportRow& r : rows) {
    std::snprintf(line, sizeof(line), "%-28s %14s %14s %14s %14s\n", r.label.c_str(),
                  cell(r.aggregate, "many").c_str(), cell(r.aggregate, "medium").c_str(),
                  cell(r.aggregate, "few").c_str(), cell(r.aggregate, "overall").c_str());
    table << line;
  }

  if (csv_out) {
    std::ofstream csv(*csv_out, std::ios::trunc);
    if (!csv) throw ValidationError("report: cannot open " + csv_out->string());
    csv << "method,many_mean,many_std,medium_mean,medium_std,few_mean,few_std,"
           "overall_mean,overall_std\n";
    for (const ReportRow& r : rows) {
      csv << r.label;
      for (const char* f : {"many", "medium", "few", "overall"}) {
        if (r.aggregate[f].is_null()) {
          csv << ",,";
        } else {
          csv << ',' << fmt17(r.aggregate[f]["mean"].get<double>()) << ','
              << fmt17(r.aggregate[f]["std"].get<double>());
        }
      }
      csv << '\n';
    }
  }
  return table.str();
}

}  // namespace dbltr
