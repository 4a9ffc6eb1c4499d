#include "dbltr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace dbltr {

namespace {

constexpr std::uint64_t kInitStream = 0x696E6974ULL;     // "init"
constexpr std::uint64_t kUniformStream = 0x756E6966ULL;  // "unif"
constexpr std::uint64_t kTailStream = 0x7461696CULL;     // "tail"

}  // namespace

std::size_t TrainConfig::resolved_drw_epoch() const {
  if (drw_epoch > 0) return drw_epoch;
  return static_cast<std::size_t>(
      std::ceil(0.8 * static_cast<double>(epochs)));
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ValidationError("TrainConfig: epochs must be >= 1");
  if (batch_size == 0) throw ValidationError("TrainConfig: batch_size must be >= 1");
  if (schedule.base_lr <= 0.0) throw ValidationError("TrainConfig: base_lr must be positive");
  if (schedule.decay <= 0.0) throw ValidationError("TrainConfig: lr decay must be positive");
  for (std::size_t i = 0; i < schedule.milestones.size(); ++i) {
    if (schedule.milestones[i] >= epochs)
      throw ValidationError("TrainConfig: milestone " +
                            std::to_string(schedule.milestones[i]) +
                            " must be < epochs");
    if (i > 0 && schedule.milestones[i] <= schedule.milestones[i - 1])
      throw ValidationError("TrainConfig: milestones must be strictly increasing");
  }
  if (momentum < 0.0 || momentum >= 1.0)
    throw ValidationError("TrainConfig: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("TrainConfig: weight_decay must be >= 0");
  if (margin_h < 0.0) throw ValidationError("TrainConfig: margin_h must be >= 0");
  if (temperature <= 0.0) throw ValidationError("TrainConfig: temperature must be positive");
  if (lambda_inter < 0.0) throw ValidationError("TrainConfig: lambda must be >= 0");
  if (drw && (drw_beta < 0.0 || drw_beta >= 1.0))
    throw ValidationError("TrainConfig: drw_beta must be in [0, 1)");
  if (alpha_override && (*alpha_override < 0.0 || *alpha_override > 1.0))
    throw ValidationError("TrainConfig: alpha_override must be in [0, 1]");
  if (method == Method::kDbltr) {
    if (n_way == 0 || n_support == 0 || n_query == 0)
      throw ValidationError("TrainConfig: episode sizes must be >= 1");
    if (use_intra && n_way < 2)
      throw ValidationError("TrainConfig: intra-CL needs n_way >= 2");
  }
  model.validate();
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch < 1 || epoch > cfg.epochs)
    throw ValidationError("lr_at: epoch " + std::to_string(epoch) + " outside [1, " +
                          std::to_string(cfg.epochs) + "]");
  const Schedule& s = cfg.schedule;
  if (s.warmup_epochs > 0 && epoch <= s.warmup_epochs)
    return s.base_lr * static_cast<double>(epoch) / static_cast<double>(s.warmup_epochs);
  if (s.cosine) {
    const double span = std::max<double>(1.0, static_cast<double>(cfg.epochs - s.warmup_epochs));
    const double progress = static_cast<double>(epoch - s.warmup_epochs) / span;
    return s.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
  }
  double lr = s.base_lr;
  for (std::size_t m : s.milestones)
    if (epoch >= m) lr *= s.decay;
  return lr;
}

void sgd_step(ModelParams& params, SgdState& state, double lr, double momentum,
              double weight_decay, bool decay_biases) {
  auto plist = params.parameters();
  if (state.velocity.empty()) {
    state.velocity.resize(plist.size());
    for (std::size_t i = 0; i < plist.size(); ++i)
      state.velocity[i].assign(plist[i].value.size(), 0.0);
  }
  if (state.velocity.size() != plist.size())
    throw ValidationError("sgd_step: optimizer state does not match parameter list");
  for (std::size_t i = 0; i < plist.size(); ++i) {
    Value& p = plist[i].value;
    const double wd = (plist[i].is_bias && !decay_biases) ? 0.0 : weight_decay;
    const auto& g = p.grad();
    auto& data = p.mutable_data();
    auto& v = state.velocity[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      if (!std::isfinite(g[k])) throw NumericError("sgd_step: non-finite gradient");
      v[k] = momentum * v[k] + g[k] + wd * data[k];
      data[k] -= lr * v[k];
    }
    p.zero_grad();
  }
}

EvalReport evaluate(const ModelParams& params, const LongTailDataset& data,
                    const ShotSplits& splits) {
  data.validate();
  const std::size_t classes = data.profile.num_classes();
  if (splits.shot_of.size() != classes)
    throw ValidationError("evaluate: split partition covers " +
                          std::to_string(splits.shot_of.size()) + " classes, dataset has " +
                          std::to_string(classes));
  EvalReport r;
  r.per_class_correct.assign(classes, 0);
  r.per_class_total.assign(classes, 0);
  r.total = data.size();

  Value x = Value::leaf({data.size(), data.dim}, data.features);
  Value logits = classifier_forward(params, backbone_forward(params, x));
  const std::size_t c = logits.shape()[1];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double* zrow = logits.data().data() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (zrow[j] > zrow[best]) best = j;  // ties stay at the lower index
    const std::uint32_t y = data.labels[i];
    r.per_class_total[y] += 1;
    if (best == y) {
      r.per_class_correct[y] += 1;
      r.correct += 1;
    }
  }
  r.overall = static_cast<double>(r.correct) / static_cast<double>(r.total);
  r.per_class.resize(classes);
  for (std::size_t j = 0; j < classes; ++j)
    r.per_class[j] = r.per_class_total[j] == 0
                         ? std::numeric_limits<double>::quiet_NaN()
                         : static_cast<double>(r.per_class_correct[j]) /
                               static_cast<double>(r.per_class_total[j]);
  auto split_acc = [&](const std::vector<std::uint32_t>& ids) {
    std::size_t correct = 0, total = 0;
    for (std::uint32_t j : ids) {
      correct += r.per_class_correct[j];
      total += r.per_class_total[j];
    }
    return total == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(correct) / static_cast<double>(total);
  };
  r.many = split_acc(splits.many);
  r.medium = split_acc(splits.medium);
  r.few = split_acc(splits.few);
  return r;
}

EvalReport evaluate(const ModelParams& params, const LongTailDataset& data) {
  return evaluate(params, data, data.splits);
}

namespace {

Value gather_rows(const LongTailDataset& data, const std::vector<std::size_t>& indices) {
  std::vector<double> buf;
  buf.reserve(indices.size() * data.dim);
  for (std::size_t i : indices) {
    auto s = data.sample(i);
    buf.insert(buf.end(), s.begin(), s.end());
  }
  return Value::leaf({indices.size(), data.dim}, std::move(buf));
}

std::vector<std::uint32_t> gather_labels(const LongTailDataset& data,
                                         const std::vector<std::size_t>& indices) {
  std::vector<std::uint32_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.labels[i]);
  return out;
}

struct StepContext {
  const LongTailDataset& data;
  const TrainConfig& cfg;
  const Margins& margins;
  const std::vector<double>& class_weights;  // empty when DRW inactive
  const std::vector<std::uint32_t>& pool;
  Rng& tail_rng;
  double alpha;
};

// One optimizer step worth of forward graph; returns the scalar objective and
// the step's scalar record.
std::pair<Value, LossBreakdown> build_step(const StepContext& ctx, ModelParams& params,
                                           const std::vector<std::size_t>& batch) {
  const TrainConfig& cfg = ctx.cfg;
  LossBreakdown bd;
  bd.alpha = ctx.alpha;

  Value batch_x = gather_rows(ctx.data, batch);
  std::vector<std::uint32_t> batch_y = gather_labels(ctx.data, batch);
  Value emb = backbone_forward(params, batch_x);
  Value logits = classifier_forward(params, emb);
  Value l_imb = imbalanced_loss(logits, batch_y, ctx.margins, ctx.class_weights);
  bd.l_imb = l_imb.item();

  if (cfg.method != Method::kDbltr) {
    bd.total = bd.l_imb;
    return {l_imb, bd};
  }

  Episode ep = sample_episode(ctx.data, ctx.pool, cfg.n_way, cfg.n_support, cfg.n_query,
                              ctx.tail_rng);
  std::vector<std::size_t> support_idx, query_idx;
  std::vector<std::size_t> support_local, query_local;
  for (std::size_t j = 0; j < ep.n_way(); ++j) {
    for (std::size_t i : ep.support[j]) {
      support_idx.push_back(i);
      support_local.push_back(j);
    }
    for (std::size_t i : ep.query[j]) {
      query_idx.push_back(i);
      query_local.push_back(j);
    }
  }
  Value sup_emb = backbone_forward(params, gather_rows(ctx.data, support_idx));
  Value qry_emb = backbone_forward(params, gather_rows(ctx.data, query_idx));

  const ContrastiveOptions copts{cfg.temperature, cfg.include_positive_in_denominator};
  Value zero = Value::scalar(0.0);

  Value l_m = zero;
  if (cfg.use_metric) {
    Value protos = prototypes(sup_emb, support_local, cfg.n_way);
    l_m = metric_loss(qry_emb, protos, query_local);
  }

  Value l_intra = zero;
  Value l_inter = zero;
  if (cfg.use_intra || cfg.use_inter) {
    Value sup_proj = projection_forward(params, sup_emb);
    Value qry_proj = projection_forward(params, qry_emb);
    Value proto_proj = prototypes(sup_proj, support_local, cfg.n_way);
    if (cfg.use_intra) l_intra = intra_cl(qry_proj, query_local, proto_proj, copts);
    if (cfg.use_inter) {
      // Head instances of the current imbalanced-branch batch, projected from
      // the embeddings that branch already computed.
      std::vector<std::size_t> head_rows;
      for (std::size_t pos = 0; pos < batch.size(); ++pos)
        if (ctx.data.splits.shot_of[batch_y[pos]] == Shot::kMany) head_rows.push_back(pos);
      Value head_proj;
      if (!head_rows.empty()) {
        std::vector<Value> rows;
        rows.reserve(head_rows.size());
        for (std::size_t pos : head_rows) rows.push_back(row(emb, pos));
        head_proj = projection_forward(params, concat_rows(rows));
      }
      InterClResult inter = inter_cl(qry_proj, query_local, proto_proj, head_proj, copts);
      l_inter = inter.loss;
      bd.inter_empty = inter.empty_head;
    }
  }

  Value l_con = colb_loss(l_m, l_intra, l_inter, cfg.lambda_inter);
  Value total = total_loss(l_imb, l_con, ctx.alpha);
  bd.l_m = l_m.item();
  bd.l_intra = l_intra.item();
  bd.l_inter = l_inter.item();
  bd.l_con = l_con.item();
  bd.total = total.item();
  return {total, bd};
}

std::string step_report(const LossBreakdown& bd) {
  auto f = [](double v) { return std::to_string(v); };
  return "l_imb=" + f(bd.l_imb) + " l_m=" + f(bd.l_m) + " l_intra=" + f(bd.l_intra) +
         " l_inter=" + f(bd.l_inter) + " l_con=" + f(bd.l_con) + " alpha=" + f(bd.alpha) +
         " total=" + f(bd.total);
}

}  // namespace

TrainResult train(const LongTailDataset& data, const TrainConfig& cfg,
                  const LongTailDataset* eval_data, const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  if (cfg.model.input_dim != data.dim)
    throw ValidationError("train: model input_dim " + std::to_string(cfg.model.input_dim) +
                          " does not match dataset dim " + std::to_string(data.dim));
  if (cfg.model.num_classes != data.profile.num_classes())
    throw ValidationError("train: model num_classes does not match dataset");

  const bool dual = cfg.method == Method::kDbltr;
  std::vector<std::uint32_t> pool;
  if (dual) {
    pool = pool_classes(data, cfg.pool);
    if (pool.empty())
      throw ValidationError("train: tail sampler pool is empty for this dataset");
    if (pool.size() < cfg.n_way)
      throw ValidationError("train: pool has " + std::to_string(pool.size()) +
                            " classes, episodes need " + std::to_string(cfg.n_way));
  }

  const Margins margins =
      ldam_margins(data.profile, cfg.method == Method::kCrossEntropy ? 0.0 : cfg.margin_h);
  const std::vector<double> drw_weights =
      cfg.drw ? drw_class_weights(data.profile, cfg.drw_beta) : std::vector<double>{};
  const std::vector<double> no_weights;

  TrainResult result;
  result.params = init_params(cfg.model, Rng::derive(cfg.seed, kInitStream));
  Rng uniform_rng(Rng::derive(cfg.seed, kUniformStream));
  Rng tail_rng(Rng::derive(cfg.seed, kTailStream));
  SgdState state;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double alpha = 1.0;
    if (dual)
      alpha = cfg.alpha_override ? *cfg.alpha_override : alpha_schedule(epoch, cfg.epochs);
    const double lr = lr_at(epoch, cfg);
    const bool drw_active = cfg.drw && epoch >= cfg.resolved_drw_epoch();
    const std::vector<double>& weights = drw_active ? drw_weights : no_weights;

    LossBreakdown epoch_bd;
    epoch_bd.alpha = alpha;
    auto batches = uniform_batches(data.size(), cfg.batch_size, uniform_rng);
    for (std::size_t step = 0; step < batches.size(); ++step) {
      StepContext ctx{data, cfg, margins, weights, pool, tail_rng, alpha};
      auto [objective, bd] = build_step(ctx, result.params, batches[step]);
      if (!std::isfinite(bd.total))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) + " (" + step_report(bd) + ")");
      backward(objective);
      sgd_step(result.params, state, lr, cfg.momentum, cfg.weight_decay, cfg.decay_biases);
      result.params.check_finite();

      epoch_bd.l_imb += bd.l_imb;
      epoch_bd.l_m += bd.l_m;
      epoch_bd.l_intra += bd.l_intra;
      epoch_bd.l_inter += bd.l_inter;
      epoch_bd.inter_empty = epoch_bd.inter_empty || bd.inter_empty;
    }
    const double inv = 1.0 / static_cast<double>(batches.size());
    epoch_bd.l_imb *= inv;
    epoch_bd.l_m *= inv;
    epoch_bd.l_intra *= inv;
    epoch_bd.l_inter *= inv;
    // Derived fields recomputed from the averaged components so the record's
    // arithmetic identities hold exactly.
    epoch_bd.l_con = epoch_bd.l_m + epoch_bd.l_intra + cfg.lambda_inter * epoch_bd.l_inter;
    epoch_bd.total = alpha * epoch_bd.l_imb + (1.0 - alpha) * epoch_bd.l_con;
    result.history.push_back(epoch_bd);
    if (on_epoch) on_epoch(epoch, epoch_bd);
  }

  const LongTailDataset& eval_set = eval_data ? *eval_data : data;
  result.eval = evaluate(result.params, eval_set, data.splits);
  return result;
}

}  // namespace dbltr
