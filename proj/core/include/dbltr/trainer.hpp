#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dbltr/dataset.hpp"
#include "dbltr/losses.hpp"
#include "dbltr/model.hpp"
#include "dbltr/sampler.hpp"

namespace dbltr {

enum class Method {
  kCrossEntropy,  // single branch, no margins
  kLdam,          // single branch with LDAM margins (DRW optional)
  kDbltr,         // dual branch: LDAM margins + contrastive branch
};

struct Schedule {
  double base_lr = 0.1;
  std::size_t warmup_epochs = 5;          // linear ramp to base_lr
  std::vector<std::size_t> milestones = {160, 180};
  double decay = 0.1;
  bool cosine = false;  // cosine decay after warmup instead of milestones
};

struct TrainConfig {
  Method method = Method::kDbltr;
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  Schedule schedule;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool decay_biases = true;
  double margin_h = 0.5;
  double temperature = 0.6;
  double lambda_inter = 0.3;
  std::size_t n_way = 5;
  std::size_t n_support = 4;
  std::size_t n_query = 1;
  EpisodePool pool = EpisodePool::kMediumFew;
  bool use_metric = true;
  bool use_intra = true;
  bool use_inter = true;
  bool drw = false;
  std::size_t drw_epoch = 0;  // 0: ceil(0.8 * epochs)
  double drw_beta = 0.9999;
  bool include_positive_in_denominator = false;
  // Pins alpha to a constant instead of the parabolic schedule (1.0 turns the
  // contrastive branch's weight off entirely).
  std::optional<double> alpha_override;
  std::uint64_t seed = 0;
  ModelConfig model;

  std::size_t resolved_drw_epoch() const;
  void validate() const;
};

double lr_at(std::size_t epoch, const TrainConfig& cfg);

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// Gradients are consumed (leaf grads zeroed) by the step.
struct SgdState {
  std::vector<std::vector<double>> velocity;
};
void sgd_step(ModelParams& params, SgdState& state, double lr, double momentum,
              double weight_decay, bool decay_biases);

struct EvalReport {
  double overall = 0.0;
  double many = 0.0;    // NaN when the split is empty
  double medium = 0.0;
  double few = 0.0;
  std::vector<double> per_class;
  std::vector<std::size_t> per_class_correct;
  std::vector<std::size_t> per_class_total;
  std::size_t correct = 0;
  std::size_t total = 0;
};

// Argmax of classifier logits, ties to the lower class index; no margins and
// no contrastive machinery at inference. `splits` partitions class ids for
// the Many/Medium/Few columns (pass the training split when evaluating a
// held-out set).
EvalReport evaluate(const ModelParams& params, const LongTailDataset& data,
                    const ShotSplits& splits);
EvalReport evaluate(const ModelParams& params, const LongTailDataset& data);

struct TrainResult {
  ModelParams params;
  std::vector<LossBreakdown> history;  // one per epoch: mean of step records
  EvalReport eval;
};

using EpochCallback = std::function<void(std::size_t epoch, const LossBreakdown&)>;

// The full training loop: per uniform batch, one tail-sampler episode, both
// branch losses, one SGD step. Deterministic given cfg.seed. `eval_data`
// defaults to the training set; its per-split columns always use the training
// profile's partition.
TrainResult train(const LongTailDataset& data, const TrainConfig& cfg,
                  const LongTailDataset* eval_data = nullptr,
                  const EpochCallback& on_epoch = {});

}  // namespace dbltr
