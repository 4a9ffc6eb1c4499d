#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dbltr/autodiff.hpp"
#include "dbltr/dataset.hpp"

namespace dbltr {

// Per-class additive logit margins, delta_j = h / n_j^(1/4).
struct Margins {
  std::vector<double> delta;
};

Margins ldam_margins(const CountProfile& profile, double h);

// Class-probability vector for one sample: the ground-truth logit is shifted
// down by its class margin before the softmax; other logits are untouched.
// With all margins zero this is bit-for-bit a plain softmax.
Value ldam_probabilities(const Value& logits, std::uint32_t label, const Margins& margins);

// Mean over the batch of class_weights[y_i] * (-log p_{i,y_i}) with the
// margin-shifted probabilities above. Empty class_weights means all ones.
Value imbalanced_loss(const Value& logits, std::span<const std::uint32_t> labels,
                      const Margins& margins, std::span<const double> class_weights = {});

// Deferred re-weighting coefficients w_j proportional to (1-beta)/(1-beta^n_j),
// renormalized to mean 1.
std::vector<double> drw_class_weights(const CountProfile& profile, double beta);

// Mean embedding per episode-local class; embeddings is [S, e] with one local
// label per row, output is [n_way, e]. Every class needs >= 1 row.
Value prototypes(const Value& embeddings, std::span<const std::size_t> local_labels,
                 std::size_t n_way);

// Softmax over negated distances; invariant under a common shift of all
// distances.
Value metric_probabilities_from_distances(const Value& distances);

// Euclidean distances from one query embedding to each prototype row, then
// the distance softmax above.
Value metric_probabilities(const Value& query_embedding, const Value& prototypes);

// Mean over queries of -log p(true prototype). query_embeddings is [Q, e] with
// one episode-local label per row.
Value metric_loss(const Value& query_embeddings, const Value& prototypes,
                  std::span<const std::size_t> query_labels);

Value cosine_similarity(const Value& u, const Value& v);

struct ContrastiveOptions {
  double temperature = 0.6;
  // The written form of both contrastive losses excludes the positive pair
  // from the denominator (and can therefore go negative). Setting this adds
  // the positive back, giving the conventional InfoNCE shape.
  bool include_positive_in_denominator = false;
};

// Queries against the projected prototypes of their own episode: positive is
// the query's class prototype, negatives are the other prototypes. Needs
// n_way >= 2.
Value intra_cl(const Value& query_projections, std::span<const std::size_t> query_labels,
               const Value& prototype_projections, const ContrastiveOptions& opts);

struct InterClResult {
  Value loss;
  bool empty_head = false;  // no head instances: loss is a constant 0
};

// Queries keep the same positives; the denominator ranges over the projected
// head instances of the imbalanced branch. head_projections may be undefined
// or have zero rows, in which case the loss is 0 and the step is flagged.
InterClResult inter_cl(const Value& query_projections,
                       std::span<const std::size_t> query_labels,
                       const Value& prototype_projections, const Value& head_projections,
                       const ContrastiveOptions& opts);

// l_m + l_intra + lambda * l_inter
Value colb_loss(const Value& l_m, const Value& l_intra, const Value& l_inter, double lambda);

// alpha = 1 - (epoch / max_epochs)^2, epoch in [1, max_epochs]
double alpha_schedule(std::size_t epoch, std::size_t max_epochs);

// alpha * l_imb + (1 - alpha) * l_con
Value total_loss(const Value& l_imb, const Value& l_con, double alpha);

// Scalar record of one training step (or a per-epoch mean of steps).
struct LossBreakdown {
  double l_imb = 0.0;
  double l_m = 0.0;
  double l_intra = 0.0;
  double l_inter = 0.0;
  double l_con = 0.0;
  double alpha = 1.0;
  double total = 0.0;
  bool inter_empty = false;  // some step had no head instances
};

}  // namespace dbltr
