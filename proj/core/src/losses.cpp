#include "dbltr/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dbltr {

Margins ldam_margins(const CountProfile& profile, double h) {
  if (h < 0.0) throw ValidationError("ldam_margins: h must be >= 0");
  profile.validate();
  Margins m;
  m.delta.reserve(profile.num_classes());
  for (std::size_t n : profile.counts)
    m.delta.push_back(h / std::sqrt(std::sqrt(static_cast<double>(n))));
  return m;
}

namespace {

void check_logits(const Value& logits, std::size_t classes, std::uint32_t label,
                  const char* who) {
  if (label >= classes)
    throw ValidationError(std::string(who) + ": label " + std::to_string(label) +
                          " out of range for " + std::to_string(classes) + " classes");
  for (double z : logits.data())
    if (!std::isfinite(z)) throw NumericError(std::string(who) + ": non-finite logits");
}

// Logits with the ground-truth entry shifted down by its margin. Subtracting
// an all-zero margin vector keeps every bit of the input.
Value margin_shift(const Value& logits, std::uint32_t label, const Margins& margins) {
  std::vector<double> shift(logits.size(), 0.0);
  shift[label] = margins.delta.at(label);
  return sub(logits, Value::leaf(logits.shape(), std::move(shift)));
}

// -log p_label of softmax(shifted) without forming the probabilities.
Value cross_entropy_from_logits(const Value& shifted, std::uint32_t label) {
  std::vector<double> onehot(shifted.size(), 0.0);
  onehot[label] = 1.0;
  Value picked = sum(mul(shifted, Value::leaf(shifted.shape(), std::move(onehot))));
  return sub(logsumexp(shifted), picked);
}

}  // namespace

Value ldam_probabilities(const Value& logits, std::uint32_t label, const Margins& margins) {
  if (logits.rank() != 1)
    throw ValidationError("ldam_probabilities: expects a logit vector, got " +
                          shape_str(logits.shape()));
  if (margins.delta.size() != logits.size())
    throw ValidationError("ldam_probabilities: " + std::to_string(margins.delta.size()) +
                          " margins for " + std::to_string(logits.size()) + " classes");
  check_logits(logits, logits.size(), label, "ldam_probabilities");
  return softmax(margin_shift(logits, label, margins));
}

Value imbalanced_loss(const Value& logits, std::span<const std::uint32_t> labels,
                      const Margins& margins, std::span<const double> class_weights) {
  if (logits.rank() != 2)
    throw ValidationError("imbalanced_loss: expects [batch, classes] logits, got " +
                          shape_str(logits.shape()));
  const std::size_t batch = logits.shape()[0];
  const std::size_t classes = logits.shape()[1];
  if (batch == 0 || labels.empty()) throw ValidationError("imbalanced_loss: empty batch");
  if (labels.size() != batch)
    throw ValidationError("imbalanced_loss: " + std::to_string(labels.size()) +
                          " labels for batch of " + std::to_string(batch));
  if (!class_weights.empty() && class_weights.size() != classes)
    throw ValidationError("imbalanced_loss: class_weights size mismatch");
  if (margins.delta.size() != classes)
    throw ValidationError("imbalanced_loss: margin count mismatch");

  std::vector<Value> terms;
  terms.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    Value z = row(logits, i);
    check_logits(z, classes, labels[i], "imbalanced_loss");
    Value ce = cross_entropy_from_logits(margin_shift(z, labels[i], margins), labels[i]);
    if (!class_weights.empty()) ce = scalar_mul(ce, class_weights[labels[i]]);
    terms.push_back(std::move(ce));
  }
  return mean(concat_rows(terms));
}

std::vector<double> drw_class_weights(const CountProfile& profile, double beta) {
  if (beta < 0.0 || beta >= 1.0)
    throw ValidationError("drw_class_weights: beta must be in [0, 1)");
  profile.validate();
  std::vector<double> w(profile.num_classes());
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double effective =
        beta == 0.0 ? 1.0
                    : (1.0 - std::pow(beta, static_cast<double>(profile.counts[j]))) /
                          (1.0 - beta);
    w[j] = 1.0 / effective;
  }
  double mean_w = 0.0;
  for (double x : w) mean_w += x;
  mean_w /= static_cast<double>(w.size());
  for (double& x : w) x /= mean_w;
  return w;
}

Value prototypes(const Value& embeddings, std::span<const std::size_t> local_labels,
                 std::size_t n_way) {
  if (embeddings.rank() != 2)
    throw ValidationError("prototypes: expects [samples, dim] embeddings, got " +
                          shape_str(embeddings.shape()));
  const std::size_t rows = embeddings.shape()[0];
  if (local_labels.size() != rows)
    throw ValidationError("prototypes: label count does not match embedding rows");
  std::vector<std::size_t> per_class(n_way, 0);
  for (std::size_t l : local_labels) {
    if (l >= n_way)
      throw ValidationError("prototypes: local label " + std::to_string(l) +
                            " out of range for " + std::to_string(n_way) + " classes");
    ++per_class[l];
  }
  for (std::size_t j = 0; j < n_way; ++j)
    if (per_class[j] == 0)
      throw ValidationError("prototypes: class " + std::to_string(j) +
                            " has no support embeddings");
  // Averaging as a constant [n_way, rows] matrix keeps the mean inside the graph.
  std::vector<double> avg(n_way * rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    avg[local_labels[i] * rows + i] = 1.0 / static_cast<double>(per_class[local_labels[i]]);
  return matmul(Value::leaf({n_way, rows}, std::move(avg)), embeddings);
}

Value metric_probabilities_from_distances(const Value& distances) {
  if (distances.rank() != 1)
    throw ValidationError("metric_probabilities: expects a distance vector, got " +
                          shape_str(distances.shape()));
  if (distances.size() == 0) throw ValidationError("metric_probabilities: no prototypes");
  return softmax(neg(distances));
}

namespace {

// Euclidean distances from one embedding to every row of a prototype matrix.
Value distances_to_prototypes(const Value& embedding, const Value& protos) {
  const std::size_t n = protos.shape().at(0);
  std::vector<Value> d;
  d.reserve(n);
  for (std::size_t j = 0; j < n; ++j)
    d.push_back(sqrt(squared_l2_distance(embedding, row(protos, j))));
  return concat_rows(d);
}

}  // namespace

Value metric_probabilities(const Value& query_embedding, const Value& protos) {
  if (protos.rank() != 2)
    throw ValidationError("metric_probabilities: prototypes must be [n, dim], got " +
                          shape_str(protos.shape()));
  return metric_probabilities_from_distances(distances_to_prototypes(query_embedding, protos));
}

Value metric_loss(const Value& query_embeddings, const Value& protos,
                  std::span<const std::size_t> query_labels) {
  if (query_embeddings.rank() != 2 || protos.rank() != 2)
    throw ValidationError("metric_loss: expects [queries, dim] and [n, dim] matrices");
  const std::size_t q = query_embeddings.shape()[0];
  const std::size_t n = protos.shape()[0];
  if (q == 0) throw ValidationError("metric_loss: no queries");
  if (query_labels.size() != q)
    throw ValidationError("metric_loss: label count does not match query rows");
  std::vector<Value> terms;
  terms.reserve(q);
  for (std::size_t i = 0; i < q; ++i) {
    if (query_labels[i] >= n)
      throw ValidationError("metric_loss: local label " + std::to_string(query_labels[i]) +
                            " out of range for " + std::to_string(n) + " prototypes");
    Value d = distances_to_prototypes(row(query_embeddings, i), protos);
    // -log softmax(-d)[y] = d_y + logsumexp(-d)
    std::vector<double> onehot(n, 0.0);
    onehot[query_labels[i]] = 1.0;
    Value d_true = sum(mul(d, Value::leaf({n}, std::move(onehot))));
    terms.push_back(add(d_true, logsumexp(neg(d))));
  }
  return mean(concat_rows(terms));
}

Value cosine_similarity(const Value& u, const Value& v) {
  if (u.shape() != v.shape() || u.rank() != 1)
    throw ValidationError("cosine_similarity: expects two vectors of equal shape, got " +
                          shape_str(u.shape()) + " and " + shape_str(v.shape()));
  Value nu = sqrt(sum(mul(u, u)));
  Value nv = sqrt(sum(mul(v, v)));
  if (nu.item() == 0.0 || nv.item() == 0.0)
    throw ValidationError("cosine_similarity: zero-norm vector");
  return div(sum(mul(u, v)), mul(nu, nv));
}

namespace {

// log(sum over `terms` of exp(t / tau)) - positive / tau; shared shape of both
// contrastive losses.
Value contrastive_term(const Value& positive, std::vector<Value> denominator_terms,
                       double tau) {
  Value scaled_pos = scalar_mul(positive, 1.0 / tau);
  for (Value& t : denominator_terms) t = scalar_mul(t, 1.0 / tau);
  return sub(logsumexp(concat_rows(denominator_terms)), scaled_pos);
}

}  // namespace

Value intra_cl(const Value& query_projections, std::span<const std::size_t> query_labels,
               const Value& prototype_projections, const ContrastiveOptions& opts) {
  if (opts.temperature <= 0.0) throw ValidationError("intra_cl: temperature must be positive");
  if (prototype_projections.rank() != 2)
    throw ValidationError("intra_cl: prototype projections must be [n, dim]");
  const std::size_t n = prototype_projections.shape()[0];
  if (n < 2) throw ValidationError("intra-CL undefined for single-class episodes");
  const std::size_t q = query_projections.shape().at(0);
  if (q == 0 || query_labels.size() != q)
    throw ValidationError("intra_cl: query/label count mismatch");

  std::vector<Value> terms;
  terms.reserve(q);
  for (std::size_t i = 0; i < q; ++i) {
    const std::size_t y = query_labels[i];
    if (y >= n)
      throw ValidationError("intra_cl: local label out of range");
    Value qi = row(query_projections, i);
    Value positive;
    std::vector<Value> negatives;
    negatives.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      Value s = cosine_similarity(qi, row(prototype_projections, j));
      if (j == y) {
        positive = s;
        if (opts.include_positive_in_denominator) negatives.push_back(s);
      } else {
        negatives.push_back(s);
      }
    }
    terms.push_back(contrastive_term(positive, std::move(negatives), opts.temperature));
  }
  return mean(concat_rows(terms));
}

InterClResult inter_cl(const Value& query_projections,
                       std::span<const std::size_t> query_labels,
                       const Value& prototype_projections, const Value& head_projections,
                       const ContrastiveOptions& opts) {
  if (opts.temperature <= 0.0) throw ValidationError("inter_cl: temperature must be positive");
  const bool no_head = !head_projections.defined() || head_projections.size() == 0 ||
                       head_projections.shape().at(0) == 0;
  if (no_head) return {Value::scalar(0.0), true};
  if (head_projections.rank() != 2)
    throw ValidationError("inter_cl: head projections must be [n_head, dim]");
  const std::size_t n = prototype_projections.shape().at(0);
  const std::size_t heads = head_projections.shape()[0];
  const std::size_t q = query_projections.shape().at(0);
  if (q == 0 || query_labels.size() != q)
    throw ValidationError("inter_cl: query/label count mismatch");

  std::vector<Value> terms;
  terms.reserve(q);
  for (std::size_t i = 0; i < q; ++i) {
    const std::size_t y = query_labels[i];
    if (y >= n) throw ValidationError("inter_cl: local label out of range");
    Value qi = row(query_projections, i);
    Value positive = cosine_similarity(qi, row(prototype_projections, y));
    std::vector<Value> denom;
    denom.reserve(heads + 1);
    for (std::size_t h = 0; h < heads; ++h)
      denom.push_back(cosine_similarity(qi, row(head_projections, h)));
    if (opts.include_positive_in_denominator) denom.push_back(positive);
    terms.push_back(contrastive_term(positive, std::move(denom), opts.temperature));
  }
  return {mean(concat_rows(terms)), false};
}

Value colb_loss(const Value& l_m, const Value& l_intra, const Value& l_inter, double lambda) {
  if (lambda < 0.0) throw ValidationError("colb_loss: lambda must be >= 0");
  return add(add(l_m, l_intra), scalar_mul(l_inter, lambda));
}

double alpha_schedule(std::size_t epoch, std::size_t max_epochs) {
  if (epoch < 1 || epoch > max_epochs)
    throw ValidationError("alpha_schedule: epoch " + std::to_string(epoch) +
                          " outside [1, " + std::to_string(max_epochs) + "]");
  const double r = static_cast<double>(epoch) / static_cast<double>(max_epochs);
  return 1.0 - r * r;
}

Value total_loss(const Value& l_imb, const Value& l_con, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw ValidationError("total_loss: alpha must be in [0, 1]");
  return add(scalar_mul(l_imb, alpha), scalar_mul(l_con, 1.0 - alpha));
}

}  // namespace dbltr
