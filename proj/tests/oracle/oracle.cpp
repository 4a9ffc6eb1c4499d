#include "oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace oracle {

Vec ldam_probabilities(const Vec& logits, std::size_t label, const Vec& deltas) {
  Vec shifted = logits;
  shifted[label] -= deltas.at(label);
  double denom = 0.0;
  for (double z : shifted) denom += std::exp(z);
  Vec p(shifted.size());
  for (std::size_t j = 0; j < shifted.size(); ++j) p[j] = std::exp(shifted[j]) / denom;
  return p;
}

double ldam_cross_entropy(const Vec& logits, std::size_t label, const Vec& deltas) {
  return -std::log(ldam_probabilities(logits, label, deltas)[label]);
}

OracleResult imbalanced_loss(const Mat& logits, const std::vector<std::uint32_t>& labels,
                             const Vec& deltas, const Vec& class_weights) {
  if (logits.empty() || logits.size() != labels.size())
    throw std::invalid_argument("oracle::imbalanced_loss: bad batch");
  OracleResult r;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double ce = ldam_cross_entropy(logits[i], labels[i], deltas);
    if (!class_weights.empty()) ce *= class_weights.at(labels[i]);
    r.terms.emplace_back("sample_" + std::to_string(i), ce);
    r.value += ce;
  }
  r.value /= static_cast<double>(logits.size());
  return r;
}

Vec metric_probabilities(const Vec& distances) {
  double denom = 0.0;
  for (double d : distances) denom += std::exp(-d);
  Vec p(distances.size());
  for (std::size_t j = 0; j < distances.size(); ++j) p[j] = std::exp(-distances[j]) / denom;
  return p;
}

double euclidean(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

Mat prototypes(const Mat& support, const std::vector<std::size_t>& local_labels,
               std::size_t n_way) {
  if (support.empty()) throw std::invalid_argument("oracle::prototypes: no support rows");
  const std::size_t dim = support[0].size();
  Mat protos(n_way, Vec(dim, 0.0));
  std::vector<std::size_t> counts(n_way, 0);
  for (std::size_t i = 0; i < support.size(); ++i) {
    const std::size_t c = local_labels.at(i);
    counts.at(c) += 1;
    for (std::size_t j = 0; j < dim; ++j) protos[c][j] += support[i][j];
  }
  for (std::size_t c = 0; c < n_way; ++c) {
    if (counts[c] == 0) throw std::invalid_argument("oracle::prototypes: empty class");
    for (std::size_t j = 0; j < dim; ++j) protos[c][j] /= static_cast<double>(counts[c]);
  }
  return protos;
}

OracleResult metric_loss(const Mat& queries, const Mat& protos,
                         const std::vector<std::size_t>& labels) {
  OracleResult r;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    Vec d(protos.size());
    for (std::size_t j = 0; j < protos.size(); ++j) d[j] = euclidean(queries[i], protos[j]);
    const double term = -std::log(metric_probabilities(d)[labels.at(i)]);
    r.terms.emplace_back("query_" + std::to_string(i), term);
    r.value += term;
  }
  r.value /= static_cast<double>(queries.size());
  return r;
}

double cosine(const Vec& u, const Vec& v) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

double intra_term(const Vec& sims, std::size_t label, double tau, bool include_positive) {
  double denom = 0.0;
  for (std::size_t n = 0; n < sims.size(); ++n)
    if (n != label || include_positive) denom += std::exp(sims[n] / tau);
  return -std::log(std::exp(sims[label] / tau) / denom);
}

OracleResult intra_loss(const Mat& query_proj, const std::vector<std::size_t>& labels,
                        const Mat& proto_proj, double tau, bool include_positive) {
  OracleResult r;
  for (std::size_t i = 0; i < query_proj.size(); ++i) {
    Vec sims(proto_proj.size());
    for (std::size_t n = 0; n < proto_proj.size(); ++n)
      sims[n] = cosine(query_proj[i], proto_proj[n]);
    const double term = intra_term(sims, labels.at(i), tau, include_positive);
    r.terms.emplace_back("query_" + std::to_string(i), term);
    r.value += term;
  }
  r.value /= static_cast<double>(query_proj.size());
  return r;
}

double inter_term(double positive_sim, const Vec& head_sims, double tau,
                  bool include_positive) {
  double denom = 0.0;
  for (double s : head_sims) denom += std::exp(s / tau);
  if (include_positive) denom += std::exp(positive_sim / tau);
  return -std::log(std::exp(positive_sim / tau) / denom);
}

OracleResult inter_loss(const Mat& query_proj, const std::vector<std::size_t>& labels,
                        const Mat& proto_proj, const Mat& head_proj, double tau,
                        bool include_positive) {
  OracleResult r;
  if (head_proj.empty()) return r;  // contribution 0
  for (std::size_t i = 0; i < query_proj.size(); ++i) {
    const double pos = cosine(query_proj[i], proto_proj[labels.at(i)]);
    Vec head_sims(head_proj.size());
    for (std::size_t h = 0; h < head_proj.size(); ++h)
      head_sims[h] = cosine(query_proj[i], head_proj[h]);
    const double term = inter_term(pos, head_sims, tau, include_positive);
    r.terms.emplace_back("query_" + std::to_string(i), term);
    r.value += term;
  }
  r.value /= static_cast<double>(query_proj.size());
  return r;
}

double colb(double l_m, double l_intra, double l_inter, double lambda) {
  return l_m + l_intra + l_inter * lambda;
}

double total(double l_imb, double l_con, double alpha) {
  return alpha * l_imb + (1.0 - alpha) * l_con;
}

}  // namespace oracle
