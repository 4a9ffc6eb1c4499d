#pragma once

// Straight-line, graph-free reimplementations of every loss formula, used
// only as test oracles against the library. No code is shared with the
// library's autodiff or loss modules; everything here works on plain arrays
// and evaluates the formulas naively.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

struct OracleResult {
  double value = 0.0;
  std::vector<std::pair<std::string, double>> terms;
};

// Margin-shifted class probabilities for one sample: the true class logit is
// reduced by its margin, every class then goes through one softmax.
Vec ldam_probabilities(const Vec& logits, std::size_t label, const Vec& deltas);

// -log of the true-class probability above.
double ldam_cross_entropy(const Vec& logits, std::size_t label, const Vec& deltas);

// Weighted batch mean of the cross-entropies; empty weights mean all ones.
OracleResult imbalanced_loss(const Mat& logits, const std::vector<std::uint32_t>& labels,
                             const Vec& deltas, const Vec& class_weights = {});

// exp(-d_j) normalized over prototypes.
Vec metric_probabilities(const Vec& distances);

double euclidean(const Vec& a, const Vec& b);

// Per-class mean of the support rows.
Mat prototypes(const Mat& support, const std::vector<std::size_t>& local_labels,
               std::size_t n_way);

// Mean over queries of -log p(true prototype), distances computed here from
// raw embeddings.
OracleResult metric_loss(const Mat& queries, const Mat& protos,
                         const std::vector<std::size_t>& labels);

double cosine(const Vec& u, const Vec& v);

// One query's intra-branch term from its similarities to all prototypes.
double intra_term(const Vec& sims, std::size_t label, double tau, bool include_positive);

// Episode mean over raw projected features.
OracleResult intra_loss(const Mat& query_proj, const std::vector<std::size_t>& labels,
                        const Mat& proto_proj, double tau, bool include_positive);

// One query's inter-branch term: positive similarity vs head similarities.
double inter_term(double positive_sim, const Vec& head_sims, double tau,
                  bool include_positive);

OracleResult inter_loss(const Mat& query_proj, const std::vector<std::size_t>& labels,
                        const Mat& proto_proj, const Mat& head_proj, double tau,
                        bool include_positive);

double colb(double l_m, double l_intra, double l_inter, double lambda);
double total(double l_imb, double l_con, double alpha);

}  // namespace oracle
