// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ann.hpp"
#include "model.hpp"

namespace ueppr {

/// Corpus-wide min-max scaling of quality features to [0, 1].
struct QualityScaler {
    std::vector<double> lo, hi;

    static QualityScaler fit(const ProductCorpus& corpus);
    std::size_t dim() const { return lo.size(); }
    /// Constant features map to 0; values outside the fitted range are clamped.
    std::vector<double> apply(std::span<const double> raw) const;
};

/// n x m matrix of scaled quality features in corpus order.
Matrix quality_matrix(const ProductCorpus& corpus, const QualityScaler& scaler);

std::vector<double> hydrate_product(std::span<const double> p, std::span<const double> f);
std::vector<double> hydrate_query(std::span<const double> q, std::span<const double> w);
std::vector<float> hydrate_query(std::span<const float> q, std::span<const double> w);

/// Appends row i of `quality` to vector i. Throws on row or width mismatch.
VectorSet hydrate(const VectorSet& products, const Matrix& quality, std::size_t expected_m);

/// R(q,p) * Q(p); reference scorer for contrasting with additive boosting.
double multiplicative_boost_reference(double relevance, double quality);

struct BoostWeights {
    std::vector<double> w;
    std::vector<std::pair<double, double>> bounds;
    std::string model_version;
    double recall_at_k = 0.0;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    QualityScaler scaler;

    std::string to_json() const;
    static BoostWeights from_json(const std::string& text);
    void save(const std::string& path) const;
    static BoostWeights load(const std::string& path);
};

struct BoostTuneOptions {
    std::size_t k = 100;
    std::size_t budget = 200;
    double lo = 0.0;
    double hi = 2.0;
    std::uint64_t seed = 1;
    /// Fraction of queries held out from tuning and used only for reporting.
    double holdout_fraction = 0.5;
};

struct BoostTuneResult {
    BoostWeights weights;
    double tune_recall_zero = 0.0;
    double tune_recall = 0.0;
    double holdout_recall_zero = 0.0;
    double holdout_recall = 0.0;
    std::size_t tune_queries = 0;
    std::size_t holdout_queries = 0;
    OptimizeResult trace;
};

/// Mean Recall@K over `queries` retrieving from `hydrated` with q' = [q; w].
double boosted_recall(const VectorIndex& hydrated, const std::vector<RecallQuery>& queries, std::span<const double> w,
                      std::size_t k);

/// Black-box search over w in [lo, hi]^m maximizing Recall@K on the tuning
/// share of `queries`, with w = 0 evaluated first. Exact retrieval over
/// hydrated product vectors. Throws when budget < m + 1.
BoostTuneResult optimize_boost_weights(const VectorSet& product_vectors, const Matrix& quality,
                                       const std::vector<RecallQuery>& queries, const BoostTuneOptions& options);

}  // namespace ueppr
