// SPDX-License-Identifier: Apache-2.0
#include "boost.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace ueppr {

QualityScaler QualityScaler::fit(const ProductCorpus& corpus) {
    QualityScaler s;
    const std::size_t m = corpus.quality_dim();
    if (corpus.empty() || m == 0) return s;
    s.lo = corpus[0].quality;
    s.hi = corpus[0].quality;
    for (const auto& p : corpus.products())
        for (std::size_t j = 0; j < m; ++j) {
            s.lo[j] = std::min(s.lo[j], p.quality[j]);
            s.hi[j] = std::max(s.hi[j], p.quality[j]);
        }
    return s;
}

std::vector<double> QualityScaler::apply(std::span<const double> raw) const {
    if (raw.size() != dim())
        fail(ErrorCode::invalid_argument, "quality dimension " + std::to_string(raw.size()) + " does not match scaler " +
                                              std::to_string(dim()));
    std::vector<double> out(raw.size(), 0.0);
    for (std::size_t j = 0; j < raw.size(); ++j)
        if (hi[j] > lo[j]) out[j] = std::clamp((raw[j] - lo[j]) / (hi[j] - lo[j]), 0.0, 1.0);
    return out;
}

Matrix quality_matrix(const ProductCorpus& corpus, const QualityScaler& scaler) {
    Matrix m(corpus.size(), scaler.dim());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto row = scaler.apply(corpus[i].quality);
        std::copy(row.begin(), row.end(), m.row(i));
    }
    return m;
}

std::vector<double> hydrate_product(std::span<const double> p, std::span<const double> f) {
    std::vector<double> out(p.begin(), p.end());
    out.insert(out.end(), f.begin(), f.end());
    return out;
}

std::vector<double> hydrate_query(std::span<const double> q, std::span<const double> w) {
    std::vector<double> out(q.begin(), q.end());
    out.insert(out.end(), w.begin(), w.end());
    return out;
}

std::vector<float> hydrate_query(std::span<const float> q, std::span<const double> w) {
    std::vector<float> out(q.begin(), q.end());
    for (double x : w) out.push_back(float(x));
    return out;
}

VectorSet hydrate(const VectorSet& products, const Matrix& quality, std::size_t expected_m) {
    if (quality.cols != expected_m)
        fail(ErrorCode::invalid_argument, "quality width " + std::to_string(quality.cols) + " does not match m = " +
                                              std::to_string(expected_m));
    if (quality.rows != products.size())
        fail(ErrorCode::invalid_argument, "quality rows do not match the number of product vectors");
    VectorSet out;
    out.dim = products.dim + expected_m;
    out.ids = products.ids;
    out.data.reserve(out.dim * products.size());
    for (std::size_t i = 0; i < products.size(); ++i) {
        out.data.insert(out.data.end(), products.row(i), products.row(i) + products.dim);
        for (std::size_t j = 0; j < expected_m; ++j) out.data.push_back(float(quality(i, j)));
    }
    return out;
}

double multiplicative_boost_reference(double relevance, double quality) { return relevance * quality; }

// ---------------------------------------------------------------------------
// Weights file

std::string BoostWeights::to_json() const {
    nlohmann::json b = nlohmann::json::array();
    for (const auto& [lo, hi] : bounds) b.push_back({lo, hi});
    nlohmann::json j{{"model_version", model_version},
                     {"bounds", b},
                     {"w", w},
                     {"recall_at_k", recall_at_k},
                     {"k", k},
                     {"seed", seed},
                     {"quality_min", scaler.lo},
                     {"quality_max", scaler.hi}};
    return j.dump(2);
}

BoostWeights BoostWeights::from_json(const std::string& text) {
    BoostWeights out;
    try {
        const auto j = nlohmann::json::parse(text);
        out.model_version = j.at("model_version").get<std::string>();
        out.w = j.at("w").get<std::vector<double>>();
        for (const auto& b : j.at("bounds")) out.bounds.emplace_back(b.at(0).get<double>(), b.at(1).get<double>());
        out.recall_at_k = j.value("recall_at_k", 0.0);
        out.k = j.value("k", std::size_t(0));
        out.seed = j.value("seed", std::uint64_t(0));
        out.scaler.lo = j.value("quality_min", std::vector<double>{});
        out.scaler.hi = j.value("quality_max", std::vector<double>{});
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse, std::string("boost weights: ") + e.what());
    }
    for (double x : out.w)
        if (!std::isfinite(x)) fail(ErrorCode::parse, "boost weights: non-finite weight");
    if (out.scaler.lo.size() != out.scaler.hi.size() ||
        (!out.scaler.lo.empty() && out.scaler.lo.size() != out.w.size()))
        fail(ErrorCode::parse, "boost weights: quality range does not match w");
    return out;
}

void BoostWeights::save(const std::string& path) const { write_file(path, to_json() + "\n"); }

BoostWeights BoostWeights::load(const std::string& path) { return from_json(read_file(path)); }

// ---------------------------------------------------------------------------
// Optimization

double boosted_recall(const VectorIndex& hydrated, const std::vector<RecallQuery>& queries, std::span<const double> w,
                      std::size_t k) {
    if (queries.empty()) return 0.0;
    double total = 0;
    std::vector<std::uint64_t> ids;
    for (const auto& q : queries) {
        const auto hq = hydrate_query(std::span<const float>(q.vector), w);
        ids.clear();
        for (const auto& h : hydrated.knn(hq, k)) ids.push_back(h.id);
        total += recall_at_k(ids, q.targets, k);
    }
    return total / double(queries.size());
}

BoostTuneResult optimize_boost_weights(const VectorSet& product_vectors, const Matrix& quality,
                                       const std::vector<RecallQuery>& queries, const BoostTuneOptions& o) {
    const std::size_t m = quality.cols;
    if (m == 0) fail(ErrorCode::invalid_argument, "boost tuning needs at least one quality feature");
    if (o.budget < m + 1)
        fail(ErrorCode::invalid_argument, "boost budget " + std::to_string(o.budget) + " is below m + 1 = " +
                                              std::to_string(m + 1));
    if (!(o.lo <= o.hi)) fail(ErrorCode::invalid_argument, "boost bounds need lo <= hi");
    if (!(o.holdout_fraction >= 0.0 && o.holdout_fraction < 1.0))
        fail(ErrorCode::invalid_argument, "holdout_fraction must lie in [0, 1)");
    if (queries.empty()) fail(ErrorCode::invalid_argument, "boost tuning needs evaluation queries");
    if (o.k == 0) fail(ErrorCode::invalid_argument, "boost tuning needs k >= 1");

    const VectorIndex index = VectorIndex::build_exact(hydrate(product_vectors, quality, m));

    std::vector<std::size_t> order(queries.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(o.seed ^ 0x5bd1e995ULL);
    rng.shuffle(order);
    const std::size_t n_hold = std::size_t(std::floor(o.holdout_fraction * double(queries.size())));
    std::vector<RecallQuery> tune, hold;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_hold ? hold : tune).push_back(queries[order[i]]);

    std::vector<ParamRange> space;
    for (std::size_t j = 0; j < m; ++j) space.push_back({"w" + std::to_string(j), o.lo, o.hi});
    OptimizerOptions opt;
    opt.warm_start = {std::vector<double>(m, std::clamp(0.0, o.lo, o.hi))};
    auto objective = [&](const std::vector<double>& w) { return boosted_recall(index, tune, w, o.k); };

    BoostTuneResult res;
    res.trace = maximize(space, objective, o.budget, o.seed, opt);
    const std::vector<double> zero(m, 0.0);
    res.tune_queries = tune.size();
    res.holdout_queries = hold.size();
    res.tune_recall_zero = res.trace.trials.front().value;
    res.tune_recall = res.trace.best_value;
    res.holdout_recall_zero = boosted_recall(index, hold, zero, o.k);
    res.holdout_recall = boosted_recall(index, hold, res.trace.best_x, o.k);

    res.weights.w = res.trace.best_x;
    res.weights.bounds.assign(m, {o.lo, o.hi});
    res.weights.k = o.k;
    res.weights.seed = o.seed;
    res.weights.recall_at_k = hold.empty() ? res.tune_recall : res.holdout_recall;
    return res;
}

}  // namespace ueppr
