// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "boost.hpp"
#include "toy.hpp"

using namespace ueppr;

namespace {

double plain_dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("hydration adds the boost term to the dot product") {
    const std::vector<double> p{0.6, 0.8}, q{0.6, 0.8}, f{0.5}, w{2.0};
    const auto hp = hydrate_product(p, f);
    const auto hq = hydrate_query(q, w);
    CHECK(hp == std::vector<double>{0.6, 0.8, 0.5});
    CHECK(plain_dot(hp, hq) == doctest::Approx(plain_dot(p, q) + 1.0));

    Rng rng(1);
    double worst = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t d = 1 + rng.index(32), m = 1 + rng.index(4);
        std::vector<double> a(d), b(d), ff(m), ww(m);
        for (auto& x : a) x = rng.normal();
        for (auto& x : b) x = rng.normal();
        for (auto& x : ff) x = rng.uniform();
        for (auto& x : ww) x = rng.uniform(0, 2);
        worst = std::max(worst, std::abs(plain_dot(hydrate_product(a, ff), hydrate_query(b, ww)) -
                                         (plain_dot(a, b) + plain_dot(ff, ww))));
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("hydrated exact retrieval equals rescoring with the boost term") {
    Rng rng(2);
    VectorSet vs;
    vs.dim = 8;
    Matrix f(500, 2);
    for (std::size_t i = 0; i < 500; ++i) {
        std::vector<float> v(8);
        for (auto& x : v) x = float(rng.normal());
        vs.add(i + 1, v);
        f(i, 0) = rng.uniform();
        f(i, 1) = i % 3 ? 0.0 : rng.uniform();
    }
    const auto idx = VectorIndex::build_exact(hydrate(vs, f, 2));
    CHECK(idx.dim() == 10);
    for (int t = 0; t < 5; ++t) {
        std::vector<float> q(8);
        for (auto& x : q) x = float(rng.normal());
        const std::vector<double> w{rng.uniform(0, 2), rng.uniform(0, 2)};
        const auto hits = idx.knn(hydrate_query(std::span<const float>(q), w), 20);
        std::vector<Hit> oracle;
        for (std::size_t i = 0; i < 500; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 8; ++j) s += double(vs.row(i)[j]) * double(q[j]);
            s += double(float(f(i, 0))) * double(float(w[0]));
            s += double(float(f(i, 1))) * double(float(w[1]));
            oracle.push_back({vs.ids[i], s});
        }
        std::sort(oracle.begin(), oracle.end(), hit_before);
        oracle.resize(20);
        CHECK(hits == oracle);
    }
    CHECK_THROWS_AS(hydrate(vs, f, 3), Error);
}

TEST_CASE("zero weights leave the ranking unchanged") {
    Rng rng(3);
    VectorSet vs;
    vs.dim = 4;
    Matrix f(200, 3);
    for (std::size_t i = 0; i < 200; ++i) {
        std::vector<float> v(4);
        for (auto& x : v) x = float(rng.normal());
        vs.add(i + 10, v);
        for (std::size_t j = 0; j < 3; ++j) f(i, j) = rng.uniform();
    }
    const auto plain = VectorIndex::build_exact(vs);
    const auto boosted = VectorIndex::build_exact(hydrate(vs, f, 3));
    std::vector<float> q{0.3f, -1.0f, 0.5f, 2.0f};
    CHECK(plain.knn(q, 50) == boosted.knn(hydrate_query(std::span<const float>(q), std::vector<double>(3, 0.0)), 50));
}

TEST_CASE("quality scaling maps the corpus range onto [0, 1]") {
    std::vector<ProductDoc> docs;
    for (int i = 0; i < 5; ++i) {
        auto p = toy::product(i + 1, "vase");
        p.quality = {double(i), 7.0, 10.0 - 2 * i};
        docs.push_back(p);
    }
    const ProductCorpus corpus(docs);
    const auto s = QualityScaler::fit(corpus);
    const Matrix m = quality_matrix(corpus, s);
    CHECK(m(0, 0) == 0.0);
    CHECK(m(4, 0) == 1.0);
    CHECK(m(2, 0) == doctest::Approx(0.5));
    CHECK(m(3, 1) == 0.0);  // constant column
    CHECK(m(0, 2) == 1.0);
    CHECK(s.apply(std::vector<double>{9.0, 7.0, -5.0}) == std::vector<double>{1.0, 0.0, 0.0});
    CHECK_THROWS_AS(s.apply(std::vector<double>{1.0}), Error);
}

TEST_CASE("multiplicative reference contrasts with additive boosting") {
    CHECK(multiplicative_boost_reference(0.7, 1.0) == 0.7);
    CHECK(multiplicative_boost_reference(0.0, 123.0) == 0.0);
    // Items as (R, Q): multiplicative prefers B, additive with weight 1 prefers C.
    const double ra = 0.9, qa = 0.1, rb = 0.5, qb = 0.4, rc = 0.2, qc = 0.9;
    auto mult_order = std::vector<std::pair<double, char>>{{multiplicative_boost_reference(ra, qa), 'A'},
                                                           {multiplicative_boost_reference(rb, qb), 'B'},
                                                           {multiplicative_boost_reference(rc, qc), 'C'}};
    auto add_order = std::vector<std::pair<double, char>>{{ra + qa, 'A'}, {rb + qb, 'B'}, {rc + qc, 'C'}};
    std::sort(mult_order.rbegin(), mult_order.rend());
    std::sort(add_order.rbegin(), add_order.rend());
    CHECK(mult_order[0].second == 'B');
    CHECK(add_order[0].second == 'C');
}

TEST_CASE("boost weights file round trip") {
    BoostWeights w;
    w.w = {0.25, 1.5};
    w.bounds = {{0, 2}, {0, 2}};
    w.model_version = "deadbeef";
    w.recall_at_k = 0.4;
    w.k = 100;
    w.seed = 3;
    w.scaler.lo = {1, 2};
    w.scaler.hi = {5, 6};
    w.save("boost_roundtrip.json");
    const auto back = BoostWeights::load("boost_roundtrip.json");
    std::remove("boost_roundtrip.json");
    CHECK(back.w == w.w);
    CHECK(back.bounds == w.bounds);
    CHECK(back.model_version == "deadbeef");
    CHECK(back.scaler.hi == w.scaler.hi);
    CHECK_THROWS_AS(BoostWeights::from_json(R"({"w": [1]})"), Error);
}

TEST_CASE("optimize_boost_weights finds a planted quality effect") {
    // Targets are the best-quality products among each query's top-30 by dot product.
    Rng rng(5);
    VectorSet vs;
    vs.dim = 6;
    Matrix f(400, 1);
    for (std::size_t i = 0; i < 400; ++i) {
        std::vector<float> v(6);
        double s = 0;
        for (auto& x : v) {
            x = float(rng.normal());
            s += double(x) * x;
        }
        for (auto& x : v) x = float(x / std::sqrt(s));
        vs.add(i + 1, v);
        f(i, 0) = rng.uniform();
    }
    const auto exact = VectorIndex::build_exact(vs);
    std::vector<RecallQuery> queries;
    for (int t = 0; t < 80; ++t) {
        RecallQuery rq;
        rq.vector.resize(6);
        for (auto& x : rq.vector) x = float(rng.normal());
        auto top = exact.knn(rq.vector, 30);
        std::sort(top.begin(), top.end(), [&](const Hit& a, const Hit& b) { return f(a.id - 1, 0) > f(b.id - 1, 0); });
        rq.targets = {top[0].id};
        queries.push_back(rq);
    }
    BoostTuneOptions o;
    o.k = 10;
    o.budget = 30;
    o.seed = 2;
    const auto r = optimize_boost_weights(vs, f, queries, o);
    CHECK(r.trace.trials.front().x == std::vector<double>{0.0});
    CHECK(r.tune_recall > r.tune_recall_zero);
    CHECK(r.holdout_recall > r.holdout_recall_zero);
    CHECK(r.tune_queries + r.holdout_queries == queries.size());
    for (const auto& t : r.trace.trials) {
        CHECK(t.x[0] >= 0.0);
        CHECK(t.x[0] <= 2.0);
    }
    for (std::size_t i = 1; i < r.trace.best_trace.size(); ++i) CHECK(r.trace.best_trace[i] >= r.trace.best_trace[i - 1]);
    const auto again = optimize_boost_weights(vs, f, queries, o);
    CHECK(again.weights.w == r.weights.w);

    o.budget = 1;
    CHECK_THROWS_AS(optimize_boost_weights(vs, f, queries, o), Error);
}
