// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <unordered_map>

#include "toy.hpp"

using namespace ueppr;

namespace {

double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

std::vector<double> row_of(const TwoTowerModel& m, const std::string& token) {
    const auto& t = m.param("token_table");
    const std::size_t de = m.config().embed_dim;
    const std::size_t r = m.token_bucket(token);
    return {t.data.begin() + std::ptrdiff_t(r * de), t.data.begin() + std::ptrdiff_t((r + 1) * de)};
}

// Central differences on entry `i` of parameter `p`.
double numeric(TwoTowerModel& m, std::size_t p, std::size_t i, double eps, const std::function<double()>& loss) {
    double& x = m.params()[p].data[i];
    const double keep = x;
    x = keep + eps;
    const double up = loss();
    x = keep - eps;
    const double down = loss();
    x = keep;
    return (up - down) / (2 * eps);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5}); }

Matrix random_weights(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    Matrix w(rows, cols);
    for (auto& v : w.data) v = rng.normal();
    return w;
}

double weighted_sum(const Matrix& out, const Matrix& w) {
    double s = 0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * w.data[i];
    return s;
}

}  // namespace

TEST_CASE("hash_token") {
    CHECK(hash_token("red", 1u << 18) == hash_token("red", 1u << 18));
    Rng rng(3);
    const std::size_t buckets = 1000;
    std::vector<std::size_t> load(buckets, 0);
    for (int i = 0; i < 10000; ++i) {
        std::string t;
        const std::size_t len = 1 + rng.index(12);
        for (std::size_t k = 0; k < len; ++k) t.push_back(char(rng.index(256)));
        const auto b = hash_token(t, buckets);
        REQUIRE(b < buckets);
        ++load[b];
    }
    CHECK(*std::max_element(load.begin(), load.end()) < 10 * 10);
}

TEST_CASE("avg_embed and token_rep") {
    auto m = toy::small_model();
    CHECK(avg_embed(m, {"oak"}) == row_of(m, "oak"));
    const auto a = row_of(m, "oak");
    const auto b = row_of(m, "pine");
    const auto avg = avg_embed(m, {"oak", "pine"});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(avg[i] == doctest::Approx((a[i] + b[i]) / 2));
    for (double v : avg_embed(m, {})) CHECK(v == 0.0);

    std::vector<TokenFieldGroup> g{{0, {"oak"}}, {1, {"pine"}}};
    auto rep = token_rep(m, g, 2);
    CHECK(std::vector<double>(rep.begin(), rep.begin() + 8) == a);
    CHECK(std::vector<double>(rep.begin() + 8, rep.end()) == b);
    std::vector<TokenFieldGroup> perm{{0, {"x", "y", "z"}}, {1, {"pine"}}};
    std::vector<TokenFieldGroup> perm2{{0, {"z", "x", "y"}}, {1, {"pine"}}};
    auto r1 = token_rep(m, perm, 2);
    auto r2 = token_rep(m, perm2, 2);
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == doctest::Approx(r2[i]));
    std::vector<TokenFieldGroup> zeroed{{0, {}}, {1, {"pine"}}};
    auto rz = token_rep(m, zeroed, 2);
    CHECK(std::vector<double>(rz.begin() + 8, rz.end()) == b);
    CHECK_THROWS_AS(token_rep(m, g, 3), Error);
}

TEST_CASE("graph_encode exclusion and averaging") {
    auto m = toy::small_model();
    BipartiteGraph g;
    g.set(1, {{"q1", 3}});
    for (double v : graph_encode(m, 1, g, "q1", 4, nullptr)) CHECK(v == 0.0);
    for (double v : graph_encode(m, 99, g, "", 4, nullptr)) CHECK(v == 0.0);

    g.set(2, {{"wool hat", 2}, {"scarf", 1}});
    const auto e1 = avg_embed(m, extract_ngrams("wool hat"));
    const auto e2 = avg_embed(m, extract_ngrams("scarf"));
    Rng rng(4);
    for (auto* r : {static_cast<Rng*>(nullptr), &rng}) {
        const auto v = graph_encode(m, 2, g, "", 2, r);
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == doctest::Approx((e1[i] + e2[i]) / 2));
    }
    // Exclusion uses normalized text.
    const auto only_scarf = graph_encode(m, 2, g, "  WOOL hat", 2, nullptr);
    for (std::size_t i = 0; i < e2.size(); ++i) CHECK(only_scarf[i] == doctest::Approx(e2[i]));
}

TEST_CASE("weighted neighbor sampling follows counts") {
    ProductFeatures f;
    f.neighbor_text = {"a", "b", "c"};
    f.neighbor_count = {6, 3, 1};
    f.neighbor_tokens.resize(3);
    Rng rng(10);
    std::array<int, 3> first{};
    const int n = 30000;
    for (int t = 0; t < n; ++t) {
        auto pick = select_neighbors(f, "", 2, &rng);
        REQUIRE(pick.size() == 2);
        CHECK(pick[0] != pick[1]);
        ++first[pick[0]];
    }
    CHECK(double(first[0]) / n == doctest::Approx(0.6).epsilon(0.03));
    CHECK(double(first[2]) / n == doctest::Approx(0.1).epsilon(0.1));
    CHECK(select_neighbors(f, "", 2, nullptr) == std::vector<std::uint32_t>{0, 1});
}

TEST_CASE("session_transformer contracts") {
    auto m = toy::small_model();
    Rng rng(5);
    std::vector<double> q(8);
    for (auto& v : q) v = rng.normal();
    const auto a = session_transformer(m, q, {}, {});
    CHECK(a == session_transformer(m, q, {}, {}));

    std::vector<std::vector<double>> s{std::vector<double>(8), std::vector<double>(8)};
    for (auto& row : s)
        for (auto& v : row) v = rng.normal();
    const auto one = session_transformer(m, q, {s[0]}, {});
    const auto padded = session_transformer(m, q, s, {}, {1, 0});
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(std::abs(one[i] - padded[i]) < 1e-6);
    const auto all_pad = session_transformer(m, q, s, {s[1]}, {0, 0}, {0});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - all_pad[i]) < 1e-6);
    CHECK_THROWS_AS(session_transformer(m, q, {s[0], s[0], s[0]}, {}), Error);
}

TEST_CASE("transformer gradient matches central differences") {
    auto m = toy::small_model(2);
    const std::size_t de = 8;
    Rng rng(6);
    std::vector<double> q(de);
    for (auto& v : q) v = rng.normal();
    std::vector<std::vector<double>> hist(3, std::vector<double>(de));
    for (auto& h : hist)
        for (auto& v : h) v = rng.normal();
    const std::vector<std::size_t> pos{1, 2, 3};
    std::vector<double> w(de);
    for (auto& v : w) v = rng.normal();

    auto loss = [&]() {
        std::vector<const double*> ptrs;
        for (auto& h : hist) ptrs.push_back(h.data());
        TransformerCache c;
        transformer_forward(m, q, ptrs, pos, c);
        double s = 0;
        for (std::size_t j = 0; j < de; ++j) s += w[j] * c.out[j];
        return s;
    };
    std::vector<const double*> ptrs;
    for (auto& h : hist) ptrs.push_back(h.data());
    TransformerCache c;
    transformer_forward(m, q, ptrs, pos, c);
    Gradients g(m);
    Matrix dh;
    const auto dq = transformer_backward(m, pos, c, w, dh, g);

    double worst = 0;
    const auto& s = m.slots();
    for (std::size_t p : {s.wq, s.wk, s.wv, s.wo, s.attn_scale, s.ff_w1, s.ff_b1, s.ff_w2, s.ff_b2, s.ff_scale,
                          s.position_table}) {
        for (std::size_t i = 0; i < m.params()[p].size(); ++i)
            worst = std::max(worst, rel_err(g.dense[p][i], numeric(m, p, i, 1e-5, loss)));
    }
    for (std::size_t j = 0; j < de; ++j) {
        const double keep = q[j];
        q[j] = keep + 1e-5;
        const double up = loss();
        q[j] = keep - 1e-5;
        const double down = loss();
        q[j] = keep;
        worst = std::max(worst, rel_err(dq[j], (up - down) / 2e-5));
        for (std::size_t h = 0; h < hist.size(); ++h) {
            const double kh = hist[h][j];
            hist[h][j] = kh + 1e-5;
            const double u = loss();
            hist[h][j] = kh - 1e-5;
            const double d = loss();
            hist[h][j] = kh;
            worst = std::max(worst, rel_err(dh(h, j), (u - d) / 2e-5));
        }
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("tower outputs are unit norm, deterministic and finite") {
    auto m = toy::small_model();
    BipartiteGraph g;
    g.set(1, {{"red mug", 2}});
    const auto p = toy::product(1, "red mug");
    const auto v = product_tower(m, p, g);
    CHECK(v.size() == 8);
    CHECK(norm(v) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(v == product_tower(m, p, g));
    auto twin = p;
    twin.product_id = 1;
    CHECK(product_tower(m, twin, g) == v);

    const auto qv = query_user_tower(m, toy::context("red mug"));
    CHECK(norm(qv) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(qv == query_user_tower(m, toy::context("red mug")));
    CHECK(std::abs(score(qv, v)) <= 1 + 1e-6);
    CHECK(score(qv, v) == score(v, qv));

    QueryUserContext empty;
    const auto ev = query_user_tower(m, empty);
    for (double x : ev) CHECK(std::isfinite(x));
    CHECK(norm(ev) == doctest::Approx(1.0).epsilon(1e-5));
    ProductDoc bare;
    bare.product_id = 5;
    bare.category_path = {"x"};
    const auto bv = product_tower(m, bare, g);
    for (double x : bv) CHECK(std::isfinite(x));
}

TEST_CASE("score") {
    std::vector<double> a{0.6, 0.8};
    std::vector<double> b{-0.8, 0.6};
    std::vector<double> n{-0.6, -0.8};
    CHECK(score(a, a) == doctest::Approx(1.0));
    CHECK(score(a, b) == doctest::Approx(0.0));
    CHECK(score(a, n) == doctest::Approx(-1.0));
}

TEST_CASE("train-mode batch norm standardizes each feature") {
    auto m = toy::small_model();
    BipartiteGraph g;
    std::vector<ProductFeatures> feats;
    for (std::uint64_t i = 0; i < 16; ++i)
        feats.push_back(featurize_product(m, toy::product(i, "item " + std::to_string(i * 7)), g));
    std::vector<ProductInput> in;
    for (auto& f : feats) in.push_back({&f, {}});
    ProductTowerCache c;
    forward_product_tower(m, in, BnMode::train, &c);
    for (const Matrix* xh : {&c.mlp.xhat1, &c.mlp.xhat2}) {
        for (std::size_t col = 0; col < xh->cols; ++col) {
            double mean = 0, var = 0;
            for (std::size_t r = 0; r < xh->rows; ++r) mean += (*xh)(r, col);
            mean /= double(xh->rows);
            for (std::size_t r = 0; r < xh->rows; ++r) var += ((*xh)(r, col) - mean) * ((*xh)(r, col) - mean);
            var /= double(xh->rows);
            CHECK(std::abs(mean) < 1e-3);
            // eps in the denominator shrinks low-variance columns slightly.
            const double raw = c.mlp.stats.bn1.var.size() == xh->cols ? c.mlp.stats.bn1.var[col] : c.mlp.stats.bn2.var[col];
            CHECK(std::abs(var - raw / (raw + 1e-5)) < 1e-3);
        }
    }
}

TEST_CASE("tower backward matches finite differences with full batch norm") {
    auto m = toy::small_model(3);
    BipartiteGraph g;
    g.set(0, {{"neighbor only zzq", 4}, {"vase", 1}});
    std::vector<ProductFeatures> feats;
    for (std::uint64_t i = 0; i < 4; ++i)
        feats.push_back(featurize_product(m, toy::product(i, i == 0 ? "vase" : "bowl " + std::to_string(i)), g));
    std::vector<ProductInput> pin;
    for (auto& f : feats) pin.push_back({&f, select_neighbors(f, "", 4, nullptr)});
    std::vector<QueryInput> qin;
    for (int i = 0; i < 4; ++i) qin.push_back(featurize_query(m, toy::context("bowl " + std::to_string(i), i % 2 + 1)));
    const Matrix wp = random_weights(4, 8, 1);
    const Matrix wq = random_weights(4, 8, 2);

    for (BnMode mode : {BnMode::train, BnMode::frozen}) {
        ProductTowerCache pc0;
        QueryTowerCache qc0;
        forward_product_tower(m, pin, BnMode::train, &pc0);
        forward_query_tower(m, qin, BnMode::train, &qc0);
        const TowerStats pstats = pc0.mlp.stats;
        const TowerStats qstats = qc0.mlp.stats;

        auto loss = [&]() {
            return weighted_sum(forward_product_tower(m, pin, mode, nullptr, &pstats), wp) +
                   weighted_sum(forward_query_tower(m, qin, mode, nullptr, &qstats), wq);
        };
        Gradients grads(m);
        ProductTowerCache pc;
        QueryTowerCache qc;
        forward_product_tower(m, pin, mode, &pc, &pstats);
        forward_query_tower(m, qin, mode, &qc, &qstats);
        backward_product_tower(m, pin, pc, wp, grads);
        backward_query_tower(m, qin, qc, wq, grads);

        double worst = 0;
        for (std::size_t p = 0; p < m.params().size(); ++p) {
            if (grads.dense[p].empty()) continue;
            const std::size_t n = m.params()[p].size();
            const std::size_t stride = n > 400 ? n / 200 : 1;
            for (std::size_t i = 0; i < n; i += stride) {
                const double e = rel_err(grads.dense[p][i], numeric(m, p, i, 1e-5, loss));
                worst = std::max(worst, e);
            }
        }
        const std::size_t de = 8;
        // Rows shared with graph neighbors differ from plain finite differences
        // by design (stop-gradient), so they are checked separately below.
        std::set<std::uint32_t> graph_rows;
        for (const auto& in : pin)
            for (auto n : in.neighbors)
                for (auto r : in.features->neighbor_tokens[n]) graph_rows.insert(r);
        for (std::size_t k = 0; k < grads.token.rows().size(); ++k) {
            const auto r = grads.token.rows()[k];
            if (graph_rows.count(r)) continue;
            for (std::size_t j = 0; j < de; ++j) {
                const double e = rel_err(grads.token.row_data(k)[j], numeric(m, m.slots().token_table, r * de + j, 1e-5, loss));
                worst = std::max(worst, e);
            }
        }
        for (std::size_t k = 0; k < grads.shop.rows().size(); ++k) {
            const auto r = grads.shop.rows()[k];
            for (std::size_t j = 0; j < de; ++j) {
                const double e = rel_err(grads.shop.row_data(k)[j], numeric(m, m.slots().shop_table, r * de + j, 1e-5, loss));
                worst = std::max(worst, e);
            }
        }
        CHECK(worst <= 1e-4);

        // Tokens reached only through the graph slot carry no gradient.
        for (const auto& t : extract_ngrams("neighbor only zzq")) {
            bool elsewhere = false;
            for (const auto& f : feats)
                for (const auto& grp : f.groups)
                    elsewhere |= std::find(grp.begin(), grp.end(), m.token_bucket(t)) != grp.end();
            for (const auto& qi : qin) {
                for (const auto& grp : qi.groups)
                    elsewhere |= std::find(grp.begin(), grp.end(), m.token_bucket(t)) != grp.end();
                for (const auto& sr : qi.searches)
                    elsewhere |= std::find(sr.begin(), sr.end(), m.token_bucket(t)) != sr.end();
            }
            if (!elsewhere) CHECK(grads.token.find(m.token_bucket(t)) == nullptr);
        }
    }
}

TEST_CASE("running statistics use momentum and the unbiased variance") {
    auto m = toy::small_model();
    TowerStats st;
    st.bn1.mean.assign(16, 2.0);
    st.bn1.var.assign(16, 3.0);
    st.bn2.mean.assign(8, -1.0);
    st.bn2.var.assign(8, 0.5);
    update_running_stats(m, true, st, 4);
    CHECK(m.param("product_mlp.bn1.mean").data[0] == doctest::Approx(0.2));
    CHECK(m.param("product_mlp.bn1.var").data[0] == doctest::Approx(0.9 + 0.1 * 3.0 * 4 / 3));
    CHECK(m.param("product_mlp.bn2.mean").data[3] == doctest::Approx(-0.1));
    CHECK(m.param("query_mlp.bn1.mean").data[0] == 0.0);
}

TEST_CASE("batched embedding matches single-item towers") {
    auto m = toy::small_model();
    std::vector<ProductDoc> docs;
    for (std::uint64_t i = 0; i < 5; ++i) docs.push_back(toy::product(i, "thing " + std::to_string(i)));
    ProductCorpus corpus(docs);
    BipartiteGraph g;
    g.set(2, {{"gift", 3}});
    const Matrix all = embed_products(m, corpus, g);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto v = product_tower(m, corpus[i], g);
        for (std::size_t j = 0; j < v.size(); ++j) CHECK(all(i, j) == doctest::Approx(v[j]).epsilon(1e-12));
    }
    const Matrix qs = embed_queries(m, {toy::context("a"), toy::context("b", 0)});
    const auto q1 = query_user_tower(m, toy::context("b", 0));
    for (std::size_t j = 0; j < q1.size(); ++j) CHECK(qs(1, j) == doctest::Approx(q1[j]).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip") {
    auto m = toy::small_model(9);
    const auto bytes = m.serialize();
    auto back = TwoTowerModel::deserialize(bytes);
    CHECK(back.config() == m.config());
    CHECK(back.serialize() == bytes);
    CHECK(model_version_of(back) == model_version_of(m));
    CHECK(back.locations().bucketings.size() == 1);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(TwoTowerModel::deserialize(bad), Error);
    auto wrong_version = bytes;
    wrong_version[4] = 9;
    try {
        TwoTowerModel::deserialize(wrong_version);
        FAIL("expected version error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::version_mismatch);
    }
}
