// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <set>

#include "corpus.hpp"

using namespace ueppr;

namespace {

ProductDoc make_product(std::uint64_t id) {
    ProductDoc p;
    p.product_id = id;
    p.title = "oak table " + std::to_string(id);
    p.tags = {"oak", "table"};
    p.description = "a sturdy table";
    p.attributes = {{"material", "oak wood"}};
    p.category_path = {"furniture", "tables"};
    p.shop_id = 7;
    p.location = {40.0, -74.0, "10001", "us"};
    p.quality = {4.5, 10.0, 0.02};
    return p;
}

Interaction make_interaction(const std::string& q, std::uint64_t pid, InteractionKind kind, std::int64_t ts) {
    Interaction r;
    r.context.query = q;
    r.product_id = pid;
    r.kind = kind;
    r.timestamp = ts;
    return r;
}

}  // namespace

TEST_CASE("load_products parses, preserves order and rejects duplicates") {
    ProductCorpus c({make_product(2), make_product(1)});
    const std::string text = serialize_products(c);
    auto back = parse_products(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0].product_id == 2);
    CHECK(back == c);

    CHECK(parse_products("").empty());

    const std::string dup = text + text.substr(0, text.find('\n') + 1);
    try {
        parse_products(dup);
        FAIL("expected duplicate rejection");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }

    try {
        parse_products("{\"product_id\": 1}\n{not json\n", "f.jsonl");
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("f.jsonl:") != std::string::npos);
    }
}

TEST_CASE("corpus rejects empty category path and ragged quality") {
    auto p = make_product(1);
    p.category_path.clear();
    CHECK_THROWS_AS(ProductCorpus({p}), Error);
    auto a = make_product(1);
    auto b = make_product(2);
    b.quality.pop_back();
    CHECK_THROWS_AS(ProductCorpus({a, b}), Error);
}

TEST_CASE("interaction log round-trips") {
    InteractionLog log;
    auto r = make_interaction("Red Dress", 3, InteractionKind::cartadd, 1000);
    r.context.user_location = Location{1.5, 2.5, "94", "us"};
    r.context.recent_searches = {"a", "b"};
    r.context.recent_shop_clicks = {9, 8};
    r.context.recent_clicked_terms = {"silk"};
    r.context.purchased_tags = {"wedding"};
    log.push_back(r);
    log.push_back(make_interaction("mug", 4, InteractionKind::click, 1001));
    CHECK(parse_interactions(serialize_interactions(log)) == log);
    CHECK_THROWS_AS(parse_kind("view"), Error);
}

TEST_CASE("build_bipartite_graph") {
    SUBCASE("two purchases of one product") {
        InteractionLog log{make_interaction("q1", 1, InteractionKind::purchase, 1),
                           make_interaction("q2", 1, InteractionKind::purchase, 2)};
        auto g = build_bipartite_graph(log, 1);
        auto nb = g.neighbors(1);
        REQUIRE(nb.size() == 2);
        CHECK(nb[0].first == "q1");
        CHECK(nb[1].first == "q2");
    }
    SUBCASE("clicks only") {
        InteractionLog log{make_interaction("q1", 1, InteractionKind::click, 1)};
        CHECK(build_bipartite_graph(log, 1).num_edges() == 0);
    }
    SUBCASE("min_count keeps full count") {
        InteractionLog log;
        for (int i = 0; i < 3; ++i) log.push_back(make_interaction("q1", 1, InteractionKind::cartadd, i + 1));
        log.push_back(make_interaction("q2", 1, InteractionKind::cartadd, 9));
        auto g = build_bipartite_graph(log, 2);
        REQUIRE(g.neighbors(1).size() == 1);
        CHECK(g.neighbors(1)[0].second == 3);
    }
    SUBCASE("independent of record order") {
        auto syn = synthesize_corpus(SynthOptions{.seed = 3, .n_products = 80, .n_queries = 40, .n_users = 30});
        auto shuffled = syn.log;
        Rng rng(5);
        rng.shuffle(shuffled);
        CHECK(build_bipartite_graph(syn.log, 1) == build_bipartite_graph(shuffled, 1));
    }
}

TEST_CASE("split_train_eval boundary and partition") {
    InteractionLog log{make_interaction("a", 1, InteractionKind::purchase, 10),
                       make_interaction("b", 1, InteractionKind::purchase, 20),
                       make_interaction("c", 1, InteractionKind::click, 25),
                       make_interaction("b", 2, InteractionKind::purchase, 30)};
    auto all_before = split_train_eval(log, 100);
    CHECK(all_before.eval.empty());
    CHECK(all_before.train.size() == 4);

    auto s = split_train_eval(log, 20);
    CHECK(s.train.size() == 1);
    REQUIRE(s.eval.size() == 1);  // both "b" purchases share a context
    CHECK(s.eval[0].targets == std::vector<std::uint64_t>{1, 2});
    CHECK(s.discarded == 1);

    auto syn = synthesize_corpus(SynthOptions{.seed = 4, .n_products = 100, .n_queries = 40, .n_users = 40});
    auto p = split_train_eval(syn.log, syn.cutoff);
    std::size_t eval_records = 0;
    for (const auto& r : syn.log)
        if (r.timestamp >= syn.cutoff && r.kind == InteractionKind::purchase) ++eval_records;
    CHECK(p.train.size() + eval_records + p.discarded == syn.log.size());
}

TEST_CASE("canonical_context_key sorts set fields only") {
    QueryUserContext a;
    a.query = "Mug";
    a.recent_searches = {"x", "y"};
    a.purchased_tags = {"b", "a"};
    auto b = a;
    b.purchased_tags = {"a", "b"};
    CHECK(canonical_context_key(a) == canonical_context_key(b));
    b.recent_searches = {"y", "x"};
    CHECK(canonical_context_key(a) != canonical_context_key(b));
}

TEST_CASE("synthesize_corpus is deterministic and plants structure") {
    SynthOptions o{.seed = 11, .n_products = 150, .n_queries = 60, .n_users = 50};
    auto a = synthesize_corpus(o);
    auto b = synthesize_corpus(o);
    CHECK(serialize_products(a.products) == serialize_products(b.products));
    CHECK(serialize_interactions(a.log) == serialize_interactions(b.log));
    CHECK(a.products.size() == 150);
    for (const auto& r : a.log) {
        CHECK(r.timestamp > 0);
        CHECK_FALSE(normalize_text(r.context.query).empty());
        CHECK(a.products.find(r.product_id) != nullptr);
    }

    // Some purchased queries share no unigram with the purchased title.
    std::size_t gaps = 0;
    for (const auto& r : a.log) {
        if (r.kind != InteractionKind::purchase) continue;
        const auto qw = split_words(normalize_text(r.context.query));
        const auto* p = a.products.find(r.product_id);
        const auto tw = split_words(normalize_text(p->title));
        const bool shared = std::any_of(qw.begin(), qw.end(), [&](const std::string& w) {
            return std::find(tw.begin(), tw.end(), w) != tw.end();
        });
        if (!shared) ++gaps;
    }
    CHECK(gaps > 0);

    SynthOptions one{.seed = 2, .n_products = 1, .n_queries = 5, .n_users = 5};
    auto s1 = synthesize_corpus(one);
    for (const auto& r : s1.log) CHECK(r.product_id == s1.products[0].product_id);
}

TEST_CASE("haversine") {
    CHECK(haversine_km(0, 0, 0, 0) == doctest::Approx(0.0));
    CHECK(haversine_km(0, 0, 0, 1) == doctest::Approx(111.195).epsilon(1e-3));
}
