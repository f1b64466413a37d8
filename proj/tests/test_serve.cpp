// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <atomic>
#include <cstdio>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "serve.hpp"
#include "toy.hpp"

using namespace ueppr;

namespace {

ProductCorpus corpus_of(std::size_t n) {
    std::vector<ProductDoc> docs;
    const char* words[] = {"vase", "lamp", "mug", "scarf", "ring", "print"};
    for (std::size_t i = 0; i < n; ++i) docs.push_back(toy::product(i + 1, std::string(words[i % 6]) + " gift", 1 + i % 4));
    return ProductCorpus(std::move(docs));
}

std::shared_ptr<const Snapshot> make_snapshot(std::uint64_t seed, bool boosted = false) {
    auto s = std::make_shared<Snapshot>();
    s->model = toy::small_model(seed);
    s->model_version = model_version_of(s->model);
    const auto corpus = corpus_of(60);
    const Matrix pv = embed_products(s->model, corpus, {});
    VectorSet vs;
    for (std::size_t i = 0; i < corpus.size(); ++i) vs.add(corpus[i].product_id, pv.row_span(i));
    if (boosted) {
        BoostWeights w;
        w.scaler = QualityScaler::fit(corpus);
        w.w = {0.5, 0.1, 1.0};
        w.model_version = s->model_version;
        vs = hydrate(vs, quality_matrix(corpus, w.scaler), 3);
        s->boost = w;
    }
    s->index = VectorIndex::build_exact(vs);
    s->index.set_model_version(s->model_version);
    return s;
}

SearchRequest request(std::string q, std::size_t k = 10) {
    SearchRequest r;
    r.context = toy::context(std::move(q));
    r.user_id = "u1";
    r.session_id = "s1";
    r.k = k;
    return r;
}

}  // namespace

TEST_CASE("cache keys follow the two strategies") {
    const auto loc = toy::small_locations();
    auto a = request("red vase");
    auto b = a;
    CHECK(cache_key(a, CacheStrategy::id_key) == cache_key(b, CacheStrategy::id_key));
    CHECK(cache_key(a, CacheStrategy::hashed_context_key, &loc) == cache_key(b, CacheStrategy::hashed_context_key, &loc));
    b.page = 3;
    CHECK(cache_key(a, CacheStrategy::id_key) == cache_key(b, CacheStrategy::id_key));
    CHECK(cache_key(a, CacheStrategy::hashed_context_key, &loc) == cache_key(b, CacheStrategy::hashed_context_key, &loc));
    b.context.recent_searches.insert(b.context.recent_searches.begin(), "tea set");
    CHECK(cache_key(a, CacheStrategy::id_key) == cache_key(b, CacheStrategy::id_key));
    CHECK(cache_key(a, CacheStrategy::hashed_context_key, &loc) != cache_key(b, CacheStrategy::hashed_context_key, &loc));
    auto c = a;
    c.session_id = "s2";
    CHECK(cache_key(a, CacheStrategy::id_key) != cache_key(c, CacheStrategy::id_key));
    CHECK(cache_key(a, CacheStrategy::hashed_context_key, &loc) == cache_key(c, CacheStrategy::hashed_context_key, &loc));
    auto d = a;
    a.context.recent_clicked_terms = {"ceramic", "linen"};
    d.context.recent_clicked_terms = {"linen", "ceramic"};  // set-valued: order ignored
    CHECK(cache_key(a, CacheStrategy::hashed_context_key, &loc) == cache_key(d, CacheStrategy::hashed_context_key, &loc));
    auto e = a;
    e.context.user_location->lat += 0.001;  // same location buckets
    CHECK(cache_key(a, CacheStrategy::hashed_context_key, &loc) == cache_key(e, CacheStrategy::hashed_context_key, &loc));
    auto k = a;
    k.k = 11;
    CHECK(cache_key(a, CacheStrategy::id_key) != cache_key(k, CacheStrategy::id_key));
}

TEST_CASE("response cache honours TTL and LRU order") {
    ResponseCache cache(2, 10.0);
    SearchResponse r;
    r.model_version = "v";
    cache.put("a", r, 0.0);
    cache.put("b", r, 1.0);
    CHECK(cache.get("a", 5.0).has_value());  // a is now most recent
    cache.put("c", r, 6.0);                   // evicts b
    CHECK_FALSE(cache.get("b", 6.0).has_value());
    CHECK(cache.get("a", 9.9).has_value());
    CHECK_FALSE(cache.get("a", 10.0).has_value());  // expired
    CHECK(cache.get("c", 15.0).has_value());
    CHECK(cache.evictions() == 1);
    CHECK(cache.hits() == 3);
    CHECK(cache.misses() == 2);
    CHECK_THROWS_AS(ResponseCache(0, 1.0), Error);
    CHECK_THROWS_AS(ResponseCache(1, 0.0), Error);
}

TEST_CASE("service caches within TTL and matches offline knn") {
    double now = 100.0;
    const auto snap = make_snapshot(1);
    ServiceConfig cfg;
    cfg.ttl_seconds = 30;
    SearchService svc(snap, cfg, [&] { return now; });
    const auto req = request("blue lamp", 15);
    const auto first = svc.search(req);
    CHECK_FALSE(first.served_from_cache);
    CHECK(first.hits.size() == 15);
    for (std::size_t i = 1; i < first.hits.size(); ++i) CHECK(first.hits[i].score <= first.hits[i - 1].score);
    const auto offline = snap->index.knn(serving_query_vector(*snap, req.context), 15);
    CHECK(first.hits == offline);
    CHECK(first.model_version == snap->model_version);

    now += 10;
    const auto second = svc.search(req);
    CHECK(second.served_from_cache);
    CHECK(second.hits == first.hits);
    now += 30;
    const auto third = svc.search(req);
    CHECK_FALSE(third.served_from_cache);
    CHECK(third.hits == first.hits);
    CHECK(svc.stats().requests == 3);
    CHECK(svc.stats().cache_hits == 1);
    CHECK(svc.metrics_text().find("cache_hits 1") != std::string::npos);
}

TEST_CASE("boosted service hydrates the query") {
    const auto snap = make_snapshot(2, true);
    SearchService svc(snap, {});
    const auto req = request("mug", 20);
    const auto resp = svc.search(req);
    const auto q = serving_query_vector(*snap, req.context);
    CHECK(q.size() == snap->model.config().out_dim + 3);
    CHECK(resp.hits == snap->index.knn(q, 20));
}

TEST_CASE("snapshot validation and swaps") {
    auto good = make_snapshot(1);
    auto other = make_snapshot(2);
    auto mixed = std::make_shared<Snapshot>(*good);
    mixed->index = other->index;
    CHECK_THROWS_AS(validate_snapshot(*mixed), Error);
    try {
        SearchService bad(mixed, {});
        FAIL("expected a version mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::version_mismatch);
    }
    SearchService svc(good, {});
    CHECK_THROWS_AS(svc.swap(mixed), Error);
    CHECK(svc.snapshot() == good);
    svc.swap(other);
    CHECK(svc.search(request("vase")).model_version == other->model_version);
}

TEST_CASE("snapshot files load, reload identically and reject mismatches") {
    const auto snap = make_snapshot(3);
    snap->model.save("serve_model.bin");
    snap->index.save("serve_index.idx");
    auto loaded = load_snapshot("serve_index.idx", "serve_model.bin");
    SearchService svc(loaded, {});
    const auto before = svc.search(request("ring", 5));
    svc.reload("serve_index.idx", "serve_model.bin");
    const auto after = svc.search(request("ring", 5));
    CHECK(before.hits == after.hits);
    CHECK(before.model_version == after.model_version);
    make_snapshot(4)->model.save("serve_model.bin");
    CHECK_THROWS_AS(svc.reload("serve_index.idx", "serve_model.bin"), Error);
    CHECK(svc.snapshot()->model_version == before.model_version);
    std::remove("serve_model.bin");
    std::remove("serve_index.idx");
}

TEST_CASE("swap under concurrent load loses no requests") {
    auto a = make_snapshot(1), b = make_snapshot(2);
    SearchService svc(a, {});
    std::atomic<int> ok{0}, bad{0};
    std::vector<std::thread> workers;
    for (int t = 0; t < 4; ++t)
        workers.emplace_back([&, t] {
            for (int i = 0; i < 50; ++i) {
                int status = 0;
                const std::string body = R"({"query": "vase )" + std::to_string(i % 7) + R"(", "k": 5, "user_id": "u)" +
                                         std::to_string(t) + "\"}";
                const auto out = nlohmann::json::parse(svc.handle_json(body, status));
                const auto v = out.value("model_version", std::string());
                (status == 200 && (v == a->model_version || v == b->model_version) ? ok : bad)++;
            }
        });
    for (int s = 0; s < 20; ++s) svc.swap(s % 2 ? a : b);
    for (auto& w : workers) w.join();
    CHECK(ok == 200);
    CHECK(bad == 0);
}

TEST_CASE("malformed requests get 4xx responses") {
    SearchService svc(make_snapshot(1), {});
    int status = 0;
    svc.handle_json("{not json", status);
    CHECK(status == 400);
    svc.handle_json(R"({"k": 5})", status);
    CHECK(status == 400);
    svc.handle_json(R"({"query": "x", "k": 0})", status);
    CHECK(status == 400);
    svc.handle_json(R"({"query": "x", "context": 3})", status);
    CHECK(status == 400);
    const auto body = svc.handle_json(R"({"query": "x", "k": 3, "context": {"recent_searches": ["y"]}})", status);
    CHECK(status == 200);
    CHECK(nlohmann::json::parse(body).at("results").size() == 3);
}

TEST_CASE("http endpoints") {
    SearchService svc(make_snapshot(1), {});
    HttpFrontend http(svc);
    const int port = http.bind("127.0.0.1", 0);
    std::thread server([&] { http.run(); });
    httplib::Client client("127.0.0.1", port);
    auto health = client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);
    auto search = client.Post("/v1/search", R"({"query": "lamp", "k": 4})", "application/json");
    REQUIRE(search);
    CHECK(search->status == 200);
    CHECK(nlohmann::json::parse(search->body).at("results").size() == 4);
    auto badreq = client.Post("/v1/search", "[]", "application/json");
    REQUIRE(badreq);
    CHECK(badreq->status == 400);
    auto metrics = client.Get("/metrics");
    REQUIRE(metrics);
    CHECK(metrics->body.find("requests 1") != std::string::npos);
    http.stop();
    server.join();
}
