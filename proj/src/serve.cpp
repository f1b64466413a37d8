// SPDX-License-Identifier: Apache-2.0
#include "serve.hpp"

#include <algorithm>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "featurize.hpp"
#include "towers.hpp"

namespace ueppr {

using nlohmann::json;

const char* cache_strategy_name(CacheStrategy s) {
    return s == CacheStrategy::id_key ? "id_key" : "hashed_context_key";
}

CacheStrategy parse_cache_strategy(const std::string& name) {
    if (name == "id_key") return CacheStrategy::id_key;
    if (name == "hashed_context_key") return CacheStrategy::hashed_context_key;
    fail(ErrorCode::invalid_argument, "unknown cache strategy '" + name + "' (expected id_key or hashed_context_key)");
}

// ---------------------------------------------------------------------------
// Requests and responses

SearchRequest SearchRequest::from_json(const std::string& body) {
    SearchRequest r;
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        fail(ErrorCode::parse, std::string("request is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) fail(ErrorCode::parse, "request must be a JSON object");
    try {
        if (!j.contains("query") || !j.at("query").is_string()) fail(ErrorCode::invalid_argument, "request needs a string 'query'");
        json ctx = j.value("context", json::object());
        if (!ctx.is_object()) fail(ErrorCode::invalid_argument, "'context' must be an object");
        ctx["query"] = j.at("query");
        r.context = context_from_json(ctx.dump());
        r.user_id = j.value("user_id", std::string());
        r.session_id = j.value("session_id", std::string());
        if (j.contains("k")) {
            if (!j.at("k").is_number_integer() || j.at("k").get<long long>() < 1)
                fail(ErrorCode::invalid_argument, "'k' must be a positive integer");
            r.k = j.at("k").get<std::size_t>();
        }
        if (j.contains("page")) {
            if (!j.at("page").is_number_integer() || j.at("page").get<long long>() < 0)
                fail(ErrorCode::invalid_argument, "'page' must be a non-negative integer");
            r.page = j.at("page").get<std::size_t>();
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::invalid_argument, std::string("malformed request: ") + e.what());
    }
    return r;
}

std::string SearchResponse::to_json() const {
    json results = json::array();
    for (const auto& h : hits) results.push_back({{"product_id", h.id}, {"score", h.score}});
    return json{{"results", results}, {"served_from_cache", served_from_cache}, {"model_version", model_version}}.dump();
}

std::string cache_key(const SearchRequest& r, CacheStrategy strategy, const LocationFeaturizer* locations) {
    std::string material;
    if (strategy == CacheStrategy::id_key) {
        material = json{{"q", normalize_text(r.context.query)}, {"u", r.user_id}, {"s", r.session_id}, {"k", r.k}}.dump();
        return "id:" + to_hex(fnv1a64(material));
    }
    QueryUserContext ctx = r.context;
    json loc = nullptr;
    if (ctx.user_location && locations && !locations->bucketings.empty()) {
        auto tokens = locations->tokens(*ctx.user_location);
        std::sort(tokens.begin(), tokens.end());
        loc = tokens;
        ctx.user_location.reset();
    }
    material = json{{"c", canonical_context_key(ctx)}, {"l", loc}, {"k", r.k}}.dump();
    return "ctx:" + to_hex(fnv1a64(material));
}

// ---------------------------------------------------------------------------
// Cache

ResponseCache::ResponseCache(std::size_t capacity, double ttl_seconds) : capacity_(capacity), ttl_(ttl_seconds) {
    if (capacity == 0) fail(ErrorCode::invalid_argument, "cache capacity must be positive");
    if (!(ttl_seconds > 0)) fail(ErrorCode::invalid_argument, "cache ttl must be positive");
}

std::optional<SearchResponse> ResponseCache::get(const std::string& key, double now) {
    std::lock_guard lock(mu_);
    auto it = map_.find(key);
    if (it == map_.end()) {
        ++misses_;
        return std::nullopt;
    }
    if (now >= it->second->expires) {
        lru_.erase(it->second);
        map_.erase(it);
        ++misses_;
        return std::nullopt;
    }
    lru_.splice(lru_.begin(), lru_, it->second);
    ++hits_;
    return it->second->value;
}

void ResponseCache::put(const std::string& key, const SearchResponse& value, double now) {
    std::lock_guard lock(mu_);
    auto it = map_.find(key);
    if (it != map_.end()) {
        it->second->value = value;
        it->second->expires = now + ttl_;
        lru_.splice(lru_.begin(), lru_, it->second);
        return;
    }
    lru_.push_front({key, value, now + ttl_});
    map_[key] = lru_.begin();
    while (lru_.size() > capacity_) {
        map_.erase(lru_.back().key);
        lru_.pop_back();
        ++evictions_;
    }
}

void ResponseCache::clear() {
    std::lock_guard lock(mu_);
    lru_.clear();
    map_.clear();
}

std::size_t ResponseCache::size() const {
    std::lock_guard lock(mu_);
    return lru_.size();
}

std::size_t ResponseCache::hits() const {
    std::lock_guard lock(mu_);
    return hits_;
}

std::size_t ResponseCache::misses() const {
    std::lock_guard lock(mu_);
    return misses_;
}

std::size_t ResponseCache::evictions() const {
    std::lock_guard lock(mu_);
    return evictions_;
}

// ---------------------------------------------------------------------------
// Snapshots

void validate_snapshot(const Snapshot& s) {
    if (s.index.model_version() != s.model_version)
        fail(ErrorCode::version_mismatch, "index was built from model " +
                                              (s.index.model_version().empty() ? std::string("<unknown>") : s.index.model_version()) +
                                              " but the checkpoint is " + s.model_version);
    std::size_t expect = s.model.config().out_dim;
    if (s.boost) {
        if (s.boost->model_version != s.model_version)
            fail(ErrorCode::version_mismatch, "boost weights were tuned for model " + s.boost->model_version +
                                                  " but the checkpoint is " + s.model_version);
        expect += s.boost->w.size();
    }
    if (s.index.size() > 0 && s.index.dim() != expect)
        fail(ErrorCode::invalid_argument, "index dimension " + std::to_string(s.index.dim()) + " does not match " +
                                              std::to_string(expect) + " expected from the model and weights");
}

std::shared_ptr<const Snapshot> load_snapshot(const std::string& index_path, const std::string& model_path,
                                              const std::string& weights_path) {
    auto s = std::make_shared<Snapshot>();
    const std::string bytes = read_file(model_path);
    s->model = TwoTowerModel::deserialize(bytes);
    s->model_version = model_version_of(bytes);
    s->index = VectorIndex::load(index_path);
    if (!weights_path.empty()) s->boost = BoostWeights::load(weights_path);
    validate_snapshot(*s);
    return s;
}

std::vector<float> serving_query_vector(const Snapshot& s, const QueryUserContext& context) {
    const auto q = query_user_tower(s.model, context);
    std::vector<float> out(q.begin(), q.end());
    if (s.boost) return hydrate_query(std::span<const float>(out), s.boost->w);
    return out;
}

// ---------------------------------------------------------------------------
// Service

namespace {

constexpr std::size_t kLatencyWindow = 10000;

double steady_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

SearchService::SearchService(std::shared_ptr<const Snapshot> snapshot, ServiceConfig config, Clock clock)
    : config_(config), clock_(clock ? std::move(clock) : Clock(steady_seconds)),
      cache_(config.capacity, config.ttl_seconds) {
    if (!snapshot) fail(ErrorCode::invalid_argument, "service needs a snapshot");
    validate_snapshot(*snapshot);
    snapshot_ = std::move(snapshot);
}

std::shared_ptr<const Snapshot> SearchService::snapshot() const {
    std::lock_guard lock(snap_mu_);
    return snapshot_;
}

void SearchService::swap(std::shared_ptr<const Snapshot> next) {
    if (!next) fail(ErrorCode::invalid_argument, "cannot swap in an empty snapshot");
    validate_snapshot(*next);
    std::shared_ptr<const Snapshot> old;
    {
        std::lock_guard lock(snap_mu_);
        old = std::exchange(snapshot_, std::move(next));
    }
    cache_.clear();
    std::lock_guard lock(stats_mu_);
    ++stats_.swaps;
}

void SearchService::reload(const std::string& index_path, const std::string& model_path, const std::string& weights_path) {
    swap(load_snapshot(index_path, model_path, weights_path));
}

SearchResponse SearchService::search(const SearchRequest& request) {
    const auto start = std::chrono::steady_clock::now();
    if (request.k < 1 || request.k > config_.max_k)
        fail(ErrorCode::invalid_argument, "k must lie in [1, " + std::to_string(config_.max_k) + "]");
    const auto snap = snapshot();
    const std::string key = snap->model_version + "/" + cache_key(request, config_.strategy, &snap->model.locations());
    const double now = clock_();
    SearchResponse resp;
    bool hit = false;
    if (auto cached = cache_.get(key, now)) {
        resp = std::move(*cached);
        resp.served_from_cache = true;
        hit = true;
    } else {
        const auto q = serving_query_vector(*snap, request.context);
        resp.hits = snap->index.knn(q, request.k, config_.ef_search);
        resp.model_version = snap->model_version;
        cache_.put(key, resp, now);
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    {
        std::lock_guard lock(stats_mu_);
        ++stats_.requests;
        if (hit) ++stats_.cache_hits;
    }
    record_latency(ms);
    return resp;
}

std::string SearchService::handle_json(const std::string& body, int& status) {
    try {
        const auto req = SearchRequest::from_json(body);
        const auto resp = search(req);
        status = 200;
        return resp.to_json();
    } catch (const Error& e) {
        status = (e.code() == ErrorCode::parse || e.code() == ErrorCode::invalid_argument) ? 400 : 500;
        std::lock_guard lock(stats_mu_);
        ++stats_.errors;
        return json{{"error", e.what()}}.dump();
    } catch (const std::exception& e) {
        status = 500;
        std::lock_guard lock(stats_mu_);
        ++stats_.errors;
        return json{{"error", e.what()}}.dump();
    }
}

void SearchService::record_latency(double ms) {
    std::lock_guard lock(stats_mu_);
    if (latencies_.size() < kLatencyWindow) {
        latencies_.push_back(ms);
    } else {
        latencies_[latency_next_] = ms;
        latency_next_ = (latency_next_ + 1) % kLatencyWindow;
    }
}

ServiceStats SearchService::stats() const {
    std::lock_guard lock(stats_mu_);
    ServiceStats s = stats_;
    s.p50_ms = quantile(latencies_, 0.5);
    s.p99_ms = quantile(latencies_, 0.99);
    return s;
}

std::string SearchService::metrics_text() const {
    const auto s = stats();
    std::ostringstream out;
    out << "requests " << s.requests << "\n"
        << "cache_hits " << s.cache_hits << "\n"
        << "cache_hit_ratio " << (s.requests ? double(s.cache_hits) / double(s.requests) : 0.0) << "\n"
        << "cache_entries " << cache_.size() << "\n"
        << "cache_evictions " << cache_.evictions() << "\n"
        << "errors " << s.errors << "\n"
        << "snapshot_swaps " << s.swaps << "\n"
        << "latency_p50_ms " << s.p50_ms << "\n"
        << "latency_p99_ms " << s.p99_ms << "\n"
        << "model_version " << snapshot()->model_version << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// HTTP

struct HttpFrontend::Impl {
    SearchService& service;
    httplib::Server server;
    explicit Impl(SearchService& s) : service(s) {}
};

HttpFrontend::HttpFrontend(SearchService& service) : impl_(std::make_unique<Impl>(service)) {
    auto& svc = impl_->service;
    impl_->server.Post("/v1/search", [&svc](const httplib::Request& req, httplib::Response& res) {
        int status = 200;
        const std::string body = svc.handle_json(req.body, status);
        res.status = status;
        res.set_content(body, "application/json");
    });
    impl_->server.Get("/healthz", [&svc](const httplib::Request&, httplib::Response& res) {
        res.set_content(json{{"status", "ok"}, {"model_version", svc.snapshot()->model_version}}.dump(), "application/json");
    });
    impl_->server.Get("/metrics", [&svc](const httplib::Request&, httplib::Response& res) {
        res.set_content(svc.metrics_text(), "text/plain");
    });
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
    if (port == 0) {
        const int p = impl_->server.bind_to_any_port(host);
        if (p < 0) fail(ErrorCode::io, "cannot bind " + host);
        return p;
    }
    if (!impl_->server.bind_to_port(host, port)) fail(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpFrontend::run() {
    if (!impl_->server.listen_after_bind()) fail(ErrorCode::io, "HTTP server stopped with an error");
}

void HttpFrontend::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace ueppr
