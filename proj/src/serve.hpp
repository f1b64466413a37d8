// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ann.hpp"
#include "boost.hpp"
#include "model.hpp"

namespace ueppr {

enum class CacheStrategy { id_key, hashed_context_key };
const char* cache_strategy_name(CacheStrategy s);
CacheStrategy parse_cache_strategy(const std::string& name);

struct SearchRequest {
    QueryUserContext context;  // context.query holds the query text
    std::string user_id;
    std::string session_id;
    std::size_t k = 100;
    std::size_t page = 0;  // accepted for pagination clients; never part of a cache key

    /// {"query", "user_id", "session_id", "context": {...}, "k", "page"}.
    static SearchRequest from_json(const std::string& body);
};

struct SearchResponse {
    std::vector<Hit> hits;
    bool served_from_cache = false;
    std::string model_version;

    std::string to_json() const;
};

/// id_key hashes query, user and session; hashed_context_key hashes the query
/// with the canonical context, using location bucket tokens when `locations`
/// is given. Both include k, since entries are stored per requested k.
std::string cache_key(const SearchRequest& request, CacheStrategy strategy, const LocationFeaturizer* locations = nullptr);

/// Thread-safe LRU map with per-entry expiry. Times are in seconds.
class ResponseCache {
public:
    ResponseCache(std::size_t capacity, double ttl_seconds);

    std::optional<SearchResponse> get(const std::string& key, double now);
    void put(const std::string& key, const SearchResponse& value, double now);
    void clear();
    std::size_t size() const;
    std::size_t hits() const;
    std::size_t misses() const;
    std::size_t evictions() const;

private:
    struct Entry {
        std::string key;
        SearchResponse value;
        double expires;
    };
    std::size_t capacity_;
    double ttl_;
    mutable std::mutex mu_;
    std::list<Entry> lru_;  // front = most recent
    std::unordered_map<std::string, std::list<Entry>::iterator> map_;
    std::size_t hits_ = 0, misses_ = 0, evictions_ = 0;
};

/// Immutable serving state: model, index and optional boost weights.
struct Snapshot {
    TwoTowerModel model;
    VectorIndex index;
    std::optional<BoostWeights> boost;
    std::string model_version;
};

/// Throws Error(version_mismatch) when the index or weights were produced by
/// a different checkpoint, Error(invalid_argument) on a dimension mismatch.
void validate_snapshot(const Snapshot& snapshot);
std::shared_ptr<const Snapshot> load_snapshot(const std::string& index_path, const std::string& model_path,
                                              const std::string& weights_path = "");

/// Query vector as served: tower output, hydrated with the snapshot weights.
std::vector<float> serving_query_vector(const Snapshot& snapshot, const QueryUserContext& context);

struct ServiceConfig {
    CacheStrategy strategy = CacheStrategy::hashed_context_key;
    double ttl_seconds = 300.0;
    std::size_t capacity = 10000;
    std::size_t ef_search = 0;  // 0 keeps the index's stored value
    std::size_t max_k = 1000;
};

struct ServiceStats {
    std::size_t requests = 0;
    std::size_t cache_hits = 0;
    std::size_t errors = 0;
    std::size_t swaps = 0;
    double p50_ms = 0.0;
    double p99_ms = 0.0;
};

class SearchService {
public:
    using Clock = std::function<double()>;

    SearchService(std::shared_ptr<const Snapshot> snapshot, ServiceConfig config, Clock clock = {});

    SearchResponse search(const SearchRequest& request);
    /// JSON in, JSON out; sets an HTTP-style status (200, 400 or 500).
    std::string handle_json(const std::string& body, int& status);

    /// Replaces the snapshot after validation; in-flight requests keep the old one.
    void swap(std::shared_ptr<const Snapshot> next);
    void reload(const std::string& index_path, const std::string& model_path, const std::string& weights_path = "");
    std::shared_ptr<const Snapshot> snapshot() const;

    ServiceStats stats() const;
    /// Plain-text counters: requests, hits, hit ratio, p50/p99 latency.
    std::string metrics_text() const;
    const ServiceConfig& config() const { return config_; }

private:
    void record_latency(double ms);

    ServiceConfig config_;
    Clock clock_;
    ResponseCache cache_;
    mutable std::mutex snap_mu_;
    std::shared_ptr<const Snapshot> snapshot_;
    mutable std::mutex stats_mu_;
    ServiceStats stats_;
    std::vector<double> latencies_;  // ring buffer of recent request latencies
    std::size_t latency_next_ = 0;
};

/// Blocking HTTP front end: POST /v1/search, GET /healthz, GET /metrics.
class HttpFrontend {
public:
    explicit HttpFrontend(SearchService& service);
    ~HttpFrontend();
    HttpFrontend(const HttpFrontend&) = delete;
    HttpFrontend& operator=(const HttpFrontend&) = delete;

    /// Binds and returns the port; port 0 picks a free one.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ueppr
