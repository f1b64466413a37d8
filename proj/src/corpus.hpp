// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "common.hpp"

namespace ueppr {

struct Location {
    double lat = 0.0;
    double lon = 0.0;
    std::string zip;
    std::string country;

    bool operator==(const Location&) const = default;
};

struct ProductDoc {
    std::uint64_t product_id = 0;
    std::string title;
    std::vector<std::string> tags;
    std::string description;
    std::vector<std::pair<std::string, std::string>> attributes;
    std::vector<std::string> category_path;  // root to leaf
    std::uint64_t shop_id = 0;
    Location location;
    std::vector<double> quality;
    // Optional externally computed text representation; empty means zeros.
    std::vector<float> text_vector;

    bool operator==(const ProductDoc&) const = default;
};

struct QueryUserContext {
    std::string query;
    std::optional<Location> user_location;
    std::vector<std::string> recent_searches;  // newest first
    std::vector<std::uint64_t> recent_shop_clicks;
    std::vector<std::string> recent_clicked_terms;
    std::vector<std::string> purchased_tags;

    bool operator==(const QueryUserContext&) const = default;
};

enum class InteractionKind { click, cartadd, purchase };

const char* kind_name(InteractionKind kind);
InteractionKind parse_kind(const std::string& name);

struct Interaction {
    QueryUserContext context;
    std::uint64_t product_id = 0;
    InteractionKind kind = InteractionKind::click;
    std::int64_t timestamp = 0;

    bool operator==(const Interaction&) const = default;
};

using InteractionLog = std::vector<Interaction>;

class ProductCorpus {
public:
    ProductCorpus() = default;
    /// Throws on duplicate ids, empty category paths, or inconsistent quality dimension.
    explicit ProductCorpus(std::vector<ProductDoc> products);

    std::size_t size() const { return products_.size(); }
    bool empty() const { return products_.empty(); }
    const std::vector<ProductDoc>& products() const { return products_; }
    const ProductDoc& operator[](std::size_t i) const { return products_[i]; }
    const ProductDoc* find(std::uint64_t id) const;
    std::optional<std::size_t> index_of(std::uint64_t id) const;
    std::size_t quality_dim() const { return quality_dim_; }

    bool operator==(const ProductCorpus& other) const { return products_ == other.products_; }

private:
    std::vector<ProductDoc> products_;
    std::unordered_map<std::uint64_t, std::size_t> by_id_;
    std::size_t quality_dim_ = 0;
};

/// product_id -> historical queries (normalized text) with counts, sorted by
/// count descending then text ascending.
class BipartiteGraph {
public:
    using Neighbors = std::vector<std::pair<std::string, std::uint32_t>>;

    void set(std::uint64_t product_id, Neighbors neighbors);
    const Neighbors& neighbors(std::uint64_t product_id) const;
    std::size_t num_products() const { return adjacency_.size(); }
    std::size_t num_edges() const;
    const std::map<std::uint64_t, Neighbors>& adjacency() const { return adjacency_; }

    bool operator==(const BipartiteGraph&) const = default;

private:
    std::map<std::uint64_t, Neighbors> adjacency_;
};

struct EvalQuery {
    std::string key;  // canonical context key
    QueryUserContext context;
    std::vector<std::uint64_t> targets;  // purchased product ids, first-seen order
};

struct TrainEvalSplit {
    InteractionLog train;
    std::vector<EvalQuery> eval;
    std::size_t discarded = 0;  // non-purchase records at/after the cutoff
};

// JSON lines I/O.
ProductCorpus load_products(const std::string& path);
ProductCorpus parse_products(const std::string& jsonl, const std::string& source = "<memory>");
std::string serialize_products(const ProductCorpus& corpus);
void save_products(const std::string& path, const ProductCorpus& corpus);

InteractionLog load_interactions(const std::string& path);
InteractionLog parse_interactions(const std::string& jsonl, const std::string& source = "<memory>");
std::string serialize_interactions(const InteractionLog& log);
void save_interactions(const std::string& path, const InteractionLog& log);

std::string context_to_json(const QueryUserContext& ctx);
QueryUserContext context_from_json(const std::string& json);

/// Canonical, order-stable key for a context. Sequences keep their order,
/// set-valued fields are sorted.
std::string canonical_context_key(const QueryUserContext& ctx);

/// Positive (cartadd/purchase) query-product pairs seen at least min_count times.
BipartiteGraph build_bipartite_graph(const InteractionLog& log, std::uint32_t min_count);

/// train = timestamp < cutoff (all kinds); eval = purchases with timestamp >= cutoff,
/// grouped by canonical context.
TrainEvalSplit split_train_eval(const InteractionLog& log, std::int64_t cutoff);

/// Cutoff leaving the last sixth of the log's time span for evaluation.
std::int64_t default_cutoff(const InteractionLog& log);

struct SynthOptions {
    std::uint64_t seed = 1;
    std::size_t n_products = 2000;
    std::size_t n_queries = 400;  // distinct query intents
    std::size_t n_users = 500;
    std::size_t n_interactions = 0;  // 0 -> 20 per user
    double quality_effect = 3.0;      // weight of the latent quality on choice
    double location_affinity = 2.0;   // weight per 1000 km of distance penalty
    double zipf_exponent = 1.1;
    double occasion_share = 0.3;      // probability a search is a gift/occasion query
    double color_share = 0.25;        // probability a concept search names a color
    int days = 30;
    int eval_days = 5;
    std::int64_t start_timestamp = 1'700'000'000;
};

struct SyntheticCorpus {
    ProductCorpus products;
    InteractionLog log;
    std::int64_t cutoff = 0;  // start of the evaluation window
};

SyntheticCorpus synthesize_corpus(const SynthOptions& options);

/// Great-circle distance in kilometres.
double haversine_km(double lat1, double lon1, double lat2, double lon2);

}  // namespace ueppr
