// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "corpus.hpp"
#include "model.hpp"

namespace ueppr {

using TokenIds = std::vector<std::uint32_t>;

/// Stable bucket for a token: FNV-1a 64 modulo `buckets`.
std::uint32_t hash_token(std::string_view token, std::size_t buckets);

// ---------------------------------------------------------------------------
// Featurized inputs

struct QueryInput {
    std::array<TokenIds, kQueryGroups> groups;
    std::vector<TokenIds> searches;    // at most max_searches, newest first
    std::vector<std::uint32_t> shops;  // shop_table rows, at most max_shops
};

struct ProductFeatures {
    std::uint64_t product_id = 0;
    std::array<TokenIds, kProductGroups> groups;
    std::vector<std::string> neighbor_text;  // normalized, count-descending
    std::vector<std::uint32_t> neighbor_count;
    std::vector<TokenIds> neighbor_tokens;
    std::vector<double> text;  // text_dim values, zeros when absent
};

/// A product plus the neighbor queries its graph encoder averages.
struct ProductInput {
    const ProductFeatures* features = nullptr;
    std::vector<std::uint32_t> neighbors;
    /// When non-empty, used as the graph slot instead of pooling `neighbors`.
    std::vector<double> fixed_graph;
};

QueryInput featurize_query(const TwoTowerModel& model, const QueryUserContext& ctx);
ProductFeatures featurize_product(const TwoTowerModel& model, const ProductDoc& product, const BipartiteGraph& graph);

/// Picks up to n neighbors after dropping any equal to `target_query`
/// (normalized). With an rng: count-weighted sampling without replacement.
/// Without: the n highest-count neighbors.
std::vector<std::uint32_t> select_neighbors(const ProductFeatures& features, std::string_view target_query,
                                            std::size_t n, Rng* rng);

// ---------------------------------------------------------------------------
// Gradients

/// Row-sparse gradient for an embedding table.
class SparseRows {
public:
    explicit SparseRows(std::size_t cols = 0) : cols_(cols) {}
    double* row(std::uint32_t r);
    const std::vector<std::uint32_t>& rows() const { return rows_; }
    const double* row_data(std::size_t slot) const { return data_.data() + slot * cols_; }
    const double* find(std::uint32_t r) const;
    std::size_t cols() const { return cols_; }
    void clear();

private:
    std::size_t cols_;
    std::unordered_map<std::uint32_t, std::uint32_t> slot_;
    std::vector<std::uint32_t> rows_;
    std::vector<double> data_;
};

struct Gradients {
    explicit Gradients(const TwoTowerModel& model);
    void zero();

    std::vector<std::vector<double>> dense;  // per parameter; empty for tables and buffers
    SparseRows token;
    SparseRows shop;
};

// ---------------------------------------------------------------------------
// Tower passes

enum class BnMode { inference, train, frozen };

struct BnStats {
    std::vector<double> mean;
    std::vector<double> var;
};

struct TowerStats {
    BnStats bn1;
    BnStats bn2;
};

struct MlpCache {
    Matrix x, z1, xhat1, a1, z2, xhat2, y;
    std::vector<double> inv_std1, inv_std2, norms;
    TowerStats stats;
    BnMode mode = BnMode::inference;
};

struct TransformerCache {
    std::size_t len = 0;
    Matrix x, k, v;  // len x d_e
    std::vector<double> q, attn, ctx, o, h, ff_pre, ff_act, f, out;
};

struct QueryTowerCache {
    MlpCache mlp;
    std::vector<TransformerCache> transformer;
};

struct ProductTowerCache {
    MlpCache mlp;
};

/// Unit-norm query vectors, one row per input.
Matrix forward_query_tower(const TwoTowerModel& model, std::span<const QueryInput> inputs, BnMode mode,
                           QueryTowerCache* cache = nullptr, const TowerStats* frozen = nullptr);
void backward_query_tower(const TwoTowerModel& model, std::span<const QueryInput> inputs,
                          const QueryTowerCache& cache, const Matrix& d_out, Gradients& grads);

/// Unit-norm product vectors. The graph slot never sends gradient into the
/// token table.
Matrix forward_product_tower(const TwoTowerModel& model, std::span<const ProductInput> inputs, BnMode mode,
                             ProductTowerCache* cache = nullptr, const TowerStats* frozen = nullptr);
void backward_product_tower(const TwoTowerModel& model, std::span<const ProductInput> inputs,
                            const ProductTowerCache& cache, const Matrix& d_out, Gradients& grads);

/// Folds train-mode batch statistics into the running mean/var.
void update_running_stats(TwoTowerModel& model, bool product_side, const TowerStats& stats, std::size_t batch);

// ---------------------------------------------------------------------------
// Single-item operations (inference mode)

/// Mean of the token rows; zero vector for an empty bag.
std::vector<double> avg_embed(const TwoTowerModel& model, const TokenBag& tokens);

/// Concatenated group averages in group_id order.
std::vector<double> token_rep(const TwoTowerModel& model, const std::vector<TokenFieldGroup>& groups,
                              std::size_t expected_groups);

std::vector<double> graph_encode(const TwoTowerModel& model, std::uint64_t product_id, const BipartiteGraph& graph,
                                 std::string_view target_query, std::size_t n_samples, Rng* rng);

/// One-layer single-head transformer over [q, searches..., shops...];
/// returns the output at the query position. Slots whose mask entry is 0 are
/// padding and take no part in attention. Empty masks mean all present.
std::vector<double> session_transformer(const TwoTowerModel& model, std::span<const double> q_vec,
                                        const std::vector<std::vector<double>>& search_vecs,
                                        const std::vector<std::vector<double>>& shop_vecs,
                                        const std::vector<char>& search_mask = {},
                                        const std::vector<char>& shop_mask = {});

/// Transformer forward/backward on explicit vectors (exposed for gradient tests).
void transformer_forward(const TwoTowerModel& model, std::span<const double> q_vec,
                         const std::vector<const double*>& history, const std::vector<std::size_t>& positions,
                         TransformerCache& cache);
/// Returns d(q_vec); history gradients are written to d_history (one row per
/// history item) and parameter gradients accumulate into grads.
std::vector<double> transformer_backward(const TwoTowerModel& model, const std::vector<std::size_t>& positions,
                                         const TransformerCache& cache, std::span<const double> d_out,
                                         Matrix& d_history, Gradients& grads);

std::vector<double> product_tower(const TwoTowerModel& model, const ProductDoc& product, const BipartiteGraph& graph);
std::vector<double> query_user_tower(const TwoTowerModel& model, const QueryUserContext& ctx);

/// Dot product; the cosine for unit vectors.
double score(std::span<const double> a, std::span<const double> b);

/// Inference-mode vectors for every product, one row per corpus entry.
Matrix embed_products(const TwoTowerModel& model, const ProductCorpus& corpus, const BipartiteGraph& graph);
Matrix embed_queries(const TwoTowerModel& model, const std::vector<QueryUserContext>& contexts);

}  // namespace ueppr
