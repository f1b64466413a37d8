// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "blackbox.hpp"
#include "corpus.hpp"
#include "metrics.hpp"

namespace ueppr {

struct Hit {
    std::uint64_t id = 0;
    double score = 0.0;
    bool operator==(const Hit&) const = default;
};

/// Dot product of float vectors accumulated in double, left to right.
double dot(const float* a, const float* b, std::size_t n);
double dot(std::span<const float> a, std::span<const float> b);

/// Orders hits by score descending, then id ascending.
bool hit_before(const Hit& a, const Hit& b);

enum class IndexKind : std::uint32_t { exact = 0, hnsw = 1, quantized = 2 };
const char* index_kind_name(IndexKind kind);
IndexKind parse_index_kind(const std::string& name);

struct HnswParams {
    std::size_t m = 16;
    std::size_t ef_construction = 200;
    std::size_t ef_search = 100;
    bool operator==(const HnswParams&) const = default;
};

struct QuantParams {
    std::uint32_t bits = 8;
    std::size_t rerank_factor = 5;
    bool operator==(const QuantParams&) const = default;
};

/// Row-major float vectors with parallel ids.
struct VectorSet {
    std::vector<std::uint64_t> ids;
    std::size_t dim = 0;
    std::vector<float> data;

    std::size_t size() const { return ids.size(); }
    const float* row(std::size_t i) const { return data.data() + i * dim; }
    std::span<const float> row_span(std::size_t i) const { return {row(i), dim}; }
    void add(std::uint64_t id, std::span<const float> v);
    void add(std::uint64_t id, std::span<const double> v);
};

/// Vectors file: per record u64 id + dim f32, little-endian.
void save_vectors(const std::string& path, const VectorSet& vectors);
VectorSet load_vectors(const std::string& path, std::size_t dim);

/// Immutable after build; safe for concurrent knn calls.
class VectorIndex {
public:
    VectorIndex() = default;

    static VectorIndex build_exact(VectorSet vectors);
    static VectorIndex build_hnsw(VectorSet vectors, const HnswParams& params, std::uint64_t seed);
    static VectorIndex build_quantized(VectorSet vectors, const QuantParams& params);

    IndexKind kind() const { return kind_; }
    std::size_t size() const { return vectors_.size(); }
    std::size_t dim() const { return vectors_.dim; }
    const VectorSet& vectors() const { return vectors_; }
    const HnswParams& hnsw_params() const { return hnsw_; }
    const QuantParams& quant_params() const { return quant_; }
    const std::string& model_version() const { return model_version_; }
    void set_model_version(std::string v) { model_version_ = std::move(v); }

    /// Top-k by inner product, sorted by score then lower id. Returns
    /// min(k, n) hits. `ef_search` overrides the stored HNSW value when > 0.
    std::vector<Hit> knn(std::span<const float> query, std::size_t k, std::size_t ef_search = 0) const;
    std::vector<Hit> knn(std::span<const double> query, std::size_t k, std::size_t ef_search = 0) const;

    /// Nodes reachable from the entry point over level-0 links (HNSW only).
    std::size_t reachable_from_entry() const;
    std::size_t max_level() const { return levels_.empty() ? 0 : std::size_t(max_level_); }
    const std::vector<std::uint32_t>& neighbors(std::size_t node, std::size_t level) const {
        return links_[node][level];
    }

    /// Per-dimension dequantization of a stored code row (quantized only).
    std::vector<float> dequantize(std::size_t i) const;

    // Index file: "UEPRIDX", kind, params, n, D, model_version, ids, vectors,
    // then codes (quantized) or levels and links (HNSW).
    std::string serialize() const;
    static VectorIndex deserialize(std::string_view bytes);
    void save(const std::string& path) const;
    static VectorIndex load(const std::string& path);

private:
    std::vector<Hit> knn_exact(std::span<const float> q, std::size_t k) const;
    std::vector<Hit> knn_hnsw(std::span<const float> q, std::size_t k, std::size_t ef) const;
    std::vector<Hit> knn_quantized(std::span<const float> q, std::size_t k) const;
    void hnsw_insert(std::uint32_t node, int level);
    std::vector<std::pair<double, std::uint32_t>> search_layer(const float* q, std::uint32_t entry, std::size_t ef,
                                                               int level) const;
    std::vector<std::uint32_t> select_neighbors(std::vector<std::pair<double, std::uint32_t>> cands,
                                                std::size_t m) const;
    void repair_connectivity();

    IndexKind kind_ = IndexKind::exact;
    VectorSet vectors_;
    std::string model_version_;
    HnswParams hnsw_;
    QuantParams quant_;
    // HNSW
    std::vector<int> levels_;
    std::vector<std::vector<std::vector<std::uint32_t>>> links_;
    std::uint32_t entry_ = 0;
    int max_level_ = -1;
    // Quantized
    std::vector<float> qmin_, qstep_;
    std::vector<std::uint8_t> codes_;
};

/// Exact top-k over the rows of `vectors` as (row, score), best first.
std::vector<std::pair<std::size_t, double>> top_k_rows(const VectorSet& vectors, std::span<const float> query,
                                                       std::size_t k);

/// Query vectors with their purchase targets for recall measurement.
struct RecallQuery {
    std::vector<float> vector;
    std::vector<std::uint64_t> targets;
};

/// Recall@K(exact) - Recall@K(ann) averaged over queries.
double recall_loss_at_k(const VectorIndex& ann, const VectorIndex& exact, const std::vector<RecallQuery>& queries,
                        std::size_t k, std::size_t ef_search = 0);

/// Mean fraction of the exact top-k ids found by the index.
double neighbor_recall(const VectorIndex& ann, const VectorIndex& exact, const std::vector<RecallQuery>& queries,
                       std::size_t k, std::size_t ef_search = 0);

struct AnnTuneOptions {
    IndexKind kind = IndexKind::hnsw;
    std::size_t k = 10;
    std::size_t budget = 12;
    std::uint64_t seed = 1;
    double latency_ceiling_ms = 20.0;  // mean per-query search time
    // Search box.
    std::size_t m_lo = 4, m_hi = 32;
    std::size_t efc_lo = 50, efc_hi = 400;
    std::size_t ef_lo = 10, ef_hi = 400;
    std::size_t rerank_lo = 1, rerank_hi = 10;
};

struct AnnTuneResult {
    HnswParams hnsw;
    QuantParams quant;
    double recall_loss = 0.0;
    double neighbor_recall = 0.0;
    double mean_latency_ms = 0.0;
    OptimizeResult trace;
};

/// Black-box search over index parameters. The objective is the ANN's
/// Recall@K against the queries' targets, plus a small neighbor-recall term,
/// minus a penalty when mean latency exceeds the ceiling.
AnnTuneResult tune_ann(const VectorSet& vectors, const std::vector<RecallQuery>& queries, const AnnTuneOptions& options);

}  // namespace ueppr
