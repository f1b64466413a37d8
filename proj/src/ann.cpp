// SPDX-License-Identifier: Apache-2.0
#include "ann.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <queue>
#include <unordered_set>

#include "binio.hpp"

namespace ueppr {

double dot(const float* a, const float* b, std::size_t n) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += double(a[i]) * double(b[i]);
    return s;
}

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) fail(ErrorCode::invalid_argument, "dot: dimension mismatch");
    return dot(a.data(), b.data(), a.size());
}

bool hit_before(const Hit& a, const Hit& b) { return a.score != b.score ? a.score > b.score : a.id < b.id; }

const char* index_kind_name(IndexKind kind) {
    switch (kind) {
        case IndexKind::exact: return "exact";
        case IndexKind::hnsw: return "hnsw";
        case IndexKind::quantized: return "quantized";
    }
    return "exact";
}

IndexKind parse_index_kind(const std::string& name) {
    if (name == "exact") return IndexKind::exact;
    if (name == "hnsw") return IndexKind::hnsw;
    if (name == "quantized") return IndexKind::quantized;
    fail(ErrorCode::invalid_argument, "unknown index kind '" + name + "'");
}

void VectorSet::add(std::uint64_t id, std::span<const float> v) {
    if (ids.empty() && dim == 0) dim = v.size();
    if (v.size() != dim) fail(ErrorCode::invalid_argument, "vector dimension mismatch");
    ids.push_back(id);
    data.insert(data.end(), v.begin(), v.end());
}

void VectorSet::add(std::uint64_t id, std::span<const double> v) {
    std::vector<float> f(v.begin(), v.end());
    add(id, std::span<const float>(f));
}

void save_vectors(const std::string& path, const VectorSet& vs) {
    Writer w;
    for (std::size_t i = 0; i < vs.size(); ++i) {
        w.put<std::uint64_t>(vs.ids[i]);
        for (std::size_t j = 0; j < vs.dim; ++j) w.put<float>(vs.row(i)[j]);
    }
    write_file(path, w.take());
}

VectorSet load_vectors(const std::string& path, std::size_t dim) {
    const std::string bytes = read_file(path);
    const std::size_t rec = 8 + 4 * dim;
    if (dim == 0 || bytes.size() % rec != 0) fail(ErrorCode::parse, path + ": size is not a multiple of the record size");
    Reader r(bytes, path);
    VectorSet vs;
    vs.dim = dim;
    while (!r.done()) {
        vs.ids.push_back(r.get<std::uint64_t>());
        for (std::size_t j = 0; j < dim; ++j) vs.data.push_back(r.get<float>());
    }
    return vs;
}

namespace {

void check_unique(const VectorSet& v) {
    if (v.data.size() != v.ids.size() * v.dim) fail(ErrorCode::invalid_argument, "vector data size does not match ids");
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(v.ids.size());
    for (auto id : v.ids)
        if (!seen.insert(id).second) fail(ErrorCode::invalid_argument, "duplicate id " + std::to_string(id) + " in index");
}

// Candidate ordering for graph search: higher score first, lower id on ties.
struct Cand {
    double score;
    std::uint32_t node;
    std::uint64_t id;
};
struct WorseFirst {
    bool operator()(const Cand& a, const Cand& b) const { return a.score != b.score ? a.score < b.score : a.id > b.id; }
};
struct BetterFirst {
    bool operator()(const Cand& a, const Cand& b) const { return a.score != b.score ? a.score > b.score : a.id < b.id; }
};

template <typename Score>
std::vector<std::pair<std::size_t, double>> top_k_by(std::size_t n, std::size_t k, const std::vector<std::uint64_t>& ids,
                                                      Score&& score) {
    k = std::min(k, n);
    if (k == 0) return {};
    // Min-heap of the current best k: the top is the weakest kept entry.
    auto weaker = [&](const std::pair<std::size_t, double>& a, const std::pair<std::size_t, double>& b) {
        return a.second != b.second ? a.second > b.second : ids[a.first] < ids[b.first];
    };
    std::vector<std::pair<std::size_t, double>> heap;
    heap.reserve(k + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = score(i);
        if (heap.size() < k) {
            heap.emplace_back(i, s);
            std::push_heap(heap.begin(), heap.end(), weaker);
        } else {
            const auto& w = heap.front();
            if (s > w.second || (s == w.second && ids[i] < ids[w.first])) {
                std::pop_heap(heap.begin(), heap.end(), weaker);
                heap.back() = {i, s};
                std::push_heap(heap.begin(), heap.end(), weaker);
            }
        }
    }
    std::sort(heap.begin(), heap.end(), weaker);
    return heap;
}

}  // namespace

std::vector<std::pair<std::size_t, double>> top_k_rows(const VectorSet& vs, std::span<const float> q, std::size_t k) {
    if (q.size() != vs.dim && vs.size() > 0) fail(ErrorCode::invalid_argument, "query dimension mismatch");
    return top_k_by(vs.size(), k, vs.ids, [&](std::size_t i) { return dot(q.data(), vs.row(i), vs.dim); });
}

// ---------------------------------------------------------------------------
// Build

VectorIndex VectorIndex::build_exact(VectorSet vectors) {
    check_unique(vectors);
    VectorIndex idx;
    idx.kind_ = IndexKind::exact;
    idx.vectors_ = std::move(vectors);
    return idx;
}

VectorIndex VectorIndex::build_quantized(VectorSet vectors, const QuantParams& params) {
    check_unique(vectors);
    if (params.bits != 4 && params.bits != 8) fail(ErrorCode::invalid_argument, "quantized index supports 4 or 8 bits");
    if (params.rerank_factor < 1) fail(ErrorCode::invalid_argument, "rerank_factor must be at least 1");
    VectorIndex idx;
    idx.kind_ = IndexKind::quantized;
    idx.quant_ = params;
    idx.vectors_ = std::move(vectors);
    const auto& vs = idx.vectors_;
    const std::size_t d = vs.dim;
    const double levels = double((1u << params.bits) - 1);
    idx.qmin_.assign(d, 0.0f);
    idx.qstep_.assign(d, 0.0f);
    for (std::size_t j = 0; j < d && vs.size() > 0; ++j) {
        float lo = vs.row(0)[j], hi = lo;
        for (std::size_t i = 1; i < vs.size(); ++i) {
            lo = std::min(lo, vs.row(i)[j]);
            hi = std::max(hi, vs.row(i)[j]);
        }
        idx.qmin_[j] = lo;
        idx.qstep_[j] = static_cast<float>((double(hi) - double(lo)) / levels);
    }
    idx.codes_.resize(vs.size() * d);
    for (std::size_t i = 0; i < vs.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double step = idx.qstep_[j];
            const double c = step > 0 ? std::round((double(vs.row(i)[j]) - idx.qmin_[j]) / step) : 0.0;
            idx.codes_[i * d + j] = static_cast<std::uint8_t>(std::clamp(c, 0.0, levels));
        }
    return idx;
}

std::vector<float> VectorIndex::dequantize(std::size_t i) const {
    if (kind_ != IndexKind::quantized) fail(ErrorCode::invalid_argument, "dequantize needs a quantized index");
    std::vector<float> out(dim());
    for (std::size_t j = 0; j < dim(); ++j)
        out[j] = static_cast<float>(double(qmin_[j]) + double(qstep_[j]) * codes_[i * dim() + j]);
    return out;
}

VectorIndex VectorIndex::build_hnsw(VectorSet vectors, const HnswParams& params, std::uint64_t seed) {
    check_unique(vectors);
    if (params.m < 2) fail(ErrorCode::invalid_argument, "HNSW M must be at least 2");
    if (params.ef_construction < 1 || params.ef_search < 1)
        fail(ErrorCode::invalid_argument, "HNSW ef values must be positive");
    VectorIndex idx;
    idx.kind_ = IndexKind::hnsw;
    idx.hnsw_ = params;
    idx.vectors_ = std::move(vectors);
    const std::size_t n = idx.vectors_.size();
    idx.levels_.resize(n);
    idx.links_.resize(n);
    Rng rng(seed);
    const double ml = 1.0 / std::log(double(params.m));
    for (std::size_t i = 0; i < n; ++i) {
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        idx.levels_[i] = static_cast<int>(std::floor(-std::log(u) * ml));
        idx.links_[i].resize(std::size_t(idx.levels_[i]) + 1);
    }
    for (std::size_t i = 0; i < n; ++i) idx.hnsw_insert(static_cast<std::uint32_t>(i), idx.levels_[i]);
    idx.repair_connectivity();
    return idx;
}

std::vector<std::pair<double, std::uint32_t>> VectorIndex::search_layer(const float* q, std::uint32_t entry,
                                                                        std::size_t ef, int level) const {
    const auto& vs = vectors_;
    std::vector<char> visited(vs.size(), 0);
    std::priority_queue<Cand, std::vector<Cand>, WorseFirst> frontier;  // best on top
    std::priority_queue<Cand, std::vector<Cand>, BetterFirst> results;  // worst on top
    const Cand e{dot(q, vs.row(entry), vs.dim), entry, vs.ids[entry]};
    visited[entry] = 1;
    frontier.push(e);
    results.push(e);
    while (!frontier.empty()) {
        const Cand c = frontier.top();
        frontier.pop();
        const Cand& worst = results.top();
        if (results.size() >= ef && WorseFirst{}(c, worst)) break;
        for (auto nb : links_[c.node][std::size_t(level)]) {
            if (visited[nb]) continue;
            visited[nb] = 1;
            const Cand x{dot(q, vs.row(nb), vs.dim), nb, vs.ids[nb]};
            if (results.size() < ef || WorseFirst{}(results.top(), x)) {
                frontier.push(x);
                results.push(x);
                if (results.size() > ef) results.pop();
            }
        }
    }
    std::vector<std::pair<double, std::uint32_t>> out;
    out.reserve(results.size());
    while (!results.empty()) {
        out.emplace_back(results.top().score, results.top().node);
        results.pop();
    }
    std::reverse(out.begin(), out.end());  // best first
    return out;
}

// Diversity heuristic: keep a candidate only if it is closer to the base
// than to every neighbor already kept.
std::vector<std::uint32_t> VectorIndex::select_neighbors(std::vector<std::pair<double, std::uint32_t>> cands,
                                                         std::size_t m) const {
    const auto& vs = vectors_;
    std::sort(cands.begin(), cands.end(), [&](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : vs.ids[a.second] < vs.ids[b.second];
    });
    std::vector<std::uint32_t> kept;
    for (const auto& [s, c] : cands) {
        if (kept.size() >= m) break;
        bool ok = true;
        for (auto r : kept) {
            if (dot(vs.row(c), vs.row(r), vs.dim) > s) {
                ok = false;
                break;
            }
        }
        if (ok) kept.push_back(c);
    }
    return kept;
}

void VectorIndex::hnsw_insert(std::uint32_t node, int level) {
    const auto& vs = vectors_;
    if (max_level_ < 0) {
        entry_ = node;
        max_level_ = level;
        return;
    }
    const float* q = vs.row(node);
    std::uint32_t cur = entry_;
    for (int l = max_level_; l > level; --l) cur = search_layer(q, cur, 1, l).front().second;
    for (int l = std::min(level, max_level_); l >= 0; --l) {
        auto found = search_layer(q, cur, hnsw_.ef_construction, l);
        const std::size_t cap = l == 0 ? 2 * hnsw_.m : hnsw_.m;
        auto chosen = select_neighbors(found, hnsw_.m);
        links_[node][std::size_t(l)] = chosen;
        for (auto nb : chosen) {
            auto& back = links_[nb][std::size_t(l)];
            back.push_back(node);
            if (back.size() > cap) {
                std::vector<std::pair<double, std::uint32_t>> pool;
                for (auto x : back) pool.emplace_back(dot(vs.row(nb), vs.row(x), vs.dim), x);
                back = select_neighbors(std::move(pool), cap);
            }
        }
        cur = found.front().second;
    }
    if (level > max_level_) {
        max_level_ = level;
        entry_ = node;
    }
}

std::size_t VectorIndex::reachable_from_entry() const {
    if (kind_ != IndexKind::hnsw) return size();
    if (size() == 0) return 0;
    std::vector<char> seen(size(), 0);
    std::vector<std::uint32_t> stack{entry_};
    seen[entry_] = 1;
    std::size_t count = 0;
    while (!stack.empty()) {
        const auto u = stack.back();
        stack.pop_back();
        ++count;
        for (auto v : links_[u][0])
            if (!seen[v]) {
                seen[v] = 1;
                stack.push_back(v);
            }
    }
    return count;
}

// Pruning can strand nodes at level 0; link each stranded node from its
// nearest reachable node.
void VectorIndex::repair_connectivity() {
    const std::size_t n = size();
    if (n == 0) return;
    std::vector<char> seen(n, 0);
    auto flood = [&](std::uint32_t start) {
        std::vector<std::uint32_t> stack{start};
        seen[start] = 1;
        while (!stack.empty()) {
            const auto u = stack.back();
            stack.pop_back();
            for (auto v : links_[u][0])
                if (!seen[v]) {
                    seen[v] = 1;
                    stack.push_back(v);
                }
        }
    };
    flood(entry_);
    for (std::uint32_t u = 0; u < n; ++u) {
        if (seen[u]) continue;
        const auto found = search_layer(vectors_.row(u), entry_, hnsw_.ef_construction, 0);
        std::uint32_t host = entry_;
        for (const auto& [s, v] : found)
            if (seen[v]) {
                host = v;
                break;
            }
        links_[host][0].push_back(u);
        flood(u);
    }
}

// ---------------------------------------------------------------------------
// Search

std::vector<Hit> VectorIndex::knn(std::span<const double> query, std::size_t k, std::size_t ef) const {
    std::vector<float> q(query.begin(), query.end());
    return knn(std::span<const float>(q), k, ef);
}

std::vector<Hit> VectorIndex::knn(std::span<const float> query, std::size_t k, std::size_t ef) const {
    if (k == 0) fail(ErrorCode::invalid_argument, "knn: k must be at least 1");
    if (size() == 0) return {};
    if (query.size() != dim())
        fail(ErrorCode::invalid_argument,
             "knn: query dimension " + std::to_string(query.size()) + " != index dimension " + std::to_string(dim()));
    switch (kind_) {
        case IndexKind::exact: return knn_exact(query, k);
        case IndexKind::hnsw: return knn_hnsw(query, k, ef ? ef : hnsw_.ef_search);
        case IndexKind::quantized: return knn_quantized(query, k);
    }
    return {};
}

std::vector<Hit> VectorIndex::knn_exact(std::span<const float> q, std::size_t k) const {
    std::vector<Hit> out;
    for (const auto& [i, s] : top_k_rows(vectors_, q, k)) out.push_back({vectors_.ids[i], s});
    return out;
}

std::vector<Hit> VectorIndex::knn_hnsw(std::span<const float> q, std::size_t k, std::size_t ef) const {
    std::uint32_t cur = entry_;
    for (int l = max_level_; l > 0; --l) cur = search_layer(q.data(), cur, 1, l).front().second;
    const auto found = search_layer(q.data(), cur, std::max(ef, k), 0);
    std::vector<Hit> out;
    for (const auto& [s, node] : found) out.push_back({vectors_.ids[node], s});
    std::sort(out.begin(), out.end(), hit_before);
    if (out.size() > k) out.resize(k);
    return out;
}

std::vector<Hit> VectorIndex::knn_quantized(std::span<const float> q, std::size_t k) const {
    const std::size_t d = dim();
    std::vector<double> w(d);
    double base = 0;
    for (std::size_t j = 0; j < d; ++j) {
        w[j] = double(q[j]) * double(qstep_[j]);
        base += double(q[j]) * double(qmin_[j]);
    }
    const std::size_t fetch = std::min(size(), quant_.rerank_factor * k);
    const auto coarse = top_k_by(size(), fetch, vectors_.ids, [&](std::size_t i) {
        const std::uint8_t* c = codes_.data() + i * d;
        double s = base;
        for (std::size_t j = 0; j < d; ++j) s += w[j] * c[j];
        return s;
    });
    std::vector<Hit> out;
    out.reserve(coarse.size());
    for (const auto& [i, s] : coarse) out.push_back({vectors_.ids[i], dot(q.data(), vectors_.row(i), d)});
    std::sort(out.begin(), out.end(), hit_before);
    if (out.size() > k) out.resize(k);
    return out;
}

// ---------------------------------------------------------------------------
// File format

namespace {
constexpr char kIndexMagic[7] = {'U', 'E', 'P', 'R', 'I', 'D', 'X'};
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace

std::string VectorIndex::serialize() const {
    Writer w;
    w.put_bytes(std::string_view(kIndexMagic, 7));
    w.put<std::uint32_t>(kIndexVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(kind_));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(hnsw_.m));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(hnsw_.ef_construction));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(hnsw_.ef_search));
    w.put<std::uint32_t>(quant_.bits);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(quant_.rerank_factor));
    w.put<std::uint64_t>(size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(dim()));
    w.put_string(model_version_);
    for (auto id : vectors_.ids) w.put<std::uint64_t>(id);
    for (float v : vectors_.data) w.put<float>(v);
    if (kind_ == IndexKind::quantized) {
        for (float v : qmin_) w.put<float>(v);
        for (float v : qstep_) w.put<float>(v);
        w.put_bytes(std::string_view(reinterpret_cast<const char*>(codes_.data()), codes_.size()));
    } else if (kind_ == IndexKind::hnsw) {
        w.put<std::uint32_t>(entry_);
        w.put<std::int32_t>(max_level_);
        for (std::size_t i = 0; i < size(); ++i) {
            w.put<std::int32_t>(levels_[i]);
            for (const auto& l : links_[i]) {
                w.put<std::uint32_t>(static_cast<std::uint32_t>(l.size()));
                for (auto nb : l) w.put<std::uint32_t>(nb);
            }
        }
    }
    return w.take();
}

VectorIndex VectorIndex::deserialize(std::string_view bytes) {
    Reader r(bytes, "index file");
    if (r.bytes(7) != std::string_view(kIndexMagic, 7)) fail(ErrorCode::parse, "not an index file (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kIndexVersion) fail(ErrorCode::version_mismatch, "unsupported index version " + std::to_string(version));
    VectorIndex idx;
    const auto kind = r.get<std::uint32_t>();
    if (kind > 2) fail(ErrorCode::parse, "unknown index kind " + std::to_string(kind));
    idx.kind_ = static_cast<IndexKind>(kind);
    idx.hnsw_.m = r.get<std::uint32_t>();
    idx.hnsw_.ef_construction = r.get<std::uint32_t>();
    idx.hnsw_.ef_search = r.get<std::uint32_t>();
    idx.quant_.bits = r.get<std::uint32_t>();
    idx.quant_.rerank_factor = r.get<std::uint32_t>();
    const auto n = r.get<std::uint64_t>();
    const auto d = r.get<std::uint32_t>();
    idx.model_version_ = r.string();
    if (n * (8 + 4ull * d) > r.remaining()) fail(ErrorCode::parse, "index file truncated");
    idx.vectors_.dim = d;
    idx.vectors_.ids.resize(n);
    for (auto& id : idx.vectors_.ids) id = r.get<std::uint64_t>();
    idx.vectors_.data.resize(n * d);
    for (auto& v : idx.vectors_.data) v = r.get<float>();
    check_unique(idx.vectors_);
    if (idx.kind_ == IndexKind::quantized) {
        idx.qmin_.resize(d);
        idx.qstep_.resize(d);
        for (auto& v : idx.qmin_) v = r.get<float>();
        for (auto& v : idx.qstep_) v = r.get<float>();
        const auto raw = r.bytes(n * d);
        idx.codes_.assign(raw.begin(), raw.end());
    } else if (idx.kind_ == IndexKind::hnsw) {
        idx.entry_ = r.get<std::uint32_t>();
        idx.max_level_ = r.get<std::int32_t>();
        idx.levels_.resize(n);
        idx.links_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            idx.levels_[i] = r.get<std::int32_t>();
            if (idx.levels_[i] < 0 || idx.levels_[i] > 64) fail(ErrorCode::parse, "corrupt HNSW level");
            idx.links_[i].resize(std::size_t(idx.levels_[i]) + 1);
            for (auto& l : idx.links_[i]) {
                l.resize(r.get<std::uint32_t>());
                for (auto& nb : l) {
                    nb = r.get<std::uint32_t>();
                    if (nb >= n) fail(ErrorCode::parse, "corrupt HNSW link");
                }
            }
        }
        if (n > 0 && idx.entry_ >= n) fail(ErrorCode::parse, "corrupt HNSW entry point");
    }
    if (!r.done()) fail(ErrorCode::parse, "trailing bytes after index");
    return idx;
}

void VectorIndex::save(const std::string& path) const { write_file(path, serialize()); }
VectorIndex VectorIndex::load(const std::string& path) { return deserialize(read_file(path)); }

// ---------------------------------------------------------------------------
// Evaluation and tuning

namespace {

std::vector<std::uint64_t> ids_of(const std::vector<Hit>& hits) {
    std::vector<std::uint64_t> ids;
    ids.reserve(hits.size());
    for (const auto& h : hits) ids.push_back(h.id);
    return ids;
}

double mean_recall(const VectorIndex& idx, const std::vector<RecallQuery>& queries, std::size_t k, std::size_t ef) {
    if (queries.empty()) return 0.0;
    double s = 0;
    for (const auto& q : queries) s += recall_at_k(ids_of(idx.knn(std::span<const float>(q.vector), k, ef)), q.targets, k);
    return s / double(queries.size());
}

}  // namespace

double recall_loss_at_k(const VectorIndex& ann, const VectorIndex& exact, const std::vector<RecallQuery>& queries,
                        std::size_t k, std::size_t ef_search) {
    return mean_recall(exact, queries, k, 0) - mean_recall(ann, queries, k, ef_search);
}

double neighbor_recall(const VectorIndex& ann, const VectorIndex& exact, const std::vector<RecallQuery>& queries,
                       std::size_t k, std::size_t ef_search) {
    if (queries.empty()) return 1.0;
    double s = 0;
    for (const auto& q : queries) {
        const auto truth = ids_of(exact.knn(std::span<const float>(q.vector), k));
        if (truth.empty()) {
            s += 1.0;
            continue;
        }
        s += recall_at_k(ids_of(ann.knn(std::span<const float>(q.vector), k, ef_search)), truth, k);
    }
    return s / double(queries.size());
}

AnnTuneResult tune_ann(const VectorSet& vectors, const std::vector<RecallQuery>& queries, const AnnTuneOptions& o) {
    if (queries.empty()) fail(ErrorCode::invalid_argument, "tune_ann needs evaluation queries");
    const VectorIndex exact = VectorIndex::build_exact(vectors);
    const double exact_recall = mean_recall(exact, queries, o.k, 0);
    std::vector<std::vector<std::uint64_t>> truth;
    for (const auto& q : queries) truth.push_back(ids_of(exact.knn(std::span<const float>(q.vector), o.k)));

    struct Measured {
        double recall = 0, nrecall = 0, latency_ms = 0;
    };
    auto measure = [&](const VectorIndex& idx, std::size_t ef) {
        Measured m;
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::vector<std::uint64_t>> got;
        got.reserve(queries.size());
        for (const auto& q : queries) got.push_back(ids_of(idx.knn(std::span<const float>(q.vector), o.k, ef)));
        const auto t1 = std::chrono::steady_clock::now();
        m.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / double(queries.size());
        for (std::size_t i = 0; i < queries.size(); ++i) {
            m.recall += recall_at_k(got[i], queries[i].targets, o.k);
            m.nrecall += truth[i].empty() ? 1.0 : recall_at_k(got[i], truth[i], o.k);
        }
        m.recall /= double(queries.size());
        m.nrecall /= double(queries.size());
        return m;
    };
    auto objective_of = [&](const Measured& m) {
        double v = m.recall + 0.1 * m.nrecall;
        if (m.latency_ms > o.latency_ceiling_ms) v -= 1.0 + (m.latency_ms - o.latency_ceiling_ms) / o.latency_ceiling_ms;
        return v;
    };

    AnnTuneResult res;
    std::map<std::vector<double>, Measured> measured;
    if (o.kind == IndexKind::hnsw) {
        std::map<std::pair<std::size_t, std::size_t>, VectorIndex> built;
        std::vector<ParamRange> space{{"m", double(o.m_lo), double(o.m_hi), true, false},
                                      {"ef_construction", double(o.efc_lo), double(o.efc_hi), true, true},
                                      {"ef_search", double(std::max(o.ef_lo, o.k)), double(std::max(o.ef_hi, o.k)), true, true}};
        auto objective = [&](const std::vector<double>& x) {
            const auto key = std::make_pair(std::size_t(x[0]), std::size_t(x[1]));
            auto it = built.find(key);
            if (it == built.end()) {
                // Keep one graph alive at a time to bound memory.
                built.clear();
                it = built.emplace(key, VectorIndex::build_hnsw(vectors, {key.first, key.second, 100}, o.seed)).first;
            }
            const Measured m = measure(it->second, std::size_t(x[2]));
            measured[x] = m;
            return objective_of(m);
        };
        res.trace = maximize(space, objective, o.budget, o.seed);
        res.hnsw = {std::size_t(res.trace.best_x[0]), std::size_t(res.trace.best_x[1]), std::size_t(res.trace.best_x[2])};
    } else if (o.kind == IndexKind::quantized) {
        std::vector<ParamRange> space{{"bits8", 0, 1, true, false},
                                      {"rerank_factor", double(o.rerank_lo), double(o.rerank_hi), true, false}};
        auto objective = [&](const std::vector<double>& x) {
            const QuantParams qp{x[0] > 0.5 ? 8u : 4u, std::size_t(x[1])};
            const Measured m = measure(VectorIndex::build_quantized(vectors, qp), 0);
            measured[x] = m;
            return objective_of(m);
        };
        res.trace = maximize(space, objective, o.budget, o.seed);
        res.quant = {res.trace.best_x[0] > 0.5 ? 8u : 4u, std::size_t(res.trace.best_x[1])};
    } else {
        fail(ErrorCode::invalid_argument, "tune_ann: nothing to tune for an exact index");
    }
    const Measured& best = measured.at(res.trace.best_x);
    res.recall_loss = exact_recall - best.recall;
    res.neighbor_recall = best.nrecall;
    res.mean_latency_ms = best.latency_ms;
    return res;
}

}  // namespace ueppr
