// SPDX-License-Identifier: Apache-2.0
#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "ann.hpp"

namespace ueppr {

// ---------------------------------------------------------------------------
// Loss

Label label_of(InteractionKind kind) {
    switch (kind) {
        case InteractionKind::purchase: return Label::purchase;
        case InteractionKind::cartadd: return Label::cartadd;
        case InteractionKind::click: return Label::click;
    }
    return Label::click;
}

const char* label_name(Label label) {
    switch (label) {
        case Label::purchase: return "purchase";
        case Label::cartadd: return "cartadd";
        case Label::click: return "click";
        case Label::negative: return "negative";
    }
    return "negative";
}

Label parse_label(const std::string& name) {
    if (name == "purchase") return Label::purchase;
    if (name == "cartadd") return Label::cartadd;
    if (name == "click") return Label::click;
    if (name == "negative") return Label::negative;
    fail(ErrorCode::invalid_argument, "unknown label '" + name + "'");
}

void LossThresholds::validate() const {
    auto in01 = [](double v) { return v > 0.0 && v < 1.0; };
    if (!(in01(purchase) && in01(cartadd) && in01(click) && in01(negative)))
        fail(ErrorCode::invalid_argument, "loss thresholds must lie in (0, 1)");
    if (!(negative < click && click < cartadd && cartadd < purchase))
        fail(ErrorCode::invalid_argument, "loss thresholds must satisfy negative < click < cartadd < purchase");
}

double LossThresholds::for_label(Label label) const {
    switch (label) {
        case Label::purchase: return purchase;
        case Label::cartadd: return cartadd;
        case Label::click: return click;
        case Label::negative: return negative;
    }
    return negative;
}

double multi_part_hinge(double y, Label label, const LossThresholds& t) {
    if (std::isnan(y)) return y;
    const double eps = t.for_label(label);
    return label == Label::negative ? std::max(0.0, y - eps) : std::max(0.0, eps - y);
}

double multi_part_hinge_grad(double y, Label label, const LossThresholds& t) {
    const double eps = t.for_label(label);
    if (label == Label::negative) return y > eps ? 1.0 : 0.0;
    return y < eps ? -1.0 : 0.0;
}

NegativeWeights negative_weight_schedule(std::size_t step, std::size_t total, const ScheduleConfig& c) {
    const NegativeWeights start{1.0, 0.0, 0.0};
    const double frac = total == 0 ? 1.0 : double(step) / double(total);
    if (frac < c.warmup_end) return start;
    if (frac >= c.ramp_end) return c.final_weights;
    const double a = (frac - c.warmup_end) / (c.ramp_end - c.warmup_end);
    return {start.uniform + a * (c.final_weights.uniform - start.uniform),
            start.inbatch + a * (c.final_weights.inbatch - start.inbatch),
            start.dynamic + a * (c.final_weights.dynamic - start.dynamic)};
}

// ---------------------------------------------------------------------------
// Negative samplers

namespace {

// n distinct values from [0, universe), in draw order.
std::vector<std::size_t> sample_distinct(std::size_t universe, std::size_t n, Rng& rng) {
    n = std::min(n, universe);
    std::vector<std::size_t> out;
    out.reserve(n);
    if (n * 4 < universe) {
        std::unordered_set<std::size_t> seen;
        while (out.size() < n) {
            const std::size_t x = rng.index(universe);
            if (seen.insert(x).second) out.push_back(x);
        }
        return out;
    }
    std::vector<std::size_t> all(universe);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::swap(all[i], all[i + rng.index(universe - i)]);
        out.push_back(all[i]);
    }
    return out;
}

std::vector<std::pair<std::size_t, double>> top_k_excluding(const Matrix& cands, std::span<const double> q,
                                                            std::size_t k, const std::vector<char>& skip) {
    std::vector<std::pair<std::size_t, double>> scored;
    for (std::size_t i = 0; i < cands.rows; ++i) {
        if (!skip.empty() && skip[i]) continue;
        scored.emplace_back(i, score(q, cands.row_span(i)));
    }
    k = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + std::ptrdiff_t(k), scored.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    scored.resize(k);
    return scored;
}

Matrix embed_rows(const TwoTowerModel& model, const std::vector<ProductFeatures>& feats,
                  const std::vector<std::size_t>& rows) {
    std::vector<ProductInput> in;
    in.reserve(rows.size());
    for (auto r : rows)
        in.push_back({&feats[r], select_neighbors(feats[r], "", model.config().graph_samples, nullptr), {}});
    return forward_product_tower(model, in, BnMode::inference);
}

}  // namespace

std::vector<std::uint64_t> sample_uniform_negatives(const ProductCorpus& corpus, std::size_t n,
                                                    std::optional<std::uint64_t> exclude_id, Rng& rng) {
    std::optional<std::size_t> skip;
    if (exclude_id) skip = corpus.index_of(*exclude_id);
    const std::size_t available = corpus.size() - (skip ? 1 : 0);
    if (n > available)
        fail(ErrorCode::invalid_argument, "cannot draw " + std::to_string(n) + " uniform negatives from " +
                                              std::to_string(available) + " candidates");
    std::vector<std::uint64_t> out;
    for (auto r : sample_distinct(available, n, rng)) {
        if (skip && r >= *skip) ++r;
        out.push_back(corpus[r].product_id);
    }
    return out;
}

std::vector<std::size_t> sample_hard_in_batch(const Matrix& queries, const Matrix& positives, std::size_t anchor,
                                              std::size_t k, const std::vector<std::uint64_t>* ids) {
    std::vector<char> skip(positives.rows, 0);
    skip[anchor] = 1;
    if (ids)
        for (std::size_t j = 0; j < positives.rows; ++j)
            if ((*ids)[j] == (*ids)[anchor]) skip[j] = 1;
    std::vector<std::size_t> out;
    for (const auto& [j, s] : top_k_excluding(positives, queries.row_span(anchor), k, skip)) out.push_back(j);
    return out;
}

std::vector<std::size_t> sample_dynamic_hard(const TwoTowerModel& model, const std::vector<ProductFeatures>& corpus,
                                             std::span<const double> q, std::size_t large_batch, std::size_t k,
                                             std::optional<std::uint64_t> exclude_id, Rng& rng) {
    if (k > large_batch) fail(ErrorCode::invalid_argument, "dynamic negatives: k exceeds large_batch");
    if (large_batch > corpus.size()) fail(ErrorCode::invalid_argument, "dynamic negatives: large_batch exceeds corpus");
    auto pool = sample_distinct(corpus.size(), large_batch, rng);
    std::sort(pool.begin(), pool.end());
    const Matrix vecs = embed_rows(model, corpus, pool);
    std::vector<char> skip(pool.size(), 0);
    if (exclude_id)
        for (std::size_t i = 0; i < pool.size(); ++i) skip[i] = corpus[pool[i]].product_id == *exclude_id;
    std::vector<std::size_t> out;
    for (const auto& [i, s] : top_k_excluding(vecs, q, k, skip)) out.push_back(pool[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Config

namespace {

using nlohmann::json;

json weights_json(const NegativeWeights& w) { return json::array({w.uniform, w.inbatch, w.dynamic}); }

NegativeWeights weights_from(const json& j) {
    if (!j.is_array() || j.size() != 3) fail(ErrorCode::parse, "final_weights must be [uniform, inbatch, dynamic]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

std::string TrainConfig::to_json() const {
    const auto& m = model;
    json j{
        {"embed_dim", m.embed_dim},
        {"out_dim", m.out_dim},
        {"buckets", m.buckets},
        {"shop_buckets", m.shop_buckets},
        {"max_searches", m.max_searches},
        {"max_shops", m.max_shops},
        {"ff_dim", m.ff_dim},
        {"graph_samples", m.graph_samples},
        {"text_dim", m.text_dim},
        {"bn_momentum", m.bn_momentum},
        {"bn_eps", m.bn_eps},
        {"features",
         {{"description", m.features.description},
          {"attributes", m.features.attributes},
          {"location", m.features.location},
          {"history", m.features.history},
          {"graph", m.features.graph}}},
        {"batch_size", batch_size},
        {"lr", lr},
        {"adam_beta1", adam_beta1},
        {"adam_beta2", adam_beta2},
        {"adam_eps", adam_eps},
        {"epochs", epochs},
        {"thresholds",
         {{"purchase", thresholds.purchase},
          {"cartadd", thresholds.cartadd},
          {"click", thresholds.click},
          {"negative", thresholds.negative}}},
        {"schedule",
         {{"warmup_end", schedule.warmup_end},
          {"ramp_end", schedule.ramp_end},
          {"final_weights", weights_json(schedule.final_weights)}}},
        {"use_uniform", use_uniform},
        {"use_inbatch", use_inbatch},
        {"use_dynamic", use_dynamic},
        {"weighted", weighted},
        {"train_on_clicks", train_on_clicks},
        {"n_uniform", n_uniform},
        {"uniform_pool", uniform_pool},
        {"n_inbatch", n_inbatch},
        {"large_batch", large_batch},
        {"n_dynamic", n_dynamic},
        {"graph_min_count", graph_min_count},
        {"location_ks", location_ks},
        {"eval_ks", eval_ks},
        {"seed", seed},
    };
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    TrainConfig c;
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        fail(ErrorCode::parse, std::string("training config: ") + e.what());
    }
    if (!j.is_object()) fail(ErrorCode::parse, "training config must be a JSON object");
    const json defaults = json::parse(c.to_json());
    for (const auto& [key, _] : j.items())
        if (!defaults.contains(key)) fail(ErrorCode::parse, "training config: unknown key '" + key + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
        };
        auto& m = c.model;
        get("embed_dim", m.embed_dim);
        get("out_dim", m.out_dim);
        get("buckets", m.buckets);
        get("shop_buckets", m.shop_buckets);
        get("max_searches", m.max_searches);
        get("max_shops", m.max_shops);
        get("ff_dim", m.ff_dim);
        get("graph_samples", m.graph_samples);
        get("text_dim", m.text_dim);
        get("bn_momentum", m.bn_momentum);
        get("bn_eps", m.bn_eps);
        if (j.contains("features")) {
            const auto& f = j.at("features");
            for (const auto& [key, _] : f.items())
                if (!defaults["features"].contains(key)) fail(ErrorCode::parse, "training config: unknown feature '" + key + "'");
            m.features.description = f.value("description", m.features.description);
            m.features.attributes = f.value("attributes", m.features.attributes);
            m.features.location = f.value("location", m.features.location);
            m.features.history = f.value("history", m.features.history);
            m.features.graph = f.value("graph", m.features.graph);
        }
        get("batch_size", c.batch_size);
        get("lr", c.lr);
        get("adam_beta1", c.adam_beta1);
        get("adam_beta2", c.adam_beta2);
        get("adam_eps", c.adam_eps);
        get("epochs", c.epochs);
        if (j.contains("thresholds")) {
            const auto& t = j.at("thresholds");
            c.thresholds.purchase = t.value("purchase", c.thresholds.purchase);
            c.thresholds.cartadd = t.value("cartadd", c.thresholds.cartadd);
            c.thresholds.click = t.value("click", c.thresholds.click);
            c.thresholds.negative = t.value("negative", c.thresholds.negative);
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            c.schedule.warmup_end = s.value("warmup_end", c.schedule.warmup_end);
            c.schedule.ramp_end = s.value("ramp_end", c.schedule.ramp_end);
            if (s.contains("final_weights")) c.schedule.final_weights = weights_from(s.at("final_weights"));
        }
        get("use_uniform", c.use_uniform);
        get("use_inbatch", c.use_inbatch);
        get("use_dynamic", c.use_dynamic);
        get("weighted", c.weighted);
        get("train_on_clicks", c.train_on_clicks);
        get("n_uniform", c.n_uniform);
        get("uniform_pool", c.uniform_pool);
        get("n_inbatch", c.n_inbatch);
        get("large_batch", c.large_batch);
        get("n_dynamic", c.n_dynamic);
        get("graph_min_count", c.graph_min_count);
        get("location_ks", c.location_ks);
        get("eval_ks", c.eval_ks);
        get("seed", c.seed);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        fail(ErrorCode::parse, std::string("training config: ") + e.what());
    }
    c.thresholds.validate();
    const auto& w = c.schedule.final_weights;
    if (w.uniform < 0 || w.inbatch < 0 || w.dynamic < 0 || std::abs(w.uniform + w.inbatch + w.dynamic - 1.0) > 1e-9)
        fail(ErrorCode::invalid_argument, "final_weights must be non-negative and sum to 1");
    if (!(0 <= c.schedule.warmup_end && c.schedule.warmup_end <= c.schedule.ramp_end && c.schedule.ramp_end <= 1))
        fail(ErrorCode::invalid_argument, "schedule needs 0 <= warmup_end <= ramp_end <= 1");
    if (c.batch_size < 2) fail(ErrorCode::invalid_argument, "batch_size must be at least 2");
    if (!(c.lr > 0)) fail(ErrorCode::invalid_argument, "lr must be positive");
    return c;
}

// ---------------------------------------------------------------------------
// Step

StepResult compute_step(const TwoTowerModel& model, const StepBatch& batch, const LossThresholds& thresholds,
                        BnMode mode, const TowerStats* frozen_query, const TowerStats* frozen_product,
                        Gradients* grads) {
    QueryTowerCache qc;
    ProductTowerCache pc;
    const Matrix q = forward_query_tower(model, batch.queries, mode, &qc, frozen_query);
    const Matrix p = forward_product_tower(model, batch.products, mode, &pc, frozen_product);
    StepResult res;
    res.query_stats = qc.mlp.stats;
    res.product_stats = pc.mlp.stats;

    Matrix dq(q.rows, q.cols), dp(p.rows, p.cols);
    std::uint64_t sig = fnv1a64("step");
    auto mix = [&](bool bit) {
        const char c = bit ? '1' : '0';
        sig = fnv1a64(std::string_view(&c, 1), sig);
    };
    for (const auto& t : batch.terms) {
        const double y = score(q.row_span(t.query), p.row_span(t.slot));
        res.loss += t.weight * multi_part_hinge(y, t.label, thresholds);
        const double g = t.weight * multi_part_hinge_grad(y, t.label, thresholds);
        mix(g != 0.0);
        if (g == 0.0 || !grads) continue;
        for (std::size_t j = 0; j < q.cols; ++j) {
            dq(t.query, j) += g * p(t.slot, j);
            dp(t.slot, j) += g * q(t.query, j);
        }
    }
    for (double v : qc.mlp.a1.data) mix(v > 0.0);
    for (double v : pc.mlp.a1.data) mix(v > 0.0);
    for (const auto& tc : qc.transformer)
        for (double v : tc.ff_pre) mix(v > 0.0);
    res.signature = sig;
    if (grads) {
        backward_query_tower(model, batch.queries, qc, dq, *grads);
        backward_product_tower(model, batch.products, pc, dp, *grads);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Data preparation and step assembly

TrainData prepare_train_data(const TwoTowerModel& model, const ProductCorpus& corpus, const InteractionLog& train_log,
                             const TrainConfig& config) {
    TrainData d;
    d.corpus = &corpus;
    d.graph = build_bipartite_graph(train_log, config.graph_min_count);
    d.product_features.reserve(corpus.size());
    for (const auto& p : corpus.products()) d.product_features.push_back(featurize_product(model, p, d.graph));
    for (const auto& r : train_log) {
        if (r.kind == InteractionKind::click && !config.train_on_clicks) continue;
        const auto row = corpus.index_of(r.product_id);
        if (!row) continue;
        d.queries.push_back(featurize_query(model, r.context));
        d.positive_rows.push_back(*row);
        d.labels.push_back(label_of(r.kind));
        d.query_text.push_back(normalize_text(r.context.query));
    }
    return d;
}

StepBatch assemble_step(const TwoTowerModel& model, const TrainData& data, const std::vector<std::size_t>& rows,
                        const TrainConfig& cfg, const NegativeWeights& w, Rng& rng) {
    const auto& feats = data.product_features;
    const std::size_t n_samples = model.config().graph_samples;
    const std::size_t b = rows.size();
    StepBatch sb;
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t e = rows[i];
        const auto& f = feats[data.positive_rows[e]];
        sb.queries.push_back(data.queries[e]);
        sb.products.push_back({&f, select_neighbors(f, data.query_text[e], n_samples, &rng), {}});
        sb.product_ids.push_back(f.product_id);
        sb.terms.push_back({i, i, data.labels[e], 1.0 / double(b)});
    }
    auto anchor_id = [&](std::size_t i) { return sb.product_ids[i]; };  // positives occupy slots [0, b)
    auto linked = [&](std::size_t corpus_row, std::size_t anchor) {
        const auto& nt = feats[corpus_row].neighbor_text;
        return std::find(nt.begin(), nt.end(), data.query_text[rows[anchor]]) != nt.end();
    };

    // Negative slots are shared across anchors, except that a product whose
    // graph holds the anchor's query gets its own slot sampled without it.
    std::map<std::pair<std::size_t, std::string>, std::size_t> shared;
    auto slot_for = [&](std::size_t corpus_row, std::size_t anchor) {
        std::pair<std::size_t, std::string> key{corpus_row, linked(corpus_row, anchor) ? data.query_text[rows[anchor]] : ""};
        if (auto it = shared.find(key); it != shared.end()) return it->second;
        const auto& f = feats[corpus_row];
        sb.products.push_back({&f, select_neighbors(f, key.second, n_samples, &rng), {}});
        sb.product_ids.push_back(f.product_id);
        return shared[key] = sb.products.size() - 1;
    };

    if (w.uniform > 0 && cfg.n_uniform > 0) {
        const auto pool = sample_distinct(feats.size(), std::max(cfg.uniform_pool, cfg.n_uniform + 1), rng);
        std::vector<LossTerm> terms;
        for (std::size_t i = 0; i < b; ++i) {
            std::vector<std::size_t> eligible;
            for (std::size_t s = 0; s < pool.size(); ++s)
                if (feats[pool[s]].product_id != anchor_id(i)) eligible.push_back(s);
            for (auto pick : sample_distinct(eligible.size(), cfg.n_uniform, rng))
                terms.push_back({i, slot_for(pool[eligible[pick]], i), Label::negative, 0.0});
        }
        for (auto& t : terms) t.weight = w.uniform / double(terms.size());
        sb.terms.insert(sb.terms.end(), terms.begin(), terms.end());
    }

    const bool want_hard = w.inbatch > 0 && cfg.n_inbatch > 0 && b > 1;
    const bool want_dynamic = w.dynamic > 0 && cfg.n_dynamic > 0;
    if (want_hard || want_dynamic) {
        // Selection uses current parameters; nothing here is differentiated.
        const Matrix qv = forward_query_tower(model, sb.queries, BnMode::inference);
        if (want_hard) {
            std::vector<ProductInput> pos(sb.products.begin(), sb.products.begin() + std::ptrdiff_t(b));
            const Matrix pv = forward_product_tower(model, pos, BnMode::inference);
            const std::vector<std::uint64_t> ids(sb.product_ids.begin(), sb.product_ids.begin() + std::ptrdiff_t(b));
            std::vector<LossTerm> terms;
            for (std::size_t i = 0; i < b; ++i)
                for (auto j : sample_hard_in_batch(qv, pv, i, cfg.n_inbatch, &ids)) {
                    const std::size_t row = data.positive_rows[rows[j]];
                    const bool same_query = data.query_text[rows[j]] == data.query_text[rows[i]];
                    terms.push_back({i, !same_query && linked(row, i) ? slot_for(row, i) : j, Label::negative, 0.0});
                }
            for (auto& t : terms) t.weight = w.inbatch / double(terms.size());
            sb.terms.insert(sb.terms.end(), terms.begin(), terms.end());
        }
        if (want_dynamic) {
            auto pool = sample_distinct(feats.size(), std::min(cfg.large_batch, feats.size()), rng);
            std::sort(pool.begin(), pool.end());
            const Matrix pv = embed_rows(model, feats, pool);
            std::vector<LossTerm> terms;
            for (std::size_t i = 0; i < b; ++i) {
                std::vector<char> skip(pool.size(), 0);
                for (std::size_t s = 0; s < pool.size(); ++s) skip[s] = feats[pool[s]].product_id == anchor_id(i);
                for (const auto& [s, sc] : top_k_excluding(pv, qv.row_span(i), cfg.n_dynamic, skip))
                    terms.push_back({i, slot_for(pool[s], i), Label::negative, 0.0});
            }
            for (auto& t : terms) t.weight = w.dynamic / double(terms.size());
            sb.terms.insert(sb.terms.end(), terms.begin(), terms.end());
        }
    }
    return sb;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamOptimizer::AdamOptimizer(const TwoTowerModel& model, double lr, double b1, double b2, double eps)
    : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {
    m_.resize(model.params().size());
    v_.resize(model.params().size());
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        if (!model.params()[i].trainable) continue;
        m_[i].assign(model.params()[i].size(), 0.0);
        v_[i].assign(model.params()[i].size(), 0.0);
    }
}

void AdamOptimizer::step(TwoTowerModel& model, const Gradients& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    auto update = [&](std::size_t p, std::size_t offset, const double* grad, std::size_t n) {
        double* x = model.params()[p].data.data() + offset;
        double* m = m_[p].data() + offset;
        double* v = v_[p].data() + offset;
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = b1_ * m[i] + (1 - b1_) * grad[i];
            v[i] = b2_ * v[i] + (1 - b2_) * grad[i] * grad[i];
            x[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    };
    for (std::size_t p = 0; p < g.dense.size(); ++p)
        if (!g.dense[p].empty()) update(p, 0, g.dense[p].data(), g.dense[p].size());
    const auto& s = model.slots();
    for (auto [table, rows] : {std::pair{s.token_table, &g.token}, std::pair{s.shop_table, &g.shop}}) {
        const std::size_t cols = rows->cols();
        for (std::size_t k = 0; k < rows->rows().size(); ++k)
            update(table, std::size_t(rows->rows()[k]) * cols, rows->row_data(k), cols);
    }
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<double> evaluate_recall(const TwoTowerModel& model, const ProductCorpus& corpus, const BipartiteGraph& graph,
                                    const std::vector<EvalQuery>& eval, const std::vector<std::size_t>& ks) {
    std::vector<double> out(ks.size(), 0.0);
    if (eval.empty() || ks.empty()) return out;
    const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
    const Matrix pv = embed_products(model, corpus, graph);
    VectorSet vs;
    for (std::size_t i = 0; i < corpus.size(); ++i) vs.add(corpus[i].product_id, pv.row_span(i));
    std::vector<QueryUserContext> contexts;
    for (const auto& e : eval) contexts.push_back(e.context);
    const Matrix qv = embed_queries(model, contexts);
    for (std::size_t i = 0; i < eval.size(); ++i) {
        std::vector<float> q(qv.row(i), qv.row(i) + qv.cols);
        std::vector<std::uint64_t> ids;
        for (const auto& [r, s] : top_k_rows(vs, q, kmax)) ids.push_back(vs.ids[r]);
        for (std::size_t j = 0; j < ks.size(); ++j) out[j] += recall_at_k(ids, eval[i].targets, ks[j]);
    }
    for (auto& v : out) v /= double(eval.size());
    return out;
}

TrainResult train(const TrainConfig& cfg, const ProductCorpus& corpus, const InteractionLog& train_log,
                  const std::vector<EvalQuery>* eval, const std::function<void(const EpochMetrics&)>& on_epoch) {
    cfg.thresholds.validate();
    if (train_log.empty()) fail(ErrorCode::invalid_argument, "train: empty training log");
    if (corpus.empty()) fail(ErrorCode::invalid_argument, "train: empty corpus");
    if (!cfg.use_uniform && !cfg.use_inbatch && !cfg.use_dynamic)
        fail(ErrorCode::invalid_argument, "train: at least one negative source must be enabled");

    LocationFeaturizer locations;
    if (cfg.model.features.location) locations = fit_location_featurizer(train_log, cfg.seed, cfg.location_ks);
    TrainResult res{TwoTowerModel(cfg.model, std::move(locations), cfg.seed), {}};
    TwoTowerModel& model = res.model;
    const TrainData data = prepare_train_data(model, corpus, train_log, cfg);
    if (data.queries.empty()) fail(ErrorCode::invalid_argument, "train: no training example references the corpus");

    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    AdamOptimizer adam(model, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    const std::size_t n = data.queries.size();
    const std::size_t b = std::min(cfg.batch_size, n);
    const std::size_t steps_per_epoch = (n + b - 1) / b;
    const std::size_t total = steps_per_epoch * cfg.epochs;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Gradients grads(model);
    std::size_t step = 0;

    auto weights_at = [&](std::size_t s) {
        NegativeWeights w = cfg.weighted ? negative_weight_schedule(s, total, cfg.schedule) : NegativeWeights{1, 1, 1};
        if (!cfg.use_uniform) w.uniform = 0;
        if (!cfg.use_inbatch) w.inbatch = 0;
        if (!cfg.use_dynamic) w.dynamic = 0;
        double sum = w.uniform + w.inbatch + w.dynamic;
        if (sum <= 0) {
            // Warmup with uniform disabled: spread weight over enabled sources.
            w = {cfg.use_uniform ? 1.0 : 0.0, cfg.use_inbatch ? 1.0 : 0.0, cfg.use_dynamic ? 1.0 : 0.0};
            sum = w.uniform + w.inbatch + w.dynamic;
        }
        return NegativeWeights{w.uniform / sum, w.inbatch / sum, w.dynamic / sum};
    };

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0;
        for (std::size_t start = 0; start < n; start += b) {
            const std::vector<std::size_t> rows(order.begin() + std::ptrdiff_t(start),
                                                order.begin() + std::ptrdiff_t(std::min(n, start + b)));
            if (rows.size() < 2) continue;  // batch norm needs two rows
            const StepBatch sb = assemble_step(model, data, rows, cfg, weights_at(step), rng);
            grads.zero();
            const StepResult r = compute_step(model, sb, cfg.thresholds, BnMode::train, nullptr, nullptr, &grads);
            if (!std::isfinite(r.loss)) {
                std::ostringstream msg;
                msg << "training diverged: non-finite loss at epoch " << epoch << " step " << step << " (lr " << cfg.lr
                    << ", batch " << rows.size() << ", " << sb.terms.size() << " loss terms)";
                fail(ErrorCode::diverged, msg.str());
            }
            update_running_stats(model, false, r.query_stats, sb.queries.size());
            update_running_stats(model, true, r.product_stats, sb.products.size());
            adam.step(model, grads);
            epoch_loss += r.loss;
            ++step;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.loss = epoch_loss / double(steps_per_epoch);
        if (eval && !eval->empty()) m.recall = evaluate_recall(model, corpus, data.graph, *eval, cfg.eval_ks);
        res.history.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return res;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history, const std::vector<std::size_t>& ks) {
    std::ostringstream out;
    out << "epoch,loss";
    for (auto k : ks) out << ",recall@" << k;
    out << "\n";
    out.precision(6);
    for (const auto& m : history) {
        out << m.epoch << "," << std::fixed << m.loss;
        for (std::size_t i = 0; i < ks.size(); ++i) {
            out << ",";
            if (i < m.recall.size()) out << m.recall[i];
        }
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(TwoTowerModel& model, const StepBatch& input, const LossThresholds& thresholds, double eps) {
    if (input.queries.size() > 8) fail(ErrorCode::invalid_argument, "grad_check expects at most 8 queries");
    StepBatch batch = input;
    const std::size_t de = model.config().embed_dim;

    // Graph slots are constants for differentiation purposes.
    std::set<std::uint32_t> graph_rows;
    for (auto& p : batch.products) {
        p.fixed_graph.assign(de, 0.0);
        for (auto n : p.neighbors) {
            const auto& toks = p.features->neighbor_tokens[n];
            for (auto r : toks) graph_rows.insert(r);
            std::vector<double> tmp(de, 0.0);
            for (auto r : toks)
                for (std::size_t j = 0; j < de; ++j)
                    tmp[j] += model.params()[model.slots().token_table].data[std::size_t(r) * de + j] / double(toks.size());
            for (std::size_t j = 0; j < de; ++j) p.fixed_graph[j] += tmp[j] / double(p.neighbors.size());
        }
    }

    const StepResult base = compute_step(model, batch, thresholds, BnMode::train, nullptr, nullptr, nullptr);
    const TowerStats fq = base.query_stats;
    const TowerStats fp = base.product_stats;
    Gradients grads(model);
    const StepResult ref = compute_step(model, batch, thresholds, BnMode::frozen, &fq, &fp, &grads);

    // Real graph path: rows reached only through neighbors must get no gradient.
    Gradients real(model);
    compute_step(model, input, thresholds, BnMode::frozen, &fq, &fp, &real);
    std::set<std::uint32_t> direct_rows;
    for (const auto& q : input.queries) {
        for (const auto& g : q.groups) direct_rows.insert(g.begin(), g.end());
        for (const auto& s : q.searches) direct_rows.insert(s.begin(), s.end());
    }
    for (const auto& p : input.products)
        for (const auto& g : p.features->groups) direct_rows.insert(g.begin(), g.end());

    GradCheckResult res;
    for (auto r : graph_rows) {
        if (direct_rows.count(r)) continue;
        ++res.graph_only_rows;
        if (const double* g = real.token.find(r))
            for (std::size_t j = 0; j < de; ++j) res.graph_token_grad_abs = std::max(res.graph_token_grad_abs, std::abs(g[j]));
    }

    auto check = [&](std::size_t p, std::size_t i, double analytic) {
        double& x = model.params()[p].data[i];
        const double keep = x;
        double h = eps;
        auto at = [&](double offset, double& loss) {
            x = keep + offset;
            const StepResult r = compute_step(model, batch, thresholds, BnMode::frozen, &fq, &fp, nullptr);
            x = keep;
            loss = r.loss;
            return r.signature == ref.signature;
        };
        for (int attempt = 0; attempt < 4; ++attempt, h /= 10) {
            // Five-point central stencil; all four probes must stay on the same linear piece.
            double up = 0, down = 0, up2 = 0, down2 = 0;
            if (!at(h, up) || !at(-h, down) || !at(2 * h, up2) || !at(-2 * h, down2)) continue;
            const double numeric = (8 * (up - down) - (up2 - down2)) / (12 * h);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            const double err = std::abs(analytic - numeric) / denom;
            ++res.checked;
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                res.worst_param = model.params()[p].name + "[" + std::to_string(i) + "]";
                res.worst_analytic = analytic;
                res.worst_numeric = numeric;
            }
            return;
        }
        ++res.skipped_kinks;
    };

    const auto& s = model.slots();
    for (std::size_t p = 0; p < model.params().size(); ++p) {
        if (grads.dense[p].empty()) continue;
        for (std::size_t i = 0; i < grads.dense[p].size(); ++i) check(p, i, grads.dense[p][i]);
    }
    for (auto [table, rows] : {std::pair{s.token_table, &grads.token}, std::pair{s.shop_table, &grads.shop}}) {
        std::set<std::uint32_t> touched(rows->rows().begin(), rows->rows().end());
        if (table == s.token_table) touched.insert(graph_rows.begin(), graph_rows.end());
        for (auto r : touched) {
            const double* g = rows->find(r);
            for (std::size_t j = 0; j < de; ++j) check(table, std::size_t(r) * de + j, g ? g[j] : 0.0);
        }
    }
    return res;
}

}  // namespace ueppr
