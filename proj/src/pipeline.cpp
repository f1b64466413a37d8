// SPDX-License-Identifier: Apache-2.0
#include "pipeline.hpp"

#include <chrono>
#include <set>

#include <json.hpp>

#include "training.hpp"
#include "towers.hpp"

namespace ueppr::pipeline {

using nlohmann::json;

namespace {

// JSON options with typed access and a check for unknown keys.
class Options {
public:
    explicit Options(const std::string& text, std::string command) : command_(std::move(command)) {
        try {
            j_ = text.empty() ? json::object() : json::parse(text);
        } catch (const json::exception& e) {
            fail(ErrorCode::parse, command_ + ": options are not valid JSON: " + e.what());
        }
        if (!j_.is_object()) fail(ErrorCode::parse, command_ + ": options must be a JSON object");
    }

    bool has(const std::string& key) {
        used_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    template <class T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) return fallback;
        return convert<T>(key);
    }

    template <class T>
    T require(const std::string& key) {
        if (!has(key)) fail(ErrorCode::invalid_argument, command_ + ": missing required option '" + key + "'");
        return convert<T>(key);
    }

    std::string path(const std::string& key) { return require<std::string>(key); }
    std::string optional_path(const std::string& key) { return get<std::string>(key, ""); }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!used_.count(key)) fail(ErrorCode::invalid_argument, command_ + ": unknown option '" + key + "'");
    }

private:
    template <class T>
    T convert(const std::string& key) {
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception& e) {
            fail(ErrorCode::invalid_argument, command_ + ": option '" + key + "' has the wrong type");
        }
    }

    json j_;
    std::string command_;
    std::set<std::string> used_;
};

std::optional<BoostWeights> maybe_weights(const std::string& path) {
    if (path.empty()) return std::nullopt;
    return BoostWeights::load(path);
}

struct LoadedModel {
    TwoTowerModel model;
    std::string version;
};

LoadedModel load_model(const std::string& path) {
    const std::string bytes = read_file(path);
    return {TwoTowerModel::deserialize(bytes), model_version_of(bytes)};
}

void check_weights(const std::optional<BoostWeights>& w, const std::string& version) {
    if (w && w->model_version != version)
        fail(ErrorCode::version_mismatch, "boost weights were tuned for model " + w->model_version + ", not " + version);
}

Dataset dataset_from(Options& o) {
    return load_dataset(o.path("products"), o.path("log"), o.get<std::int64_t>("cutoff", -1),
                        o.get<std::uint32_t>("graph_min_count", 1));
}

json hnsw_json(const HnswParams& p) { return {{"m", p.m}, {"efc", p.ef_construction}, {"ef", p.ef_search}}; }
json quant_json(const QuantParams& p) { return {{"bits", p.bits}, {"rerank", p.rerank_factor}}; }

void check_dim(const VectorIndex& index, const TwoTowerModel& model, const std::optional<BoostWeights>& w) {
    const std::size_t want = model.config().out_dim + (w ? w->w.size() : 0);
    if (index.dim() == want) return;
    std::string hint = index.dim() > model.config().out_dim && !w ? " (built with boost weights? pass them too)" : "";
    fail(ErrorCode::invalid_argument,
         "index dimension " + std::to_string(index.dim()) + " does not match query dimension " + std::to_string(want) + hint);
}

double now_ms() {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

Dataset load_dataset(const std::string& products_path, const std::string& log_path, std::int64_t cutoff,
                     std::uint32_t graph_min_count) {
    Dataset d;
    d.corpus = load_products(products_path);
    const auto log = load_interactions(log_path);
    d.cutoff = cutoff < 0 ? default_cutoff(log) : cutoff;
    d.split = split_train_eval(log, d.cutoff);
    d.graph = build_bipartite_graph(d.split.train, graph_min_count);
    return d;
}

VectorSet product_vectors(const TwoTowerModel& model, const ProductCorpus& corpus, const BipartiteGraph& graph,
                          const BoostWeights* boost) {
    const Matrix pv = embed_products(model, corpus, graph);
    VectorSet vs;
    vs.dim = pv.cols;
    for (std::size_t i = 0; i < corpus.size(); ++i) vs.add(corpus[i].product_id, pv.row_span(i));
    if (!boost) return vs;
    QualityScaler scaler = boost->scaler;
    if (scaler.dim() == 0) scaler = QualityScaler::fit(corpus);
    return hydrate(vs, quality_matrix(corpus, scaler), boost->w.size());
}

std::vector<RecallQuery> recall_queries(const TwoTowerModel& model, const std::vector<EvalQuery>& eval,
                                        const BoostWeights* boost) {
    std::vector<QueryUserContext> contexts;
    for (const auto& e : eval) contexts.push_back(e.context);
    auto vecs = index_query_vectors(model, contexts, boost);
    std::vector<RecallQuery> out;
    for (std::size_t i = 0; i < eval.size(); ++i) out.push_back({std::move(vecs[i]), eval[i].targets});
    return out;
}

std::string synth(const std::string& options_json) {
    Options o(options_json, "synth");
    SynthOptions s;
    s.seed = o.get("seed", s.seed);
    s.n_products = o.get("n_products", s.n_products);
    s.n_queries = o.get("n_queries", s.n_queries);
    s.n_users = o.get("n_users", s.n_users);
    s.n_interactions = o.get("n_interactions", s.n_interactions);
    s.quality_effect = o.get("quality_effect", s.quality_effect);
    s.location_affinity = o.get("location_affinity", s.location_affinity);
    s.zipf_exponent = o.get("zipf_exponent", s.zipf_exponent);
    s.occasion_share = o.get("occasion_share", s.occasion_share);
    s.color_share = o.get("color_share", s.color_share);
    s.days = o.get("days", s.days);
    s.eval_days = o.get("eval_days", s.eval_days);
    const auto products_out = o.path("out_products");
    const auto log_out = o.path("out_log");
    o.finish();
    const auto corpus = synthesize_corpus(s);
    save_products(products_out, corpus.products);
    save_interactions(log_out, corpus.log);
    return json{{"products", corpus.products.size()}, {"interactions", corpus.log.size()}, {"cutoff", corpus.cutoff}}.dump();
}

std::string train(const std::string& options_json, const std::function<void(const std::string&)>& log) {
    Options o(options_json, "train");
    TrainConfig cfg;
    if (const auto path = o.optional_path("config"); !path.empty()) cfg = TrainConfig::from_json(read_file(path));
    cfg.epochs = o.get("epochs", cfg.epochs);
    cfg.seed = o.get("seed", cfg.seed);
    cfg.batch_size = o.get("batch_size", cfg.batch_size);
    cfg.lr = o.get("lr", cfg.lr);
    cfg.eval_ks = o.get("eval_ks", cfg.eval_ks);
    const Dataset d = load_dataset(o.path("products"), o.path("log"), o.get<std::int64_t>("cutoff", -1), cfg.graph_min_count);
    const auto model_out = o.path("out_model");
    const auto metrics_out = o.optional_path("metrics");
    const bool evaluate = o.get("evaluate", true);
    o.finish();

    const auto result = ueppr::train(cfg, d.corpus, d.split.train, evaluate ? &d.split.eval : nullptr,
                                     [&](const EpochMetrics& m) {
                                         if (!log) return;
                                         std::string line = "epoch " + std::to_string(m.epoch) + " loss " + std::to_string(m.loss);
                                         for (std::size_t i = 0; i < m.recall.size(); ++i)
                                             line += " recall@" + std::to_string(cfg.eval_ks[i]) + " " + std::to_string(m.recall[i]);
                                         log(line);
                                     });
    result.model.save(model_out);
    if (!metrics_out.empty()) write_file(metrics_out, metrics_csv(result.history, cfg.eval_ks));
    json hist = json::array();
    for (const auto& m : result.history) hist.push_back({{"epoch", m.epoch}, {"loss", m.loss}, {"recall", m.recall}});
    return json{{"model_version", model_version_of(result.model)},
                {"train_examples", d.split.train.size()},
                {"eval_queries", d.split.eval.size()},
                {"cutoff", d.cutoff},
                {"history", hist}}
        .dump();
}

std::string index_build(const std::string& options_json) {
    Options o(options_json, "index build");
    const auto m = load_model(o.path("model"));
    Dataset d = dataset_from(o);
    const auto kind = parse_index_kind(o.get<std::string>("kind", "hnsw"));
    HnswParams hp;
    hp.m = o.get("m", hp.m);
    hp.ef_construction = o.get("efc", hp.ef_construction);
    hp.ef_search = o.get("ef", hp.ef_search);
    QuantParams qp;
    qp.bits = o.get("bits", qp.bits);
    qp.rerank_factor = o.get("rerank", qp.rerank_factor);
    const auto seed = o.get<std::uint64_t>("seed", 1);
    const auto weights = maybe_weights(o.optional_path("boost_weights"));
    const auto out = o.path("out");
    o.finish();
    check_weights(weights, m.version);

    VectorSet vs = product_vectors(m.model, d.corpus, d.graph, weights ? &*weights : nullptr);
    const double start = now_ms();
    VectorIndex idx = kind == IndexKind::exact ? VectorIndex::build_exact(std::move(vs))
                      : kind == IndexKind::hnsw ? VectorIndex::build_hnsw(std::move(vs), hp, seed)
                                                : VectorIndex::build_quantized(std::move(vs), qp);
    const double build_ms = now_ms() - start;
    idx.set_model_version(m.version);
    idx.save(out);
    json j{{"kind", index_kind_name(kind)}, {"n", idx.size()}, {"dim", idx.dim()}, {"model_version", m.version}, {"build_ms", build_ms}};
    if (kind == IndexKind::hnsw) j["params"] = hnsw_json(hp);
    if (kind == IndexKind::quantized) j["params"] = quant_json(qp);
    return j.dump();
}

std::string index_eval(const std::string& options_json) {
    Options o(options_json, "index eval");
    const auto ann = VectorIndex::load(o.path("index"));
    const auto exact = VectorIndex::load(o.path("exact"));
    const auto m = load_model(o.path("model"));
    const auto log = load_interactions(o.path("log"));
    const auto cutoff = o.get<std::int64_t>("cutoff", -1);
    const auto k = o.get<std::size_t>("k", 10);
    const auto ef = o.get<std::size_t>("ef", 0);
    const auto weights = maybe_weights(o.optional_path("boost_weights"));
    o.finish();
    check_weights(weights, m.version);
    if (ann.model_version() != m.version || exact.model_version() != m.version)
        fail(ErrorCode::version_mismatch, "index eval: both indexes must come from the given model");
    check_dim(ann, m.model, weights);
    check_dim(exact, m.model, weights);
    const auto split = split_train_eval(log, cutoff < 0 ? default_cutoff(log) : cutoff);
    const auto queries = recall_queries(m.model, split.eval, weights ? &*weights : nullptr);
    if (queries.empty()) fail(ErrorCode::invalid_argument, "index eval: no evaluation queries");

    std::vector<double> lat;
    for (const auto& q : queries) {
        const double t0 = now_ms();
        ann.knn(q.vector, k, ef);
        lat.push_back(now_ms() - t0);
    }
    const double loss = recall_loss_at_k(ann, exact, queries, k, ef);
    const double nr = neighbor_recall(ann, exact, queries, k, ef);
    double mean = 0;
    for (double v : lat) mean += v;
    mean /= double(lat.size());
    return json{{"k", k},
                {"queries", queries.size()},
                {"kind", index_kind_name(ann.kind())},
                {"recall_loss", loss},
                {"neighbor_recall", nr},
                {"mean_latency_ms", mean},
                {"p99_latency_ms", quantile(lat, 0.99)}}
        .dump();
}

std::string tune_ann(const std::string& options_json) {
    Options o(options_json, "tune-ann");
    const auto m = load_model(o.path("model"));
    Dataset d = dataset_from(o);
    AnnTuneOptions t;
    t.kind = parse_index_kind(o.get<std::string>("kind", "hnsw"));
    t.k = o.get("k", t.k);
    t.budget = o.get("budget", t.budget);
    t.seed = o.get("seed", t.seed);
    t.latency_ceiling_ms = o.get("latency_ceiling_ms", t.latency_ceiling_ms);
    const auto weights = maybe_weights(o.optional_path("boost_weights"));
    const auto out = o.optional_path("out");
    o.finish();
    check_weights(weights, m.version);
    const auto* w = weights ? &*weights : nullptr;
    const auto res = ueppr::tune_ann(product_vectors(m.model, d.corpus, d.graph, w), recall_queries(m.model, d.split.eval, w), t);
    json trace = json::array();
    for (const auto& tr : res.trace.trials) trace.push_back({{"x", tr.x}, {"value", tr.value}});
    json j{{"kind", index_kind_name(t.kind)},
           {"k", t.k},
           {"recall_loss", res.recall_loss},
           {"neighbor_recall", res.neighbor_recall},
           {"mean_latency_ms", res.mean_latency_ms},
           {"best_trace", res.trace.best_trace},
           {"trials", trace}};
    j["params"] = t.kind == IndexKind::hnsw ? hnsw_json(res.hnsw) : quant_json(res.quant);
    if (!out.empty()) write_file(out, j.dump(2) + "\n");
    return j.dump();
}

std::string tune_boost(const std::string& options_json) {
    Options o(options_json, "tune-boost");
    const auto m = load_model(o.path("model"));
    Dataset d = dataset_from(o);
    BoostTuneOptions t;
    t.k = o.get("k", t.k);
    t.budget = o.get("budget", t.budget);
    t.lo = o.get("lo", t.lo);
    t.hi = o.get("hi", t.hi);
    t.seed = o.get("seed", t.seed);
    t.holdout_fraction = o.get("holdout_fraction", t.holdout_fraction);
    const auto out = o.path("out");
    o.finish();
    const auto scaler = QualityScaler::fit(d.corpus);
    const auto res = optimize_boost_weights(product_vectors(m.model, d.corpus, d.graph, nullptr), quality_matrix(d.corpus, scaler),
                                            recall_queries(m.model, d.split.eval, nullptr), t);
    BoostWeights w = res.weights;
    w.model_version = m.version;
    w.scaler = scaler;
    w.save(out);
    return json{{"w", w.w},
                {"k", t.k},
                {"tune_queries", res.tune_queries},
                {"holdout_queries", res.holdout_queries},
                {"tune_recall_zero", res.tune_recall_zero},
                {"tune_recall", res.tune_recall},
                {"holdout_recall_zero", res.holdout_recall_zero},
                {"holdout_recall", res.holdout_recall}}
        .dump();
}

std::string eval(const std::string& options_json) {
    Options o(options_json, "eval");
    const auto m = load_model(o.path("model"));
    const auto index = VectorIndex::load(o.path("index"));
    const auto log = load_interactions(o.path("log"));
    const auto cutoff = o.get<std::int64_t>("cutoff", -1);
    const auto ks = o.get<std::vector<std::size_t>>("ks", {10, 100});
    const auto weights = maybe_weights(o.optional_path("boost_weights"));
    SegmentOptions seg;
    seg.head_fraction = o.get("head_fraction", seg.head_fraction);
    seg.tail_fraction = o.get("tail_fraction", seg.tail_fraction);
    const auto label = o.get<std::string>("label", "");
    const auto ef = o.get<std::size_t>("ef", 0);
    const auto out = o.optional_path("out");
    const auto markdown = o.optional_path("markdown");
    o.finish();
    check_weights(weights, m.version);
    if (index.model_version() != m.version)
        fail(ErrorCode::version_mismatch, "eval: index was built from model " + index.model_version() + ", not " + m.version);
    check_dim(index, m.model, weights);
    const auto split = split_train_eval(log, cutoff < 0 ? default_cutoff(log) : cutoff);
    auto rep = run_eval(m.model, index, split.eval, ks, segment_queries(split.eval, split.train, seg),
                        weights ? &*weights : nullptr, ef);
    rep.label = label;
    rep.config_json = json{{"model_version", m.version},
                           {"index_kind", index_kind_name(index.kind())},
                           {"boosted", weights.has_value()},
                           {"cutoff", split.eval.empty() ? 0 : (cutoff < 0 ? default_cutoff(log) : cutoff)},
                           {"head_fraction", seg.head_fraction},
                           {"tail_fraction", seg.tail_fraction}}
                          .dump();
    if (!out.empty()) write_file(out, rep.to_json() + "\n");
    if (!markdown.empty()) write_file(markdown, rep.to_markdown());
    json segs = json::object();
    for (const auto& [name, s] : rep.segments) segs[name] = {{"count", s.count}, {"recall", s.recall}};
    return json{{"label", rep.label}, {"ks", rep.ks}, {"segments", segs}}.dump();
}

std::string report(const std::string& options_json) {
    Options o(options_json, "report");
    const auto inputs = o.require<std::vector<std::string>>("inputs");
    const auto labels = o.get<std::vector<std::string>>("labels", {});
    const auto layout = parse_report_layout(o.get<std::string>("layout", "segments"));
    const auto out = o.optional_path("out");
    o.finish();
    if (!labels.empty() && labels.size() != inputs.size())
        fail(ErrorCode::invalid_argument, "report: give one label per input or none");
    std::vector<RecallReport> reports;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        reports.push_back(RecallReport::from_json(read_file(inputs[i])));
        if (!labels.empty()) reports.back().label = labels[i];
    }
    const std::string md = render_report(reports, layout);
    if (!out.empty()) write_file(out, md);
    return md;
}

}  // namespace ueppr::pipeline
