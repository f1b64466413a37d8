// SPDX-License-Identifier: Apache-2.0
#include "evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "towers.hpp"

namespace ueppr {

using nlohmann::json;

std::vector<std::string> segment_queries(const std::vector<EvalQuery>& eval, const InteractionLog& train_log,
                                         const SegmentOptions& o) {
    if (o.head_fraction < 0 || o.tail_fraction < 0 || o.head_fraction + o.tail_fraction > 1)
        fail(ErrorCode::invalid_argument, "segment fractions must be non-negative and sum to at most 1");
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& r : train_log) ++freq[normalize_text(r.context.query)];
    const std::size_t n = eval.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> f(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto it = freq.find(normalize_text(eval[i].context.query));
        f[i] = it == freq.end() ? 0 : it->second;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return f[a] != f[b] ? f[a] > f[b] : eval[a].key < eval[b].key;
    });
    const auto n_head = std::size_t(std::ceil(o.head_fraction * double(n)));
    const auto n_tail = std::min(n - std::min(n, n_head), std::size_t(std::floor(o.tail_fraction * double(n))));
    std::vector<std::string> seg(n, "torso");
    for (std::size_t r = 0; r < n; ++r) {
        if (r < n_head) seg[order[r]] = "head";
        else if (r >= n - n_tail) seg[order[r]] = "tail";
    }
    return seg;
}

std::vector<std::vector<float>> index_query_vectors(const TwoTowerModel& model,
                                                    const std::vector<QueryUserContext>& contexts,
                                                    const BoostWeights* boost) {
    const Matrix q = embed_queries(model, contexts);
    std::vector<std::vector<float>> out;
    out.reserve(q.rows);
    for (std::size_t i = 0; i < q.rows; ++i) {
        std::vector<float> v(q.row(i), q.row(i) + q.cols);
        if (boost) v = hydrate_query(std::span<const float>(v), boost->w);
        out.push_back(std::move(v));
    }
    return out;
}

RecallReport run_eval(const TwoTowerModel& model, const VectorIndex& index, const std::vector<EvalQuery>& eval,
                      const std::vector<std::size_t>& ks, const std::vector<std::string>& segments,
                      const BoostWeights* boost, std::size_t ef_search) {
    if (ks.empty()) fail(ErrorCode::invalid_argument, "evaluation needs at least one k");
    if (segments.size() != eval.size()) fail(ErrorCode::invalid_argument, "one segment label per eval query required");
    RecallReport rep;
    rep.ks = ks;
    const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
    std::vector<QueryUserContext> contexts;
    for (const auto& e : eval) contexts.push_back(e.context);
    const auto vecs = index_query_vectors(model, contexts, boost);

    auto& all = rep.segments["all"];
    for (const char* s : {"head", "torso", "tail"}) rep.segments[s].recall.assign(ks.size(), 0.0);
    all.recall.assign(ks.size(), 0.0);
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < eval.size(); ++i) {
        ids.clear();
        for (const auto& h : index.knn(vecs[i], kmax, ef_search)) ids.push_back(h.id);
        QueryRecall row{eval[i].key, eval[i].context.query, segments[i], eval[i].targets.size(), {}};
        for (auto k : ks) row.recall.push_back(recall_at_k(ids, eval[i].targets, k));
        auto& seg = rep.segments[segments[i]];
        if (seg.recall.empty()) seg.recall.assign(ks.size(), 0.0);
        for (std::size_t j = 0; j < ks.size(); ++j) {
            seg.recall[j] += row.recall[j];
            all.recall[j] += row.recall[j];
        }
        ++seg.count;
        ++all.count;
        rep.rows.push_back(std::move(row));
    }
    for (auto& [name, seg] : rep.segments)
        if (seg.count)
            for (auto& r : seg.recall) r /= double(seg.count);
    return rep;
}

double RecallReport::recall(const std::string& segment, std::size_t k) const {
    auto it = segments.find(segment);
    if (it == segments.end()) fail(ErrorCode::not_found, "report has no segment '" + segment + "'");
    for (std::size_t j = 0; j < ks.size(); ++j)
        if (ks[j] == k) return it->second.recall[j];
    fail(ErrorCode::not_found, "report has no Recall@" + std::to_string(k));
}

std::string RecallReport::to_json() const {
    json segs = json::object();
    for (const auto& [name, s] : segments) segs[name] = {{"count", s.count}, {"recall", s.recall}};
    json rows_j = json::array();
    for (const auto& r : rows)
        rows_j.push_back({{"key", r.key}, {"query", r.query}, {"segment", r.segment}, {"targets", r.targets}, {"recall", r.recall}});
    json j{{"label", label}, {"ks", ks}, {"segments", segs}, {"seeds", seeds}, {"config", json::parse(config_json)}, {"queries", rows_j}};
    return j.dump(2);
}

RecallReport RecallReport::from_json(const std::string& text) {
    RecallReport r;
    try {
        const auto j = json::parse(text);
        r.label = j.value("label", std::string());
        r.ks = j.at("ks").get<std::vector<std::size_t>>();
        for (const auto& [name, s] : j.at("segments").items())
            r.segments[name] = {s.at("count").get<std::size_t>(), s.at("recall").get<std::vector<double>>()};
        r.seeds = j.value("seeds", std::vector<std::uint64_t>{});
        r.config_json = j.value("config", json::object()).dump();
        for (const auto& q : j.value("queries", json::array()))
            r.rows.push_back({q.at("key").get<std::string>(), q.at("query").get<std::string>(), q.at("segment").get<std::string>(),
                              q.at("targets").get<std::size_t>(), q.at("recall").get<std::vector<double>>()});
    } catch (const json::exception& e) {
        fail(ErrorCode::parse, std::string("recall report: ") + e.what());
    }
    for (const auto& [name, s] : r.segments)
        if (s.recall.size() != r.ks.size()) fail(ErrorCode::parse, "recall report: segment '" + name + "' has the wrong width");
    return r;
}

namespace {

std::string fmt(double v, int digits = 4) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(digits) << v;
    return o.str();
}

}  // namespace

std::string RecallReport::to_markdown() const { return render_report({*this}, ReportLayout::segments); }

ReportLayout parse_report_layout(const std::string& name) {
    if (name == "segments") return ReportLayout::segments;
    if (name == "ablation") return ReportLayout::ablation;
    fail(ErrorCode::invalid_argument, "unknown report layout '" + name + "' (expected segments or ablation)");
}

std::string render_report(const std::vector<RecallReport>& reports, ReportLayout layout) {
    if (reports.empty()) fail(ErrorCode::invalid_argument, "no reports to render");
    const auto& ks = reports.front().ks;
    for (const auto& r : reports)
        if (r.ks != ks) fail(ErrorCode::invalid_argument, "reports disagree on the evaluated k values");
    std::ostringstream out;
    auto label = [](const RecallReport& r, std::size_t i) { return r.label.empty() ? "run " + std::to_string(i + 1) : r.label; };
    if (layout == ReportLayout::segments) {
        out << "| Method |";
        for (auto k : ks) out << " Recall@" << k << " | Head@" << k << " | Tail@" << k << " |";
        out << "\n|---|";
        for (std::size_t j = 0; j < ks.size(); ++j) out << "---:|---:|---:|";
        out << "\n";
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const auto& r = reports[i];
            out << "| " << label(r, i) << " |";
            for (auto k : ks) {
                out << " " << fmt(r.recall("all", k)) << " |";
                for (const char* s : {"head", "tail"}) {
                    auto it = r.segments.find(s);
                    out << " " << (it != r.segments.end() && it->second.count ? fmt(r.recall(s, k)) : "-") << " |";
                }
            }
            out << "\n";
        }
        out << "\nQueries: ";
        const auto& segs = reports.front().segments;
        for (const char* s : {"all", "head", "torso", "tail"}) {
            auto it = segs.find(s);
            out << s << " " << (it == segs.end() ? 0 : it->second.count) << (std::string(s) == "tail" ? "\n" : ", ");
        }
        return out.str();
    }
    out << "| Variant |";
    for (auto k : ks) out << " Recall@" << k << " | Gain@" << k << " |";
    out << "\n|---|";
    for (std::size_t j = 0; j < ks.size(); ++j) out << "---:|---:|";
    out << "\n";
    const auto& base = reports.front();
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        out << "| " << label(r, i) << " |";
        for (auto k : ks) {
            const double v = r.recall("all", k), b = base.recall("all", k);
            out << " " << fmt(v) << " | ";
            if (i == 0) out << "-";
            else if (b > 0) out << (v >= b ? "+" : "") << fmt(100.0 * (v - b) / b, 2) << "%";
            else out << "n/a";
            out << " |";
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace ueppr
