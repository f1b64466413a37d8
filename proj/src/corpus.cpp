// SPDX-License-Identifier: Apache-2.0
#include "corpus.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ueppr {

using nlohmann::json;

const char* kind_name(InteractionKind kind) {
    switch (kind) {
        case InteractionKind::click: return "click";
        case InteractionKind::cartadd: return "cartadd";
        case InteractionKind::purchase: return "purchase";
    }
    return "click";
}

InteractionKind parse_kind(const std::string& name) {
    if (name == "click") return InteractionKind::click;
    if (name == "cartadd") return InteractionKind::cartadd;
    if (name == "purchase") return InteractionKind::purchase;
    fail(ErrorCode::parse, "unknown interaction kind '" + name + "'");
}

ProductCorpus::ProductCorpus(std::vector<ProductDoc> products) : products_(std::move(products)) {
    by_id_.reserve(products_.size());
    for (std::size_t i = 0; i < products_.size(); ++i) {
        const auto& p = products_[i];
        if (!by_id_.emplace(p.product_id, i).second)
            fail(ErrorCode::invalid_argument, "duplicate product_id " + std::to_string(p.product_id));
        if (p.category_path.empty())
            fail(ErrorCode::invalid_argument, "product " + std::to_string(p.product_id) + " has empty category_path");
        if (i == 0) {
            quality_dim_ = p.quality.size();
        } else if (p.quality.size() != quality_dim_) {
            fail(ErrorCode::invalid_argument, "product " + std::to_string(p.product_id) +
                                                  " quality dimension " + std::to_string(p.quality.size()) +
                                                  " != " + std::to_string(quality_dim_));
        }
    }
}

const ProductDoc* ProductCorpus::find(std::uint64_t id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &products_[it->second];
}

std::optional<std::size_t> ProductCorpus::index_of(std::uint64_t id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

void BipartiteGraph::set(std::uint64_t product_id, Neighbors neighbors) {
    std::sort(neighbors.begin(), neighbors.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    adjacency_[product_id] = std::move(neighbors);
}

const BipartiteGraph::Neighbors& BipartiteGraph::neighbors(std::uint64_t product_id) const {
    static const Neighbors empty;
    auto it = adjacency_.find(product_id);
    return it == adjacency_.end() ? empty : it->second;
}

std::size_t BipartiteGraph::num_edges() const {
    std::size_t n = 0;
    for (const auto& [_, nb] : adjacency_) n += nb.size();
    return n;
}

// ---------------------------------------------------------------------------
// JSON mapping

namespace {

json location_to_json(const Location& loc) {
    return json{{"lat", loc.lat}, {"lon", loc.lon}, {"zip", loc.zip}, {"country", loc.country}};
}

Location location_from_json(const json& j) {
    Location loc;
    loc.lat = j.at("lat").get<double>();
    loc.lon = j.at("lon").get<double>();
    loc.zip = j.value("zip", "");
    loc.country = j.value("country", "");
    return loc;
}

json product_to_json(const ProductDoc& p) {
    json attrs = json::array();
    for (const auto& [k, v] : p.attributes) attrs.push_back(json{{"key", k}, {"value", v}});
    json j{{"product_id", p.product_id},
           {"title", p.title},
           {"tags", p.tags},
           {"description", p.description},
           {"attributes", attrs},
           {"category_path", p.category_path},
           {"shop_id", p.shop_id},
           {"location", location_to_json(p.location)},
           {"quality", p.quality}};
    if (!p.text_vector.empty()) j["text_vector"] = p.text_vector;
    return j;
}

ProductDoc product_from_json(const json& j) {
    ProductDoc p;
    p.product_id = j.at("product_id").get<std::uint64_t>();
    p.title = j.value("title", "");
    p.tags = j.value("tags", std::vector<std::string>{});
    p.description = j.value("description", "");
    if (j.contains("attributes")) {
        for (const auto& a : j.at("attributes")) {
            if (a.is_array()) {
                p.attributes.emplace_back(a.at(0).get<std::string>(), a.at(1).get<std::string>());
            } else {
                p.attributes.emplace_back(a.at("key").get<std::string>(), a.at("value").get<std::string>());
            }
        }
    }
    p.category_path = j.at("category_path").get<std::vector<std::string>>();
    p.shop_id = j.value("shop_id", std::uint64_t{0});
    if (j.contains("location") && !j.at("location").is_null()) p.location = location_from_json(j.at("location"));
    p.quality = j.value("quality", std::vector<double>{});
    if (j.contains("text_vector")) p.text_vector = j.at("text_vector").get<std::vector<float>>();
    return p;
}

json context_to_json_obj(const QueryUserContext& c) {
    json j{{"query", c.query},
           {"user_location", c.user_location ? location_to_json(*c.user_location) : json(nullptr)},
           {"recent_searches", c.recent_searches},
           {"recent_shop_clicks", c.recent_shop_clicks},
           {"recent_clicked_terms", c.recent_clicked_terms},
           {"purchased_tags", c.purchased_tags}};
    return j;
}

QueryUserContext context_from_json_obj(const json& j) {
    QueryUserContext c;
    c.query = j.at("query").get<std::string>();
    if (j.contains("user_location") && !j.at("user_location").is_null())
        c.user_location = location_from_json(j.at("user_location"));
    c.recent_searches = j.value("recent_searches", std::vector<std::string>{});
    c.recent_shop_clicks = j.value("recent_shop_clicks", std::vector<std::uint64_t>{});
    c.recent_clicked_terms = j.value("recent_clicked_terms", std::vector<std::string>{});
    c.purchased_tags = j.value("purchased_tags", std::vector<std::string>{});
    return c;
}

json interaction_to_json(const Interaction& r) {
    return json{{"context", context_to_json_obj(r.context)},
                {"product_id", r.product_id},
                {"kind", kind_name(r.kind)},
                {"timestamp", r.timestamp}};
}

Interaction interaction_from_json(const json& j) {
    Interaction r;
    r.context = context_from_json_obj(j.at("context"));
    r.product_id = j.at("product_id").get<std::uint64_t>();
    r.kind = parse_kind(j.at("kind").get<std::string>());
    r.timestamp = j.at("timestamp").get<std::int64_t>();
    if (r.timestamp <= 0) fail(ErrorCode::parse, "timestamp must be positive");
    return r;
}

template <typename T, typename Fn>
std::vector<T> parse_lines(const std::string& text, const std::string& source, Fn&& from_json) {
    std::vector<T> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(from_json(json::parse(line)));
        } catch (const Error& e) {
            fail(e.code(), source + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const std::exception& e) {
            fail(ErrorCode::parse, source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace

ProductCorpus parse_products(const std::string& jsonl, const std::string& source) {
    return ProductCorpus(parse_lines<ProductDoc>(jsonl, source, product_from_json));
}

ProductCorpus load_products(const std::string& path) { return parse_products(read_file(path), path); }

std::string serialize_products(const ProductCorpus& corpus) {
    std::string out;
    for (const auto& p : corpus.products()) {
        out += product_to_json(p).dump();
        out += '\n';
    }
    return out;
}

void save_products(const std::string& path, const ProductCorpus& corpus) {
    write_file(path, serialize_products(corpus));
}

InteractionLog parse_interactions(const std::string& jsonl, const std::string& source) {
    return parse_lines<Interaction>(jsonl, source, interaction_from_json);
}

InteractionLog load_interactions(const std::string& path) { return parse_interactions(read_file(path), path); }

std::string serialize_interactions(const InteractionLog& log) {
    std::string out;
    for (const auto& r : log) {
        out += interaction_to_json(r).dump();
        out += '\n';
    }
    return out;
}

void save_interactions(const std::string& path, const InteractionLog& log) {
    write_file(path, serialize_interactions(log));
}

std::string context_to_json(const QueryUserContext& ctx) { return context_to_json_obj(ctx).dump(); }

QueryUserContext context_from_json(const std::string& text) {
    try {
        return context_from_json_obj(json::parse(text));
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        fail(ErrorCode::parse, e.what());
    }
}

std::string canonical_context_key(const QueryUserContext& ctx) {
    auto sorted = [](std::vector<std::string> v) {
        for (auto& s : v) s = normalize_text(s);
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        return v;
    };
    json searches = json::array();
    for (const auto& s : ctx.recent_searches) searches.push_back(normalize_text(s));
    json j{{"q", normalize_text(ctx.query)},
           {"s", searches},
           {"c", ctx.recent_shop_clicks},
           {"t", sorted(ctx.recent_clicked_terms)},
           {"p", sorted(ctx.purchased_tags)}};
    if (ctx.user_location) {
        const auto& l = *ctx.user_location;
        j["l"] = json{l.lat, l.lon, l.zip, l.country};
    }
    return j.dump();
}

BipartiteGraph build_bipartite_graph(const InteractionLog& log, std::uint32_t min_count) {
    std::map<std::uint64_t, std::map<std::string, std::uint32_t>> counts;
    for (const auto& r : log) {
        if (r.kind == InteractionKind::click) continue;
        const std::string q = normalize_text(r.context.query);
        if (q.empty()) continue;
        ++counts[r.product_id][q];
    }
    BipartiteGraph graph;
    for (auto& [pid, qs] : counts) {
        BipartiteGraph::Neighbors nb;
        for (auto& [q, c] : qs)
            if (c >= min_count) nb.emplace_back(q, c);
        if (!nb.empty()) graph.set(pid, std::move(nb));
    }
    return graph;
}

TrainEvalSplit split_train_eval(const InteractionLog& log, std::int64_t cutoff) {
    TrainEvalSplit split;
    std::unordered_map<std::string, std::size_t> slot;
    for (const auto& r : log) {
        if (r.timestamp < cutoff) {
            split.train.push_back(r);
            continue;
        }
        if (r.kind != InteractionKind::purchase) {
            ++split.discarded;
            continue;
        }
        std::string key = canonical_context_key(r.context);
        auto [it, inserted] = slot.emplace(key, split.eval.size());
        if (inserted) split.eval.push_back(EvalQuery{std::move(key), r.context, {}});
        auto& targets = split.eval[it->second].targets;
        if (std::find(targets.begin(), targets.end(), r.product_id) == targets.end())
            targets.push_back(r.product_id);
    }
    return split;
}

std::int64_t default_cutoff(const InteractionLog& log) {
    if (log.empty()) return 0;
    auto [lo, hi] = std::minmax_element(log.begin(), log.end(),
                                        [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    return lo->timestamp + (hi->timestamp - lo->timestamp) * 5 / 6;
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    constexpr double kRad = M_PI / 180.0;
    const double dlat = (lat2 - lat1) * kRad;
    const double dlon = (lon2 - lon1) * kRad;
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1 * kRad) * std::cos(lat2 * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * 6371.0 * std::asin(std::min(1.0, std::sqrt(a)));
}

}  // namespace ueppr
