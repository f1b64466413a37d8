// SPDX-License-Identifier: Apache-2.0
#include "featurize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

namespace ueppr {

namespace {

/// Byte offsets of UTF-8 code point starts, plus the end offset.
std::vector<std::size_t> code_point_offsets(std::string_view w) {
    std::vector<std::size_t> offs;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if ((static_cast<unsigned char>(w[i]) & 0xC0) != 0x80) offs.push_back(i);
    }
    offs.push_back(w.size());
    return offs;
}

std::string underscore_spaces(std::string_view s) {
    std::string out;
    for (const auto& w : split_words(s)) {
        if (!out.empty()) out.push_back('_');
        out += w;
    }
    return out;
}

void append(TokenBag& dst, TokenBag src) {
    dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
}

}  // namespace

TokenBag extract_ngrams(std::string_view text) {
    const auto words = split_words(normalize_text(text));
    TokenBag out;
    out.insert(out.end(), words.begin(), words.end());
    for (std::size_t i = 0; i + 1 < words.size(); ++i) out.push_back(words[i] + "_" + words[i + 1]);
    for (const auto& w : words) {
        const auto offs = code_point_offsets(w);
        const std::size_t n = offs.size() - 1;
        if (n < 3) continue;
        for (std::size_t i = 0; i + 3 <= n; ++i) out.push_back(w.substr(offs[i], offs[i + 3] - offs[i]));
    }
    return out;
}

TokenBag extract_category_tokens(const std::vector<std::string>& category_path) {
    TokenBag out;
    std::string prefix;
    for (const auto& level : category_path) {
        const std::string name = underscore_spaces(normalize_text(level));
        prefix += prefix.empty() ? name : "." + name;
        out.push_back("#category_" + prefix);
    }
    return out;
}

TokenBag extract_attribute_tokens(const std::vector<std::pair<std::string, std::string>>& attributes) {
    TokenBag out;
    for (const auto& [key, value] : attributes) {
        const std::string k = underscore_spaces(normalize_text(key));
        const std::string v = underscore_spaces(normalize_text(value));
        out.push_back("#attr_" + k + "_" + v);
        if (split_words(value).size() > 1) append(out, extract_ngrams(value));
    }
    return out;
}

TokenBag zip_prefixes(std::string_view zip) {
    TokenBag out;
    const std::string z = underscore_spaces(normalize_text(zip));
    for (std::size_t i = 1; i <= z.size(); ++i) out.push_back("#zip_" + z.substr(0, i));
    return out;
}

// ---------------------------------------------------------------------------
// Location buckets

std::string KMeansModel::to_json() const {
    nlohmann::json j{{"k", k}, {"seed", seed}, {"centers", nlohmann::json::array()}};
    for (const auto& c : centers) j["centers"].push_back({c[0], c[1]});
    return j.dump();
}

KMeansModel KMeansModel::from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        KMeansModel m;
        m.k = j.at("k").get<std::size_t>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& c : j.at("centers")) m.centers.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
        if (m.centers.size() != m.k) fail(ErrorCode::parse, "k-means: center count does not match k");
        return m;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        fail(ErrorCode::parse, std::string("k-means: ") + e.what());
    }
}

namespace {
double sq_dist(const LatLon& a, const LatLon& b) {
    const double d0 = a[0] - b[0];
    const double d1 = a[1] - b[1];
    return d0 * d0 + d1 * d1;
}
}  // namespace

std::size_t nearest_center(const LatLon& point, const KMeansModel& model) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < model.centers.size(); ++i) {
        const double d = sq_dist(point, model.centers[i]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

std::string assign_location_bucket(const LatLon& point, const KMeansModel& model) {
    return "#locbucket_" + std::to_string(model.k) + "_" + std::to_string(nearest_center(point, model));
}

double kmeans_inertia(const std::vector<LatLon>& points, const KMeansModel& model) {
    double s = 0;
    for (const auto& p : points) s += sq_dist(p, model.centers[nearest_center(p, model)]);
    return s;
}

KMeansModel fit_location_buckets(const std::vector<LatLon>& points, std::size_t k, std::uint64_t seed) {
    if (k == 0) fail(ErrorCode::invalid_argument, "k-means: k must be positive");
    if (points.size() < k)
        fail(ErrorCode::invalid_argument, "k-means: need at least k=" + std::to_string(k) + " points, got " +
                                              std::to_string(points.size()));
    Rng rng(seed);
    KMeansModel model;
    model.k = k;
    model.seed = seed;

    // k-means++ seeding.
    model.centers.push_back(points[rng.index(points.size())]);
    std::vector<double> d2(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) d2[i] = sq_dist(points[i], model.centers[0]);
    while (model.centers.size() < k) {
        double total = 0;
        for (double d : d2) total += d;
        std::size_t pick = 0;
        if (total <= 0) {
            pick = rng.index(points.size());
        } else {
            double u = rng.uniform() * total;
            for (pick = 0; pick + 1 < points.size(); ++pick) {
                u -= d2[pick];
                if (u < 0) break;
            }
        }
        model.centers.push_back(points[pick]);
        for (std::size_t i = 0; i < points.size(); ++i) d2[i] = std::min(d2[i], sq_dist(points[i], points[pick]));
    }

    std::vector<std::array<double, 2>> sums(k);
    std::vector<std::size_t> counts(k);
    for (int iter = 0; iter < 100; ++iter) {
        std::fill(sums.begin(), sums.end(), std::array<double, 2>{0.0, 0.0});
        std::fill(counts.begin(), counts.end(), 0);
        for (const auto& p : points) {
            const std::size_t c = nearest_center(p, model);
            sums[c][0] += p[0];
            sums[c][1] += p[1];
            ++counts[c];
        }
        double max_move = 0;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its center
            const LatLon next{sums[c][0] / double(counts[c]), sums[c][1] / double(counts[c])};
            max_move = std::max(max_move, std::sqrt(sq_dist(next, model.centers[c])));
            model.centers[c] = next;
        }
        if (max_move < 1e-6) break;
    }
    return model;
}

TokenBag LocationFeaturizer::tokens(const Location& loc) const {
    TokenBag out;
    if (!loc.country.empty()) out.push_back("#country_" + underscore_spaces(normalize_text(loc.country)));
    append(out, zip_prefixes(loc.zip));
    for (const auto& m : bucketings) out.push_back(assign_location_bucket({loc.lat, loc.lon}, m));
    return out;
}

LocationFeaturizer fit_location_featurizer(const InteractionLog& log, std::uint64_t seed, std::vector<std::size_t> ks) {
    std::set<LatLon> unique;
    for (const auto& r : log)
        if (r.context.user_location) unique.insert({r.context.user_location->lat, r.context.user_location->lon});
    std::vector<LatLon> points(unique.begin(), unique.end());
    LocationFeaturizer f;
    if (points.empty()) return f;
    for (std::size_t k : ks) f.bucketings.push_back(fit_location_buckets(points, std::min(k, points.size()), seed + k));
    return f;
}

// ---------------------------------------------------------------------------
// Field groups

std::vector<TokenFieldGroup> product_fields(const ProductDoc& p, const LocationFeaturizer& loc, const FeatureSwitches& sw) {
    std::vector<TokenFieldGroup> g(kProductGroups);
    for (std::size_t i = 0; i < kProductGroups; ++i) g[i].group_id = i;
    g[0].tokens = extract_ngrams(p.title);
    for (const auto& t : p.tags) append(g[0].tokens, extract_ngrams(t));
    if (sw.description) g[1].tokens = extract_ngrams(p.description);
    g[2].tokens = extract_category_tokens(p.category_path);
    if (sw.attributes) append(g[2].tokens, extract_attribute_tokens(p.attributes));
    if (sw.location) g[3].tokens = loc.tokens(p.location);
    return g;
}

std::vector<TokenFieldGroup> query_user_fields(const QueryUserContext& ctx, const LocationFeaturizer& loc,
                                               const FeatureSwitches& sw) {
    std::vector<TokenFieldGroup> g(kQueryGroups);
    for (std::size_t i = 0; i < kQueryGroups; ++i) g[i].group_id = i;
    g[0].tokens = extract_ngrams(ctx.query);
    if (sw.history) {
        for (const auto& t : ctx.recent_clicked_terms) append(g[1].tokens, extract_ngrams(t));
        for (const auto& t : ctx.purchased_tags) append(g[2].tokens, extract_ngrams(t));
    }
    if (sw.location && ctx.user_location) g[3].tokens = loc.tokens(*ctx.user_location);
    return g;
}

}  // namespace ueppr
