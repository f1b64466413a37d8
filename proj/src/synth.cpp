// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic marketplace. The generator plants four effects the
// model is expected to recover:
//   - synonym and occasion queries whose words never appear in product text
//   - purchases biased towards products near the user
//   - a latent quality scalar that raises purchase odds regardless of relevance
//   - per-user topic interests that surface in the history fields
#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <unordered_set>

#include "corpus.hpp"

namespace ueppr {
namespace {

constexpr const char* kColors[] = {"red", "blue", "green", "black", "white", "yellow",
                                   "pink", "purple", "orange", "brown", "grey", "gold"};
constexpr const char* kMaterials[] = {"oak", "linen", "cotton", "silver", "ceramic", "wool", "leather", "glass"};

class WordMint {
public:
    explicit WordMint(Rng& rng) : rng_(rng) {
        for (const char* c : kColors) used_.insert(c);
        for (const char* m : kMaterials) used_.insert(m);
        for (const char* w : {"gift", "gifts", "for", "present", "presents"}) used_.insert(w);
    }

    std::string next() {
        static constexpr std::string_view cons = "bcdfghjklmnprstvz";
        static constexpr std::string_view vows = "aeiou";
        for (;;) {
            std::string w;
            const std::size_t syl = 2 + rng_.index(2);
            for (std::size_t i = 0; i < syl; ++i) {
                w.push_back(cons[rng_.index(cons.size())]);
                w.push_back(vows[rng_.index(vows.size())]);
            }
            if (rng_.uniform() < 0.5) w.push_back(cons[rng_.index(cons.size())]);
            if (used_.insert(w).second) return w;
        }
    }

private:
    Rng& rng_;
    std::unordered_set<std::string> used_;
};

struct Region {
    double lat, lon;
    std::string zip_prefix;
    std::string country;
};

struct Topic {
    std::string name;
    std::string word;
    std::vector<std::string> styles;
};

struct Concept {
    std::size_t topic;
    std::string head;
    std::string synonym;  // empty when none
};

struct Shop {
    std::size_t topic;
    std::size_t region;
    double latent;
};

struct ProductMeta {
    std::size_t intent;
    std::size_t color;
    double quality;
};

struct User {
    std::size_t region;
    Location location;
    std::vector<std::size_t> interests;
};

struct UserState {
    std::deque<std::string> searches;
    std::deque<std::uint64_t> shops;
    std::deque<std::string> terms;
    std::set<std::string> tags;
};

/// Zipf-weighted sampler over a fixed number of items, with a random
/// permutation deciding which item gets which rank.
class ZipfSampler {
public:
    ZipfSampler(std::size_t n, double exponent, Rng& rng) : order_(n), cdf_(n) {
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        rng.shuffle(order_);
        double acc = 0;
        for (std::size_t r = 0; r < n; ++r) {
            acc += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
            cdf_[r] = acc;
        }
        weight_.assign(n, 0.0);
        for (std::size_t r = 0; r < n; ++r) weight_[order_[r]] = 1.0 / std::pow(static_cast<double>(r + 1), exponent);
    }

    std::size_t sample(Rng& rng) const {
        const double u = rng.uniform() * cdf_.back();
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return order_[std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), order_.size() - 1)];
    }

    /// Sample restricted to a subset of items, proportionally to their weights.
    std::size_t sample_among(const std::vector<std::size_t>& items, Rng& rng) const {
        double total = 0;
        for (auto i : items) total += weight_[i];
        double u = rng.uniform() * total;
        for (auto i : items) {
            u -= weight_[i];
            if (u <= 0) return i;
        }
        return items.back();
    }

private:
    std::vector<std::size_t> order_;
    std::vector<double> cdf_;
    std::vector<double> weight_;
};

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

template <typename T>
void push_front_capped(std::deque<T>& d, const T& v, std::size_t cap) {
    d.push_front(v);
    if (d.size() > cap) d.pop_back();
}

}  // namespace

SyntheticCorpus synthesize_corpus(const SynthOptions& opt) {
    if (opt.n_products < 1 || opt.n_queries < 1 || opt.n_users < 1)
        fail(ErrorCode::invalid_argument, "synthesize_corpus: sizes must be >= 1");
    if (opt.days <= opt.eval_days || opt.eval_days < 1)
        fail(ErrorCode::invalid_argument, "synthesize_corpus: need days > eval_days >= 1");

    Rng rng(opt.seed);
    WordMint mint(rng);
    const std::size_t n_colors = std::size(kColors);
    const std::size_t n_materials = std::size(kMaterials);

    // Geography: a handful of metro regions across a continental box.
    const std::size_t n_regions = 24;
    std::vector<Region> regions;
    {
        std::set<std::string> prefixes;
        for (std::size_t i = 0; i < n_regions; ++i) {
            Region r;
            const bool north = i < 2;
            r.lat = north ? rng.uniform(44.0, 50.0) : rng.uniform(26.0, 48.0);
            r.lon = rng.uniform(-122.0, -70.0);
            r.country = north ? "ca" : "us";
            std::string p;
            do {
                p = std::to_string(100 + rng.index(900));
            } while (!prefixes.insert(p).second);
            r.zip_prefix = p;
            regions.push_back(r);
        }
    }
    auto jitter_location = [&](std::size_t region) {
        const auto& r = regions[region];
        Location loc;
        loc.lat = r.lat + rng.normal(0.0, 0.6);
        loc.lon = r.lon + rng.normal(0.0, 0.6);
        char digits[3];
        std::snprintf(digits, sizeof(digits), "%02zu", rng.index(100));
        loc.zip = r.zip_prefix + digits;
        loc.country = r.country;
        return loc;
    };

    const std::size_t n_concepts = std::max<std::size_t>(1, opt.n_queries / 10);
    const std::size_t n_topics =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(double(n_concepts)) * 1.5)), 1,
                                std::min<std::size_t>(24, n_concepts));
    const std::size_t n_occasions = std::max<std::size_t>(1, opt.n_queries / 40);

    std::vector<Topic> topics(n_topics);
    for (auto& t : topics) {
        t.name = mint.next();
        t.word = mint.next();
        for (int s = 0; s < 5; ++s) t.styles.push_back(mint.next());
    }
    std::vector<Concept> concepts(n_concepts);
    for (std::size_t c = 0; c < n_concepts; ++c) {
        concepts[c].topic = c % n_topics;
        // Some heads are shared by two topics; history disambiguates them.
        if (c >= n_topics && rng.uniform() < 0.15) {
            std::size_t other = rng.index(c);
            if (concepts[other].topic != concepts[c].topic) {
                concepts[c].head = concepts[other].head;
            }
        }
        if (concepts[c].head.empty()) concepts[c].head = mint.next();
        if (rng.uniform() < 0.5) concepts[c].synonym = mint.next();
    }
    std::vector<std::string> occasions(n_occasions);
    for (auto& o : occasions) o = mint.next();
    std::vector<std::string> noise(200);
    for (auto& w : noise) w = mint.next();

    const std::size_t n_shops = std::max<std::size_t>(1, opt.n_products / 20);
    std::vector<Shop> shops(n_shops);
    std::vector<std::vector<std::size_t>> shops_by_topic(n_topics);
    for (std::size_t s = 0; s < n_shops; ++s) {
        shops[s] = Shop{s % n_topics, rng.index(n_regions), rng.uniform()};
        shops_by_topic[shops[s].topic].push_back(s);
    }

    // Products.
    std::vector<ProductDoc> docs;
    std::vector<ProductMeta> meta;
    std::vector<std::vector<std::size_t>> by_concept(n_concepts);
    std::vector<std::vector<std::size_t>> by_occasion(n_occasions);
    docs.reserve(opt.n_products);
    for (std::size_t i = 0; i < opt.n_products; ++i) {
        const std::size_t c = i < n_concepts ? i : rng.index(n_concepts);
        const auto& intent = concepts[c];
        const auto& topic = topics[intent.topic];
        const auto& topic_shops = shops_by_topic[intent.topic];
        const std::size_t shop = topic_shops.empty() ? rng.index(n_shops) : topic_shops[rng.index(topic_shops.size())];
        const std::size_t color = rng.index(n_colors);
        const std::size_t material = rng.index(n_materials);
        const std::string& style = topic.styles[rng.index(topic.styles.size())];
        const double q = rng.uniform();

        ProductDoc p;
        p.product_id = 100000 + i;
        p.title = style + " " + intent.head + " " + topic.word;
        p.tags = {intent.head, style, topic.word, kMaterials[material]};
        std::vector<std::string> desc;
        for (int k = 0; k < 8; ++k) desc.push_back(noise[rng.index(noise.size())]);
        desc.push_back(intent.head);
        desc.push_back(kMaterials[material]);
        if (rng.uniform() < 0.5) desc.push_back(kColors[color]);
        rng.shuffle(desc);
        for (const auto& w : desc) p.description += (p.description.empty() ? "" : " ") + w;
        p.attributes = {{"color", kColors[color]}, {"material", kMaterials[material]}};
        p.category_path = {topic.name, intent.head};
        p.shop_id = 5000 + shop;
        p.location = jitter_location(shops[shop].region);
        const double rating = 1.0 + 4.0 * clamp01(q + rng.normal(0.0, 0.1));
        const double freshness_days = rng.uniform(0.0, 365.0);
        const double conversion = 0.1 * clamp01(0.6 * q + 0.4 * shops[shop].latent + rng.normal(0.0, 0.05));
        p.quality = {rating, freshness_days, conversion};

        by_concept[c].push_back(i);
        if (rng.uniform() < 0.5) by_occasion[rng.index(n_occasions)].push_back(i);
        docs.push_back(std::move(p));
        meta.push_back(ProductMeta{c, color, q});
    }

    std::vector<User> users(opt.n_users);
    for (auto& u : users) {
        u.region = rng.index(n_regions);
        u.location = jitter_location(u.region);
        u.interests.push_back(rng.index(n_topics));
        if (n_topics > 1) {
            std::size_t second;
            do {
                second = rng.index(n_topics);
            } while (second == u.interests[0]);
            u.interests.push_back(second);
        }
    }
    std::vector<std::vector<std::size_t>> concepts_by_topic(n_topics);
    for (std::size_t c = 0; c < n_concepts; ++c) concepts_by_topic[concepts[c].topic].push_back(c);

    ZipfSampler concept_pop(n_concepts, opt.zipf_exponent, rng);
    ZipfSampler occasion_pop(n_occasions, opt.zipf_exponent, rng);

    // Event skeleton: (user, time offset).
    const std::size_t n_events = opt.n_interactions ? opt.n_interactions : 20 * opt.n_users;
    const std::int64_t span = std::int64_t{opt.days} * 86400;
    struct Event {
        std::size_t user;
        std::int64_t t;
        std::size_t seq;
    };
    std::vector<Event> events(n_events);
    for (std::size_t e = 0; e < n_events; ++e)
        events[e] = Event{rng.index(opt.n_users), static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(span))), e};
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        return a.user != b.user ? a.user < b.user : (a.t != b.t ? a.t < b.t : a.seq < b.seq);
    });

    std::vector<UserState> state(opt.n_users);
    std::vector<std::pair<std::int64_t, Interaction>> records;
    records.reserve(n_events);
    std::vector<std::size_t> filtered;
    for (const auto& ev : events) {
        const User& user = users[ev.user];
        UserState& st = state[ev.user];

        std::string query;
        const std::vector<std::size_t>* relevant = nullptr;
        bool occasion = rng.uniform() < opt.occasion_share;
        if (occasion) {
            const std::size_t o = occasion_pop.sample(rng);
            if (by_occasion[o].empty()) {
                occasion = false;
            } else {
                static const char* const phrasings[][2] = {
                    {"", " gift"}, {"", " gifts"}, {"gift for ", ""}, {"", " present"}, {"", " presents"}};
                const auto& ph = phrasings[rng.index(std::size(phrasings))];
                query = ph[0] + occasions[o] + ph[1];
                relevant = &by_occasion[o];
            }
        }
        if (!occasion) {
            std::size_t c;
            if (rng.uniform() < 0.8) {
                std::vector<std::size_t> pool;
                for (auto t : user.interests)
                    pool.insert(pool.end(), concepts_by_topic[t].begin(), concepts_by_topic[t].end());
                c = pool.empty() ? concept_pop.sample(rng) : concept_pop.sample_among(pool, rng);
            } else {
                c = concept_pop.sample(rng);
            }
            if (by_concept[c].empty()) c = meta[rng.index(meta.size())].intent;
            const auto& intent = concepts[c];
            const std::string& word =
                (!intent.synonym.empty() && rng.uniform() < 0.5) ? intent.synonym : intent.head;
            relevant = &by_concept[c];
            query = word;
            if (rng.uniform() < opt.color_share) {
                const std::size_t color = rng.index(n_colors);
                filtered.clear();
                for (auto i : by_concept[c])
                    if (meta[i].color == color) filtered.push_back(i);
                if (!filtered.empty()) {
                    relevant = &filtered;
                    query = std::string(kColors[color]) + " " + word;
                }
            }
        }

        // Choice among relevant products: quality and proximity raise utility.
        std::size_t chosen = (*relevant)[0];
        double best = -INFINITY;
        for (auto i : *relevant) {
            const auto& loc = docs[i].location;
            const double dist = haversine_km(user.location.lat, user.location.lon, loc.lat, loc.lon);
            const double u = opt.quality_effect * meta[i].quality - opt.location_affinity * dist / 1000.0 + rng.gumbel();
            if (u > best) {
                best = u;
                chosen = i;
            }
        }
        const ProductDoc& prod = docs[chosen];
        const double r = rng.uniform();
        const InteractionKind kind =
            r < 0.45 ? InteractionKind::click : (r < 0.70 ? InteractionKind::cartadd : InteractionKind::purchase);

        Interaction rec;
        rec.context.query = query;
        rec.context.user_location = user.location;
        rec.context.recent_searches.assign(st.searches.begin(), st.searches.end());
        rec.context.recent_shop_clicks.assign(st.shops.begin(), st.shops.end());
        rec.context.recent_clicked_terms.assign(st.terms.begin(), st.terms.end());
        rec.context.purchased_tags.assign(st.tags.begin(), st.tags.end());
        rec.product_id = prod.product_id;
        rec.kind = kind;
        rec.timestamp = opt.start_timestamp + ev.t;

        push_front_capped(st.searches, query, 5);
        push_front_capped(st.shops, prod.shop_id, 5);
        for (const auto& w : split_words(prod.title)) {
            if (std::find(st.terms.begin(), st.terms.end(), w) == st.terms.end()) push_front_capped(st.terms, w, 10);
        }
        if (kind == InteractionKind::purchase) st.tags.insert(prod.tags.begin(), prod.tags.end());

        records.emplace_back(rec.timestamp, std::move(rec));
    }
    std::stable_sort(records.begin(), records.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    SyntheticCorpus out;
    out.products = ProductCorpus(std::move(docs));
    out.log.reserve(records.size());
    for (auto& [_, r] : records) out.log.push_back(std::move(r));
    out.cutoff = opt.start_timestamp + std::int64_t{opt.days - opt.eval_days} * 86400;
    return out;
}

}  // namespace ueppr
