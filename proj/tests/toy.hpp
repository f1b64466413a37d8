// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "towers.hpp"

namespace toy {

inline ueppr::ModelConfig small_config() {
    ueppr::ModelConfig c;
    c.embed_dim = 8;
    c.out_dim = 8;
    c.buckets = 512;
    c.shop_buckets = 64;
    c.max_searches = 2;
    c.max_shops = 2;
    c.ff_dim = 16;
    c.graph_samples = 4;
    return c;
}

inline ueppr::LocationFeaturizer small_locations() {
    ueppr::LocationFeaturizer loc;
    ueppr::KMeansModel km;
    km.k = 2;
    km.centers = {{0, 0}, {40, -70}};
    loc.bucketings.push_back(km);
    return loc;
}

inline ueppr::TwoTowerModel small_model(std::uint64_t seed = 1) {
    return ueppr::TwoTowerModel(small_config(), small_locations(), seed);
}

inline ueppr::ProductDoc product(std::uint64_t id, std::string title, std::uint64_t shop = 1) {
    ueppr::ProductDoc p;
    p.product_id = id;
    p.title = std::move(title);
    p.tags = {"gift"};
    p.description = "handmade item";
    p.attributes = {{"color", id % 2 ? "red" : "blue"}};
    p.category_path = {"home", "decor"};
    p.shop_id = shop;
    p.location = {40.0 + double(id % 3), -70.0, "021" + std::to_string(id % 10), "us"};
    p.quality = {4.0, 1.0, 0.1};
    return p;
}

inline ueppr::QueryUserContext context(std::string q, int history = 2) {
    ueppr::QueryUserContext c;
    c.query = std::move(q);
    c.user_location = ueppr::Location{41.0, -71.0, "0213", "us"};
    if (history > 0) {
        c.recent_searches = {"blue vase", "lamp"};
        c.recent_shop_clicks = {3, 5};
        c.recent_clicked_terms = {"ceramic"};
        c.purchased_tags = {"candle"};
    }
    if (history > 1) c.recent_searches.resize(std::min<std::size_t>(c.recent_searches.size(), 2));
    return c;
}

}  // namespace toy
