// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <limits>

#include "featurize.hpp"

using namespace ueppr;

namespace {
TokenBag sorted(TokenBag b) {
    std::sort(b.begin(), b.end());
    return b;
}
}  // namespace

TEST_CASE("extract_ngrams") {
    CHECK(sorted(extract_ngrams("red dress")) == sorted({"red", "dress", "red_dress", "red", "dre", "res", "ess"}));
    CHECK(extract_ngrams("a") == TokenBag{"a"});
    CHECK(extract_ngrams("").empty());
    CHECK(extract_ngrams("  RED  ") == TokenBag{"red", "red"});
    // Multi-byte code points stay whole inside trigrams.
    const auto t = extract_ngrams("caf\xc3\xa9s");
    CHECK(std::find(t.begin(), t.end(), "f\xc3\xa9s") != t.end());
}

TEST_CASE("category, attribute and zip tokens") {
    CHECK(extract_category_tokens({"furniture"}) == TokenBag{"#category_furniture"});
    CHECK(extract_category_tokens({"furniture", "bedroom"}) ==
          TokenBag{"#category_furniture", "#category_furniture.bedroom"});
    CHECK(extract_category_tokens({"a", "b", "c"}).size() == 3);

    CHECK(extract_attribute_tokens({{"color", "red"}}) == TokenBag{"#attr_color_red"});
    TokenBag expect{"#attr_material_oak_wood"};
    for (auto& t : extract_ngrams("oak wood")) expect.push_back(t);
    CHECK(extract_attribute_tokens({{"material", "oak wood"}}) == expect);
    CHECK(extract_attribute_tokens({}).empty());

    CHECK(zip_prefixes("54321") == TokenBag{"#zip_5", "#zip_54", "#zip_543", "#zip_5432", "#zip_54321"});
    CHECK(zip_prefixes("1") == TokenBag{"#zip_1"});
    CHECK(zip_prefixes("").empty());
}

TEST_CASE("fit_location_buckets basics") {
    std::vector<LatLon> pts{{1, 2}, {3, 4}, {5, 9}};
    auto m = fit_location_buckets(pts, 1, 7);
    CHECK(m.centers[0][0] == doctest::Approx(3.0));
    CHECK(m.centers[0][1] == doctest::Approx(5.0));

    std::vector<LatLon> same(5, LatLon{10, 20});
    auto s = fit_location_buckets(same, 1, 1);
    CHECK(kmeans_inertia(same, s) == doctest::Approx(0.0));

    CHECK_THROWS_AS(fit_location_buckets(pts, 4, 1), Error);
    CHECK(fit_location_buckets(pts, 2, 3) == fit_location_buckets(pts, 2, 3));
    CHECK(KMeansModel::from_json(m.to_json()) == m);
}

TEST_CASE("two blobs match the best of all 2-partitions") {
    std::vector<LatLon> pts;
    Rng rng(21);
    for (int i = 0; i < 6; ++i) pts.push_back({rng.uniform(0, 1), rng.uniform(0, 1)});
    for (int i = 0; i < 6; ++i) pts.push_back({rng.uniform(30, 31), rng.uniform(-50, -49)});

    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask + 1 < (1u << pts.size()); ++mask) {
        double sx[2]{}, sy[2]{}, n[2]{};
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const int c = (mask >> i) & 1;
            sx[c] += pts[i][0];
            sy[c] += pts[i][1];
            n[c] += 1;
        }
        double inertia = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const int c = (mask >> i) & 1;
            const double dx = pts[i][0] - sx[c] / n[c];
            const double dy = pts[i][1] - sy[c] / n[c];
            inertia += dx * dx + dy * dy;
        }
        best = std::min(best, inertia);
    }
    auto m = fit_location_buckets(pts, 2, 99);
    CHECK(kmeans_inertia(pts, m) == doctest::Approx(best).epsilon(1e-9));
    for (const auto& c : m.centers) {
        const bool in_a = c[0] >= 0 && c[0] <= 1 && c[1] >= 0 && c[1] <= 1;
        const bool in_b = c[0] >= 30 && c[0] <= 31 && c[1] >= -50 && c[1] <= -49;
        CHECK((in_a || in_b));
    }
}

TEST_CASE("assign_location_bucket") {
    KMeansModel m;
    m.k = 50;
    for (int i = 0; i < 50; ++i) m.centers.push_back({double(i), double(i)});
    CHECK(assign_location_bucket({3, 3}, m) == "#locbucket_50_3");
    CHECK(assign_location_bucket({1.5, 1.5}, m) == "#locbucket_50_1");

    Rng rng(8);
    for (int t = 0; t < 200; ++t) {
        LatLon p{rng.uniform(-5, 55), rng.uniform(-5, 55)};
        std::size_t arg = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m.centers.size(); ++i) {
            const double d = (p[0] - m.centers[i][0]) * (p[0] - m.centers[i][0]) +
                             (p[1] - m.centers[i][1]) * (p[1] - m.centers[i][1]);
            if (d < bd) {
                bd = d;
                arg = i;
            }
        }
        CHECK(nearest_center(p, m) == arg);
    }
}

TEST_CASE("field groups") {
    ProductDoc p;
    p.product_id = 1;
    p.title = "oak table";
    p.tags = {"rustic"};
    p.description = "";
    p.attributes = {{"color", "brown"}};
    p.category_path = {"furniture"};
    p.location = {1, 2, "123", "us"};
    LocationFeaturizer loc;
    KMeansModel km;
    km.k = 1;
    km.centers = {{0, 0}};
    loc.bucketings.push_back(km);

    auto g = product_fields(p, loc);
    REQUIRE(g.size() == kProductGroups);
    CHECK(g[1].tokens.empty());
    CHECK_FALSE(g[0].tokens.empty());
    CHECK(std::find(g[2].tokens.begin(), g[2].tokens.end(), "#attr_color_brown") != g[2].tokens.end());
    CHECK(std::find(g[3].tokens.begin(), g[3].tokens.end(), "#locbucket_1_0") != g[3].tokens.end());
    CHECK(product_fields(p, loc)[0].tokens == g[0].tokens);

    p.description = "zzqnoise";
    auto g2 = product_fields(p, loc);
    CHECK(std::find(g2[0].tokens.begin(), g2[0].tokens.end(), "zzqnoise") == g2[0].tokens.end());

    FeatureSwitches off;
    off.description = false;
    off.attributes = false;
    off.location = false;
    auto g3 = product_fields(p, loc, off);
    CHECK(g3[1].tokens.empty());
    CHECK(g3[2].tokens == extract_category_tokens(p.category_path));
    CHECK(g3[3].tokens.empty());

    QueryUserContext ctx;
    ctx.query = "oak table";
    ctx.user_location = p.location;
    ctx.recent_clicked_terms = {"chair"};
    auto h = query_user_fields(ctx, loc);
    REQUIRE(h.size() == kQueryGroups);
    CHECK(h[0].tokens == extract_ngrams("oak table"));
    CHECK(h[1].tokens == extract_ngrams("chair"));
    CHECK(h[2].tokens.empty());
    CHECK(h[3].tokens == g[3].tokens);  // shared namespace across towers
}
