// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "corpus.hpp"

namespace ueppr {

using TokenBag = std::vector<std::string>;

struct TokenFieldGroup {
    std::size_t group_id = 0;
    TokenBag tokens;
};

/// Lowercased unigrams, "_"-joined adjacent bigrams and per-word character
/// trigrams. A 3-character word is its own single trigram; shorter words
/// produce none. Words split on whitespace only.
TokenBag extract_ngrams(std::string_view text);

/// One "#category_<a.b.c>" token per prefix of the path.
TokenBag extract_category_tokens(const std::vector<std::string>& category_path);

/// "#attr_<key>_<value>" per pair (whitespace -> "_"), plus the value's n-grams
/// for multi-word values.
TokenBag extract_attribute_tokens(const std::vector<std::pair<std::string, std::string>>& attributes);

/// "#zip_<prefix>" for every non-empty prefix.
TokenBag zip_prefixes(std::string_view zip);

struct KMeansModel {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<std::array<double, 2>> centers;  // (lat, lon)

    std::string to_json() const;
    static KMeansModel from_json(const std::string& text);
    bool operator==(const KMeansModel&) const = default;
};

using LatLon = std::array<double, 2>;

/// Lloyd iterations from k-means++ seeding. Stops when no center moves more
/// than 1e-6 or after 100 iterations.
KMeansModel fit_location_buckets(const std::vector<LatLon>& points, std::size_t k, std::uint64_t seed);

/// Nearest center by squared Euclidean distance on raw (lat, lon); ties go to
/// the lower index.
std::size_t nearest_center(const LatLon& point, const KMeansModel& model);
std::string assign_location_bucket(const LatLon& point, const KMeansModel& model);

double kmeans_inertia(const std::vector<LatLon>& points, const KMeansModel& model);

/// Which optional product/user signals feed the token groups. Disabled
/// signals produce empty bags, so the model shape stays fixed.
struct FeatureSwitches {
    bool description = true;
    bool attributes = true;
    bool location = true;
    bool history = true;
    bool graph = true;

    bool operator==(const FeatureSwitches&) const = default;
};

struct LocationFeaturizer {
    std::vector<KMeansModel> bucketings;  // typically k = 50, 100, 500

    TokenBag tokens(const Location& loc) const;
};

inline constexpr std::size_t kProductGroups = 4;
inline constexpr std::size_t kQueryGroups = 4;

/// G0 title+tags n-grams, G1 description n-grams, G2 category+attribute
/// tokens, G3 location tokens.
std::vector<TokenFieldGroup> product_fields(const ProductDoc& product, const LocationFeaturizer& loc,
                                            const FeatureSwitches& sw = {});

/// H0 query n-grams, H1 clicked-term n-grams, H2 purchased-tag n-grams,
/// H3 user location tokens.
std::vector<TokenFieldGroup> query_user_fields(const QueryUserContext& ctx, const LocationFeaturizer& loc,
                                               const FeatureSwitches& sw = {});

/// Fit the three standard bucketings (k = 50, 100, 500, each capped at the
/// number of distinct points) on user locations found in the log.
LocationFeaturizer fit_location_featurizer(const InteractionLog& log, std::uint64_t seed,
                                           std::vector<std::size_t> ks = {50, 100, 500});

}  // namespace ueppr
