// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <vector>

#include "common.hpp"
#include "metrics.hpp"

using namespace ueppr;

TEST_CASE("recall_at_k counts targets in the first k") {
    const std::vector<std::uint64_t> retrieved{5, 3, 9, 1};
    CHECK(recall_at_k(retrieved, std::vector<std::uint64_t>{3}, 2) == 1.0);
    CHECK(recall_at_k(retrieved, std::vector<std::uint64_t>{3, 7}, 4) == 0.5);
    CHECK(recall_at_k(retrieved, std::vector<std::uint64_t>{1}, 3) == 0.0);
    CHECK(recall_at_k(retrieved, std::vector<std::uint64_t>{1}, 10) == 1.0);
    CHECK(recall_at_k({}, std::vector<std::uint64_t>{1}, 10) == 0.0);
}

TEST_CASE("recall_at_k ignores duplicate targets and rejects empty ones") {
    const std::vector<std::uint64_t> retrieved{2, 4};
    CHECK(recall_at_k(retrieved, std::vector<std::uint64_t>{2, 2, 8}, 2) == 0.5);
    CHECK_THROWS_AS(recall_at_k(retrieved, std::vector<std::uint64_t>{}, 2), Error);
}

TEST_CASE("quantile interpolates order statistics") {
    CHECK(quantile({}, 0.5) == 0.0);
    CHECK(quantile({4.0}, 0.98) == 4.0);
    CHECK(quantile({3, 1, 2, 4}, 0.0) == 1.0);
    CHECK(quantile({3, 1, 2, 4}, 1.0) == 4.0);
    CHECK(quantile({3, 1, 2, 4}, 0.5) == doctest::Approx(2.5));
    std::vector<double> v;
    for (int i = 0; i <= 100; ++i) v.push_back(i);
    CHECK(quantile(v, 0.98) == doctest::Approx(98.0));
}
