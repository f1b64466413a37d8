// SPDX-License-Identifier: Apache-2.0
#include "metrics.hpp"

#include <algorithm>
#include <unordered_set>

#include "common.hpp"

namespace ueppr {

double recall_at_k(std::span<const std::uint64_t> retrieved, std::span<const std::uint64_t> targets, std::size_t k) {
    if (targets.empty()) fail(ErrorCode::invalid_argument, "recall_at_k: empty target set");
    const std::unordered_set<std::uint64_t> top(retrieved.begin(), retrieved.begin() + std::ptrdiff_t(std::min(k, retrieved.size())));
    const std::unordered_set<std::uint64_t> unique(targets.begin(), targets.end());
    std::size_t hits = 0;
    for (auto t : unique) hits += top.count(t);
    return double(hits) / double(unique.size());
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * double(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

}  // namespace ueppr
