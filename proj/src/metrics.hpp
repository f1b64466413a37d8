// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ueppr {

/// Fraction of `targets` found among the first k retrieved ids. Throws on
/// empty targets.
double recall_at_k(std::span<const std::uint64_t> retrieved, std::span<const std::uint64_t> targets, std::size_t k);

/// Value at quantile q in [0,1] using linear interpolation between order
/// statistics. Empty input gives 0.
double quantile(std::vector<double> values, double q);

}  // namespace ueppr
