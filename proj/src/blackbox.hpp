// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ueppr {

/// One dimension of a search space.
struct ParamRange {
    std::string name;
    double lo = 0.0;
    double hi = 1.0;
    bool integer = false;
    bool log_scale = false;
};

struct Trial {
    std::vector<double> x;
    double value = 0.0;
};

struct OptimizeResult {
    std::vector<double> best_x;
    double best_value = 0.0;
    std::vector<Trial> trials;     // in evaluation order
    std::vector<double> best_trace;  // best value after each trial; non-decreasing
};

struct OptimizerOptions {
    std::size_t init_points = 0;   // 0 -> max(dims + 1, budget / 4), capped at budget
    double initial_step = 0.25;    // Gaussian step as a fraction of each range
    double shrink = 0.5;
    std::size_t patience = 3;      // failed proposals before the step shrinks
    double min_step = 1e-3;
    /// Evaluated first when non-empty (e.g. a known-safe incumbent).
    std::vector<std::vector<double>> warm_start;
};

/// Maximizes `objective` over a box. Latin-hypercube seeding, then Gaussian
/// perturbations of the incumbent with a shrinking step. Deterministic for a
/// fixed seed. Never proposes points outside the box.
OptimizeResult maximize(const std::vector<ParamRange>& space, const std::function<double(const std::vector<double>&)>& objective,
                        std::size_t budget, std::uint64_t seed, const OptimizerOptions& options = {});

}  // namespace ueppr
