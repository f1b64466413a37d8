// SPDX-License-Identifier: Apache-2.0
#include "blackbox.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "common.hpp"

namespace ueppr {

namespace {

// Unit-cube coordinate u in [0,1] -> parameter value.
double decode(const ParamRange& r, double u) {
    u = std::clamp(u, 0.0, 1.0);
    double v = r.log_scale ? std::exp(std::log(r.lo) + u * (std::log(r.hi) - std::log(r.lo))) : r.lo + u * (r.hi - r.lo);
    if (r.integer) v = std::round(v);
    return std::clamp(v, r.lo, r.hi);
}

double encode(const ParamRange& r, double v) {
    if (r.hi == r.lo) return 0.0;
    if (r.log_scale) return (std::log(v) - std::log(r.lo)) / (std::log(r.hi) - std::log(r.lo));
    return (v - r.lo) / (r.hi - r.lo);
}

}  // namespace

OptimizeResult maximize(const std::vector<ParamRange>& space, const std::function<double(const std::vector<double>&)>& objective,
                        std::size_t budget, std::uint64_t seed, const OptimizerOptions& opt) {
    if (budget == 0) fail(ErrorCode::invalid_argument, "optimizer budget must be at least 1");
    if (space.empty()) fail(ErrorCode::invalid_argument, "optimizer needs at least one parameter");
    for (const auto& r : space) {
        if (!(r.lo <= r.hi)) fail(ErrorCode::invalid_argument, "parameter " + r.name + ": lo > hi");
        if (r.log_scale && r.lo <= 0) fail(ErrorCode::invalid_argument, "parameter " + r.name + ": log scale needs lo > 0");
    }
    const std::size_t dims = space.size();
    Rng rng(seed);
    OptimizeResult res;
    std::map<std::vector<double>, double> seen;
    std::vector<double> best_u;

    auto evaluate = [&](const std::vector<double>& x) {
        auto it = seen.find(x);
        const double v = it != seen.end() ? it->second : objective(x);
        seen.emplace(x, v);
        const bool better = res.trials.empty() || v > res.best_value;
        res.trials.push_back({x, v});
        if (better) {
            res.best_value = v;
            res.best_x = x;
            best_u.resize(dims);
            for (std::size_t d = 0; d < dims; ++d) best_u[d] = encode(space[d], x[d]);
        }
        res.best_trace.push_back(res.best_value);
        return better;
    };

    for (const auto& w : opt.warm_start) {
        if (res.trials.size() >= budget) break;
        if (w.size() != dims) fail(ErrorCode::invalid_argument, "warm start point has wrong dimension");
        std::vector<double> x(dims);
        for (std::size_t d = 0; d < dims; ++d) x[d] = decode(space[d], encode(space[d], w[d]));
        evaluate(x);
    }

    std::size_t n_init = opt.init_points ? opt.init_points : std::max(dims + 1, budget / 4);
    n_init = std::min(n_init, budget - res.trials.size());
    std::vector<std::vector<std::size_t>> strata(dims);
    for (auto& s : strata) {
        s.resize(n_init);
        std::iota(s.begin(), s.end(), 0);
        rng.shuffle(s);
    }
    for (std::size_t i = 0; i < n_init; ++i) {
        std::vector<double> x(dims);
        for (std::size_t d = 0; d < dims; ++d)
            x[d] = decode(space[d], (double(strata[d][i]) + rng.uniform()) / double(n_init));
        evaluate(x);
    }

    double step = opt.initial_step;
    std::size_t fails = 0;
    while (res.trials.size() < budget) {
        std::vector<double> x(dims);
        // A few redraws avoid spending budget on an already-seen point.
        for (int attempt = 0; attempt < 8; ++attempt) {
            for (std::size_t d = 0; d < dims; ++d) x[d] = decode(space[d], best_u[d] + step * rng.normal());
            if (!seen.count(x)) break;
        }
        if (evaluate(x)) {
            fails = 0;
        } else if (++fails >= opt.patience) {
            step = std::max(opt.min_step, step * opt.shrink);
            fails = 0;
        }
    }
    return res;
}

}  // namespace ueppr
