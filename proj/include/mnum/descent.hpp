#ifndef MNUM_DESCENT_HPP
#define MNUM_DESCENT_HPP

#include "mnum/errors.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace mnum {

enum class StepRule {
    /// Backtracking from a fixed initial step.
    Armijo,
    /// Backtracking from the Barzilai-Borwein step length.
    ArmijoBarzilaiBorwein,
};

struct DescentOptions {
    double tol = 1e-8;
    std::size_t max_iter = 20000;
    double initial_step = 1.0;
    double armijo = 1e-4;
    double backtrack = 0.5;
    StepRule rule = StepRule::Armijo;
    bool record_history = false;
};

/// How a step was accepted.
enum class StepKind {
    /// Sufficient decrease of the objective.
    Armijo,
    /// Objective change below floating-point resolution; accepted because the
    /// projected gradient shrank.
    Roundoff,
};

struct DescentStep {
    double objective_before;
    double objective_after;
    double step;
    StepKind kind;
};

struct DescentResult {
    std::size_t iterations = 0;
    double objective = 0.0;
    /// Sup-norm of x - P(x - g), the projected gradient.
    double stationarity = 0.0;
    bool converged = false;
    std::vector<DescentStep> history;
};

/// Objective + (sub)gradient provider for projected_descent.
///
/// `value` may return +inf to reject a point. `refine` tightens an internal
/// approximation once the current one is stationary (returns true if the
/// iteration should continue); `relax` loosens it after a failed line search.
template <class T>
concept DescentOracle = requires(T& o, std::span<const double> x, std::vector<double>& g) {
    { o.value(x) } -> std::convertible_to<double>;
    { o.value_and_gradient(x, g) } -> std::convertible_to<double>;
    { o.refine() } -> std::convertible_to<bool>;
    { o.relax() } -> std::convertible_to<bool>;
};

inline double projected_gradient_norm(std::span<const double> x, std::span<const double> g,
                                      std::span<const double> lower) {
    double norm = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double moved = std::max(lower[i], x[i] - g[i]);
        norm = std::max(norm, std::abs(x[i] - moved));
    }
    return norm;
}

/// Projected gradient descent on the box {x >= lower} with backtracking.
/// Terminates when the projected gradient sup-norm drops below opts.tol.
template <DescentOracle Oracle>
DescentResult projected_descent(Oracle& oracle, std::vector<double>& x, std::span<const double> lower,
                                const DescentOptions& opts) {
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::max(x[i], lower[i]);
    }
    DescentResult result;
    std::vector<double> g(n);
    std::vector<double> g_new(n);
    std::vector<double> trial(n);
    std::vector<double> prev_x;
    std::vector<double> prev_g;

    double f = oracle.value_and_gradient(x, g);
    if (!std::isfinite(f)) {
        throw StepRuleError("projected_descent: starting point is outside the objective domain");
    }
    double stat = projected_gradient_norm(x, g, lower);

    while (true) {
        if (stat < opts.tol) {
            if (oracle.refine()) {
                f = oracle.value_and_gradient(x, g);
                stat = projected_gradient_norm(x, g, lower);
                continue;
            }
            result.converged = true;
            break;
        }
        if (result.iterations >= opts.max_iter) {
            break;
        }

        double step = opts.initial_step;
        if (opts.rule == StepRule::ArmijoBarzilaiBorwein && !prev_x.empty()) {
            double ss = 0.0;
            double sy = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double s = x[i] - prev_x[i];
                ss += s * s;
                sy += s * (g[i] - prev_g[i]);
            }
            if (sy > 0.0 && ss > 0.0) {
                step = std::clamp(ss / sy, 1e-12, 1e12);
            }
        }

        bool accepted = false;
        double f_new = f;
        double stat_new = stat;
        StepKind kind = StepKind::Armijo;
        while (step > 1e-30) {
            double slope = 0.0;
            double moved = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                trial[i] = std::max(lower[i], x[i] - step * g[i]);
                slope += g[i] * (trial[i] - x[i]);
                moved = std::max(moved, std::abs(trial[i] - x[i]));
            }
            if (moved == 0.0) {
                break;
            }
            const double candidate = oracle.value(trial);
            if (std::isfinite(candidate)) {
                if (candidate <= f + opts.armijo * slope && candidate < f) {
                    f_new = oracle.value_and_gradient(trial, g_new);
                    stat_new = projected_gradient_norm(trial, g_new, lower);
                    kind = StepKind::Armijo;
                    accepted = true;
                    break;
                }
                const double noise = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f));
                if (std::abs(candidate - f) <= noise) {
                    const double fc = oracle.value_and_gradient(trial, g_new);
                    const double sc = projected_gradient_norm(trial, g_new, lower);
                    if (sc < stat) {
                        f_new = fc;
                        stat_new = sc;
                        kind = StepKind::Roundoff;
                        accepted = true;
                        break;
                    }
                }
            }
            step *= opts.backtrack;
        }

        if (!accepted) {
            if (oracle.relax()) {
                f = oracle.value_and_gradient(x, g);
                stat = projected_gradient_norm(x, g, lower);
                continue;
            }
            result.objective = f;
            result.stationarity = stat;
            throw StepRuleError("projected_descent: line search failed at stationarity " + std::to_string(stat));
        }

        if (opts.record_history) {
            result.history.push_back({f, f_new, step, kind});
        }
        prev_x = x;
        prev_g = g;
        x = trial;
        g.swap(g_new);
        f = f_new;
        stat = stat_new;
        ++result.iterations;
    }
    result.objective = f;
    result.stationarity = stat;
    return result;
}

} // namespace mnum

#endif
