#ifndef MNUM_CHOICE_HPP
#define MNUM_CHOICE_HPP

#include "mnum/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <type_traits>
#include <variant>
#include <vector>

namespace mnum {

/// Expected-utility maps phi(z) = E[min_a (z_a + eps_a)] over a node's
/// restricted out-star. Logit: eps i.i.d. zero-mean Gumbel with scale 1/beta.
struct Logit {
    double beta;
};

/// beta -> inf limit: phi(z) = min_a z_a (shortest-path Bellman).
struct DeterministicMin {};

using ChoiceModel = std::variant<Logit, DeterministicMin>;

inline bool is_deterministic(const ChoiceModel& model) { return std::holds_alternative<DeterministicMin>(model); }

namespace detail {

inline void require_alternatives(std::span<const double> z) {
    if (z.empty()) {
        throw StructuralError("choice: empty out-star");
    }
}

inline void require_beta(const Logit& m) {
    if (!(m.beta > 0.0)) {
        throw DomainError("choice: logit beta must be positive");
    }
}

} // namespace detail

/// -(1/beta) log sum exp(-beta z), shifted by min(z) for stability.
inline double value(const ChoiceModel& model, std::span<const double> z) {
    detail::require_alternatives(z);
    const double zmin = *std::min_element(z.begin(), z.end());
    return std::visit(
        [&](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Logit>) {
                detail::require_beta(m);
                double sum = 0.0;
                for (double za : z) {
                    sum += std::exp(-m.beta * (za - zmin));
                }
                return zmin - std::log(sum) / m.beta;
            } else {
                return zmin;
            }
        },
        model);
}

/// Choice probabilities d phi / d z_a. Writes into `out` (same size as z).
inline void gradient(const ChoiceModel& model, std::span<const double> z, std::span<double> out) {
    detail::require_alternatives(z);
    const double zmin = *std::min_element(z.begin(), z.end());
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            double sum = 0.0;
            if constexpr (std::is_same_v<T, Logit>) {
                detail::require_beta(m);
                for (std::size_t a = 0; a < z.size(); ++a) {
                    out[a] = std::exp(-m.beta * (z[a] - zmin));
                    sum += out[a];
                }
            } else {
                for (std::size_t a = 0; a < z.size(); ++a) {
                    out[a] = z[a] == zmin ? 1.0 : 0.0;
                    sum += out[a];
                }
            }
            for (double& p : out) {
                p /= sum;
            }
        },
        model);
}

inline std::vector<double> gradient(const ChoiceModel& model, std::span<const double> z) {
    std::vector<double> out(z.size());
    gradient(model, z, out);
    return out;
}

/// Per-axiom outcome of a class-E membership probe at one point.
struct ClassEReport {
    bool translation = false;
    bool upper_bound = false;
    bool simplex = false;
    bool monotone = false;

    bool all() const noexcept { return translation && upper_bound && simplex && monotone; }
};

/// Probes the expected-utility axioms at z: translation equivariance by c,
/// value <= min z, gradient on the simplex, componentwise monotonicity.
inline ClassEReport check_class_e(const ChoiceModel& model, std::span<const double> z, double c, double tol) {
    ClassEReport report;
    const double base = value(model, z);

    std::vector<double> shifted(z.begin(), z.end());
    for (double& v : shifted) {
        v += c;
    }
    report.translation = std::abs(value(model, shifted) - base - c) <= tol * std::max(1.0, std::abs(c));

    const double zmin = *std::min_element(z.begin(), z.end());
    report.upper_bound = base <= zmin + tol;

    const auto p = gradient(model, z);
    double sum = 0.0;
    bool in_range = true;
    for (double pa : p) {
        in_range = in_range && pa >= -tol && pa <= 1.0 + tol;
        sum += pa;
    }
    report.simplex = in_range && std::abs(sum - 1.0) <= tol;

    report.monotone = true;
    std::vector<double> bumped(z.begin(), z.end());
    for (std::size_t a = 0; a < z.size(); ++a) {
        bumped[a] += 0.1;
        report.monotone = report.monotone && value(model, bumped) >= base - tol;
        bumped[a] = z[a];
    }
    return report;
}

/// Monte Carlo estimate of E[min_a (z_a + eps_a)] under zero-mean Gumbel noise.
struct McEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    /// Empirical frequency with which each alternative attains the minimum.
    std::vector<double> argmin_frequency;
};

/// Samples eps_a = gamma/beta - G_a with G_a ~ Gumbel(0, 1/beta) (max-type),
/// so E[eps_a] = 0 and P(a is the argmin) = softmax(-beta z)_a.
inline McEstimate mc_oracle(const Logit& model, std::span<const double> z, std::size_t n_samples,
                            std::uint64_t seed) {
    detail::require_alternatives(z);
    detail::require_beta(model);
    if (n_samples == 0) {
        throw DomainError("mc_oracle: need at least one sample");
    }
    std::mt19937_64 rng(seed);
    std::extreme_value_distribution<double> gumbel(0.0, 1.0 / model.beta);
    const double shift = std::numbers::egamma / model.beta;

    McEstimate est;
    est.argmin_frequency.assign(z.size(), 0.0);
    // Welford running moments.
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t n = 1; n <= n_samples; ++n) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_arc = 0;
        for (std::size_t a = 0; a < z.size(); ++a) {
            const double sample = z[a] + shift - gumbel(rng);
            if (sample < best) {
                best = sample;
                best_arc = a;
            }
        }
        est.argmin_frequency[best_arc] += 1.0;
        const double delta = best - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (best - mean);
    }
    const double count = static_cast<double>(n_samples);
    for (double& f : est.argmin_frequency) {
        f /= count;
    }
    est.mean = mean;
    est.standard_error = n_samples > 1 ? std::sqrt(m2 / (count - 1.0) / count) : 0.0;
    return est;
}

} // namespace mnum

#endif
