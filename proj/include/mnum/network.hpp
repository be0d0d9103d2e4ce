#ifndef MNUM_NETWORK_HPP
#define MNUM_NETWORK_HPP

#include "mnum/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <variant>
#include <vector>

namespace mnum {

using NodeIndex = std::size_t;
using ArcIndex = std::size_t;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Latency models: s(w) = lambda0 + psi(w), psi(0) = 0, psi -> inf at capacity.
// ---------------------------------------------------------------------------

/// M/M/1 queue: psi(w) = w / (c (c - w)).
struct Mm1 {
    double capacity;
    double lambda0;
};

/// Linear queuing delay near zero load with a capacity asymptote:
/// psi(w) = slope * w * c / (c - w). Evaluated through the generic
/// bisection/quadrature paths.
struct AffineCapped {
    double lambda0;
    double slope;
    double capacity;
};

using LatencyModel = std::variant<Mm1, AffineCapped>;

inline double capacity(const LatencyModel& model) {
    return std::visit([](const auto& m) { return m.capacity; }, model);
}

inline double free_flow_delay(const LatencyModel& model) {
    return std::visit([](const auto& m) { return m.lambda0; }, model);
}

/// Largest flow used inside evaluations; keeps M/M/1 away from its pole.
inline double max_evaluation_flow(const LatencyModel& model) { return (1.0 - 1e-9) * capacity(model); }

inline double clamp_flow(const LatencyModel& model, double w) {
    return std::clamp(w, 0.0, max_evaluation_flow(model));
}

namespace detail {

inline double queuing_delay_unchecked(const LatencyModel& model, double w) {
    return std::visit(
        [w](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Mm1>) {
                return w / (m.capacity * (m.capacity - w));
            } else {
                return m.slope * w * m.capacity / (m.capacity - w);
            }
        },
        model);
}

// Bisection for s^{-1} on [0, c). Absolute tolerance on w.
inline double invert_by_bisection(const LatencyModel& model, double excess, double tol = 1e-12) {
    double lo = 0.0;
    double hi = capacity(model);
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (mid >= hi || mid <= lo) {
            break;
        }
        if (queuing_delay_unchecked(model, mid) < excess) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

template <class F>
double simpson_step(const F& f, double a, double b, double fa, double fm, double fb, double whole, double tol,
                    int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

} // namespace detail

/// Adaptive Simpson quadrature of f over [a, b] to absolute tolerance `tol`.
template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol = 1e-10, int max_depth = 50) {
    if (a == b) {
        return 0.0;
    }
    const double fa = f(a);
    const double fb = f(b);
    const double fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return detail::simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

/// s_a(w). Throws DomainError unless 0 <= w < c_a.
inline double latency(const LatencyModel& model, double w) {
    if (!(w >= 0.0) || !(w < capacity(model))) {
        throw DomainError("latency: flow " + std::to_string(w) + " outside [0, capacity)");
    }
    return free_flow_delay(model) + detail::queuing_delay_unchecked(model, w);
}

/// s_a(w) with w clamped into the evaluation range instead of throwing.
inline double latency_clamped(const LatencyModel& model, double w) {
    return latency(model, clamp_flow(model, w));
}

/// s_a^{-1}(lambda): the flow producing total delay lambda. Always < c_a.
inline double latency_inverse(const LatencyModel& model, double lambda) {
    const double lambda0 = free_flow_delay(model);
    if (!(lambda >= lambda0)) {
        throw DomainError("latency_inverse: delay below free-flow delay");
    }
    const double excess = lambda - lambda0;
    if (excess == 0.0) {
        return 0.0;
    }
    if (std::isinf(excess)) {
        return capacity(model);
    }
    return std::visit(
        [&](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Mm1>) {
                const double c = m.capacity;
                return c * c * excess / (1.0 + c * excess);
            } else {
                return detail::invert_by_bisection(model, excess);
            }
        },
        model);
}

/// Integral of s_a^{-1} from lambda0 to lambda.
inline double latency_inverse_integral(const LatencyModel& model, double lambda) {
    const double lambda0 = free_flow_delay(model);
    if (!(lambda >= lambda0)) {
        throw DomainError("latency_inverse_integral: delay below free-flow delay");
    }
    if (lambda == lambda0) {
        return 0.0;
    }
    return std::visit(
        [&](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Mm1>) {
                const double u = m.capacity * (lambda - lambda0);
                return u - std::log1p(u);
            } else {
                return adaptive_simpson([&](double z) { return latency_inverse(model, z); }, lambda0, lambda, 1e-10);
            }
        },
        model);
}

// ---------------------------------------------------------------------------
// Rate models: x = f(q), strictly decreasing on (0, inf).
// ---------------------------------------------------------------------------

/// TCP Vegas equilibrium rate f(q) = alpha * D / q.
struct Vegas {
    double alpha;
    double propagation_delay;
};

/// f(q) = scale * q^{-exponent}, exponent > 0.
struct PowerLaw {
    double scale;
    double exponent;
};

using RateModel = std::variant<Vegas, PowerLaw>;

inline double rate(const RateModel& model, double q) {
    if (!(q > 0.0)) {
        throw DomainError("rate: queuing delay must be positive");
    }
    return std::visit(
        [q](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Vegas>) {
                return m.alpha * m.propagation_delay / q;
            } else {
                return m.scale * std::pow(q, -m.exponent);
            }
        },
        model);
}

/// Primitive F with F' = f, normalized so that F(1) = 0.
inline double rate_primitive(const RateModel& model, double q) {
    if (!(q > 0.0)) {
        throw DomainError("rate_primitive: queuing delay must be positive");
    }
    return std::visit(
        [q](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Vegas>) {
                return m.alpha * m.propagation_delay * std::log(q);
            } else {
                if (m.exponent == 1.0) {
                    return m.scale * std::log(q);
                }
                const double p = 1.0 - m.exponent;
                return m.scale * std::expm1(p * std::log(q)) / p;
            }
        },
        model);
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

struct Arc {
    std::string id;
    NodeIndex tail;
    NodeIndex head;
    LatencyModel latency;
};

struct Source {
    std::string id;
    NodeIndex origin;
    NodeIndex destination;
    RateModel rate;
    /// Fixed demand used by the fixed-demand (MTE) solver.
    std::optional<double> demand;
    /// Fixed route used by the single-path solver; empty means "shortest free-flow path".
    std::vector<ArcIndex> route;
};

/// Directed graph with per-arc latency models and per-source rate models.
/// Immutable after construction; the constructor validates every invariant.
class Network {
  public:
    Network(std::vector<std::string> nodes, std::vector<Arc> arcs, std::vector<Source> sources)
        : nodes_(std::move(nodes)), arcs_(std::move(arcs)), sources_(std::move(sources)) {
        for (NodeIndex i = 0; i < nodes_.size(); ++i) {
            if (!index_.emplace(nodes_[i], i).second) {
                throw StructuralError("duplicate node '" + nodes_[i] + "'");
            }
        }
        out_star_.resize(nodes_.size());
        in_star_.resize(nodes_.size());
        for (ArcIndex a = 0; a < arcs_.size(); ++a) {
            const Arc& arc = arcs_[a];
            if (arc.tail >= nodes_.size() || arc.head >= nodes_.size()) {
                throw StructuralError("arc '" + arc.id + "' references an undeclared node");
            }
            if (arc.tail == arc.head) {
                throw StructuralError("arc '" + arc.id + "' is a self-loop");
            }
            if (!(capacity(arc.latency) > 0.0) || std::isinf(capacity(arc.latency))) {
                throw StructuralError("arc '" + arc.id + "' needs a finite positive capacity");
            }
            if (!(free_flow_delay(arc.latency) > 0.0)) {
                throw StructuralError("arc '" + arc.id + "' needs a positive free-flow delay");
            }
            if (const auto* affine = std::get_if<AffineCapped>(&arc.latency); affine && !(affine->slope > 0.0)) {
                throw StructuralError("arc '" + arc.id + "' needs a positive slope");
            }
            out_star_[arc.tail].push_back(a);
            in_star_[arc.head].push_back(a);
        }
        for (const Source& src : sources_) {
            if (src.origin >= nodes_.size() || src.destination >= nodes_.size()) {
                throw StructuralError("source '" + src.id + "' references an undeclared node");
            }
            if (src.origin == src.destination) {
                throw StructuralError("source '" + src.id + "' has identical origin and destination");
            }
            validate_rate(src);
            if (!reachable(src.origin, src.destination)) {
                throw StructuralError("source '" + src.id + "': destination unreachable from origin");
            }
            if (src.demand && !(*src.demand >= 0.0)) {
                throw StructuralError("source '" + src.id + "' has a negative demand");
            }
            validate_route(src);
        }
    }

    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::size_t arc_count() const noexcept { return arcs_.size(); }
    std::size_t source_count() const noexcept { return sources_.size(); }

    const std::vector<std::string>& nodes() const noexcept { return nodes_; }
    const std::vector<Arc>& arcs() const noexcept { return arcs_; }
    const std::vector<Source>& sources() const noexcept { return sources_; }
    const Arc& arc(ArcIndex a) const { return arcs_.at(a); }
    const Source& source(std::size_t k) const { return sources_.at(k); }

    std::span<const ArcIndex> out_star(NodeIndex i) const { return out_star_.at(i); }
    std::span<const ArcIndex> in_star(NodeIndex i) const { return in_star_.at(i); }

    std::optional<NodeIndex> node_index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    /// lambda^0 indexed by arc.
    std::vector<double> free_flow_delays() const {
        std::vector<double> out(arcs_.size());
        for (ArcIndex a = 0; a < arcs_.size(); ++a) {
            out[a] = free_flow_delay(arcs_[a].latency);
        }
        return out;
    }

    bool reachable(NodeIndex from, NodeIndex to) const {
        std::vector<bool> seen(nodes_.size(), false);
        std::queue<NodeIndex> frontier;
        frontier.push(from);
        seen[from] = true;
        while (!frontier.empty()) {
            const NodeIndex i = frontier.front();
            frontier.pop();
            if (i == to) {
                return true;
            }
            for (ArcIndex a : out_star_[i]) {
                if (!seen[arcs_[a].head]) {
                    seen[arcs_[a].head] = true;
                    frontier.push(arcs_[a].head);
                }
            }
        }
        return false;
    }

  private:
    void validate_rate(const Source& src) const {
        std::visit(
            [&](const auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, Vegas>) {
                    if (!(m.alpha > 0.0) || !(m.propagation_delay > 0.0)) {
                        throw StructuralError("source '" + src.id + "': Vegas needs alpha > 0 and D > 0");
                    }
                } else {
                    if (!(m.scale > 0.0) || !(m.exponent > 0.0)) {
                        throw StructuralError("source '" + src.id + "': power law needs scale > 0, exponent > 0");
                    }
                }
            },
            src.rate);
    }

    void validate_route(const Source& src) const {
        if (src.route.empty()) {
            return;
        }
        NodeIndex at = src.origin;
        std::vector<bool> visited(nodes_.size(), false);
        visited[at] = true;
        for (ArcIndex a : src.route) {
            if (a >= arcs_.size() || arcs_[a].tail != at) {
                throw StructuralError("source '" + src.id + "': route is not a connected arc sequence");
            }
            at = arcs_[a].head;
            if (visited[at]) {
                throw StructuralError("source '" + src.id + "': route revisits a node");
            }
            visited[at] = true;
        }
        if (at != src.destination) {
            throw StructuralError("source '" + src.id + "': route does not end at the destination");
        }
    }

    std::vector<std::string> nodes_;
    std::vector<Arc> arcs_;
    std::vector<Source> sources_;
    std::unordered_map<std::string, NodeIndex> index_;
    std::vector<std::vector<ArcIndex>> out_star_;
    std::vector<std::vector<ArcIndex>> in_star_;
};

} // namespace mnum

#endif
