#ifndef MNUM_EQUILIBRIUM_HPP
#define MNUM_EQUILIBRIUM_HPP

#include "mnum/choice.hpp"
#include "mnum/descent.hpp"
#include "mnum/errors.hpp"
#include "mnum/network.hpp"
#include "mnum/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace mnum {

/// Queuing delays below this are treated as the rate-function singularity.
inline constexpr double kMinQueuingDelay = 1e-10;

/// Network + routing behaviour with per-source supports and free-flow delays
/// tau_k^0 computed once.
class Model {
  public:
    Model(Network net, ChoiceModel choice, SupportMode mode = SupportMode::Acyclic, TauOptions tau_opts = {})
        : net_(std::move(net)), choice_(choice), mode_(mode), tau_opts_(tau_opts) {
        lambda0_ = net_.free_flow_delays();
        for (std::size_t k = 0; k < net_.source_count(); ++k) {
            supports_.push_back(make_support(net_, k, mode_));
            tau0_.push_back(solve_tau(net_, choice_, supports_.back(), lambda0_, tau_opts_).tau[net_.source(k).origin]);
        }
    }

    const Network& network() const noexcept { return net_; }
    const ChoiceModel& choice() const noexcept { return choice_; }
    SupportMode mode() const noexcept { return mode_; }
    const TauOptions& tau_options() const noexcept { return tau_opts_; }
    const SupportDag& support(std::size_t k) const { return supports_.at(k); }
    const std::vector<SupportDag>& supports() const noexcept { return supports_; }
    const std::vector<double>& lambda0() const noexcept { return lambda0_; }
    double tau0(std::size_t k) const { return tau0_.at(k); }

    RoutingState route(std::size_t k, std::span<const double> lambda) const {
        return mnum::route(net_, choice_, supports_.at(k), lambda, tau_opts_);
    }

  private:
    Network net_;
    ChoiceModel choice_;
    SupportMode mode_;
    TauOptions tau_opts_;
    std::vector<double> lambda0_;
    std::vector<SupportDag> supports_;
    std::vector<double> tau0_;
};

/// tau_k^0 = tau_{s_k}^k(lambda^0).
inline double free_flow_tau0(const Network& net, const ChoiceModel& choice, const SupportDag& dag,
                             const TauOptions& opts = {}) {
    return solve_tau(net, choice, dag, net.free_flow_delays(), opts).tau[dag.origin];
}

/// q^k(lambda) = tau_k(lambda) - tau_k^0.
inline double q_of_lambda(const Model& model, std::span<const double> lambda, std::size_t k) {
    const auto state = model.route(k, lambda);
    return state.tau[model.network().source(k).origin] - model.tau0(k);
}

// ---------------------------------------------------------------------------
// Dual objective
// ---------------------------------------------------------------------------

/// Rates respond to queuing delay: x_k = f_k(q_k(lambda)). The MNUM dual.
struct ElasticDemand {};

/// Rates fixed: the MTE dual.
struct FixedDemand {
    std::vector<double> rates;
};

using Demand = std::variant<ElasticDemand, FixedDemand>;

struct DualEvaluation {
    /// +inf when some queuing delay hits the rate-function singularity.
    double objective = 0.0;
    bool in_domain = true;
    std::vector<double> gradient;
    /// w-tilde(lambda): link loads induced by the rates at lambda.
    std::vector<double> link_flows;
    std::vector<double> rates;
    std::vector<double> queuing_delays;
    std::vector<RoutingState> states;
};

/// Phi(lambda) = sum_a int_{lambda_a^0}^{lambda_a} s_a^{-1} - sum_k F_k(q_k(lambda))
/// (elastic) or - sum_k x_k tau_k(lambda) (fixed). Gradient s_a^{-1}(lambda_a) - w-tilde_a.
inline DualEvaluation evaluate_dual(const Model& model, std::span<const double> lambda, const Demand& demand,
                                    bool with_gradient) {
    const Network& net = model.network();
    detail::require_arc_vector(net, lambda);
    DualEvaluation ev;
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        ev.objective += latency_inverse_integral(net.arc(a).latency, lambda[a]);
    }
    const auto* fixed = std::get_if<FixedDemand>(&demand);
    if (fixed && fixed->rates.size() != net.source_count()) {
        throw DomainError("evaluate_dual: fixed demand vector has the wrong size");
    }
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        RoutingState state = model.route(k, lambda);
        const Source& src = net.source(k);
        const double tau = state.tau[src.origin];
        const double q = tau - model.tau0(k);
        double x = 0.0;
        if (fixed) {
            x = fixed->rates[k];
            ev.objective -= x * tau;
        } else {
            if (!(q >= kMinQueuingDelay)) {
                ev.objective = kInfinity;
                ev.in_domain = false;
                ev.queuing_delays.push_back(q);
                ev.rates.push_back(kInfinity);
                continue;
            }
            x = rate(src.rate, q);
            ev.objective -= rate_primitive(src.rate, q);
        }
        ev.queuing_delays.push_back(q);
        ev.rates.push_back(x);
        if (with_gradient) {
            ev.states.push_back(load_flows(net, std::move(state), x));
        } else {
            ev.states.push_back(std::move(state));
        }
    }
    if (with_gradient && ev.in_domain) {
        ev.link_flows = aggregate_link_loads(ev.states, net.arc_count());
        ev.gradient.resize(net.arc_count());
        for (ArcIndex a = 0; a < net.arc_count(); ++a) {
            ev.gradient[a] = latency_inverse(net.arc(a).latency, lambda[a]) - ev.link_flows[a];
        }
    }
    return ev;
}

inline double phi_objective(const Model& model, std::span<const double> lambda) {
    return evaluate_dual(model, lambda, ElasticDemand{}, false).objective;
}

inline std::vector<double> phi_gradient(const Model& model, std::span<const double> lambda) {
    auto ev = evaluate_dual(model, lambda, ElasticDemand{}, true);
    if (!ev.in_domain) {
        throw DomainError("phi_gradient: queuing delay at the rate singularity");
    }
    return ev.gradient;
}

// ---------------------------------------------------------------------------
// Subgradients for the deterministic (Wardrop) limit
// ---------------------------------------------------------------------------

namespace detail {

// Euclidean projection onto the probability simplex.
inline void project_simplex(std::span<double> v) {
    std::vector<double> sorted(v.begin(), v.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        cumulative += sorted[i];
        const double t = (cumulative - 1.0) / static_cast<double>(i + 1);
        if (sorted[i] - t > 0.0) {
            theta = t;
        }
    }
    for (double& x : v) {
        x = std::max(0.0, x - theta);
    }
}

} // namespace detail

/// Minimum-norm element of g0 - sum_k x_k conv{1_r : r in tight_k}.
struct SubgradientResult {
    std::vector<double> subgradient;
    /// Arc flows x_k * sum_r theta_r 1_r of the minimizing combination, per source.
    std::vector<std::vector<double>> source_flows;
};

/// `tight[k]` lists the epsilon-optimal paths of source k. Solved by
/// accelerated projected gradient on the product of simplices.
inline SubgradientResult min_norm_subgradient(std::span<const double> g0,
                                              const std::vector<std::vector<std::vector<ArcIndex>>>& tight,
                                              std::span<const double> rates) {
    const std::size_t sources = tight.size();
    std::vector<std::vector<double>> theta(sources);
    std::vector<std::size_t> free_blocks;
    double lipschitz = 0.0;
    for (std::size_t k = 0; k < sources; ++k) {
        if (tight[k].empty()) {
            continue;
        }
        theta[k].assign(tight[k].size(), 1.0 / static_cast<double>(tight[k].size()));
        if (tight[k].size() > 1 && rates[k] > 0.0) {
            free_blocks.push_back(k);
            std::size_t longest = 0;
            for (const auto& p : tight[k]) {
                longest = std::max(longest, p.size());
            }
            lipschitz += rates[k] * rates[k] * static_cast<double>(tight[k].size() * longest);
        }
    }
    auto residual_of = [&](const std::vector<std::vector<double>>& th) {
        std::vector<double> r(g0.begin(), g0.end());
        for (std::size_t k = 0; k < sources; ++k) {
            for (std::size_t p = 0; p < th[k].size(); ++p) {
                for (ArcIndex a : tight[k][p]) {
                    r[a] -= rates[k] * th[k][p];
                }
            }
        }
        return r;
    };

    if (!free_blocks.empty()) {
        const double step = 1.0 / lipschitz;
        auto current = theta;
        auto look = theta;
        double t = 1.0;
        for (int it = 0; it < 50000; ++it) {
            const auto r = residual_of(look);
            auto next = look;
            double change = 0.0;
            for (std::size_t k : free_blocks) {
                for (std::size_t p = 0; p < next[k].size(); ++p) {
                    double grad = 0.0;
                    for (ArcIndex a : tight[k][p]) {
                        grad -= rates[k] * r[a];
                    }
                    next[k][p] -= step * grad;
                }
                detail::project_simplex(next[k]);
                for (std::size_t p = 0; p < next[k].size(); ++p) {
                    change = std::max(change, std::abs(next[k][p] - current[k][p]));
                }
            }
            const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            for (std::size_t k : free_blocks) {
                for (std::size_t p = 0; p < next[k].size(); ++p) {
                    look[k][p] = next[k][p] + (t - 1.0) / t_next * (next[k][p] - current[k][p]);
                }
                detail::project_simplex(look[k]);
            }
            current = std::move(next);
            t = t_next;
            if (change < 1e-16) {
                break;
            }
        }
        theta = std::move(current);
    }

    SubgradientResult out;
    out.subgradient = residual_of(theta);
    out.source_flows.assign(sources, std::vector<double>(g0.size(), 0.0));
    for (std::size_t k = 0; k < sources; ++k) {
        for (std::size_t p = 0; p < theta[k].size(); ++p) {
            for (ArcIndex a : tight[k][p]) {
                out.source_flows[k][a] += rates[k] * theta[k][p];
            }
        }
    }
    return out;
}

namespace detail {

// Smooth oracle: exact gradient of the dual.
class SmoothDualOracle {
  public:
    SmoothDualOracle(const Model& model, Demand demand) : model_(model), demand_(std::move(demand)) {}

    double value(std::span<const double> lambda) { return evaluate_dual(model_, lambda, demand_, false).objective; }

    double value_and_gradient(std::span<const double> lambda, std::vector<double>& g) {
        auto ev = evaluate_dual(model_, lambda, demand_, true);
        if (ev.in_domain) {
            g = ev.gradient;
        }
        return ev.objective;
    }

    bool refine() { return false; }
    bool relax() { return false; }

  private:
    const Model& model_;
    Demand demand_;
};

// Nonsmooth oracle for DeterministicMin: min-norm epsilon-subgradient over
// epsilon-optimal support paths. Epsilon shrinks each time the iterate is
// stationary and grows after a failed line search.
class WardropDualOracle {
  public:
    WardropDualOracle(const Model& model, Demand demand, double epsilon, double min_epsilon)
        : model_(model), demand_(std::move(demand)), epsilon_(epsilon), min_epsilon_(min_epsilon) {
        for (std::size_t k = 0; k < model_.network().source_count(); ++k) {
            paths_.push_back(enumerate_paths(model_.network(), model_.support(k)));
        }
    }

    double value(std::span<const double> lambda) { return evaluate_dual(model_, lambda, demand_, false).objective; }

    double value_and_gradient(std::span<const double> lambda, std::vector<double>& g) {
        const Network& net = model_.network();
        auto ev = evaluate_dual(model_, lambda, demand_, false);
        if (!ev.in_domain) {
            return ev.objective;
        }
        std::vector<double> g0(net.arc_count());
        for (ArcIndex a = 0; a < net.arc_count(); ++a) {
            g0[a] = latency_inverse(net.arc(a).latency, lambda[a]);
        }
        std::vector<std::vector<std::vector<ArcIndex>>> tight(net.source_count());
        for (std::size_t k = 0; k < net.source_count(); ++k) {
            const double best = ev.states[k].tau[net.source(k).origin];
            for (const auto& path : paths_[k]) {
                double cost = 0.0;
                for (ArcIndex a : path) {
                    cost += lambda[a];
                }
                if (cost <= best + epsilon_) {
                    tight[k].push_back(path);
                }
            }
        }
        auto sub = min_norm_subgradient(g0, tight, ev.rates);
        g = std::move(sub.subgradient);
        last_source_flows_ = std::move(sub.source_flows);
        return ev.objective;
    }

    /// Per-source arc flows of the last subgradient combination.
    const std::vector<std::vector<double>>& last_source_flows() const noexcept { return last_source_flows_; }

    bool refine() {
        if (epsilon_ <= min_epsilon_) {
            return false;
        }
        epsilon_ = std::max(min_epsilon_, epsilon_ * 1e-2);
        return true;
    }

    bool relax() {
        if (epsilon_ >= 1e-2) {
            return false;
        }
        epsilon_ *= 10.0;
        return true;
    }

  private:
    const Model& model_;
    Demand demand_;
    std::vector<std::vector<std::vector<ArcIndex>>> paths_;
    std::vector<std::vector<double>> last_source_flows_;
    double epsilon_;
    double min_epsilon_;
};

} // namespace detail

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

enum class SolverMode {
    /// Projected gradient descent on the dual.
    Descent,
    /// Damped fixed point lambda <- (1 - theta) lambda + theta s(w-tilde(lambda)).
    FixedPoint,
};

struct SolverOptions {
    double tol = 1e-8;
    std::size_t max_iter = 20000;
    SolverMode mode = SolverMode::Descent;
    StepRule step_rule = StepRule::Armijo;
    double initial_step = 1.0;
    double armijo = 1e-4;
    double backtrack = 0.5;
    double theta = 0.5;
    /// Starting delays; default s_a(c_a / 2).
    std::optional<std::vector<double>> start;
    bool record_history = false;
};

struct Diagnostics {
    double objective = 0.0;
    /// Sup-norm of the projected gradient at the returned point.
    double grad_norm = 0.0;
    /// max_a |lambda_a - s_a(w_a)|.
    double rmnum_residual = 0.0;
    /// Worst flow-conservation residual over sources.
    double conservation_residual = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<DescentStep> history;
};

struct Equilibrium {
    std::vector<double> lambda;
    std::vector<double> w;
    std::vector<double> x;
    std::vector<double> q;
    std::vector<RoutingState> states;
    Diagnostics diagnostics;
};

inline std::vector<double> default_start(const Network& net) {
    std::vector<double> start(net.arc_count());
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        start[a] = latency(net.arc(a).latency, 0.5 * capacity(net.arc(a).latency));
    }
    return start;
}

namespace detail {

// Replaces the loaded arc flows of each state and recomputes node throughputs.
inline void override_flows(const Network& net, std::vector<RoutingState>& states,
                           const std::vector<std::vector<double>>& flows) {
    for (std::size_t k = 0; k < states.size(); ++k) {
        RoutingState& s = states[k];
        s.arc_flow = flows[k];
        s.throughput.assign(net.node_count(), 0.0);
        s.throughput[net.source(k).origin] = s.rate;
        for (ArcIndex a = 0; a < net.arc_count(); ++a) {
            s.throughput[net.arc(a).head] += s.arc_flow[a];
        }
    }
}

// `flows`, when given, are per-source arc flows that replace the Markov loading
// (deterministic limit, where ties make the loading a set).
inline Equilibrium assemble(const Model& model, std::vector<double> lambda, const Demand& demand,
                            const std::vector<std::vector<double>>* flows = nullptr) {
    const Network& net = model.network();
    auto ev = evaluate_dual(model, lambda, demand, true);
    if (!ev.in_domain) {
        throw DomainError("solver: returned point lies on the rate singularity");
    }
    if (flows) {
        override_flows(net, ev.states, *flows);
        ev.link_flows = aggregate_link_loads(ev.states, net.arc_count());
        for (ArcIndex a = 0; a < net.arc_count(); ++a) {
            ev.gradient[a] = latency_inverse(net.arc(a).latency, lambda[a]) - ev.link_flows[a];
        }
    }
    Equilibrium eq;
    eq.w = ev.link_flows;
    eq.x = ev.rates;
    eq.q = ev.queuing_delays;
    eq.diagnostics.objective = ev.objective;
    eq.diagnostics.grad_norm = projected_gradient_norm(lambda, ev.gradient, model.lambda0());
    double residual = 0.0;
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        const auto& lat = net.arc(a).latency;
        const double r = eq.w[a] < capacity(lat) ? std::abs(lambda[a] - latency(lat, std::max(0.0, eq.w[a])))
                                                 : kInfinity;
        residual = std::max(residual, r);
    }
    eq.diagnostics.rmnum_residual = residual;
    for (const auto& s : ev.states) {
        eq.diagnostics.conservation_residual =
            std::max(eq.diagnostics.conservation_residual, conservation_residual(net, s));
    }
    eq.states = std::move(ev.states);
    eq.lambda = std::move(lambda);
    return eq;
}

inline Equilibrium solve_dual(const Model& model, const Demand& demand, const SolverOptions& opts) {
    const Network& net = model.network();
    if (!(opts.tol > 0.0)) {
        throw DomainError("solver: tolerance must be positive");
    }
    std::vector<double> lambda = opts.start ? *opts.start : default_start(net);
    detail::require_arc_vector(net, lambda);
    const auto& lower = model.lambda0();

    if (opts.mode == SolverMode::FixedPoint) {
        if (!(opts.theta > 0.0 && opts.theta <= 1.0)) {
            throw DomainError("solver: theta must lie in (0, 1]");
        }
        for (ArcIndex a = 0; a < net.arc_count(); ++a) {
            lambda[a] = std::max(lambda[a], lower[a]);
        }
        std::size_t it = 0;
        double stat = kInfinity;
        double theta = opts.theta;
        while (true) {
            auto ev = evaluate_dual(model, lambda, demand, true);
            if (!ev.in_domain) {
                throw StepRuleError("fixed point: iterate reached the rate singularity");
            }
            const double prev = stat;
            stat = projected_gradient_norm(lambda, ev.gradient, lower);
            if (stat < opts.tol) {
                break;
            }
            // The undamped map can be expansive; back off whenever the residual grows.
            if (stat > prev && theta > 1e-6) {
                theta *= 0.5;
            }
            if (it >= opts.max_iter) {
                throw ConvergenceError("fixed point: iteration cap reached", stat, it);
            }
            for (ArcIndex a = 0; a < net.arc_count(); ++a) {
                const double target = latency_clamped(net.arc(a).latency, ev.link_flows[a]);
                lambda[a] = std::max(lower[a], (1.0 - theta) * lambda[a] + theta * target);
            }
            ++it;
        }
        Equilibrium eq = assemble(model, std::move(lambda), demand);
        eq.diagnostics.iterations = it;
        eq.diagnostics.converged = true;
        return eq;
    }

    DescentOptions dopts;
    dopts.tol = opts.tol;
    dopts.max_iter = opts.max_iter;
    dopts.initial_step = opts.initial_step;
    dopts.armijo = opts.armijo;
    dopts.backtrack = opts.backtrack;
    dopts.rule = opts.step_rule;
    dopts.record_history = opts.record_history;

    DescentResult result;
    std::vector<std::vector<double>> wardrop_flows;
    if (is_deterministic(model.choice())) {
        detail::WardropDualOracle oracle(model, demand, 1e-4, 1e-12);
        result = projected_descent(oracle, lambda, lower, dopts);
        wardrop_flows = oracle.last_source_flows();
    } else {
        detail::SmoothDualOracle oracle(model, demand);
        result = projected_descent(oracle, lambda, lower, dopts);
    }
    if (!result.converged) {
        throw ConvergenceError("descent: iteration cap reached", result.stationarity, result.iterations);
    }
    Equilibrium eq = assemble(model, std::move(lambda), demand, wardrop_flows.empty() ? nullptr : &wardrop_flows);
    eq.diagnostics.iterations = result.iterations;
    eq.diagnostics.converged = true;
    eq.diagnostics.history = std::move(result.history);
    return eq;
}

} // namespace detail

/// Unique MNUM equilibrium: minimizer of Phi over {lambda >= lambda^0}.
inline Equilibrium solve_mnum(const Model& model, const SolverOptions& opts = {}) {
    return detail::solve_dual(model, ElasticDemand{}, opts);
}

/// Markovian traffic equilibrium with fixed source rates.
inline Equilibrium solve_mte(const Model& model, std::vector<double> rates, const SolverOptions& opts = {}) {
    for (double x : rates) {
        if (!(x >= 0.0)) {
            throw DomainError("solve_mte: negative demand");
        }
    }
    SolverOptions o = opts;
    if (!o.start) {
        o.start = model.lambda0();
    }
    return detail::solve_dual(model, FixedDemand{std::move(rates)}, o);
}

/// Demands declared in the network file ("demand"), zero where absent.
inline std::vector<double> declared_demands(const Network& net) {
    std::vector<double> x;
    for (const Source& s : net.sources()) {
        x.push_back(s.demand.value_or(0.0));
    }
    return x;
}

// ---------------------------------------------------------------------------
// Single-path rate control (fixed routes)
// ---------------------------------------------------------------------------

struct SinglePathSolution {
    /// Queuing delay p_a per arc.
    std::vector<double> p;
    std::vector<double> q;
    std::vector<double> x;
    /// Link loads sum_{k through a} x_k.
    std::vector<double> w;
    double objective = 0.0;
    /// max_a |psi_a^{-1}(p_a) - w_a| over arcs with p_a > 0, and max(0, w_a - psi_a^{-1}(0)) otherwise.
    double kkt_residual = 0.0;
    std::size_t iterations = 0;
};

/// Declared routes, or the free-flow shortest path when a source declares none.
inline std::vector<std::vector<ArcIndex>> default_routes(const Network& net) {
    std::vector<std::vector<ArcIndex>> routes;
    const auto lambda0 = net.free_flow_delays();
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        const Source& src = net.source(k);
        if (!src.route.empty()) {
            routes.push_back(src.route);
            continue;
        }
        const auto dist = free_flow_distances(net, lambda0, k);
        std::vector<ArcIndex> path;
        NodeIndex at = src.origin;
        while (at != src.destination) {
            ArcIndex best = net.out_star(at).front();
            double best_cost = kInfinity;
            for (ArcIndex a : net.out_star(at)) {
                const double c = lambda0[a] + dist[net.arc(a).head];
                if (c < best_cost) {
                    best_cost = c;
                    best = a;
                }
            }
            path.push_back(best);
            at = net.arc(best).head;
        }
        routes.push_back(std::move(path));
    }
    return routes;
}

namespace detail {

class SinglePathOracle {
  public:
    SinglePathOracle(const Network& net, const std::vector<std::vector<ArcIndex>>& routes)
        : net_(net), routes_(routes) {}

    double value(std::span<const double> p) { return evaluate(p, nullptr); }
    double value_and_gradient(std::span<const double> p, std::vector<double>& g) { return evaluate(p, &g); }
    bool refine() { return false; }
    bool relax() { return false; }

    double evaluate(std::span<const double> p, std::vector<double>* g) {
        double obj = 0.0;
        for (ArcIndex a = 0; a < net_.arc_count(); ++a) {
            const auto& lat = net_.arc(a).latency;
            obj += latency_inverse_integral(lat, free_flow_delay(lat) + p[a]);
        }
        std::vector<double> load(net_.arc_count(), 0.0);
        for (std::size_t k = 0; k < routes_.size(); ++k) {
            double q = 0.0;
            for (ArcIndex a : routes_[k]) {
                q += p[a];
            }
            if (!(q >= kMinQueuingDelay)) {
                return kInfinity;
            }
            obj -= rate_primitive(net_.source(k).rate, q);
            const double x = rate(net_.source(k).rate, q);
            for (ArcIndex a : routes_[k]) {
                load[a] += x;
            }
        }
        if (g) {
            g->resize(net_.arc_count());
            for (ArcIndex a = 0; a < net_.arc_count(); ++a) {
                const auto& lat = net_.arc(a).latency;
                (*g)[a] = latency_inverse(lat, free_flow_delay(lat) + p[a]) - load[a];
            }
        }
        return obj;
    }

  private:
    const Network& net_;
    const std::vector<std::vector<ArcIndex>>& routes_;
};

} // namespace detail

/// Minimizes sum_a int_0^{p_a} psi_a^{-1} - sum_k F_k(sum_{b in route k} p_b) over p >= 0.
inline SinglePathSolution solve_num_singlepath(const Network& net, const std::vector<std::vector<ArcIndex>>& routes,
                                               const SolverOptions& opts = {}) {
    if (routes.size() != net.source_count()) {
        throw DomainError("solve_num_singlepath: need one route per source");
    }
    std::vector<double> p(net.arc_count(), 0.0);
    for (const auto& r : routes) {
        if (r.empty()) {
            throw StructuralError("solve_num_singlepath: empty route");
        }
        for (ArcIndex a : r) {
            const auto& lat = net.arc(a).latency;
            p[a] = latency(lat, 0.5 * capacity(lat)) - free_flow_delay(lat);
        }
    }
    if (opts.start) {
        p = *opts.start;
    }
    const std::vector<double> lower(net.arc_count(), 0.0);
    DescentOptions dopts;
    dopts.tol = opts.tol;
    dopts.max_iter = opts.max_iter;
    dopts.initial_step = opts.initial_step;
    dopts.armijo = opts.armijo;
    dopts.backtrack = opts.backtrack;
    dopts.rule = opts.step_rule;
    detail::SinglePathOracle oracle(net, routes);
    const auto result = projected_descent(oracle, p, lower, dopts);
    if (!result.converged) {
        throw ConvergenceError("solve_num_singlepath: iteration cap reached", result.stationarity, result.iterations);
    }

    SinglePathSolution sol;
    sol.p = p;
    sol.objective = result.objective;
    sol.iterations = result.iterations;
    sol.w.assign(net.arc_count(), 0.0);
    for (std::size_t k = 0; k < routes.size(); ++k) {
        double q = 0.0;
        for (ArcIndex a : routes[k]) {
            q += p[a];
        }
        sol.q.push_back(q);
        sol.x.push_back(rate(net.source(k).rate, q));
        for (ArcIndex a : routes[k]) {
            sol.w[a] += sol.x.back();
        }
    }
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        const auto& lat = net.arc(a).latency;
        const double supply = latency_inverse(lat, free_flow_delay(lat) + p[a]);
        const double r = p[a] > 0.0 ? std::abs(supply - sol.w[a]) : std::max(0.0, sol.w[a] - supply);
        sol.kkt_residual = std::max(sol.kkt_residual, r);
    }
    return sol;
}

} // namespace mnum

#endif
