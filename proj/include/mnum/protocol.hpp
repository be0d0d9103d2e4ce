#ifndef MNUM_PROTOCOL_HPP
#define MNUM_PROTOCOL_HPP

#include "mnum/choice.hpp"
#include "mnum/equilibrium.hpp"
#include "mnum/errors.hpp"
#include "mnum/network.hpp"
#include "mnum/routing.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

// Flow-level simulation of the two time-scale scheme: routers smooth their
// delay-to-destination estimates slowly, sources run a stochastic
// approximation on their rates quickly. Packets are infinitesimal; link delays
// come from loading the current rates through the Markov routing.

namespace mnum {

struct ProtocolState {
    /// tau_est[k][i]: node i's estimate of its expected delay to d_k.
    std::vector<std::vector<double>> tau_est;
    std::vector<double> rates;
    /// s_a(w_a) for the loads induced by the current rates and estimates.
    std::vector<double> lambda_est;
    std::vector<double> link_flows;
    /// Expected forward time T_k of a packet from s_k: routed on the estimates,
    /// delayed by the current link delays.
    std::vector<double> forward_delay;
    /// Running minimum of observed end-to-end delays (free-flow estimate).
    std::vector<double> tau0_est;
    std::size_t outer = 0;
    std::size_t inner = 0;
    std::mt19937_64 rng;
};

struct RouterOptions {
    /// Packets averaged per observation when sampling.
    std::size_t window = 1;
    /// Observe noisy per-packet minima instead of their expectation.
    bool sampled = false;
};

/// Routers start from free-flow shortest distances; rates from `initial_rate`.
inline ProtocolState initial_state(const Model& model, double initial_rate, std::uint64_t seed) {
    if (!(initial_rate > 0.0)) {
        throw DomainError("initial_state: rates must be positive");
    }
    const Network& net = model.network();
    ProtocolState state;
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        state.tau_est.push_back(model.support(k).free_flow_distance);
    }
    state.rates.assign(net.source_count(), initial_rate);
    state.lambda_est = model.lambda0();
    state.link_flows.assign(net.arc_count(), 0.0);
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        state.forward_delay.push_back(state.tau_est[k][net.source(k).origin]);
    }
    state.tau0_est.assign(net.source_count(), kInfinity);
    state.rng.seed(seed);
    return state;
}

/// State sitting exactly at a computed equilibrium, with exact free-flow delays.
inline ProtocolState state_at(const Model& model, const Equilibrium& eq, std::uint64_t seed) {
    ProtocolState state;
    for (const auto& s : eq.states) {
        state.tau_est.push_back(s.tau);
    }
    state.rates = eq.x;
    state.lambda_est = eq.lambda;
    state.link_flows = eq.w;
    for (std::size_t k = 0; k < model.network().source_count(); ++k) {
        state.forward_delay.push_back(eq.states[k].tau[model.network().source(k).origin]);
        state.tau0_est.push_back(model.tau0(k));
    }
    state.rng.seed(seed);
    return state;
}

/// tau_i <- (1 - alpha) tau_i + alpha * observed_i, observed_i = phi_i(lambda_est + tau_est).
inline void router_update(ProtocolState& state, const Model& model, double alpha, const RouterOptions& opts = {}) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw DomainError("router_update: smoothing factor must lie in [0, 1]");
    }
    if (opts.window == 0) {
        throw DomainError("router_update: window must be positive");
    }
    const Network& net = model.network();
    const ChoiceModel& choice = model.choice();
    std::vector<double> labels;
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        const SupportDag& dag = model.support(k);
        const auto& old = state.tau_est[k];
        std::vector<double> next = old;
        for (NodeIndex i = 0; i < net.node_count(); ++i) {
            if (i == dag.destination || !dag.active(i)) {
                continue;
            }
            const auto& out = dag.out[i];
            labels.resize(out.size());
            for (std::size_t s = 0; s < out.size(); ++s) {
                labels[s] = state.lambda_est[out[s]] + old[net.arc(out[s]).head];
            }
            double observed = 0.0;
            const auto* logit = std::get_if<Logit>(&choice);
            if (opts.sampled && logit) {
                std::extreme_value_distribution<double> gumbel(0.0, 1.0 / logit->beta);
                const double shift = std::numbers::egamma / logit->beta;
                for (std::size_t p = 0; p < opts.window; ++p) {
                    double best = kInfinity;
                    for (double zl : labels) {
                        best = std::min(best, zl + shift - gumbel(state.rng));
                    }
                    observed += best;
                }
                observed /= static_cast<double>(opts.window);
            } else {
                observed = value(choice, labels);
            }
            next[i] = (1.0 - alpha) * old[i] + alpha * observed;
        }
        state.tau_est[k] = std::move(next);
    }
}

/// Free-flow delay estimate: the minimum observed end-to-end delay.
inline double estimate_tau0(std::span<const double> observed) {
    if (observed.empty()) {
        throw DomainError("estimate_tau0: no samples");
    }
    return *std::min_element(observed.begin(), observed.end());
}

namespace detail {

inline RoutingState routing_on_estimates(const ProtocolState& state, const Model& model, std::size_t k) {
    const Network& net = model.network();
    TauSolution labels;
    labels.tau = state.tau_est[k];
    labels.z.resize(net.arc_count());
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        labels.z[a] = state.lambda_est[a] + labels.tau[net.arc(a).head];
    }
    return assemble_routing(net, model.choice(), model.support(k), std::move(labels));
}

} // namespace detail

/// T_k at the current lambda_est. A packet at i picks the arc minimizing the
/// perturbed label, so it spends phi_i(z) - sum_a p_a tau_est_{head(a)} on the
/// next link; hence (I - P-hat) T = c with c_i = phi_i(z) - sum_a p_a tau_est_{head(a)}.
/// T equals tau_est exactly when the estimates solve the fixed point at lambda_est.
inline void update_forward_delays(ProtocolState& state, const Model& model) {
    const Network& net = model.network();
    const auto n = static_cast<Eigen::Index>(net.node_count());
    std::vector<double> labels;
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        const SupportDag& dag = model.support(k);
        const RoutingState rs = detail::routing_on_estimates(state, model, k);
        Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
        for (NodeIndex i = 0; i < net.node_count(); ++i) {
            if (i == dag.destination || !dag.active(i)) {
                continue;
            }
            labels.clear();
            double expected_next = 0.0;
            for (ArcIndex a : dag.out[i]) {
                labels.push_back(rs.z[a]);
                expected_next += rs.splitting(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) *
                                 state.tau_est[k][net.arc(a).head];
            }
            c(static_cast<Eigen::Index>(i)) = value(model.choice(), labels) - expected_next;
        }
        const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - rs.transition;
        const Eigen::VectorXd t = system.fullPivLu().solve(c);
        state.forward_delay[k] = t(static_cast<Eigen::Index>(net.source(k).origin));
    }
}

/// Observed end-to-end delay T for source k plus optional zero-mean Gaussian
/// noise. Also folds T into the running free-flow minimum.
inline double observe_delay(ProtocolState& state, const Model& model, std::size_t k, double noise_sigma) {
    (void)model;
    double observed = state.forward_delay[k];
    if (noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, noise_sigma);
        observed += noise(state.rng);
    }
    state.tau0_est[k] = std::min(state.tau0_est[k], observed);
    return observed;
}

/// x <- (1 - delta) x + delta f(Q), Q = T - tau0_est floored at 1e-10.
inline void source_update(ProtocolState& state, const Model& model, double delta, double noise_sigma = 0.0) {
    if (!(delta > 0.0 && delta <= 1.0)) {
        throw DomainError("source_update: step must lie in (0, 1]");
    }
    const Network& net = model.network();
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        const double observed = observe_delay(state, model, k, noise_sigma);
        const double q = std::max(observed - state.tau0_est[k], kMinQueuingDelay);
        state.rates[k] = (1.0 - delta) * state.rates[k] + delta * rate(net.source(k).rate, q);
    }
}

/// Fraction of capacity at which an overloaded link's buffer is taken to be full.
inline constexpr double kBufferLimit = 0.99;

inline constexpr std::size_t kMaxHalvings = 10;

/// Loads the current rates through the routing induced by the estimates and
/// moves lambda_est towards s(w). Returns true if some link load reached
/// capacity; such links report the delay of a full buffer, s(0.99 c).
inline bool refresh_link_delays(ProtocolState& state, const Model& model, double eta = 1.0) {
    const Network& net = model.network();
    std::vector<RoutingState> loaded;
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        loaded.push_back(load_flows(net, detail::routing_on_estimates(state, model, k), state.rates[k]));
    }
    state.link_flows = aggregate_link_loads(loaded, net.arc_count());
    bool overload = false;
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        const auto& lat = net.arc(a).latency;
        overload = overload || state.link_flows[a] >= capacity(lat);
        const double load = std::min(state.link_flows[a], kBufferLimit * capacity(lat));
        state.lambda_est[a] = (1.0 - eta) * state.lambda_est[a] + eta * latency(lat, load);
    }
    update_forward_delays(state, model);
    return overload;
}

struct ProtocolOptions {
    std::size_t inner = 50;
    std::size_t outer = 1000;
    double alpha = 0.2;
    double delta = 0.2;
    /// Link-delay smoothing: lambda_est <- (1 - eta) lambda_est + eta s(w).
    double eta = 0.2;
    RouterOptions router;
    /// Standard deviation of the additive noise on observed end-to-end delays.
    double noise_sigma = 0.0;
    std::uint64_t seed = 42;
    /// Router sweeps at zero load before sources start, feeding the free-flow minimum.
    std::size_t warmup = 100;
    /// Use the exact tau_k^0 instead of the running minimum.
    bool exact_tau0 = false;
    /// Starting rate of every source; <= 0 picks 1e-3 times the smallest capacity.
    double initial_rate = 0.0;
    /// Emit a trace row per inner step (otherwise one per outer step).
    bool trace_inner = true;
};

struct TraceRow {
    std::size_t outer_step;
    std::size_t inner_step;
    std::size_t source;
    double rate;
    double q_est;
    /// |rate - x*_k|, NaN without a reference equilibrium.
    double dist_to_eq;
};

struct OverloadEvent {
    std::size_t outer_step;
    std::size_t inner_step;
    std::size_t halvings;
};

struct ProtocolRun {
    std::vector<TraceRow> rows;
    /// Per outer step: max_k |x_k - x*_k| and max_{k,i} |tau_est - tau(lambda*)|.
    std::vector<double> rate_distance;
    std::vector<double> tau_distance;
    std::vector<OverloadEvent> overloads;
    /// Outer steps in the last 10% where a distance increased.
    std::size_t tail_increases = 0;
    ProtocolState final_state;
};

namespace detail {

inline double tau_distance(const Model& model, const ProtocolState& state, const Equilibrium& eq) {
    double dist = 0.0;
    for (std::size_t k = 0; k < state.tau_est.size(); ++k) {
        const SupportDag& dag = model.support(k);
        for (NodeIndex i = 0; i < state.tau_est[k].size(); ++i) {
            if (dag.active(i)) {
                dist = std::max(dist, std::abs(state.tau_est[k][i] - eq.states[k].tau[i]));
            }
        }
    }
    return dist;
}

} // namespace detail

/// Alternates `inner` source sweeps (each followed by a link-delay refresh)
/// with one router sweep, `outer` times. Distances are measured against
/// `reference` when given.
inline ProtocolRun run(const Model& model, const ProtocolOptions& opts, const Equilibrium* reference = nullptr,
                       std::optional<ProtocolState> start = std::nullopt) {
    if (opts.inner == 0) {
        throw DomainError("run: inner steps per outer step must be at least 1");
    }
    const Network& net = model.network();
    double initial_rate = opts.initial_rate;
    if (!(initial_rate > 0.0)) {
        double cmin = kInfinity;
        for (const auto& arc : net.arcs()) {
            cmin = std::min(cmin, capacity(arc.latency));
        }
        initial_rate = 1e-3 * (std::isfinite(cmin) ? cmin : 1.0);
    }

    ProtocolRun out;
    ProtocolState state = start ? std::move(*start) : initial_state(model, initial_rate, opts.seed);
    if (!start) {
        for (std::size_t w = 0; w < opts.warmup; ++w) {
            router_update(state, model, opts.alpha, opts.router);
            update_forward_delays(state, model);
            for (std::size_t k = 0; k < net.source_count(); ++k) {
                observe_delay(state, model, k, opts.noise_sigma);
            }
        }
        refresh_link_delays(state, model);
    }
    if (opts.exact_tau0) {
        for (std::size_t k = 0; k < net.source_count(); ++k) {
            state.tau0_est[k] = model.tau0(k);
        }
    }

    auto rate_distance = [&]() {
        double d = 0.0;
        for (std::size_t k = 0; k < net.source_count(); ++k) {
            d = std::max(d, std::abs(state.rates[k] - reference->x[k]));
        }
        return d;
    };
    auto emit = [&](std::size_t outer, std::size_t inner) {
        for (std::size_t k = 0; k < net.source_count(); ++k) {
            const double q = state.forward_delay[k] - state.tau0_est[k];
            const double dist = reference ? std::abs(state.rates[k] - reference->x[k])
                                          : std::numeric_limits<double>::quiet_NaN();
            out.rows.push_back({outer, inner, k, state.rates[k], q, dist});
        }
    };

    for (std::size_t o = 1; o <= opts.outer; ++o) {
        state.outer = o;
        for (std::size_t i = 1; i <= opts.inner; ++i) {
            state.inner = i;
            const ProtocolState before = state;
            double delta = opts.delta;
            std::size_t halvings = 0;
            while (true) {
                source_update(state, model, delta, opts.noise_sigma);
                if (!refresh_link_delays(state, model, opts.eta)) {
                    break;
                }
                // Transient overload: retry with half the step. Overloads caused by
                // routing rather than rates survive the halvings and are accepted.
                if (halvings == kMaxHalvings) {
                    break;
                }
                state = before;
                delta *= 0.5;
                ++halvings;
            }
            if (halvings > 0) {
                out.overloads.push_back({o, i, halvings});
            }
            if (opts.trace_inner || i == opts.inner) {
                emit(o, i);
            }
        }
        router_update(state, model, opts.alpha, opts.router);
        if (reference) {
            out.rate_distance.push_back(rate_distance());
            out.tau_distance.push_back(detail::tau_distance(model, state, *reference));
        }
    }

    if (reference && out.rate_distance.size() >= 2) {
        const std::size_t tail = std::max<std::size_t>(1, out.rate_distance.size() / 10);
        const double slack = 1e-12;
        for (std::size_t t = out.rate_distance.size() - tail; t < out.rate_distance.size(); ++t) {
            if (t == 0) {
                continue;
            }
            if (out.rate_distance[t] > out.rate_distance[t - 1] + slack ||
                out.tau_distance[t] > out.tau_distance[t - 1] + slack) {
                ++out.tail_increases;
            }
        }
    }
    out.final_state = std::move(state);
    return out;
}

/// Equilibrium residuals of a protocol state, computed with the exact routing
/// solve at lambda_est.
struct ProtocolResiduals {
    /// max_a |lambda_est_a - s_a(w-tilde_a(lambda_est))|.
    double rmnum = 0.0;
    /// max_k |x_k - f_k(q_k(lambda_est))|.
    double rate = 0.0;
    /// max_{k,i} |tau_est - tau(lambda_est)|.
    double tau = 0.0;
};

inline ProtocolResiduals protocol_residuals(const Model& model, const ProtocolState& state) {
    const Network& net = model.network();
    ProtocolResiduals res;
    auto ev = evaluate_dual(model, state.lambda_est, ElasticDemand{}, true);
    if (!ev.in_domain) {
        res.rmnum = res.rate = res.tau = kInfinity;
        return res;
    }
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        const auto& lat = net.arc(a).latency;
        const double target = ev.link_flows[a] < capacity(lat) ? latency(lat, ev.link_flows[a]) : kInfinity;
        res.rmnum = std::max(res.rmnum, std::abs(state.lambda_est[a] - target));
    }
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        res.rate = std::max(res.rate, std::abs(state.rates[k] - ev.rates[k]));
        const SupportDag& dag = model.support(k);
        for (NodeIndex i = 0; i < net.node_count(); ++i) {
            if (dag.active(i)) {
                res.tau = std::max(res.tau, std::abs(state.tau_est[k][i] - ev.states[k].tau[i]));
            }
        }
    }
    return res;
}

} // namespace mnum

#endif
