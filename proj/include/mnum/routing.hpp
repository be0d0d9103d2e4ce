#ifndef MNUM_ROUTING_HPP
#define MNUM_ROUTING_HPP

#include "mnum/choice.hpp"
#include "mnum/errors.hpp"
#include "mnum/network.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mnum {

/// Which arcs a source may use.
enum class SupportMode {
    /// Arcs that strictly decrease the free-flow distance to the destination.
    Acyclic,
    /// Every arc between nodes that reach the destination. Experimental: the
    /// Markov chain may cycle and absorption is certified numerically.
    FullGraph,
};

/// Per-source arc subset A^k with its restricted out-stars.
struct SupportDag {
    std::size_t source = 0;
    NodeIndex origin = 0;
    NodeIndex destination = 0;
    std::vector<bool> in_support;
    std::vector<std::vector<ArcIndex>> out;
    /// Shortest distances to the destination at lambda^0 (+inf if the node cannot reach it).
    std::vector<double> free_flow_distance;
    /// When acyclic: active nodes with every arc head ahead of its tail (destination first).
    std::vector<NodeIndex> order;
    bool acyclic = true;

    bool active(NodeIndex i) const { return std::isfinite(free_flow_distance[i]); }

    std::size_t arc_count() const {
        return static_cast<std::size_t>(std::count(in_support.begin(), in_support.end(), true));
    }
};

namespace detail {

// Dijkstra towards `destination` over arcs accepted by `use_arc`.
template <class ArcFilter>
std::vector<double> distances_to(const Network& net, std::span<const double> lambda, NodeIndex destination,
                                 ArcFilter use_arc) {
    const std::size_t n = net.node_count();
    std::vector<double> dist(n, kInfinity);
    std::vector<bool> done(n, false);
    dist[destination] = 0.0;
    using Entry = std::pair<double, NodeIndex>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    heap.emplace(0.0, destination);
    while (!heap.empty()) {
        const auto [d, j] = heap.top();
        heap.pop();
        if (done[j]) {
            continue;
        }
        done[j] = true;
        for (ArcIndex a : net.in_star(j)) {
            if (!use_arc(a)) {
                continue;
            }
            const NodeIndex i = net.arc(a).tail;
            const double candidate = d + lambda[a];
            if (candidate < dist[i]) {
                dist[i] = candidate;
                heap.emplace(candidate, i);
            }
        }
    }
    return dist;
}

inline void require_arc_vector(const Network& net, std::span<const double> lambda) {
    if (lambda.size() != net.arc_count()) {
        throw DomainError("link delay vector has " + std::to_string(lambda.size()) + " entries, expected " +
                          std::to_string(net.arc_count()));
    }
}

} // namespace detail

/// Shortest-path distances from every node to d_k with arc costs lambda.
/// Unreachable nodes get +inf.
inline std::vector<double> free_flow_distances(const Network& net, std::span<const double> lambda, std::size_t k) {
    detail::require_arc_vector(net, lambda);
    for (double l : lambda) {
        if (!(l >= 0.0)) {
            throw DomainError("free_flow_distances: negative link delay");
        }
    }
    const Source& src = net.source(k);
    auto dist = detail::distances_to(net, lambda, src.destination, [](ArcIndex) { return true; });
    if (!std::isfinite(dist[src.origin])) {
        throw StructuralError("source '" + src.id + "': origin cannot reach the destination");
    }
    return dist;
}

namespace detail {

inline SupportDag empty_support(const Network& net, std::size_t k) {
    SupportDag dag;
    dag.source = k;
    dag.origin = net.source(k).origin;
    dag.destination = net.source(k).destination;
    dag.free_flow_distance = free_flow_distances(net, net.free_flow_delays(), k);
    dag.in_support.assign(net.arc_count(), false);
    dag.out.resize(net.node_count());
    return dag;
}

inline void require_nonempty_out_stars(const Network& net, const SupportDag& dag) {
    for (NodeIndex i = 0; i < net.node_count(); ++i) {
        if (i != dag.destination && dag.active(i) && dag.out[i].empty()) {
            throw StructuralError("source '" + net.source(dag.source).id + "': node '" + net.nodes()[i] +
                                  "' has an empty restricted out-star");
        }
    }
}

// Kahn's algorithm on the support; fills dag.order heads-first if acyclic.
inline bool order_support(const Network& net, SupportDag& dag) {
    const std::size_t n = net.node_count();
    std::vector<std::size_t> pending(n, 0);
    for (NodeIndex i = 0; i < n; ++i) {
        pending[i] = dag.out[i].size();
    }
    std::vector<NodeIndex> ready;
    for (NodeIndex i = 0; i < n; ++i) {
        if (dag.active(i) && pending[i] == 0) {
            ready.push_back(i);
        }
    }
    dag.order.clear();
    while (!ready.empty()) {
        const NodeIndex j = ready.back();
        ready.pop_back();
        dag.order.push_back(j);
        for (ArcIndex a : net.in_star(j)) {
            if (dag.in_support[a] && --pending[net.arc(a).tail] == 0) {
                ready.push_back(net.arc(a).tail);
            }
        }
    }
    std::size_t active = 0;
    for (NodeIndex i = 0; i < n; ++i) {
        active += dag.active(i) ? 1 : 0;
    }
    return dag.order.size() == active;
}

} // namespace detail

/// A^k = {a : tau-bar_{head}(lambda^0) < tau-bar_{tail}(lambda^0)}.
inline SupportDag build_supports(const Network& net, std::size_t k) {
    SupportDag dag = detail::empty_support(net, k);
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        const Arc& arc = net.arc(a);
        if (dag.free_flow_distance[arc.head] < dag.free_flow_distance[arc.tail]) {
            dag.in_support[a] = true;
            dag.out[arc.tail].push_back(a);
        }
    }
    detail::require_nonempty_out_stars(net, dag);
    dag.acyclic = detail::order_support(net, dag);
    if (!dag.acyclic) {
        throw StructuralError("build_supports: support is not acyclic");
    }
    return dag;
}

/// Every arc between nodes that can reach d_k, except arcs leaving d_k.
inline SupportDag full_support(const Network& net, std::size_t k) {
    SupportDag dag = detail::empty_support(net, k);
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        const Arc& arc = net.arc(a);
        if (arc.tail != dag.destination && dag.active(arc.tail) && dag.active(arc.head)) {
            dag.in_support[a] = true;
            dag.out[arc.tail].push_back(a);
        }
    }
    detail::require_nonempty_out_stars(net, dag);
    dag.acyclic = detail::order_support(net, dag);
    return dag;
}

inline SupportDag make_support(const Network& net, std::size_t k, SupportMode mode) {
    return mode == SupportMode::Acyclic ? build_supports(net, k) : full_support(net, k);
}

// ---------------------------------------------------------------------------
// Fixed point tau_i = phi_i((lambda_a + tau_{head(a)})_{a in A_i^{k+}})
// ---------------------------------------------------------------------------

enum class TauMethod {
    /// Topological sweep on acyclic supports, value iteration otherwise.
    Automatic,
    /// One heads-first sweep; exact on acyclic supports.
    TopologicalSweep,
    /// Jacobi iteration started from the shortest-path distances.
    ValueIteration,
};

struct TauOptions {
    double tol = 1e-12;
    std::size_t max_iter = 100000;
    TauMethod method = TauMethod::Automatic;
    /// Keep every value-iteration iterate (for monotonicity diagnostics).
    bool record_history = false;
};

struct TauSolution {
    std::vector<double> tau;
    std::vector<double> z;
    std::size_t sweeps = 0;
    /// Sup-norm of tau - phi(lambda + tau) over active nodes.
    double residual = 0.0;
    /// Value iteration only: every sweep was componentwise non-increasing.
    bool monotone = true;
    std::vector<std::vector<double>> history;
};

namespace detail {

inline double node_value(const Network& net, const ChoiceModel& choice, const SupportDag& dag,
                         std::span<const double> lambda, std::span<const double> tau, NodeIndex i,
                         std::vector<double>& scratch) {
    const auto& out = dag.out[i];
    scratch.resize(out.size());
    for (std::size_t s = 0; s < out.size(); ++s) {
        scratch[s] = lambda[out[s]] + tau[net.arc(out[s]).head];
    }
    return value(choice, scratch);
}

inline double bellman_residual(const Network& net, const ChoiceModel& choice, const SupportDag& dag,
                               std::span<const double> lambda, std::span<const double> tau) {
    std::vector<double> scratch;
    double residual = 0.0;
    for (NodeIndex i = 0; i < net.node_count(); ++i) {
        if (i == dag.destination || !dag.active(i)) {
            continue;
        }
        residual = std::max(residual, std::abs(tau[i] - node_value(net, choice, dag, lambda, tau, i, scratch)));
    }
    return residual;
}

inline void require_box(const Network& net, const SupportDag& dag, std::span<const double> lambda) {
    require_arc_vector(net, lambda);
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        if (dag.in_support[a] && !(lambda[a] >= free_flow_delay(net.arc(a).latency) - 1e-12)) {
            throw DomainError("solve_tau: link delay of arc '" + net.arc(a).id + "' below its free-flow delay");
        }
    }
}

} // namespace detail

/// Expected delay-to-destination tau^k(lambda) and arc labels z^k.
inline TauSolution solve_tau(const Network& net, const ChoiceModel& choice, const SupportDag& dag,
                             std::span<const double> lambda, const TauOptions& opts = {}) {
    detail::require_box(net, dag, lambda);
    const std::size_t n = net.node_count();
    TauSolution sol;
    std::vector<double> scratch;

    TauMethod method = opts.method;
    if (method == TauMethod::Automatic) {
        method = dag.acyclic ? TauMethod::TopologicalSweep : TauMethod::ValueIteration;
    }
    if (method == TauMethod::TopologicalSweep && !dag.acyclic) {
        throw StructuralError("solve_tau: topological sweep needs an acyclic support");
    }

    if (method == TauMethod::TopologicalSweep) {
        sol.tau.assign(n, kInfinity);
        sol.tau[dag.destination] = 0.0;
        for (NodeIndex i : dag.order) {
            if (i != dag.destination) {
                sol.tau[i] = detail::node_value(net, choice, dag, lambda, sol.tau, i, scratch);
            }
        }
        sol.sweeps = 1;
        sol.residual = detail::bellman_residual(net, choice, dag, lambda, sol.tau);
    } else {
        // Prop. 1: start at the shortest-path distances over the support; iterates decrease.
        std::vector<double> current = detail::distances_to(net, lambda, dag.destination,
                                                           [&](ArcIndex a) { return bool(dag.in_support[a]); });
        std::vector<double> next(n);
        if (opts.record_history) {
            sol.history.push_back(current);
        }
        bool converged = false;
        double residual = kInfinity;
        while (sol.sweeps < opts.max_iter) {
            residual = 0.0;
            for (NodeIndex i = 0; i < n; ++i) {
                if (i == dag.destination || !dag.active(i)) {
                    next[i] = current[i];
                    continue;
                }
                next[i] = detail::node_value(net, choice, dag, lambda, current, i, scratch);
                const double diff = next[i] - current[i];
                if (diff > 1e-12 * std::max(1.0, std::abs(current[i]))) {
                    sol.monotone = false;
                }
                residual = std::max(residual, std::abs(diff));
            }
            ++sol.sweeps;
            std::swap(current, next);
            if (opts.record_history) {
                sol.history.push_back(current);
            }
            if (residual < opts.tol) {
                converged = true;
                break;
            }
        }
        sol.tau = std::move(current);
        sol.residual = detail::bellman_residual(net, choice, dag, lambda, sol.tau);
        if (!converged) {
            throw ConvergenceError("solve_tau: value iteration did not converge", residual, sol.sweeps);
        }
    }

    sol.z.assign(net.arc_count(), kInfinity);
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        sol.z[a] = lambda[a] + sol.tau[net.arc(a).head];
    }
    return sol;
}

// ---------------------------------------------------------------------------
// Markov chain flow loading
// ---------------------------------------------------------------------------

/// Routing of one source at fixed link delays.
struct RoutingState {
    std::size_t source = 0;
    std::vector<double> tau;
    std::vector<double> z;
    /// P-hat: node x node transition probabilities; rows of the destination and
    /// of inactive nodes are zero.
    Eigen::MatrixXd transition;
    /// Q-hat: node x arc splitting probabilities.
    Eigen::MatrixXd splitting;
    /// phi: throughput entering each node. The destination entry holds the absorbed flow.
    std::vector<double> throughput;
    /// v^k: expected arc flows.
    std::vector<double> arc_flow;
    double rate = 0.0;
    std::size_t sweeps = 0;
    double tau_residual = 0.0;
};

/// Largest eigenvalue modulus of the transition matrix over non-absorbing states.
inline double spectral_radius(const RoutingState& state, NodeIndex destination) {
    const auto n = state.transition.rows();
    if (n <= 1) {
        return 0.0;
    }
    Eigen::MatrixXd reduced(n - 1, n - 1);
    for (Eigen::Index r = 0, rr = 0; r < n; ++r) {
        if (r == static_cast<Eigen::Index>(destination)) {
            continue;
        }
        for (Eigen::Index c = 0, cc = 0; c < n; ++c) {
            if (c == static_cast<Eigen::Index>(destination)) {
                continue;
            }
            reduced(rr, cc++) = state.transition(r, c);
        }
        ++rr;
    }
    Eigen::EigenSolver<Eigen::MatrixXd> solver(reduced, false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// Builds P-hat and Q-hat from the choice gradients at the labels of `sol`.
/// `sol.tau` need not be the exact fixed point (the simulator passes estimates).
inline RoutingState assemble_routing(const Network& net, const ChoiceModel& choice, const SupportDag& dag,
                                     TauSolution sol) {
    const std::size_t n = net.node_count();
    RoutingState state;
    state.source = dag.source;
    state.sweeps = sol.sweeps;
    state.tau_residual = sol.residual;
    state.transition = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    state.splitting =
        Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(net.arc_count()));
    std::vector<double> labels;
    std::vector<double> probs;
    for (NodeIndex i = 0; i < n; ++i) {
        if (i == dag.destination || !dag.active(i)) {
            continue;
        }
        const auto& out = dag.out[i];
        labels.resize(out.size());
        probs.resize(out.size());
        for (std::size_t s = 0; s < out.size(); ++s) {
            labels[s] = sol.z[out[s]];
        }
        gradient(choice, labels, probs);
        for (std::size_t s = 0; s < out.size(); ++s) {
            const auto row = static_cast<Eigen::Index>(i);
            state.splitting(row, static_cast<Eigen::Index>(out[s])) = probs[s];
            state.transition(row, static_cast<Eigen::Index>(net.arc(out[s]).head)) += probs[s];
        }
    }
    state.tau = std::move(sol.tau);
    state.z = std::move(sol.z);
    if (!dag.acyclic) {
        const double rho = spectral_radius(state, dag.destination);
        if (!(rho < 1.0 - 1e-8)) {
            throw DomainError("route: link delays outside the absorbing domain (spectral radius " +
                              std::to_string(rho) + ")");
        }
    }
    return state;
}

/// Solves tau^k(lambda) and assembles P-hat and Q-hat from the choice gradients.
/// Flows are left empty; see load_flows.
inline RoutingState route(const Network& net, const ChoiceModel& choice, const SupportDag& dag,
                          std::span<const double> lambda, const TauOptions& opts = {}) {
    return assemble_routing(net, choice, dag, solve_tau(net, choice, dag, lambda, opts));
}

/// Solves (I - P-hat') phi = delta x by LU and sets v = Q-hat' phi.
inline RoutingState load_flows(const Network& net, RoutingState state, double x) {
    if (!(x >= 0.0)) {
        throw DomainError("load_flows: negative source rate");
    }
    const Source& src = net.source(state.source);
    const auto n = static_cast<Eigen::Index>(net.node_count());
    const auto dest = static_cast<Eigen::Index>(src.destination);

    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - state.transition.transpose();
    // The destination absorbs: replace its equation by phi_d = 0 and recover the inflow afterwards.
    system.row(dest).setZero();
    system(dest, dest) = 1.0;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(static_cast<Eigen::Index>(src.origin)) = x;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
    if (!lu.isInvertible()) {
        throw StructuralError("load_flows: singular flow conservation system");
    }
    const Eigen::VectorXd phi = lu.solve(rhs);
    const Eigen::VectorXd v = state.splitting.transpose() * phi;

    state.rate = x;
    state.throughput.assign(phi.data(), phi.data() + n);
    state.arc_flow.assign(v.data(), v.data() + v.size());
    double absorbed = 0.0;
    for (ArcIndex a : net.in_star(src.destination)) {
        absorbed += state.arc_flow[a];
    }
    state.throughput[src.destination] = absorbed;
    return state;
}

/// Max over i != d_k of |phi_i - x delta_i - sum_{a in A_i^-} v_a|.
inline double conservation_residual(const Network& net, const RoutingState& state) {
    const Source& src = net.source(state.source);
    double residual = 0.0;
    for (NodeIndex i = 0; i < net.node_count(); ++i) {
        if (i == src.destination) {
            continue;
        }
        double inflow = i == src.origin ? state.rate : 0.0;
        for (ArcIndex a : net.in_star(i)) {
            inflow += state.arc_flow[a];
        }
        residual = std::max(residual, std::abs(state.throughput[i] - inflow));
    }
    return residual;
}

/// w_a = sum_k v_a^k.
inline std::vector<double> aggregate_link_loads(std::span<const RoutingState> states, std::size_t arc_count) {
    std::vector<double> w(arc_count, 0.0);
    for (const RoutingState& s : states) {
        for (ArcIndex a = 0; a < arc_count; ++a) {
            w[a] += s.arc_flow[a];
        }
    }
    return w;
}

// ---------------------------------------------------------------------------
// Brute-force path oracles
// ---------------------------------------------------------------------------

/// All origin-destination paths inside the support. Throws OracleUnavailable past `cap`.
inline std::vector<std::vector<ArcIndex>> enumerate_paths(const Network& net, const SupportDag& dag,
                                                         std::size_t cap = 10000) {
    if (!dag.acyclic) {
        throw OracleUnavailable("enumerate_paths: support has cycles");
    }
    std::vector<std::vector<ArcIndex>> paths;
    std::vector<ArcIndex> stack;
    std::function<void(NodeIndex)> walk = [&](NodeIndex i) {
        if (i == dag.destination) {
            if (paths.size() >= cap) {
                throw OracleUnavailable("enumerate_paths: more than " + std::to_string(cap) + " paths");
            }
            paths.push_back(stack);
            return;
        }
        for (ArcIndex a : dag.out[i]) {
            stack.push_back(a);
            walk(net.arc(a).head);
            stack.pop_back();
        }
    };
    walk(dag.origin);
    return paths;
}

/// Route-based Logit assignment h_r = x exp(-beta c_r) / sum_p exp(-beta c_p),
/// aggregated to arcs.
inline std::vector<double> path_logit_oracle(const Network& net, const SupportDag& dag, std::span<const double> lambda,
                                             double beta, double x, std::size_t cap = 10000) {
    detail::require_arc_vector(net, lambda);
    const auto paths = enumerate_paths(net, dag, cap);
    std::vector<double> cost(paths.size(), 0.0);
    for (std::size_t r = 0; r < paths.size(); ++r) {
        for (ArcIndex a : paths[r]) {
            cost[r] += lambda[a];
        }
    }
    const double cmin = *std::min_element(cost.begin(), cost.end());
    double total = 0.0;
    std::vector<double> weight(paths.size());
    for (std::size_t r = 0; r < paths.size(); ++r) {
        weight[r] = std::exp(-beta * (cost[r] - cmin));
        total += weight[r];
    }
    std::vector<double> flows(net.arc_count(), 0.0);
    for (std::size_t r = 0; r < paths.size(); ++r) {
        for (ArcIndex a : paths[r]) {
            flows[a] += x * weight[r] / total;
        }
    }
    return flows;
}

} // namespace mnum

#endif
