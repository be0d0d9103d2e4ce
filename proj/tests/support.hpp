// Shared helpers for the test suites.
#ifndef MNUM_TESTS_SUPPORT_HPP
#define MNUM_TESTS_SUPPORT_HPP

#include "mnum/equilibrium.hpp"
#include "mnum/io.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace mnum::testing {

inline std::string network_path(const std::string& name) { return std::string(MNUM_NETWORK_DIR) + "/" + name; }

inline io::NetworkFile load(const std::string& name) { return io::load_network(network_path(name)); }

inline Model load_model(const std::string& name) {
    auto file = load(name);
    return Model(file.network, file.choice.value_or(ChoiceModel{Logit{1.0}}));
}

inline const std::vector<std::string>& shipped_networks() {
    static const std::vector<std::string> names = {"symmetric.json", "single_link.json", "chain.json",
                                                   "braess.json",    "grid3x3.json",     "reverse.json",
                                                   "wardrop2.json"};
    return names;
}

/// Uniform point in the box lambda0 < lambda < s(0.9 c).
inline std::vector<double> random_interior(const Network& net, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::vector<double> lambda(net.arc_count());
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        const auto& lat = net.arc(a).latency;
        const double lo = free_flow_delay(lat);
        lambda[a] = lo + u(rng) * (latency(lat, 0.9 * capacity(lat)) - lo);
    }
    return lambda;
}

/// Node balance from arc flows alone: |inflow - outflow| at transit nodes and
/// |absorbed - rate| at the destination.
inline double balance_residual(const Network& net, const RoutingState& st) {
    const Source& src = net.source(st.source);
    double r = 0.0;
    for (NodeIndex i = 0; i < net.node_count(); ++i) {
        double in = i == src.origin ? st.rate : 0.0;
        double out = 0.0;
        for (ArcIndex a : net.in_star(i)) {
            in += st.arc_flow[a];
        }
        for (ArcIndex a : net.out_star(i)) {
            out += st.arc_flow[a];
        }
        r = std::max(r, std::abs(in - (i == src.destination ? st.rate : out)));
    }
    return r;
}

/// Root of a monotone scalar function on [lo, hi] by plain bisection.
inline double bisect(const std::function<double(double)>& f, double lo, double hi, int iters = 200) {
    const bool increasing = f(hi) > f(lo);
    for (int i = 0; i < iters; ++i) {
        const double mid = 0.5 * (lo + hi);
        if ((f(mid) < 0.0) == increasing) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

/// Composite Gauss-Legendre (5-point) on [a, b] with n panels.
inline double gauss_legendre(const std::function<double(double)>& f, double a, double b, int n = 2000) {
    static const double x[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                                0.9061798459386640};
    static const double w[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665, 0.2369268850561891,
                                0.2369268850561891};
    const double h = (b - a) / n;
    double sum = 0.0;
    for (int p = 0; p < n; ++p) {
        const double mid = a + (p + 0.5) * h;
        for (int j = 0; j < 5; ++j) {
            sum += w[j] * f(mid + 0.5 * h * x[j]);
        }
    }
    return 0.5 * h * sum;
}

} // namespace mnum::testing

#endif
