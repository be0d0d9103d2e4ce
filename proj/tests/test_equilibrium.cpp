#include "mnum/equilibrium.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

using namespace mnum;
using mnum::testing::balance_residual;
using mnum::testing::bisect;
using mnum::testing::load;
using mnum::testing::load_model;
using mnum::testing::random_interior;
using mnum::testing::shipped_networks;

namespace {

Network symmetric_network(double c, double lambda0, double alpha, double d) {
    return Network({"s", "t"}, {{"a", 0, 1, Mm1{c, lambda0}}, {"b", 0, 1, Mm1{c, lambda0}}},
                   {{"k", 0, 1, Vegas{alpha, d}, {}, {}}});
}

void expect_conserves(const Equilibrium& eq, const Network& net) {
    EXPECT_LT(eq.diagnostics.conservation_residual, 1e-10);
    for (const auto& st : eq.states) {
        EXPECT_LT(balance_residual(net, st), 1e-10);
    }
}

// x = f(q) per source and lambda = s(w) per arc.
void expect_kkt(const Model& model, const Equilibrium& eq, double tol) {
    const Network& net = model.network();
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        EXPECT_NEAR(eq.x[k], rate(net.source(k).rate, eq.q[k]), tol * std::max(1.0, eq.x[k]));
        EXPECT_NEAR(eq.q[k], eq.states[k].tau[net.source(k).origin] - model.tau0(k), 1e-12);
    }
    for (ArcIndex a = 0; a < net.arc_count(); ++a) {
        EXPECT_NEAR(eq.lambda[a], latency(net.arc(a).latency, eq.w[a]), tol);
    }
}

} // namespace

TEST(SymmetricInstance, ClosedForm) {
    const Model model(load("symmetric.json").network, Logit{1.0});
    const auto t0 = std::chrono::steady_clock::now();
    SolverOptions opts;
    opts.start = std::vector<double>{1.1, 2.0};
    const Equilibrium eq = solve_mnum(model, opts);
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1.0);
    EXPECT_NEAR(eq.x[0], 2.0, 1e-6);
    EXPECT_NEAR(eq.w[0], 1.0, 1e-6);
    EXPECT_NEAR(eq.w[1], 1.0, 1e-6);
    EXPECT_NEAR(eq.lambda[0], 1.5, 1e-6);
    EXPECT_NEAR(eq.lambda[1], 1.5, 1e-6);
    EXPECT_NEAR(eq.q[0], 0.5, 1e-6);
    EXPECT_NEAR(model.tau0(0), 1.0 - std::numbers::ln2, 1e-15);
}

TEST(SymmetricInstance, MatchesBisectionOracleAcrossParameters) {
    for (double c : {1.5, 3.0}) {
        for (double d : {0.5, 2.0}) {
            for (double beta : {0.2, 1.0, 8.0}) {
                const Model model(symmetric_network(c, 0.8, 1.3, d), Logit{beta});
                const Equilibrium eq = solve_mnum(model);
                // Symmetry: w = x/2 per link and q = psi(x/2), so x solves x = alpha D / psi(x/2).
                const double x = bisect(
                    [&](double x) { return x * (0.5 * x / (c * (c - 0.5 * x))) - 1.3 * d; }, 1e-12, 2 * c - 1e-12);
                EXPECT_NEAR(eq.x[0], x, 1e-6);
                EXPECT_NEAR(eq.w[0], 0.5 * x, 1e-6);
                expect_kkt(model, eq, 1e-6);
            }
        }
    }
}

TEST(SingleLink, GoldenRatioQuadratic) {
    const auto file = load("single_link.json");
    const double p = (1.0 + std::sqrt(5.0)) / 4.0;
    const auto sol = solve_num_singlepath(file.network, default_routes(file.network));
    EXPECT_NEAR(sol.p[0], p, 1e-8);
    EXPECT_NEAR(sol.x[0], 1.0 / p, 1e-8);
    EXPECT_LT(sol.kkt_residual, 1e-8);
    const Equilibrium eq = solve_mnum(Model(file.network, Logit{1.0}));
    EXPECT_NEAR(eq.q[0], p, 1e-8);
    EXPECT_NEAR(eq.x[0], 1.0 / p, 1e-8);
}

TEST(SinglePath, AgreesWithMarkovianWhenEveryPathIsUnique) {
    // A line s -> m -> t: each source has one support path, so Markovian and route-based NUM coincide.
    const Network net({"s", "m", "t"}, {{"sm", 0, 1, Mm1{3.0, 1.0}}, {"mt", 1, 2, AffineCapped{0.5, 0.4, 2.5}}},
                      {{"long", 0, 2, Vegas{1.0, 2.0}, {}, {}}, {"short", 1, 2, PowerLaw{0.3, 1.7}, {}, {}}});
    const auto sp = solve_num_singlepath(net, default_routes(net));
    for (double beta : {0.5, 5.0}) {
        const Equilibrium eq = solve_mnum(Model(net, Logit{beta}));
        for (std::size_t k = 0; k < 2; ++k) {
            EXPECT_NEAR(eq.x[k], sp.x[k], 1e-6);
            EXPECT_NEAR(eq.q[k], sp.q[k], 1e-6);
        }
    }
    EXPECT_LT(sp.kkt_residual, 1e-6);
}

TEST(SinglePath, KktOnShippedNetworks) {
    for (const auto& name : shipped_networks()) {
        const auto file = load(name);
        const auto sol = solve_num_singlepath(file.network, default_routes(file.network));
        EXPECT_LT(sol.kkt_residual, 1e-6) << name;
        for (double p : sol.p) {
            EXPECT_GE(p, 0.0);
        }
    }
}

TEST(Dual, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(21);
    std::size_t points = 0;
    for (const auto& name : {"braess.json", "chain.json", "grid3x3.json", "reverse.json", "symmetric.json"}) {
        const Model model = load_model(name);
        for (int trial = 0; trial < 6; ++trial, ++points) {
            const auto lambda = random_interior(model.network(), rng);
            const auto g = phi_gradient(model, lambda);
            double diff = 0.0;
            double scale = 0.0;
            for (ArcIndex a = 0; a < lambda.size(); ++a) {
                auto up = lambda;
                auto dn = lambda;
                const double h = 1e-5 * std::max(1.0, lambda[a]);
                up[a] += h;
                dn[a] -= h;
                const double fd = (phi_objective(model, up) - phi_objective(model, dn)) / (up[a] - dn[a]);
                diff = std::max(diff, std::abs(fd - g[a]));
                scale = std::max(scale, std::abs(g[a]));
            }
            EXPECT_LT(diff / scale, 1e-5) << name;
        }
    }
    EXPECT_GE(points, 20u);
}

TEST(Dual, ConvexAlongRandomSegments) {
    std::mt19937_64 rng(22);
    for (const auto& name : {"braess.json", "grid3x3.json"}) {
        const Model model = load_model(name);
        for (int trial = 0; trial < 30; ++trial) {
            const auto a = random_interior(model.network(), rng);
            const auto b = random_interior(model.network(), rng);
            std::vector<double> m(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) {
                m[i] = 0.5 * (a[i] + b[i]);
            }
            EXPECT_LE(phi_objective(model, m), 0.5 * (phi_objective(model, a) + phi_objective(model, b)) + 1e-12);
        }
    }
}

TEST(Dual, SingularAtFreeFlowAndCoercive) {
    const Model model = load_model("braess.json");
    EXPECT_EQ(phi_objective(model, model.lambda0()), kInfinity);
    EXPECT_THROW(phi_gradient(model, model.lambda0()), DomainError);
    double prev = -kInfinity;
    for (double t : {10.0, 100.0, 1000.0, 1e4}) {
        std::vector<double> lambda = model.lambda0();
        for (double& l : lambda) {
            l += t;
        }
        const double v = phi_objective(model, lambda);
        EXPECT_GT(v, prev);
        prev = v;
    }
    EXPECT_GT(prev, 1e3);
}

TEST(Solver, UniqueFromDistinctStarts) {
    std::mt19937_64 rng(23);
    for (const auto& name : shipped_networks()) {
        const Model model = load_model(name);
        SolverOptions a;
        SolverOptions b;
        a.start = random_interior(model.network(), rng);
        b.start = random_interior(model.network(), rng);
        for (ArcIndex i = 0; i < model.network().arc_count(); ++i) {
            (*b.start)[i] += 3.0;
        }
        const Equilibrium ea = solve_mnum(model, a);
        const Equilibrium eb = solve_mnum(model, b);
        for (ArcIndex i = 0; i < ea.lambda.size(); ++i) {
            EXPECT_NEAR(ea.lambda[i], eb.lambda[i], 1e-6) << name;
        }
        expect_conserves(ea, model.network());
        expect_conserves(eb, model.network());
    }
}

TEST(Solver, EquilibriumConditionsOnShippedNetworks) {
    for (const auto& name : shipped_networks()) {
        const Model model = load_model(name);
        if (is_deterministic(model.choice())) {
            continue;
        }
        const Equilibrium eq = solve_mnum(model);
        EXPECT_TRUE(eq.diagnostics.converged);
        EXPECT_LT(eq.diagnostics.rmnum_residual, 1e-6) << name;
        expect_kkt(model, eq, 1e-6);
        expect_conserves(eq, model.network());
    }
}

TEST(Solver, FixedPointAndBarzilaiBorweinAgreeWithDescent) {
    for (const auto& name : {"braess.json", "chain.json", "grid3x3.json"}) {
        const Model model = load_model(name);
        const Equilibrium ref = solve_mnum(model);
        SolverOptions fp;
        fp.mode = SolverMode::FixedPoint;
        SolverOptions bb;
        bb.step_rule = StepRule::ArmijoBarzilaiBorwein;
        for (const auto& opts : {fp, bb}) {
            const Equilibrium eq = solve_mnum(model, opts);
            for (ArcIndex a = 0; a < ref.lambda.size(); ++a) {
                EXPECT_NEAR(eq.lambda[a], ref.lambda[a], 1e-6) << name;
            }
            expect_conserves(eq, model.network());
        }
    }
}

TEST(Solver, ArmijoStepsStrictlyDecrease) {
    const Model model = load_model("grid3x3.json");
    SolverOptions opts;
    opts.record_history = true;
    const Equilibrium eq = solve_mnum(model, opts);
    ASSERT_FALSE(eq.diagnostics.history.empty());
    for (const auto& step : eq.diagnostics.history) {
        if (step.kind == StepKind::Armijo) {
            EXPECT_LT(step.objective_after, step.objective_before);
        } else {
            EXPECT_LE(std::abs(step.objective_after - step.objective_before),
                      1e-12 * std::max(1.0, std::abs(step.objective_before)));
        }
    }
}

TEST(Solver, IterationCapRaisesConvergenceError) {
    const Model model = load_model("braess.json");
    SolverOptions opts;
    opts.max_iter = 1;
    EXPECT_THROW(solve_mnum(model, opts), ConvergenceError);
    opts.tol = 0.0;
    EXPECT_THROW(solve_mnum(model, opts), DomainError);
}

TEST(Solver, EmptySourceSetGivesFreeFlow) {
    const Network net({"s", "t"}, {{"a", 0, 1, Mm1{2.0, 1.0}}}, {});
    const Equilibrium eq = solve_mnum(Model(net, Logit{1.0}));
    EXPECT_NEAR(eq.lambda[0], 1.0, 1e-9);
    EXPECT_NEAR(eq.w[0], 0.0, 1e-8);
}

TEST(Wardrop, EqualizesUsedLinkDelays) {
    const auto file = load("wardrop2.json");
    const Model model(file.network, DeterministicMin{});
    const Equilibrium eq = solve_mte(model, declared_demands(model.network()));
    const Network& net = model.network();
    const double demand = 2.0;
    // Oracle: s_fast(w) = s_slow(demand - w).
    const double w = bisect(
        [&](double w) { return latency(net.arc(0).latency, w) - latency(net.arc(1).latency, demand - w); }, 1e-12,
        demand);
    ASSERT_GT(w, 0.0);
    ASSERT_LT(w, demand);
    EXPECT_NEAR(eq.w[0], w, 1e-6);
    EXPECT_NEAR(eq.w[1], demand - w, 1e-6);
    EXPECT_NEAR(latency(net.arc(0).latency, eq.w[0]), latency(net.arc(1).latency, eq.w[1]), 1e-6);
    EXPECT_NEAR(eq.lambda[0], eq.lambda[1], 1e-6);
    expect_conserves(eq, net);
}

TEST(Wardrop, LogitApproachesTheDeterministicLimit) {
    const auto file = load("wardrop2.json");
    const auto x = declared_demands(file.network);
    const Equilibrium det = solve_mte(Model(file.network, DeterministicMin{}), x);
    double prev = kInfinity;
    for (double beta : {5.0, 50.0, 500.0}) {
        const Equilibrium eq = solve_mte(Model(file.network, Logit{beta}), x);
        const double gap = std::abs(eq.w[0] - det.w[0]);
        EXPECT_LT(gap, prev);
        prev = gap;
    }
    EXPECT_LT(prev, 1e-2);
}

TEST(Wardrop, ElasticDeterministicMatchesOracle) {
    // MNUM under min choice: both links used, q = s(w) - lambda0_min, x = alpha D / q.
    const auto file = load("wardrop2.json");
    const Model model(file.network, DeterministicMin{});
    const Equilibrium eq = solve_mnum(model);
    const Network& net = model.network();
    // Fast-link share of `total`; the slow link stays idle until the delays meet.
    auto split = [&](double total) {
        if (total < 3.0 && latency(net.arc(0).latency, total) <= free_flow_delay(net.arc(1).latency)) {
            return total;
        }
        return bisect([&](double w) { return latency(net.arc(0).latency, w) - latency(net.arc(1).latency, total - w); },
                      std::max(0.0, total - 2.0) + 1e-12, std::min(3.0, total) - 1e-12);
    };
    const double x = bisect(
        [&](double x) {
            const double w = split(x);
            return x - 1.0 / (latency(net.arc(0).latency, w) - 1.0);
        },
        0.5, 4.9);
    EXPECT_NEAR(eq.x[0], x, 1e-6);
    expect_conserves(eq, net);
}

TEST(Mte, LogitFixedDemandConditions) {
    const Model model = load_model("grid3x3.json");
    const std::vector<double> x = {1.0, 0.5, 0.3};
    const Equilibrium eq = solve_mte(model, x);
    for (std::size_t k = 0; k < x.size(); ++k) {
        EXPECT_DOUBLE_EQ(eq.x[k], x[k]);
    }
    for (ArcIndex a = 0; a < model.network().arc_count(); ++a) {
        EXPECT_NEAR(eq.lambda[a], latency(model.network().arc(a).latency, eq.w[a]), 1e-6);
    }
    expect_conserves(eq, model.network());
    const Equilibrium zero = solve_mte(model, {0.0, 0.0, 0.0});
    for (ArcIndex a = 0; a < model.network().arc_count(); ++a) {
        EXPECT_NEAR(zero.lambda[a], model.lambda0()[a], 1e-9);
    }
    EXPECT_THROW(solve_mte(model, {-1.0, 0.0, 0.0}), DomainError);
}

TEST(SimplexProjection, MatchesBruteForce) {
    std::mt19937_64 rng(24);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> v(3);
        for (double& e : v) {
            e = n(rng);
        }
        auto p = v;
        detail::project_simplex(p);
        EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
        // Projection is the closest simplex point: compare with a grid search.
        double best = kInfinity;
        for (int i = 0; i <= 200; ++i) {
            for (int j = 0; i + j <= 200; ++j) {
                const double a = i / 200.0;
                const double b = j / 200.0;
                const double c = 1.0 - a - b;
                best = std::min(best, (a - v[0]) * (a - v[0]) + (b - v[1]) * (b - v[1]) + (c - v[2]) * (c - v[2]));
            }
        }
        const double got = (p[0] - v[0]) * (p[0] - v[0]) + (p[1] - v[1]) * (p[1] - v[1]) + (p[2] - v[2]) * (p[2] - v[2]);
        EXPECT_LE(got, best + 1e-12);
    }
}
