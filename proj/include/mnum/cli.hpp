#ifndef MNUM_CLI_HPP
#define MNUM_CLI_HPP

#include "mnum/equilibrium.hpp"
#include "mnum/errors.hpp"
#include "mnum/io.hpp"
#include "mnum/protocol.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mnum::cli {

enum ExitCode : int {
    kSuccess = 0,
    kCheckFailed = 1,
    kInputError = 2,
    kConvergenceError = 3,
};

enum class LogLevel { Error, Info, Debug };

inline LogLevel log_level_from_env() {
    const char* v = std::getenv("MNUM_LOG");
    if (v == nullptr) {
        return LogLevel::Error;
    }
    const std::string s(v);
    if (s == "debug") {
        return LogLevel::Debug;
    }
    if (s == "info") {
        return LogLevel::Info;
    }
    return LogLevel::Error;
}

struct RunConfig {
    std::string command;
    std::string input;
    std::string output;
    std::optional<double> beta;
    double tol = 1e-8;
    std::size_t max_iter = 20000;
    std::uint64_t seed = 42;
    double alpha = 0.2;
    double delta = 0.2;
    double eta = 0.2;
    std::size_t inner = 50;
    std::size_t outer = 1000;
    double noise_sigma = 0.0;
    std::optional<std::string> choice;
    std::string solver = "descent";
    /// simulate: exit 0 iff the final relative rate distance is below this.
    double band = 0.01;
    /// gradcheck: number of random interior points.
    std::size_t points = 20;
    bool corrupt_gradient = false;
};

namespace detail {

struct Context {
    const RunConfig& cfg;
    std::ostream& out;
    std::ostream& err;
    LogLevel level;

    void info(const std::string& msg) const {
        if (level != LogLevel::Error) {
            err << "[info] " << msg << "\n";
        }
    }
    void debug(const std::string& msg) const {
        if (level == LogLevel::Debug) {
            err << "[debug] " << msg << "\n";
        }
    }
};

inline std::string fmt(double v) { return io::format_number(v); }

inline ChoiceModel choose(const RunConfig& cfg, const std::optional<ChoiceModel>& declared) {
    ChoiceModel choice = declared.value_or(ChoiceModel{Logit{1.0}});
    if (cfg.choice) {
        if (*cfg.choice == "min") {
            choice = DeterministicMin{};
        } else {
            const auto* logit = std::get_if<Logit>(&choice);
            choice = Logit{logit ? logit->beta : 1.0};
        }
    }
    if (cfg.beta) {
        if (!(*cfg.beta > 0.0)) {
            throw ParseError("--beta: must be positive");
        }
        if (is_deterministic(choice)) {
            throw ParseError("--beta: not applicable to choice 'min'");
        }
        choice = Logit{*cfg.beta};
    }
    return choice;
}

inline SolverOptions solver_options(const RunConfig& cfg) {
    SolverOptions opts;
    opts.tol = cfg.tol;
    opts.max_iter = cfg.max_iter;
    opts.mode = cfg.solver == "fixedpoint" ? SolverMode::FixedPoint : SolverMode::Descent;
    return opts;
}

inline void emit(const Context& ctx, const io::Json& report) {
    const std::string text = io::dump(report);
    if (ctx.cfg.output.empty()) {
        ctx.out << text;
        return;
    }
    std::ofstream f(ctx.cfg.output, std::ios::binary);
    if (!f) {
        throw ParseError("cannot write '" + ctx.cfg.output + "'");
    }
    f << text;
}

inline std::string summary_line(const Network& net, const std::vector<double>& x) {
    std::string s;
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        s += (k ? " " : "") + net.source(k).id + "=" + fmt(x[k]);
    }
    return s;
}

inline int converged_or_fail(const Context& ctx, const Diagnostics& d) {
    if (d.converged) {
        return kSuccess;
    }
    ctx.err << "not converged: iterations=" << d.iterations << " grad_norm=" << fmt(d.grad_norm)
            << " rmnum_residual=" << fmt(d.rmnum_residual) << "\n";
    return kConvergenceError;
}

inline int cmd_solve(const Context& ctx) {
    const auto file = io::load_network(ctx.cfg.input);
    const Model model(file.network, choose(ctx.cfg, file.choice));
    const Equilibrium eq = solve_mnum(model, solver_options(ctx.cfg));
    emit(ctx, io::equilibrium_report("solve", model, eq));
    ctx.info("solve: " + summary_line(model.network(), eq.x) + " grad_norm=" + fmt(eq.diagnostics.grad_norm) +
             " iterations=" + std::to_string(eq.diagnostics.iterations));
    return converged_or_fail(ctx, eq.diagnostics);
}

inline int cmd_mte(const Context& ctx) {
    const auto file = io::load_network(ctx.cfg.input);
    const Model model(file.network, choose(ctx.cfg, file.choice));
    const Equilibrium eq = solve_mte(model, declared_demands(model.network()), solver_options(ctx.cfg));
    emit(ctx, io::equilibrium_report("mte", model, eq));
    ctx.info("mte: objective=" + fmt(eq.diagnostics.objective) +
             " iterations=" + std::to_string(eq.diagnostics.iterations));
    return converged_or_fail(ctx, eq.diagnostics);
}

inline int cmd_num(const Context& ctx) {
    const auto file = io::load_network(ctx.cfg.input);
    const SinglePathSolution sol =
        solve_num_singlepath(file.network, default_routes(file.network), solver_options(ctx.cfg));
    emit(ctx, io::single_path_report(file.network, sol));
    ctx.info("num: " + summary_line(file.network, sol.x) + " kkt_residual=" + fmt(sol.kkt_residual));
    if (!(sol.kkt_residual < std::max(ctx.cfg.tol, 1e-6))) {
        ctx.err << "not converged: kkt_residual=" << fmt(sol.kkt_residual) << "\n";
        return kConvergenceError;
    }
    return kSuccess;
}

/// Random interior point: strictly above the free-flow values, strictly below s(0.9 c).
inline std::vector<double> random_interior(const Network& net, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::vector<double> lambda(net.arc_count());
    for (std::size_t a = 0; a < net.arc_count(); ++a) {
        const auto& lat = net.arc(a).latency;
        const double lo = free_flow_delay(lat);
        const double hi = latency(lat, 0.9 * capacity(lat));
        lambda[a] = lo + u(rng) * (hi - lo);
    }
    return lambda;
}

inline int cmd_gradcheck(const Context& ctx) {
    const auto file = io::load_network(ctx.cfg.input);
    const Model model(file.network, choose(ctx.cfg, file.choice));
    const Network& net = model.network();
    std::mt19937_64 rng(ctx.cfg.seed);
    double worst = 0.0;
    ctx.out << "point,arc,lambda,analytic,finite_difference,abs_err\n";
    for (std::size_t p = 0; p < ctx.cfg.points; ++p) {
        std::vector<double> lambda = random_interior(net, rng);
        std::vector<double> g = phi_gradient(model, lambda);
        if (ctx.cfg.corrupt_gradient) {
            for (std::size_t a = 0; a < g.size(); ++a) {
                g[a] += 1e-3 * static_cast<double>(a + 1);
            }
        }
        double diff = 0.0;
        double scale = 0.0;
        for (std::size_t a = 0; a < net.arc_count(); ++a) {
            const double h = 1e-5 * std::max(1.0, std::abs(lambda[a]));
            std::vector<double> up = lambda;
            std::vector<double> dn = lambda;
            up[a] += h;
            dn[a] -= h;
            const double fd =
                (phi_objective(model, up) - phi_objective(model, dn)) / (up[a] - dn[a]);
            diff = std::max(diff, std::abs(fd - g[a]));
            scale = std::max(scale, std::abs(g[a]));
            ctx.out << p << ',' << net.arc(a).id << ',' << fmt(lambda[a]) << ',' << fmt(g[a]) << ',' << fmt(fd)
                    << ',' << fmt(std::abs(fd - g[a])) << "\n";
        }
        const double rel = diff / std::max(scale, 1e-12);
        worst = std::max(worst, scale == 0.0 ? diff : rel);
    }
    ctx.out << "max_rel_err," << fmt(worst) << "\n";
    ctx.info("gradcheck: max_rel_err=" + fmt(worst));
    return worst < 1e-5 ? kSuccess : kCheckFailed;
}

inline int cmd_simulate(const Context& ctx) {
    const auto file = io::load_network(ctx.cfg.input);
    const Model model(file.network, choose(ctx.cfg, file.choice));
    if (ctx.cfg.inner == 0) {
        throw ParseError("--inner: must be at least 1");
    }
    const Equilibrium eq = solve_mnum(model, solver_options(ctx.cfg));
    if (!eq.diagnostics.converged) {
        return converged_or_fail(ctx, eq.diagnostics);
    }
    ProtocolOptions opts;
    opts.inner = ctx.cfg.inner;
    opts.outer = ctx.cfg.outer;
    opts.alpha = ctx.cfg.alpha;
    opts.delta = ctx.cfg.delta;
    opts.eta = ctx.cfg.eta;
    opts.noise_sigma = ctx.cfg.noise_sigma;
    opts.seed = ctx.cfg.seed;
    const ProtocolRun result = run(model, opts, &eq);
    for (const auto& e : result.overloads) {
        ctx.debug("overload at outer " + std::to_string(e.outer_step) + " inner " + std::to_string(e.inner_step));
    }

    io::SimulationSummary s;
    const Network& net = model.network();
    s.rates = result.final_state.rates;
    s.reference_rates = eq.x;
    s.tau0_estimate = result.final_state.tau0_est;
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        s.tau0_exact.push_back(model.tau0(k));
        s.relative_rate_distance = std::max(
            s.relative_rate_distance, std::abs(s.rates[k] - eq.x[k]) / std::max(std::abs(eq.x[k]), 1e-300));
    }
    s.rate_distance = result.rate_distance.empty() ? 0.0 : result.rate_distance.back();
    s.tau_distance = result.tau_distance.empty() ? 0.0 : result.tau_distance.back();
    s.residuals = protocol_residuals(model, result.final_state);
    s.overload_events = result.overloads.size();
    s.tail_increases = result.tail_increases;
    s.outer = opts.outer;
    s.inner = opts.inner;

    const io::Json summary = io::simulation_report(net, s);
    if (ctx.cfg.output.empty()) {
        io::write_trace(ctx.out, net, result);
        ctx.err << io::dump(summary);
    } else {
        std::ofstream trace(ctx.cfg.output, std::ios::binary);
        std::ofstream js(ctx.cfg.output + ".summary.json", std::ios::binary);
        if (!trace || !js) {
            throw ParseError("cannot write '" + ctx.cfg.output + "'");
        }
        io::write_trace(trace, net, result);
        js << io::dump(summary);
    }
    ctx.info("simulate: relative_rate_distance=" + fmt(s.relative_rate_distance) +
             " tail_increases=" + std::to_string(s.tail_increases));
    if (s.relative_rate_distance < ctx.cfg.band) {
        return kSuccess;
    }
    ctx.err << "rate distance " << fmt(s.relative_rate_distance) << " outside band " << fmt(ctx.cfg.band) << "\n";
    return kCheckFailed;
}

inline int cmd_validate(const Context& ctx) {
    const auto file = io::load_network(ctx.cfg.input);
    const Model model(file.network, choose(ctx.cfg, file.choice));
    const Network& net = model.network();
    ctx.out << "nodes " << net.node_count() << "\narcs " << net.arc_count() << "\nsources " << net.source_count()
            << "\n";
    for (std::size_t k = 0; k < net.source_count(); ++k) {
        ctx.out << "source " << net.source(k).id << " support_arcs " << model.support(k).arc_count() << " tau0 "
                << fmt(model.tau0(k)) << "\n";
    }
    return kSuccess;
}

} // namespace detail

/// Entry point shared by the executable and the in-process tests.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    RunConfig cfg;
    CLI::App app{"Markovian network utility maximization: equilibrium solver and protocol simulator", "mnum"};
    app.add_option("command", cfg.command, "solve | mte | num | simulate | gradcheck | validate")
        ->required()
        ->check(CLI::IsMember({"solve", "mte", "num", "simulate", "gradcheck", "validate"}));
    app.add_option("--input,-i", cfg.input, "network JSON file")->required();
    app.add_option("--output,-o", cfg.output, "report path (stdout if omitted)");
    app.add_option("--beta", cfg.beta, "Logit dispersion, overrides the file");
    app.add_option("--tol", cfg.tol, "stationarity tolerance")->check(CLI::PositiveNumber);
    app.add_option("--max-iter", cfg.max_iter, "iteration cap")->check(CLI::PositiveNumber);
    app.add_option("--seed", cfg.seed, "RNG seed");
    app.add_option("--alpha", cfg.alpha, "router step")->check(CLI::Range(0.0, 1.0));
    app.add_option("--delta", cfg.delta, "source step")->check(CLI::Range(0.0, 1.0));
    app.add_option("--eta", cfg.eta, "link-delay smoothing")->check(CLI::Range(0.0, 1.0));
    app.add_option("--inner", cfg.inner, "source sweeps per router sweep");
    app.add_option("--outer", cfg.outer, "router sweeps");
    app.add_option("--noise-sigma", cfg.noise_sigma, "std-dev of delay observation noise")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--choice", cfg.choice, "logit | min")->check(CLI::IsMember({"logit", "min"}));
    app.add_option("--solver", cfg.solver, "descent | fixedpoint")->check(CLI::IsMember({"descent", "fixedpoint"}));
    app.add_option("--band", cfg.band, "simulate: relative rate band for success")->check(CLI::PositiveNumber);
    app.add_option("--points", cfg.points, "gradcheck: number of random points")->check(CLI::PositiveNumber);
    app.add_flag("--corrupt-gradient", cfg.corrupt_gradient)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kInputError;
    }

    const detail::Context ctx{cfg, out, err, log_level_from_env()};
    try {
        if (cfg.command == "solve") {
            return detail::cmd_solve(ctx);
        }
        if (cfg.command == "mte") {
            return detail::cmd_mte(ctx);
        }
        if (cfg.command == "num") {
            return detail::cmd_num(ctx);
        }
        if (cfg.command == "simulate") {
            return detail::cmd_simulate(ctx);
        }
        if (cfg.command == "gradcheck") {
            return detail::cmd_gradcheck(ctx);
        }
        return detail::cmd_validate(ctx);
    } catch (const ParseError& e) {
        err << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const StructuralError& e) {
        err << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const DomainError& e) {
        err << "input error: " << e.what() << "\n";
        return kInputError;
    } catch (const ConvergenceError& e) {
        err << "convergence error: " << e.what() << "\n";
        return kConvergenceError;
    } catch (const StepRuleError& e) {
        err << "convergence error: " << e.what() << "\n";
        return kConvergenceError;
    }
}

} // namespace mnum::cli

#endif
