#ifndef MNUM_IO_HPP
#define MNUM_IO_HPP

#include "mnum/choice.hpp"
#include "mnum/equilibrium.hpp"
#include "mnum/errors.hpp"
#include "mnum/network.hpp"
#include "mnum/protocol.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace mnum::io {

using Json = nlohmann::ordered_json;

struct NetworkFile {
    Network network;
    /// Choice model declared in the file, if any.
    std::optional<ChoiceModel> choice;
};

namespace detail {

inline std::size_t line_of(const std::string& text, std::size_t byte) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        line += text[i] == '\n' ? 1 : 0;
    }
    return line;
}

inline void allow_only(const Json& obj, const std::string& where, std::initializer_list<const char*> fields) {
    if (!obj.is_object()) {
        throw ParseError(where + ": expected an object");
    }
    const std::set<std::string> allowed(fields.begin(), fields.end());
    for (const auto& item : obj.items()) {
        if (!allowed.count(item.key())) {
            throw ParseError(where + "." + item.key() + ": unknown field");
        }
    }
}

inline const Json& field(const Json& obj, const std::string& where, const char* name) {
    if (!obj.contains(name)) {
        throw ParseError(where + "." + name + ": missing field");
    }
    return obj.at(name);
}

inline double number(const Json& obj, const std::string& where, const char* name) {
    const Json& v = field(obj, where, name);
    if (!v.is_number()) {
        throw ParseError(where + "." + name + ": expected a number");
    }
    return v.get<double>();
}

inline std::string text(const Json& obj, const std::string& where, const char* name) {
    const Json& v = field(obj, where, name);
    if (!v.is_string()) {
        throw ParseError(where + "." + name + ": expected a string");
    }
    return v.get<std::string>();
}

} // namespace detail

/// Parses the network JSON format. Field names are exact; unknown fields are rejected.
inline NetworkFile parse_network(const std::string& content) {
    Json root;
    try {
        root = Json::parse(content);
    } catch (const Json::parse_error& e) {
        throw ParseError("line " + std::to_string(detail::line_of(content, e.byte)) + ": " + e.what());
    }
    detail::allow_only(root, "network", {"nodes", "arcs", "sources", "choice", "beta"});

    const Json& nodes_json = detail::field(root, "network", "nodes");
    if (!nodes_json.is_array()) {
        throw ParseError("network.nodes: expected an array");
    }
    std::vector<std::string> nodes;
    std::unordered_map<std::string, NodeIndex> index;
    for (std::size_t i = 0; i < nodes_json.size(); ++i) {
        const Json& n = nodes_json[i];
        if (!n.is_string() && !n.is_number_integer()) {
            throw ParseError("network.nodes[" + std::to_string(i) + "]: expected a string or integer id");
        }
        nodes.push_back(n.is_string() ? n.get<std::string>() : std::to_string(n.get<long long>()));
        if (!index.emplace(nodes.back(), i).second) {
            throw ParseError("network.nodes[" + std::to_string(i) + "]: duplicate node '" + nodes.back() + "'");
        }
    }
    auto node_ref = [&](const Json& obj, const std::string& where, const char* name) {
        const Json& v = detail::field(obj, where, name);
        std::string key;
        if (v.is_string()) {
            key = v.get<std::string>();
        } else if (v.is_number_integer()) {
            key = std::to_string(v.get<long long>());
        } else {
            throw ParseError(where + "." + name + ": expected a node id");
        }
        auto it = index.find(key);
        if (it == index.end()) {
            throw ParseError(where + "." + name + ": unknown node '" + key + "'");
        }
        return it->second;
    };

    const Json& arcs_json = detail::field(root, "network", "arcs");
    if (!arcs_json.is_array()) {
        throw ParseError("network.arcs: expected an array");
    }
    std::vector<Arc> arcs;
    std::unordered_map<std::string, ArcIndex> arc_index;
    for (std::size_t a = 0; a < arcs_json.size(); ++a) {
        const Json& aj = arcs_json[a];
        const std::string where = "network.arcs[" + std::to_string(a) + "]";
        if (!aj.is_object()) {
            throw ParseError(where + ": expected an object");
        }
        const std::string model = detail::text(aj, where, "model");
        Arc arc;
        arc.id = detail::text(aj, where, "id");
        if (model == "mm1") {
            detail::allow_only(aj, where, {"id", "tail", "head", "model", "capacity", "lambda0"});
            arc.latency = Mm1{detail::number(aj, where, "capacity"), detail::number(aj, where, "lambda0")};
        } else if (model == "affine_capped") {
            detail::allow_only(aj, where, {"id", "tail", "head", "model", "capacity", "lambda0", "slope"});
            arc.latency = AffineCapped{detail::number(aj, where, "lambda0"), detail::number(aj, where, "slope"),
                                       detail::number(aj, where, "capacity")};
        } else {
            throw ParseError(where + ".model: unknown latency model '" + model + "'");
        }
        arc.tail = node_ref(aj, where, "tail");
        arc.head = node_ref(aj, where, "head");
        if (!arc_index.emplace(arc.id, a).second) {
            throw ParseError(where + ".id: duplicate arc '" + arc.id + "'");
        }
        arcs.push_back(std::move(arc));
    }

    std::vector<Source> sources;
    if (root.contains("sources")) {
        const Json& sources_json = root.at("sources");
        if (!sources_json.is_array()) {
            throw ParseError("network.sources: expected an array");
        }
        for (std::size_t k = 0; k < sources_json.size(); ++k) {
            const Json& sj = sources_json[k];
            const std::string where = "network.sources[" + std::to_string(k) + "]";
            if (!sj.is_object()) {
                throw ParseError(where + ": expected an object");
            }
            const std::string kind = detail::text(sj, where, "rate");
            Source src;
            src.id = detail::text(sj, where, "id");
            if (kind == "vegas") {
                detail::allow_only(sj, where, {"id", "origin", "destination", "rate", "alpha", "D", "demand", "route"});
                src.rate = Vegas{detail::number(sj, where, "alpha"), detail::number(sj, where, "D")};
            } else if (kind == "power_law") {
                detail::allow_only(sj, where,
                                   {"id", "origin", "destination", "rate", "scale", "exponent", "demand", "route"});
                src.rate = PowerLaw{detail::number(sj, where, "scale"), detail::number(sj, where, "exponent")};
            } else {
                throw ParseError(where + ".rate: unknown rate model '" + kind + "'");
            }
            src.origin = node_ref(sj, where, "origin");
            src.destination = node_ref(sj, where, "destination");
            if (sj.contains("demand")) {
                src.demand = detail::number(sj, where, "demand");
            }
            if (sj.contains("route")) {
                const Json& r = sj.at("route");
                if (!r.is_array()) {
                    throw ParseError(where + ".route: expected an array of arc ids");
                }
                for (const Json& id : r) {
                    if (!id.is_string() || !arc_index.count(id.get<std::string>())) {
                        throw ParseError(where + ".route: unknown arc id");
                    }
                    src.route.push_back(arc_index.at(id.get<std::string>()));
                }
            }
            sources.push_back(std::move(src));
        }
    }

    std::optional<ChoiceModel> choice;
    if (root.contains("choice")) {
        const std::string kind = detail::text(root, "network", "choice");
        if (kind == "logit") {
            choice = Logit{root.contains("beta") ? detail::number(root, "network", "beta") : 1.0};
        } else if (kind == "min") {
            if (root.contains("beta")) {
                throw ParseError("network.beta: not allowed with choice 'min'");
            }
            choice = DeterministicMin{};
        } else {
            throw ParseError("network.choice: unknown choice model '" + kind + "'");
        }
    } else if (root.contains("beta")) {
        choice = Logit{detail::number(root, "network", "beta")};
    }
    if (const auto* logit = choice ? std::get_if<Logit>(&*choice) : nullptr; logit && !(logit->beta > 0.0)) {
        throw ParseError("network.beta: must be positive");
    }

    try {
        return NetworkFile{Network(std::move(nodes), std::move(arcs), std::move(sources)), choice};
    } catch (const StructuralError& e) {
        throw ParseError(std::string("network: ") + e.what());
    }
}

inline NetworkFile load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open '" + path + "'");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_network(buffer.str());
}

// ---------------------------------------------------------------------------
// Serialization: fixed field order, 17 significant digits.
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
    if (!std::isfinite(v)) {
        return "null";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Writes `value` with every floating-point number at 17 significant digits.
inline void dump(std::ostream& out, const Json& value, int indent = 2, int depth = 0) {
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string close(static_cast<std::size_t>(indent * depth), ' ');
    switch (value.type()) {
    case Json::value_t::object: {
        if (value.empty()) {
            out << "{}";
            return;
        }
        out << "{\n";
        bool first = true;
        for (const auto& item : value.items()) {
            out << (first ? "" : ",\n") << pad << Json(item.key()).dump() << ": ";
            dump(out, item.value(), indent, depth + 1);
            first = false;
        }
        out << "\n" << close << "}";
        return;
    }
    case Json::value_t::array: {
        out << "[";
        bool first = true;
        for (const auto& v : value) {
            out << (first ? "" : ", ");
            dump(out, v, indent, depth + 1);
            first = false;
        }
        out << "]";
        return;
    }
    case Json::value_t::number_float:
        out << format_number(value.get<double>());
        return;
    default:
        out << value.dump();
        return;
    }
}

inline std::string dump(const Json& value) {
    std::ostringstream out;
    dump(out, value);
    out << "\n";
    return out.str();
}

namespace detail {

inline Json numbers(const std::vector<double>& v) {
    Json arr = Json::array();
    for (double x : v) {
        arr.push_back(std::isfinite(x) ? Json(x) : Json(nullptr));
    }
    return arr;
}

inline Json real(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline Json ids(const Network& net, bool arcs) {
    Json arr = Json::array();
    if (arcs) {
        for (const auto& a : net.arcs()) {
            arr.push_back(a.id);
        }
    } else {
        for (const auto& s : net.sources()) {
            arr.push_back(s.id);
        }
    }
    return arr;
}

} // namespace detail

/// Equilibrium report: lambda, w, x, q, objective, grad_norm, rmnum_residual, iterations, then extras.
inline Json equilibrium_report(const std::string& command, const Model& model, const Equilibrium& eq) {
    Json r;
    r["command"] = command;
    r["lambda"] = detail::numbers(eq.lambda);
    r["w"] = detail::numbers(eq.w);
    r["x"] = detail::numbers(eq.x);
    r["q"] = detail::numbers(eq.q);
    r["objective"] = detail::real(eq.diagnostics.objective);
    r["grad_norm"] = detail::real(eq.diagnostics.grad_norm);
    r["rmnum_residual"] = detail::real(eq.diagnostics.rmnum_residual);
    r["iterations"] = eq.diagnostics.iterations;
    r["converged"] = eq.diagnostics.converged;
    r["conservation_residual"] = detail::real(eq.diagnostics.conservation_residual);
    std::vector<double> tau0;
    for (std::size_t k = 0; k < model.network().source_count(); ++k) {
        tau0.push_back(model.tau0(k));
    }
    r["tau0"] = detail::numbers(tau0);
    r["arc_ids"] = detail::ids(model.network(), true);
    r["source_ids"] = detail::ids(model.network(), false);
    return r;
}

inline Json single_path_report(const Network& net, const SinglePathSolution& sol) {
    Json r;
    r["command"] = "num";
    r["p"] = detail::numbers(sol.p);
    r["w"] = detail::numbers(sol.w);
    r["x"] = detail::numbers(sol.x);
    r["q"] = detail::numbers(sol.q);
    r["objective"] = detail::real(sol.objective);
    r["kkt_residual"] = detail::real(sol.kkt_residual);
    r["iterations"] = sol.iterations;
    r["arc_ids"] = detail::ids(net, true);
    r["source_ids"] = detail::ids(net, false);
    return r;
}

struct SimulationSummary {
    std::vector<double> rates;
    std::vector<double> reference_rates;
    std::vector<double> tau0_estimate;
    std::vector<double> tau0_exact;
    double rate_distance = 0.0;
    double relative_rate_distance = 0.0;
    double tau_distance = 0.0;
    ProtocolResiduals residuals;
    std::size_t overload_events = 0;
    std::size_t tail_increases = 0;
    std::size_t outer = 0;
    std::size_t inner = 0;
};

inline Json simulation_report(const Network& net, const SimulationSummary& s) {
    Json r;
    r["command"] = "simulate";
    r["rates"] = detail::numbers(s.rates);
    r["reference_rates"] = detail::numbers(s.reference_rates);
    r["rate_distance"] = detail::real(s.rate_distance);
    r["relative_rate_distance"] = detail::real(s.relative_rate_distance);
    r["tau_distance"] = detail::real(s.tau_distance);
    r["rmnum_residual"] = detail::real(s.residuals.rmnum);
    r["rate_residual"] = detail::real(s.residuals.rate);
    r["tau_residual"] = detail::real(s.residuals.tau);
    r["tau0_estimate"] = detail::numbers(s.tau0_estimate);
    std::vector<double> bias;
    for (std::size_t k = 0; k < s.tau0_exact.size(); ++k) {
        bias.push_back(s.tau0_estimate[k] - s.tau0_exact[k]);
    }
    r["tau0_bias"] = detail::numbers(bias);
    r["overload_events"] = s.overload_events;
    r["tail_increases"] = s.tail_increases;
    r["outer"] = s.outer;
    r["inner"] = s.inner;
    r["source_ids"] = detail::ids(net, false);
    return r;
}

/// Checks a report against its declared schema (by its "command" field).
/// Returns an empty string when valid, else the first violation.
inline std::string validate_report(const Json& r) {
    if (!r.is_object() || !r.contains("command") || !r["command"].is_string()) {
        return "missing command";
    }
    const std::string cmd = r["command"];
    auto need_array = [&](const char* name) -> std::string {
        if (!r.contains(name) || !r[name].is_array()) {
            return std::string(name) + ": expected an array";
        }
        for (const auto& v : r[name]) {
            if (!v.is_number() && !v.is_null() && !v.is_string()) {
                return std::string(name) + ": bad element";
            }
        }
        return "";
    };
    auto need_number = [&](const char* name) -> std::string {
        if (!r.contains(name) || !(r[name].is_number() || r[name].is_null())) {
            return std::string(name) + ": expected a number";
        }
        return "";
    };
    std::vector<std::string> problems;
    if (cmd == "solve" || cmd == "mte") {
        for (const char* a : {"lambda", "w", "x", "q", "tau0", "arc_ids", "source_ids"}) {
            problems.push_back(need_array(a));
        }
        for (const char* n : {"objective", "grad_norm", "rmnum_residual", "iterations", "conservation_residual"}) {
            problems.push_back(need_number(n));
        }
        if (problems.back().empty() && r["lambda"].size() != r["arc_ids"].size()) {
            problems.push_back("lambda: size differs from arc_ids");
        }
        if (r.contains("x") && r.contains("source_ids") && r["x"].size() != r["source_ids"].size()) {
            problems.push_back("x: size differs from source_ids");
        }
    } else if (cmd == "num") {
        for (const char* a : {"p", "w", "x", "q", "arc_ids", "source_ids"}) {
            problems.push_back(need_array(a));
        }
        for (const char* n : {"objective", "kkt_residual", "iterations"}) {
            problems.push_back(need_number(n));
        }
    } else if (cmd == "simulate") {
        for (const char* a : {"rates", "reference_rates", "tau0_estimate", "tau0_bias", "source_ids"}) {
            problems.push_back(need_array(a));
        }
        for (const char* n : {"rate_distance", "relative_rate_distance", "tau_distance", "rmnum_residual",
                              "rate_residual", "overload_events", "outer", "inner"}) {
            problems.push_back(need_number(n));
        }
    } else {
        return "unknown command '" + cmd + "'";
    }
    for (const auto& p : problems) {
        if (!p.empty()) {
            return p;
        }
    }
    return "";
}

/// CSV trace: outer_step,inner_step,source,rate,q_est,dist_to_eq.
inline void write_trace(std::ostream& out, const Network& net, const ProtocolRun& run) {
    out << "outer_step,inner_step,source,rate,q_est,dist_to_eq\n";
    for (const auto& row : run.rows) {
        out << row.outer_step << ',' << row.inner_step << ',' << net.source(row.source).id << ','
            << format_number(row.rate) << ',' << format_number(row.q_est) << ',' << format_number(row.dist_to_eq)
            << '\n';
    }
}

} // namespace mnum::io

#endif
