#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfliq/convergence.hpp"
#include "mfliq/stackelberg.hpp"

namespace mfliq::cli {

using json = nlohmann::json;

/// Malformed or incomplete run configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EnsembleSpec {
    std::size_t M_common = 1;
    std::size_t M_idio = 1;
    std::uint64_t seed = 0;
};

struct SolverSpec {
    double tol = 1e-10;
    std::size_t max_iter = 500;
    double damping = 0.5;
    double alpha = -1.0;
    double nu = 1.5;
    std::size_t basis_degree = 3;
    std::size_t ramp_steps = 0;
    std::vector<double> n_schedule{2, 4, 8, 16, 32, 64, 128, 256};
    std::optional<double> penalty;
    double outer_tol = 1e-8;
    std::size_t outer_max_iter = 200;
    double outer_damping = 0.3;
    std::size_t trials = 0;
    double delta = 0.1;
    std::uint64_t perturbation_seed = 1;
};

struct RunConfig {
    json raw;  // the parsed file, after command-line overrides
    GridSpec grid;
    EnsembleSpec ensemble;
    SolverSpec solver;
    std::optional<json> core, follower, leader;
    unsigned workers = 1;
};

namespace detail {

inline void require_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    require_object(j, where);
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

inline double number(const json& j, const std::string& where) {
    if (!j.is_number()) throw ConfigError(where + ": expected a number");
    return j.get<double>();
}

inline std::size_t count(const json& j, const std::string& where) {
    if (!j.is_number_integer() || j.get<long long>() < 0) throw ConfigError(where + ": expected a nonnegative integer");
    return j.get<std::size_t>();
}

template <class>
inline constexpr bool unsupported = false;

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    const std::string w = where + "." + key;
    if constexpr (std::is_same_v<T, double>) out = number(obj.at(key), w);
    else if constexpr (std::is_same_v<T, std::size_t>) out = count(obj.at(key), w);
    else if constexpr (std::is_same_v<T, std::uint64_t>) out = count(obj.at(key), w);
    else if constexpr (std::is_same_v<T, std::optional<double>>) out = number(obj.at(key), w);
    else if constexpr (std::is_same_v<T, std::vector<double>>) {
        if (!obj.at(key).is_array()) throw ConfigError(w + ": expected an array");
        out.clear();
        for (const auto& v : obj.at(key)) out.push_back(number(v, w));
    } else {
        static_assert(unsupported<T>, "read: unsupported type");
    }
}

}  // namespace detail

/// A constant, or {"t": [...], "v": [...]} interpolated linearly.
inline TimeFunction parse_time_function(const json& j, const std::string& where) {
    if (j.is_number()) return TimeFunction(j.get<double>());
    detail::reject_unknown(j, {"t", "v"}, where);
    if (!j.contains("t") || !j.contains("v")) throw ConfigError(where + ": table needs 't' and 'v'");
    std::vector<double> t, v;
    for (const auto& x : j.at("t")) t.push_back(detail::number(x, where + ".t"));
    for (const auto& x : j.at("v")) v.push_back(detail::number(x, where + ".v"));
    try {
        return TimeFunction::table(std::move(t), std::move(v));
    } catch (const InvalidArgument& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

/// A time function, or {"sin_w0": {"amplitude": a, "frequency": c}} for the
/// common-noise process a sin(c W0_t).
inline Coefficient parse_coefficient(const json& j, const std::string& where, const ParticleEnsemble& ens) {
    if (j.is_object() && j.contains("sin_w0")) {
        detail::reject_unknown(j, {"sin_w0"}, where);
        const json& s = j.at("sin_w0");
        detail::reject_unknown(s, {"amplitude", "frequency"}, where + ".sin_w0");
        double a = 1.0, c = 1.0;
        detail::read(s, "amplitude", a, where + ".sin_w0");
        detail::read(s, "frequency", c, where + ".sin_w0");
        const Measurability tag = ens.M_common() > 1 ? Measurability::common : Measurability::deterministic;
        return Coefficient(generate(tag, shape_of(ens), [&](std::size_t r, std::size_t k) {
            return a * std::sin(c * ens.W0(r, k));
        }));
    }
    return Coefficient(parse_time_function(j, where));
}

inline std::vector<double> spread_particles(double x, double spread, const ParticleEnsemble& ens) {
    auto z = ens.particle_normals(0);
    for (double& v : z) v = x * (1.0 + spread * v);
    return z;
}

inline CoefficientSet parse_core(const json& j, const GridSpec& grid, const ParticleEnsemble& ens) {
    const std::string w = "model.core";
    detail::reject_unknown(j, {"lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "gamma", "zeta", "rho", "chi",
                               "chi_spread", "f_bar", "g_bar", "drift"},
                           w);
    CoefficientSet c;
    c.T = grid.T;
    if (j.contains("lambda1")) c.lambda1 = parse_time_function(j.at("lambda1"), w + ".lambda1");
    if (j.contains("lambda4")) c.lambda4 = parse_time_function(j.at("lambda4"), w + ".lambda4");
    auto coef = [&](const char* key, Coefficient& out) {
        if (j.contains(key)) out = parse_coefficient(j.at(key), w + "." + key, ens);
    };
    coef("lambda2", c.lambda2);
    coef("lambda3", c.lambda3);
    coef("lambda5", c.lambda5);
    coef("gamma", c.gamma);
    coef("zeta", c.zeta);
    coef("rho", c.rho);
    coef("f_bar", c.f_bar);
    coef("g_bar", c.g_bar);
    detail::read(j, "chi", c.chi, w);
    double spread = 0.0;
    detail::read(j, "chi_spread", spread, w);
    if (spread != 0.0) c.chi_particles = spread_particles(c.chi, spread, ens);
    return c;
}

inline TimeFunction parse_drift(const json& core) {
    return core.contains("drift") ? parse_time_function(core.at("drift"), "model.core.drift") : TimeFunction(0.0);
}

inline FollowerModel parse_follower(const json& j, const GridSpec& grid, const ParticleEnsemble& ens) {
    const std::string w = "model.follower";
    detail::reject_unknown(j, {"eta", "kappa", "lambda", "g_tilde", "x", "x_spread"}, w);
    FollowerModel m;
    m.T = grid.T;
    if (j.contains("eta")) m.eta = parse_time_function(j.at("eta"), w + ".eta");
    if (j.contains("lambda")) m.lambda = parse_time_function(j.at("lambda"), w + ".lambda");
    if (j.contains("kappa")) m.kappa = parse_coefficient(j.at("kappa"), w + ".kappa", ens);
    if (j.contains("g_tilde")) m.g_tilde = parse_coefficient(j.at("g_tilde"), w + ".g_tilde", ens);
    detail::read(j, "x", m.x, w);
    double spread = 0.0;
    detail::read(j, "x_spread", spread, w);
    if (spread != 0.0) m.x_particles = spread_particles(m.x, spread, ens);
    return m;
}

inline LeaderModel parse_leader(const json& j, const FollowerModel& follower) {
    const std::string w = "model.leader";
    detail::reject_unknown(j, {"eta0", "kappa0", "kappabar0", "lambda0", "lambdabar", "kappatilde0", "x0"}, w);
    LeaderModel m;
    m.follower = follower;
    auto tf = [&](const char* key, TimeFunction& out) {
        if (j.contains(key)) out = parse_time_function(j.at(key), w + "." + key);
    };
    tf("eta0", m.eta0);
    tf("kappa0", m.kappa0);
    tf("kappabar0", m.kappabar0);
    tf("lambda0", m.lambda0);
    tf("lambdabar", m.lambdabar);
    tf("kappatilde0", m.kappatilde0);
    detail::read(j, "x0", m.x0, w);
    return m;
}

/// Parses and validates the section layout. Model sections are kept as JSON
/// until an ensemble exists, since random coefficients are built on it.
inline RunConfig parse_config(const json& j) {
    detail::reject_unknown(j, {"model", "grid", "ensemble", "solver"}, "config");
    RunConfig c;
    c.raw = j;
    if (!j.contains("model")) throw ConfigError("config: missing section 'model'");
    if (!j.contains("grid")) throw ConfigError("config: missing section 'grid'");
    const json& m = j.at("model");
    detail::reject_unknown(m, {"core", "follower", "leader"}, "model");
    if (m.contains("core")) c.core = m.at("core");
    if (m.contains("follower")) c.follower = m.at("follower");
    if (m.contains("leader")) c.leader = m.at("leader");

    const json& g = j.at("grid");
    detail::reject_unknown(g, {"T", "n_uniform", "n_refined", "ratio", "epsilon_final"}, "grid");
    detail::read(g, "T", c.grid.T, "grid");
    detail::read(g, "n_uniform", c.grid.n_uniform, "grid");
    detail::read(g, "n_refined", c.grid.n_refined, "grid");
    detail::read(g, "ratio", c.grid.ratio, "grid");
    detail::read(g, "epsilon_final", c.grid.epsilon_final, "grid");

    if (j.contains("ensemble")) {
        const json& e = j.at("ensemble");
        detail::reject_unknown(e, {"M_common", "M_idio", "seed"}, "ensemble");
        detail::read(e, "M_common", c.ensemble.M_common, "ensemble");
        detail::read(e, "M_idio", c.ensemble.M_idio, "ensemble");
        detail::read(e, "seed", c.ensemble.seed, "ensemble");
    }
    if (j.contains("solver")) {
        const json& s = j.at("solver");
        detail::reject_unknown(s, {"tol", "max_iter", "damping", "alpha", "nu", "basis_degree", "ramp_steps",
                                   "n_schedule", "penalty", "outer_tol", "outer_max_iter", "outer_damping", "trials",
                                   "delta", "perturbation_seed"},
                               "solver");
        auto& v = c.solver;
        detail::read(s, "tol", v.tol, "solver");
        detail::read(s, "max_iter", v.max_iter, "solver");
        detail::read(s, "damping", v.damping, "solver");
        detail::read(s, "alpha", v.alpha, "solver");
        detail::read(s, "nu", v.nu, "solver");
        detail::read(s, "basis_degree", v.basis_degree, "solver");
        detail::read(s, "ramp_steps", v.ramp_steps, "solver");
        detail::read(s, "n_schedule", v.n_schedule, "solver");
        detail::read(s, "penalty", v.penalty, "solver");
        detail::read(s, "outer_tol", v.outer_tol, "solver");
        detail::read(s, "outer_max_iter", v.outer_max_iter, "solver");
        detail::read(s, "outer_damping", v.outer_damping, "solver");
        detail::read(s, "trials", v.trials, "solver");
        detail::read(s, "delta", v.delta, "solver");
        detail::read(s, "perturbation_seed", v.perturbation_seed, "solver");
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

}  // namespace mfliq::cli
