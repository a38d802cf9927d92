#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mfliq/cli/config.hpp"

namespace mfliq::cli {

inline constexpr const char* version = "0.1.0";

enum ExitCode : int {
    ok = 0,
    other_failure = 1,
    config_error = 2,
    non_convergence = 3,
    numerical_failure = 4,
    infeasible = 5,
};

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> s{"riccati", "solve", "liquidate", "stackelberg",
                                            "study-penalization", "study-value", "check"};
    return s;
}

// ---------------------------------------------------------------- output

/// Shortest representation that reads back to the same double.
inline std::string fmt(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    for (int p = 15; p <= 17; ++p) {
        std::snprintf(buf, sizeof buf, "%.*g", p, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

    void row(const std::vector<double>& v) {
        if (v.size() != header_.size()) throw std::logic_error("CsvWriter: row width differs from header");
        rows_.push_back(v);
    }

    void write(const std::filesystem::path& p) const {
        std::ofstream out(p, std::ios::binary);
        for (std::size_t j = 0; j < header_.size(); ++j) out << (j ? "," : "") << header_[j];
        out << '\n';
        for (const auto& r : rows_) {
            for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << fmt(r[j]);
            out << '\n';
        }
        if (!out) throw std::runtime_error("cannot write " + p.string());
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<double>> rows_;
};

/// JSON with non-finite numbers stored as strings.
inline json num(double x) { return std::isfinite(x) ? json(x) : json(fmt(x)); }

inline json nums(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(num(x));
    return a;
}

inline void write_json(const std::filesystem::path& p, const json& j) {
    std::ofstream out(p, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

/// Particle mean of a field at node k.
inline double node_mean(const AdaptedField& f, std::size_t k) {
    std::vector<double> v(f.rows());
    for (std::size_t r = 0; r < v.size(); ++r) v[r] = f.value(r, k);
    return pairwise_mean(v);
}

inline json feasibility_json(const FeasibilityReport& r) {
    return {{"feasible", r.feasible}, {"theta", nums(r.theta)}, {"margins", nums(r.margins)}};
}

// ---------------------------------------------------------------- context

struct Context {
    const RunConfig& cfg;
    std::filesystem::path out;
    TimeGrid grid;
    ParticleEnsemble ens;
    std::vector<std::string> files;

    PicardOptions picard() const {
        PicardOptions o;
        const auto& s = cfg.solver;
        o.tol = s.tol;
        o.max_iter = s.max_iter;
        o.damping = s.damping;
        o.alpha = s.alpha;
        o.basis_degree = s.basis_degree;
        o.ramp_steps = s.ramp_steps;
        o.workers = cfg.workers;
        return o;
    }

    StackelbergOptions outer() const {
        StackelbergOptions o;
        o.inner = picard();
        o.tol = cfg.solver.outer_tol;
        o.max_iter = cfg.solver.outer_max_iter;
        o.damping = cfg.solver.outer_damping;
        return o;
    }

    Terminal terminal() const {
        return cfg.solver.penalty ? Terminal::penalized(*cfg.solver.penalty) : Terminal::singular();
    }

    const json& need(const std::optional<json>& sec, const char* name) const {
        if (!sec) throw ConfigError(std::string("config: this subcommand needs section 'model.") + name + "'");
        return *sec;
    }

    CoefficientSet core() const { return parse_core(need(cfg.core, "core"), cfg.grid, ens); }
    FollowerModel follower() const { return parse_follower(need(cfg.follower, "follower"), cfg.grid, ens); }
    LeaderModel leader() const { return parse_leader(need(cfg.leader, "leader"), follower()); }

    void csv(const std::string& name, const CsvWriter& w) {
        w.write(out / name);
        files.push_back(name);
    }
    void json_file(const std::string& name, const json& j) {
        write_json(out / name, j);
        files.push_back(name);
    }
};

/// Refuses a model whose best assumption margin is negative. A zero margin
/// arises when the corresponding coupling is absent and is accepted.
inline void require_margins(const FeasibilityReport& r, const std::string& what) {
    const double lo = r.margins.empty() ? 0.0 : *std::min_element(r.margins.begin(), r.margins.end());
    if (lo < 0.0) throw Infeasible(what + ": assumption margins are negative for every theta tried");
}

// ---------------------------------------------------------------- subcommands

inline void run_riccati(Context& c) {
    const json& core = c.need(c.cfg.core, "core");
    const CoefficientSet cs = parse_core(core, c.cfg.grid, c.ens);
    RiccatiInput in{cs.lambda1, cs.lambda4, parse_drift(core), cs.T};
    const auto sol = solve_riccati(in, c.terminal(), c.grid);
    const auto rep = check_riccati_bounds(sol);
    CsvWriter w({"t", "A", "psi"});
    for (std::size_t k = 0; k < c.grid.size(); ++k) w.row({c.grid.t(k), sol.A(k), sol.psi[k]});
    c.csv("riccati.csv", w);
    c.json_file("riccati.json", {{"beta", num(rep.beta)},
                                 {"fitted_C", num(rep.fitted_C)},
                                 {"fitted_C_one", num(rep.fitted_C_one)},
                                 {"sandwich_applicable", rep.sandwich_applicable},
                                 {"sandwich_max_violation", num(rep.sandwich_max_violation)},
                                 {"C_theorem_applicable", rep.C_theorem_applicable},
                                 {"bounds_passed", rep.passed},
                                 {"terminal", c.terminal().is_singular() ? "singular" : "penalized"}});
}

inline void run_solve(Context& c) {
    const CoefficientSet cs = c.core();
    const auto feas = check_assumptions(cs);
    require_margins(feas, "solve");
    const auto b = solve_with_terminal(cs, c.terminal(), c.ens, c.picard());
    CsvWriter w({"t", "Q", "H", "R"});
    for (std::size_t k = 0; k < c.grid.size(); ++k)
        w.row({c.grid.t(k), node_mean(b.Q, k), node_mean(b.H, k), node_mean(b.R, k)});
    c.csv("solution.csv", w);
    json j{{"iterations", b.iterations},
           {"final_residual", num(b.residual_history.empty() ? 0.0 : b.residual_history.back())},
           {"alpha", num(b.alpha)},
           {"regression_fallbacks", b.regression_fallbacks},
           {"assumptions", feasibility_json(feas)}};
    if (b.penalized()) {
        std::vector<double> qt(b.Q.rows());
        for (std::size_t r = 0; r < qt.size(); ++r) qt[r] = std::abs(b.Q.value(r, c.grid.last()));
        j["terminal_Q_mean_abs"] = num(pairwise_mean(qt));
    } else {
        j["liquidation_residual"] = num(liquidation_residual(b, cs, c.ens));
    }
    c.json_file("solution.json", j);
}

inline void run_liquidate(Context& c) {
    const FollowerModel m = c.follower();
    const auto feas = check_follower_assumptions(m);
    require_margins(feas, "liquidate");
    const auto b = optimal_strategy(m, c.ens, c.picard(), c.terminal());
    CsvWriter w({"t", "xi", "X", "Y", "B"});
    for (std::size_t k = 0; k < c.grid.size(); ++k)
        w.row({c.grid.t(k), node_mean(b.xi, k), node_mean(b.X, k), node_mean(b.Y, k), node_mean(b.B, k)});
    c.csv("strategy.csv", w);
    json j{{"cost", num(b.cost)},
           {"cost_std_error", num(b.cost_std_error)},
           {"liquidation_residual", num(b.liquidation_residual)},
           {"iterations", b.bundle.iterations},
           {"assumptions", feasibility_json(feas)}};
    if (c.cfg.solver.trials > 0 && c.terminal().is_singular()) {
        const auto chk = verify_optimality(m, b, c.cfg.solver.trials, c.cfg.solver.delta,
                                           c.cfg.solver.perturbation_seed, c.ens);
        j["optimality"] = {{"trials", c.cfg.solver.trials},
                           {"delta", num(c.cfg.solver.delta)},
                           {"min_difference", num(chk.min_difference)},
                           {"std_error", num(chk.std_error)}};
    }
    c.json_file("strategy.json", j);
}

inline json game_json(const GameFeasibility& g) {
    return {{"feasible", g.feasible()},
            {"theta", nums(g.search.theta)},
            {"margins", nums(g.search.margins)},
            {"discount_C", num(g.discount_C)},
            {"discount_C_penalized", num(g.discount_C_penalized)},
            {"leader_discount_C", num(g.leader_discount_C)}};
}

inline void run_stackelberg(Context& c) {
    const LeaderModel m = c.leader();
    const auto feas = check_game_assumptions(m, c.grid);
    require_margins(feas.search, "stackelberg");
    const auto opts = c.outer();
    const auto sol = c.cfg.solver.penalty ? solve_leader_penalized(m, *c.cfg.solver.penalty, c.ens, opts)
                                          : solve_stackelberg(m, c.ens, opts);
    CsvWriter w({"t", "xi0", "X0", "xi", "X", "q", "r", "p_bar"});
    for (std::size_t k = 0; k < c.grid.size(); ++k)
        w.row({c.grid.t(k), node_mean(sol.xi0, k), node_mean(sol.X0, k), node_mean(sol.follower.xi, k),
               node_mean(sol.follower.X, k), node_mean(sol.q, k), node_mean(sol.r, k), node_mean(sol.p_bar, k)});
    c.csv("stackelberg.csv", w);
    json j{{"J0", num(sol.J0)},
           {"J0_std_error", num(sol.J0_std_error)},
           {"fixed_point_residual", num(sol.fixed_point_residual)},
           {"representation_residual", num(sol.representation_residual)},
           {"leader_liquidation_residual", num(sol.leader_liquidation_residual)},
           {"follower_liquidation_residual", num(sol.follower.liquidation_residual)},
           {"outer_iterations", sol.outer_iterations},
           {"residual_history", nums(sol.residual_history)},
           {"assumptions", game_json(feas)}};
    if (c.cfg.solver.penalty) j["penalty"] = num(*c.cfg.solver.penalty);
    if (c.cfg.solver.trials > 0) {
        const auto chk = verify_leader_optimality(m, sol, c.cfg.solver.trials, c.cfg.solver.delta,
                                                  c.cfg.solver.perturbation_seed, c.ens, opts.inner);
        j["optimality"] = {{"trials", c.cfg.solver.trials},
                           {"delta", num(c.cfg.solver.delta)},
                           {"min_difference", num(chk.min_difference)},
                           {"std_error", num(chk.std_error)}};
    }
    c.json_file("stackelberg.json", j);
}

inline void run_study_penalization(Context& c) {
    const CoefficientSet cs = c.core();
    require_margins(check_assumptions(cs), "study-penalization");
    StudyOptions o;
    o.picard = c.picard();
    o.nu = c.cfg.solver.nu;
    const auto rep = penalization_study(cs, c.cfg.solver.n_schedule, c.ens, o);
    CsvWriter w({"n", "distQ", "distH", "distR", "cesaroQ", "cesaroH", "cesaroR", "terminal_mean", "terminal_max",
                 "normQ", "normH", "normR", "riccati_gap", "bound_ratio", "iterations"});
    for (const auto& r : rep.rows)
        w.row({r.n, r.dist_Q, r.dist_H, r.dist_R, r.cesaro_Q, r.cesaro_H, r.cesaro_R, r.terminal_mean, r.terminal_max,
               r.norm_Q, r.norm_H, r.norm_R, r.riccati_gap, r.bound_ratio, double(r.iterations)});
    c.csv("penalization.csv", w);
    auto mono = [&](double ConvergenceRow::*f) { return rep.nonincreasing([f](const ConvergenceRow& r) { return r.*f; }); };
    c.json_file("penalization.json", {{"nu", num(rep.nu)},
                                      {"eps", num(rep.eps)},
                                      {"n_schedule", nums(rep.n_schedule)},
                                      {"input_norm", num(rep.input_norm)},
                                      {"fitted_C", num(rep.fitted_C)},
                                      {"C_spread", num(rep.C_spread)},
                                      {"monotone",
                                       {{"distQ", mono(&ConvergenceRow::dist_Q)},
                                        {"distH", mono(&ConvergenceRow::dist_H)},
                                        {"distR", mono(&ConvergenceRow::dist_R)},
                                        {"terminal_max", mono(&ConvergenceRow::terminal_max)},
                                        {"riccati_gap", mono(&ConvergenceRow::riccati_gap)}}}});
}

inline void run_study_value(Context& c) {
    const LeaderModel m = c.leader();
    require_margins(check_game_assumptions(m, c.grid).search, "study-value");
    const auto rep = value_convergence(m, c.cfg.solver.n_schedule, c.ens, c.outer());
    CsvWriter w({"n", "J0n", "cesaro", "J0n_at_constrained", "leader_terminal", "sandwich", "transfer"});
    for (const auto& r : rep.rows)
        w.row({r.n, r.J0n, r.cesaro, r.J0n_at_constrained, r.leader_terminal, r.sandwich ? 1.0 : 0.0,
               r.transfer ? 1.0 : 0.0});
    c.csv("value.csv", w);
    c.json_file("value.json", {{"J0", num(rep.J0)},
                               {"sandwich_holds", rep.sandwich_holds},
                               {"transfer_holds", rep.transfer_holds},
                               {"n_schedule", nums(c.cfg.solver.n_schedule)}});
}

inline void run_check(Context& c) {
    if (!c.cfg.core && !c.cfg.follower && !c.cfg.leader)
        throw ConfigError("config: check needs at least one of model.core, model.follower, model.leader");
    json j = json::object();
    bool all = true;
    if (c.cfg.core) {
        const auto r = check_assumptions(c.core());
        j["core"] = feasibility_json(r);
        all = all && r.feasible;
    }
    if (c.cfg.follower) {
        const auto r = check_follower_assumptions(c.follower());
        j["follower"] = feasibility_json(r);
        all = all && r.feasible;
    }
    if (c.cfg.leader) {
        const auto r = check_game_assumptions(c.leader(), c.grid);
        j["game"] = game_json(r);
        all = all && r.feasible();
    }
    j["feasible"] = all;
    c.json_file("check.json", j);
    if (!all) throw Infeasible("check: assumptions fail for at least one model section");
}

// ---------------------------------------------------------------- driver

inline json manifest(const std::string& sub, const RunConfig& cfg, const std::vector<std::string>& files,
                     double wall, int status) {
    return {{"subcommand", sub},
            {"config", cfg.raw},
            {"seed", cfg.ensemble.seed},
            {"workers", cfg.workers},
            {"outputs", files},
            {"exit_status", status},
            {"versions",
             {{"mfliq", version},
              {"compiler", __VERSION__},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                           "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
            {"wall_time", wall}};
}

inline int exit_code_of(const std::exception_ptr& e, json& err) {
    try {
        std::rethrow_exception(e);
    } catch (const ConfigError& x) {
        err = {{"kind", "config_error"}, {"message", x.what()}};
        return config_error;
    } catch (const InvalidArgument& x) {
        err = {{"kind", "invalid_argument"}, {"message", x.what()}};
        return config_error;
    } catch (const NonConvergence& x) {
        err = {{"kind", "non_convergence"}, {"message", x.what()}, {"residual_history", nums(x.residual_history())}};
        return non_convergence;
    } catch (const NumericalFailure& x) {
        err = {{"kind", "numerical_failure"}, {"message", x.what()}};
        return numerical_failure;
    } catch (const Infeasible& x) {
        err = {{"kind", "infeasible"}, {"message", x.what()}};
        return infeasible;
    } catch (const std::exception& x) {
        err = {{"kind", "error"}, {"message", x.what()}};
        return other_failure;
    }
}

/// Runs one subcommand, writing its outputs, a manifest, and error.json on failure.
inline int run(const std::string& sub, const RunConfig& cfg, const std::filesystem::path& out_dir) {
    static const std::map<std::string, std::function<void(Context&)>> table{
        {"riccati", run_riccati},
        {"solve", run_solve},
        {"liquidate", run_liquidate},
        {"stackelberg", run_stackelberg},
        {"study-penalization", run_study_penalization},
        {"study-value", run_study_value},
        {"check", run_check},
    };
    const auto t0 = std::chrono::steady_clock::now();
    std::filesystem::create_directories(out_dir);
    std::filesystem::remove(out_dir / "error.json");
    int status = ok;
    std::vector<std::string> files;
    try {
        auto it = table.find(sub);
        if (it == table.end()) throw ConfigError("unknown subcommand '" + sub + "'");
        Context c{cfg, out_dir, cfg.grid.build(), {}, {}};
        c.ens = simulate_ensemble(c.grid, cfg.ensemble.M_common, cfg.ensemble.M_idio, cfg.ensemble.seed);
        try {
            it->second(c);
        } catch (...) {
            files = c.files;
            throw;
        }
        files = c.files;
    } catch (...) {
        json err;
        status = exit_code_of(std::current_exception(), err);
        err["exit_code"] = status;
        err["subcommand"] = sub;
        write_json(out_dir / "error.json", err);
        files.push_back("error.json");
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(out_dir / "manifest.json", manifest(sub, cfg, files, wall, status));
    return status;
}

}  // namespace mfliq::cli
