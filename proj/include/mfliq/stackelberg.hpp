#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mfliq/liquidation.hpp"

namespace mfliq {

/// Leader of the liquidation game. Leader coefficients are deterministic
/// time functions; the follower is a mean-field population of FollowerModel
/// type whose g_tilde is set to kappatilde0 * xi0 by the game.
struct LeaderModel {
    TimeFunction eta0{1.0};
    TimeFunction kappa0{0.0};
    TimeFunction kappabar0{0.0};
    TimeFunction lambda0{0.0};
    TimeFunction lambdabar{0.0};
    TimeFunction kappatilde0{0.0};
    double x0 = 1.0;
    FollowerModel follower;

    double T() const { return follower.T; }

    void validate() const {
        follower.validate();
        const double T = follower.T;
        if (!(eta0.inf(T) > 0.0)) throw InvalidArgument("LeaderModel: eta0 must be bounded away from zero");
        for (const TimeFunction* f : {&kappa0, &kappabar0, &lambda0, &lambdabar, &kappatilde0})
            if (f->inf(T) < 0.0) throw InvalidArgument("LeaderModel: cost and impact coefficients must be nonnegative");
        for (const TimeFunction* f : {&eta0, &kappa0, &kappabar0, &lambda0, &lambdabar, &kappatilde0})
            if (!std::isfinite(f->sup(T))) throw InvalidArgument("LeaderModel: coefficients must be bounded");
        if (!std::isfinite(x0)) throw InvalidArgument("LeaderModel: x0 must be finite");
    }

    /// -dA = (2 lambda0 - A^2/(2 eta0) + kappa0 A/(2 eta0)) dt.
    RiccatiInput riccati_input() const {
        const TimeFunction inv = (2.0 * eta0).reciprocal();
        return {inv, 2.0 * lambda0, kappa0 * inv, T()};
    }
};

// ---------------------------------------------------------------- feasibility

/// The leader triple (eta0_* - |kappa0|/(2 theta), lambda0_* - |kappa0| theta/2 - |kappabar0| thetabar/2,
/// lambdabar_* - |kappabar0|/(2 thetabar)).
inline std::vector<double> leader_margins(const LeaderModel& m, double theta, double theta_bar) {
    const double T = m.T();
    const double k0 = m.kappa0.sup_abs(T), kb = m.kappabar0.sup_abs(T);
    return {m.eta0.inf(T) - k0 / (2.0 * theta),
            m.lambda0.inf(T) - k0 * theta / 2.0 - kb * theta_bar / 2.0,
            m.lambdabar.inf(T) - kb / (2.0 * theta_bar)};
}

struct GameFeasibility {
    FeasibilityReport search;   // theta = (theta', theta, thetabar); five margins, follower pair first
    double discount_C = 0.0;             // exponent-1 constant of the singular follower field
    double discount_C_penalized = 0.0;   // worst over the sampled penalty levels
    double leader_discount_C = 0.0;      // same constant for the leader field, for reference
    bool discount_bounded = false;

    bool feasible() const { return search.feasible && discount_bounded; }
};

/// Theta candidates ordered by distance from 1 on a log scale.
inline std::vector<double> theta_search_order(std::vector<double> v) {
    std::stable_sort(v.begin(), v.end(), [](double a, double b) { return std::abs(std::log(a)) < std::abs(std::log(b)); });
    return v;
}

inline GameFeasibility check_game_assumptions(const LeaderModel& m, const TimeGrid& grid,
                                              const std::vector<double>& thetas = default_theta_values(),
                                              const std::vector<double>& penalty_levels = {1.0, 10.0, 100.0}) {
    m.validate();
    GameFeasibility rep;
    const auto order = theta_search_order(thetas);
    double best = -std::numeric_limits<double>::infinity();
    for (double v : order)
        if (!(v > 0.0)) throw InvalidArgument("check_game_assumptions: theta must be positive");
    auto visit = [&](double tp, double th, double tb) {
        auto [f1, f2] = follower_margins(m.follower, tp);
        auto l = leader_margins(m, th, tb);
        std::vector<double> all{f1, f2, l[0], l[1], l[2]};
        const double lo = *std::min_element(all.begin(), all.end());
        if (lo > best) {
            best = lo;
            rep.search.theta = {tp, th, tb};
            rep.search.margins = all;
        }
        return lo > 0.0;
    };
    for (double tp : order) {
        for (double th : order) {
            for (double tb : order)
                if (visit(tp, th, tb)) {
                    rep.search.feasible = true;
                    break;
                }
            if (rep.search.feasible) break;
        }
        if (rep.search.feasible) break;
    }

    const CoefficientSet c = map_to_core(m.follower);
    auto sing = check_riccati_bounds(solve_riccati(c.riccati_input(), Terminal::singular(), grid));
    rep.discount_C = sing.fitted_C_one;
    for (double n : penalty_levels) {
        auto pen = check_riccati_bounds(solve_riccati(c.riccati_input(), Terminal::penalized(n), grid));
        rep.discount_C_penalized = std::max(rep.discount_C_penalized, pen.fitted_C_one);
    }
    rep.leader_discount_C = check_riccati_bounds(solve_riccati(m.riccati_input(), Terminal::singular(), grid)).fitted_C_one;
    rep.discount_bounded = std::isfinite(rep.discount_C) && std::isfinite(rep.discount_C_penalized);
    return rep;
}

// ---------------------------------------------------------------- building blocks

/// Follower best response to the leader control xi0: the single-player
/// problem with g_tilde = kappatilde0 * xi0.
inline StrategyBundle follower_response(const LeaderModel& m, const AdaptedField& xi0, const ParticleEnsemble& ens,
                                        const PicardOptions& opts = {},
                                        const Terminal& terminal = Terminal::singular()) {
    FollowerModel f = m.follower;
    f.g_tilde = m.kappatilde0.is_zero() ? Coefficient(0.0) : Coefficient(xi0) * m.kappatilde0;
    return optimal_strategy(f, ens, opts, terminal);
}

struct AdjointSolution {
    AdaptedField q, r, D;  // r = -A q + D
    SolutionBundle bundle;
};

/// Leader adjoints (q, r) through the core system with Q = -q, R = r and the
/// follower's coefficients, started from zero.
inline AdjointSolution solve_adjoint_qr(const LeaderModel& m, const AdaptedField& f_bar, const AdaptedField& g_bar,
                                        const ParticleEnsemble& ens, const PicardOptions& opts = {},
                                        const Terminal& terminal = Terminal::singular()) {
    FollowerModel f = m.follower;
    f.g_tilde = 0.0;
    CoefficientSet c = map_to_core(f);
    c.chi = 0.0;
    c.chi_particles.clear();
    c.f_bar = f_bar;
    c.g_bar = g_bar;
    AdjointSolution out;
    out.bundle = solve_with_terminal(c, terminal, ens, opts);
    out.q = -out.bundle.Q;
    out.r = out.bundle.R;
    out.D = out.bundle.H;
    return out;
}

namespace detail {

inline Measurability leader_tag(const ParticleEnsemble& ens) {
    return ens.M_common() > 1 ? Measurability::common : Measurability::deterministic;
}

/// f_bar = kappabar0 X0/(2 eta) + (lambdabar/eta) mu and
/// g_bar = -kappa/(2 eta) (kappabar0 X0 + 2 lambdabar mu), mu = E[xi*|F0].
inline std::pair<AdaptedField, AdaptedField> adjoint_inputs(const LeaderModel& m, const AdaptedField& X0,
                                                            const AdaptedField& mu, const ParticleEnsemble& ens) {
    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    const AdaptedField kappa = m.follower.kappa.on(g, s);
    const Measurability tf = max_tag(X0.tag(), mu.tag());
    AdaptedField fb = generate(tf, s, [&](std::size_t r, std::size_t k) {
        const double t = g.t(k), eta = m.follower.eta(t);
        return m.kappabar0(t) * X0.at(tf, r, k) / (2.0 * eta) + m.lambdabar(t) / eta * mu.at(tf, r, k);
    });
    const Measurability tg = max_tag(tf, kappa.tag());
    AdaptedField gb = generate(tg, s, [&](std::size_t r, std::size_t k) {
        const double t = g.t(k), eta = m.follower.eta(t);
        return -kappa.at(tg, r, k) / (2.0 * eta) *
               (m.kappabar0(t) * X0.at(tg, r, k) + 2.0 * m.lambdabar(t) * mu.at(tg, r, k));
    });
    return {std::move(fb), std::move(gb)};
}

/// E[kappatilde0 q | F0].
inline AdaptedField projected_kq(const LeaderModel& m, const AdaptedField& q, const ParticleEnsemble& ens,
                                 unsigned workers) {
    const auto& g = ens.grid();
    AdaptedField Pq = project_common(ens, q, workers);
    for (std::size_t r = 0; r < Pq.rows(); ++r)
        for (std::size_t k = 0; k < Pq.nodes(); ++k) Pq.ref(r, k) *= m.kappatilde0(g.t(k));
    return Pq;
}

/// X0 = x0 - int_0^t xi0 per row.
inline AdaptedField leader_inventory(const LeaderModel& m, const AdaptedField& xi0, const ParticleEnsemble& ens) {
    const Quadrature quad(ens.grid());
    AdaptedField X = xi0;
    std::vector<double> row(xi0.nodes());
    for (std::size_t r = 0; r < X.rows(); ++r) {
        for (std::size_t k = 0; k < row.size(); ++k) row[k] = xi0.value(r, k);
        auto cum = quad.cumulative(row);
        for (std::size_t k = 0; k < row.size(); ++k) X.ref(r, k) = m.x0 - cum[k];
    }
    return X;
}

/// Terminal weight of the penalized leader cost at level n. Pairs with the
/// leader Riccati terminal value 4n.
inline double leader_penalty_weight(double n) { return 2.0 * n; }

/// Per-row leader cost integrals, plus the terminal penalty when weight > 0.
inline CostRows leader_cost_rows(const LeaderModel& m, const AdaptedField& xi0, const AdaptedField& X0,
                                 const AdaptedField& mu, const ParticleEnsemble& ens, double weight) {
    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    const Measurability tag = max_tag(xi0.tag(), max_tag(X0.tag(), mu.tag()));
    const Quadrature quad(g);
    CostRows out{tag, std::vector<double>(rows_for(tag, s))};
    std::vector<double> f(s.nodes);
    for (std::size_t r = 0; r < out.per.size(); ++r) {
        for (std::size_t k = 0; k < s.nodes; ++k) {
            const double t = g.t(k), x = X0.at(tag, r, k), v = xi0.at(tag, r, k), u = mu.at(tag, r, k);
            f[k] = m.kappabar0(t) * u * x + m.kappa0(t) * x * v + m.eta0(t) * v * v + m.lambda0(t) * x * x +
                   m.lambdabar(t) * u * u;
        }
        const double xT = X0.at(tag, r, s.nodes - 1);
        out.per[r] = quad.integrate(f) + weight * xT * xT;
    }
    return out;
}

}  // namespace detail

/// p_bar_t = E[int_t^T exp(-int_t^s A_bar/(2 eta0)) (-A_bar E[kappatilde0 q|F0]/(2 eta0)
///           + kappa0 xi0 + kappabar0 E[xi*|F0])_s ds | F0_t], by one backward sweep.
inline AdaptedField solve_pbar(const LeaderModel& m, const RiccatiSolution& A_bar, const AdaptedField& q,
                               const AdaptedField& xi0, const AdaptedField& xi_star, const ParticleEnsemble& ens,
                               const PicardOptions& opts = {}) {
    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    const AdaptedField Pkq = detail::projected_kq(m, q, ens, opts.workers);
    const AdaptedField mu = project_common(ens, xi_star, opts.workers);
    const Measurability tag = max_tag(detail::leader_tag(ens), max_tag(Pkq.tag(), max_tag(mu.tag(), xi0.tag())));
    if (tag == Measurability::full) throw InvalidArgument("solve_pbar: leader control must be F0-adapted");
    const AdaptedField G = generate(tag, s, [&](std::size_t r, std::size_t k) {
        const double t = g.t(k);
        return -A_bar.input.lambda1(t) * Pkq.at(tag, r, k) +
               A_bar.psi[k] * (m.kappa0(t) * xi0.at(tag, r, k) + m.kappabar0(t) * mu.at(tag, r, k));
    });
    const Quadrature quad(g);
    detail::ConditionalOperator cond(ens, opts.basis_degree);
    return detail::backward_sweep(G, A_bar, quad, cond);
}

// ---------------------------------------------------------------- game solver

struct StackelbergOptions {
    PicardOptions inner;
    double tol = 1e-8;
    std::size_t max_iter = 200;
    double damping = 0.3;
    std::optional<AdaptedField> init;  // initial leader control; TWAP x0/T when empty
};

struct StackelbergSolution {
    AdaptedField xi0, X0, p_bar, p, q, r, D;
    StrategyBundle follower;
    RiccatiSolution A_bar;
    double J0 = 0.0;
    double J0_std_error = 0.0;
    double fixed_point_residual = 0.0;
    double representation_residual = 0.0;
    double leader_liquidation_residual = 0.0;  // |x0 - int xi0| / (1 + |x0|), by quadrature
    std::size_t outer_iterations = 0;
    std::vector<double> residual_history;
    std::optional<double> penalty;  // n for a penalized solve
};

namespace detail {

struct LeaderState {
    AdaptedField xi0, X0, u;  // u = A_bar X0
};

struct LeaderMapOut {
    LeaderState next;
    StrategyBundle follower;
    AdjointSolution adjoint;
    AdaptedField p_bar, Pkq;
};

struct LeaderMap {
    const LeaderModel& m;
    const ParticleEnsemble& ens;
    const RiccatiSolution& A_bar;
    const Quadrature& quad;
    Terminal inner_terminal;
    PicardOptions inner;

    LeaderMapOut operator()(const LeaderState& st, const LeaderMapOut* prev) const {
        const auto& g = ens.grid();
        const auto s = shape_of(ens);
        PicardOptions fo = inner, ao = inner;
        if (prev) {
            fo.warm_Q = prev->follower.bundle.Q;
            fo.warm_R = prev->follower.bundle.R;
            ao.warm_Q = prev->adjoint.bundle.Q;
            ao.warm_R = prev->adjoint.bundle.R;
        }
        LeaderMapOut out;
        out.follower = follower_response(m, st.xi0, ens, fo, inner_terminal);
        const AdaptedField mu = project_common(ens, out.follower.xi, inner.workers);
        auto [fb, gb] = adjoint_inputs(m, st.X0, mu, ens);
        out.adjoint = solve_adjoint_qr(m, fb, gb, ens, ao, inner_terminal);
        out.Pkq = projected_kq(m, out.adjoint.q, ens, inner.workers);
        out.p_bar = solve_pbar(m, A_bar, out.adjoint.q, st.xi0, out.follower.xi, ens, inner);

        const Measurability tag = max_tag(leader_tag(ens), max_tag(out.p_bar.tag(), out.Pkq.tag()));
        const AdaptedField S = generate(tag, s, [&](std::size_t r, std::size_t k) {
            return -A_bar.input.lambda1(g.t(k)) * (out.p_bar.at(tag, r, k) + out.Pkq.at(tag, r, k));
        });
        auto [X0, u] = forward_sweep(tag, s, std::vector<double>(rows_for(tag, s), m.x0), S, A_bar, quad,
                                     inner.workers);
        out.next.xi0 = representation(u, out.p_bar, out.Pkq, X0);
        out.next.X0 = std::move(X0);
        out.next.u = std::move(u);
        return out;
    }

    /// xi0 = (A_bar X0 + p_bar + E[kappatilde0 q|F0] - kappa0 X0) / (2 eta0), with A_bar X0 = u.
    AdaptedField representation(const AdaptedField& u, const AdaptedField& p_bar, const AdaptedField& Pkq,
                                const AdaptedField& X0) const {
        const auto& g = ens.grid();
        const Measurability tag = max_tag(max_tag(u.tag(), X0.tag()), max_tag(p_bar.tag(), Pkq.tag()));
        return generate(tag, u.shape(), [&](std::size_t r, std::size_t k) {
            const double t = g.t(k);
            return (u.at(tag, r, k) + p_bar.at(tag, r, k) + Pkq.at(tag, r, k) - m.kappa0(t) * X0.at(tag, r, k)) /
                   (2.0 * m.eta0(t));
        });
    }
};

inline StackelbergSolution solve_game(const LeaderModel& m, const ParticleEnsemble& ens,
                                      const StackelbergOptions& opts, std::optional<double> n) {
    m.validate();
    if (std::abs(ens.grid().horizon() - m.T()) > 1e-12 * m.T())
        throw InvalidArgument("solve_stackelberg: ensemble horizon differs from T");
    if (!(opts.damping > 0.0 && opts.damping <= 1.0))
        throw InvalidArgument("solve_stackelberg: damping must lie in (0,1]");
    if (!(opts.tol > 0.0)) throw InvalidArgument("solve_stackelberg: tol must be positive");
    if (n && !(*n > 0.0)) throw InvalidArgument("solve_leader_penalized: n must be positive");

    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    const Quadrature quad(g);
    const Terminal inner_terminal = n ? Terminal::penalized(*n) : Terminal::singular();
    const Terminal leader_terminal = n ? Terminal::with_value(*n, 2.0 * leader_penalty_weight(*n)) : Terminal::singular();

    StackelbergSolution out;
    out.penalty = n;
    out.A_bar = solve_riccati(m.riccati_input(), leader_terminal, g, opts.inner.riccati);
    LeaderMap F{m, ens, out.A_bar, quad, inner_terminal, opts.inner};

    const Measurability lt = leader_tag(ens);
    LeaderState st;
    if (opts.init) {
        if (!(opts.init->shape() == s)) throw ShapeMismatch("solve_stackelberg: init not on ensemble shape");
        if (opts.init->tag() == Measurability::full)
            throw InvalidArgument("solve_stackelberg: leader control must be F0-adapted");
        st.xi0 = opts.init->as(max_tag(lt, opts.init->tag()));
    } else {
        st.xi0 = AdaptedField(lt, s, m.x0 / m.T());
    }
    st.X0 = leader_inventory(m, st.xi0, ens);
    st.u = AdaptedField(st.xi0.tag(), s);

    std::optional<LeaderMapOut> last;
    bool done = false;
    while (out.outer_iterations < opts.max_iter) {
        LeaderMapOut next = F(st, last ? &*last : nullptr);
        detail::require_finite(next.next.xi0, "leader control");
        const double res = l2_norm(next.next.xi0 - st.xi0, quad);
        out.residual_history.push_back(res);
        ++out.outer_iterations;
        const double w = out.outer_iterations == 1 ? 1.0 : opts.damping;
        st.xi0 = mix(w, next.next.xi0, st.xi0);
        st.X0 = mix(w, next.next.X0, st.X0);
        st.u = mix(w, next.next.u, st.u);
        last = std::move(next);
        if (res < opts.tol) {
            done = true;
            break;
        }
    }
    if (!done)
        throw NonConvergence("solve_stackelberg: outer iteration did not reach tol within max_iter",
                             out.residual_history);

    // One more map evaluation at the returned state, so that every reported
    // quantity belongs to the same leader control.
    LeaderMapOut fin = F(st, &*last);
    out.fixed_point_residual = l2_norm(fin.next.xi0 - st.xi0, quad);
    const AdaptedField rep = F.representation(st.u, fin.p_bar, fin.Pkq, st.X0);
    out.representation_residual = (rep - st.xi0).sup_abs();

    out.xi0 = st.xi0;
    out.X0 = st.X0;
    out.p_bar = fin.p_bar;
    out.p = st.u + fin.p_bar;
    out.q = fin.adjoint.q;
    out.r = fin.adjoint.r;
    out.D = fin.adjoint.D;
    out.follower = std::move(fin.follower);

    std::vector<double> row(s.nodes);
    for (std::size_t r = 0; r < out.xi0.rows(); ++r) {
        for (std::size_t k = 0; k < s.nodes; ++k) row[k] = out.xi0.value(r, k);
        out.leader_liquidation_residual =
            std::max(out.leader_liquidation_residual, std::abs(m.x0 - quad.integrate(row)) / (1.0 + std::abs(m.x0)));
    }

    const AdaptedField mu = project_common(ens, out.follower.xi, opts.inner.workers);
    auto c = leader_cost_rows(m, out.xi0, out.X0, mu, ens, n ? leader_penalty_weight(*n) : 0.0);
    const Estimate e = estimate(c.per, c.tag, s);
    out.J0 = e.mean;
    out.J0_std_error = e.std_error;
    return out;
}

}  // namespace detail

/// Damped fixed point on the leader control, closing the loop through the
/// representation xi0 = (p + E[kappatilde0 q|F0] - kappa0 X0)/(2 eta0) with p = A_bar X0 + p_bar.
inline StackelbergSolution solve_stackelberg(const LeaderModel& m, const ParticleEnsemble& ens,
                                             const StackelbergOptions& opts = {}) {
    return detail::solve_game(m, ens, opts, std::nullopt);
}

/// Same loop for the penalized game at level n: follower and adjoint with
/// terminal slope 2n, leader cost with 2n (X0_T)^2, so A_bar_T = 4n.
inline StackelbergSolution solve_leader_penalized(const LeaderModel& m, double n, const ParticleEnsemble& ens,
                                                  const StackelbergOptions& opts = {}) {
    return detail::solve_game(m, ens, opts, n);
}

/// Leader cost of an arbitrary F0-adapted control, with the follower's best
/// response. Constrained mode rejects controls with |x0 - int xi0| > tol (1 + |x0|).
inline Estimate leader_cost(const LeaderModel& m, const AdaptedField& xi0, const ParticleEnsemble& ens,
                            std::optional<double> n = std::nullopt, const PicardOptions& opts = {},
                            double tol = 1e-6) {
    m.validate();
    if (!(xi0.shape() == shape_of(ens))) throw ShapeMismatch("leader_cost: control not on ensemble shape");
    if (xi0.tag() == Measurability::full) throw InvalidArgument("leader_cost: leader control must be F0-adapted");
    const AdaptedField X0 = detail::leader_inventory(m, xi0, ens);
    if (!n) {
        double worst = 0.0;
        for (std::size_t r = 0; r < X0.rows(); ++r) worst = std::max(worst, std::abs(X0.value(r, X0.nodes() - 1)));
        if (worst > tol * (1.0 + std::abs(m.x0)))
            throw InvalidArgument("leader_cost: control violates the liquidation constraint, residual " +
                                  std::to_string(worst));
    }
    const auto fr = follower_response(m, xi0, ens, opts, n ? Terminal::penalized(*n) : Terminal::singular());
    const AdaptedField mu = project_common(ens, fr.xi, opts.workers);
    auto c = detail::leader_cost_rows(m, xi0, X0, mu, ens, n ? detail::leader_penalty_weight(*n) : 0.0);
    return estimate(c.per, c.tag, shape_of(ens));
}

/// J0(xi0* + delta phi) - J0(xi0*) over `trials` zero-integral F0-adapted perturbations.
inline OptimalityCheck verify_leader_optimality(const LeaderModel& m, const StackelbergSolution& sol,
                                                std::size_t trials, double delta, std::uint64_t seed,
                                                const ParticleEnsemble& ens, const PicardOptions& opts = {}) {
    PerturbationFamily fam(ens, seed);
    const auto s = shape_of(ens);
    const std::optional<double> n = sol.penalty;
    const Terminal term = n ? Terminal::penalized(*n) : Terminal::singular();
    const double weight = n ? detail::leader_penalty_weight(*n) : 0.0;

    auto rows = [&](const AdaptedField& xi0, const StrategyBundle* warm, Measurability at_least) {
        PicardOptions o = opts;
        if (warm) {
            o.warm_Q = warm->bundle.Q;
            o.warm_R = warm->bundle.R;
        }
        const auto fr = follower_response(m, xi0, ens, o, term);
        const AdaptedField mu = project_common(ens, fr.xi, opts.workers);
        const AdaptedField X0 = detail::leader_inventory(m, xi0, ens);
        return detail::leader_cost_rows(m, xi0.as(max_tag(xi0.tag(), at_least)), X0, mu, ens, weight);
    };

    OptimalityCheck out;
    out.min_difference = trials ? std::numeric_limits<double>::infinity() : 0.0;
    for (std::size_t j = 0; j < trials; ++j) {
        const AdaptedField phi = fam.draw();
        const Measurability tag = max_tag(sol.xi0.tag(), phi.tag());
        const AdaptedField xi = generate(tag, s, [&](std::size_t r, std::size_t k) {
            return sol.xi0.at(tag, r, k) + delta * phi.at(tag, r, k);
        });
        auto c1 = rows(xi, &sol.follower, tag);
        auto c0 = rows(sol.xi0, &sol.follower, c1.tag);
        if (c0.tag != c1.tag) c1 = rows(xi, &sol.follower, c0.tag);
        std::vector<double> per(c1.per.size());
        for (std::size_t r = 0; r < per.size(); ++r) per[r] = c1.per[r] - c0.per[r];
        const Estimate e = estimate(per, c1.tag, s);
        out.differences.push_back(e.mean);
        if (e.mean < out.min_difference) {
            out.min_difference = e.mean;
            out.std_error = e.std_error;
        }
    }
    return out;
}

// ---------------------------------------------------------------- value convergence

struct ValueRow {
    double n = 0.0;
    double J0n = 0.0;              // J^{0,n}(xi^{0,n,*})
    double cesaro = 0.0;           // running mean of J0n
    double J0n_at_constrained = 0.0;  // J^{0,n}(xi^{0,*})
    double leader_terminal = 0.0;  // |X^{0,n}_T|, mean over rows
    std::size_t outer_iterations = 0;
    bool sandwich = false;         // J0n <= J0 + tol
    bool transfer = false;         // J0n <= J0n_at_constrained + tol
};

struct ValueReport {
    double J0 = 0.0;
    std::vector<ValueRow> rows;
    bool sandwich_holds = true;
    bool transfer_holds = true;
};

inline ValueReport value_convergence(const LeaderModel& m, const std::vector<double>& n_schedule,
                                     const ParticleEnsemble& ens, const StackelbergOptions& opts = {},
                                     double tol = 1e-8) {
    if (n_schedule.empty()) throw InvalidArgument("value_convergence: empty schedule");
    for (std::size_t j = 0; j < n_schedule.size(); ++j)
        if (!(n_schedule[j] > 0.0) || (j && !(n_schedule[j] > n_schedule[j - 1])))
            throw InvalidArgument("value_convergence: schedule must be positive and strictly increasing");
    ValueReport rep;
    const StackelbergSolution star = solve_stackelberg(m, ens, opts);
    rep.J0 = star.J0;
    double sum = 0.0;
    for (double n : n_schedule) {
        ValueRow row;
        row.n = n;
        StackelbergSolution pen;
        try {
            pen = solve_leader_penalized(m, n, ens, opts);
        } catch (const NonConvergence& e) {
            throw NonConvergence(std::string(e.what()) + " (n = " + std::to_string(n) + ")", e.residual_history());
        }
        row.J0n = pen.J0;
        row.outer_iterations = pen.outer_iterations;
        sum += pen.J0;
        row.cesaro = sum / double(rep.rows.size() + 1);
        row.J0n_at_constrained = leader_cost(m, star.xi0, ens, n, opts.inner).mean;
        std::vector<double> xt(pen.X0.rows());
        for (std::size_t r = 0; r < xt.size(); ++r) xt[r] = std::abs(pen.X0.value(r, pen.X0.nodes() - 1));
        row.leader_terminal = pairwise_mean(xt);
        row.sandwich = row.J0n <= rep.J0 + tol;
        row.transfer = row.J0n <= row.J0n_at_constrained + tol;
        rep.sandwich_holds = rep.sandwich_holds && row.sandwich;
        rep.transfer_holds = rep.transfer_holds && row.transfer;
        rep.rows.push_back(row);
    }
    return rep;
}

}  // namespace mfliq
