#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mfliq/coefficient.hpp"
#include "mfliq/conditional.hpp"
#include "mfliq/ensemble.hpp"
#include "mfliq/errors.hpp"
#include "mfliq/field.hpp"
#include "mfliq/parallel.hpp"
#include "mfliq/quadrature.hpp"
#include "mfliq/riccati.hpp"

namespace mfliq {

/// Data of the linear conditional McKean-Vlasov system
///   dQ  = (-L1 R - L2 E[gamma Q|F0] + fbar) dt,
///  -dR  = (L4 Q + L3 E[zeta R|F0] + L5 E[rho Q|F0] + gbar) dt - Z dW,
///   Q_0 = chi, Q_T = 0.
struct CoefficientSet {
    double T = 1.0;
    TimeFunction lambda1{1.0};
    TimeFunction lambda4{0.0};
    Coefficient lambda2, lambda3, lambda5;
    Coefficient gamma, zeta, rho;
    double chi = 0.0;
    std::vector<double> chi_particles;  // optional, one value per particle
    Coefficient f_bar, g_bar;

    void validate() const {
        RiccatiInput{lambda1, lambda4, 0.0, T}.validate();
        if (!std::isfinite(chi)) throw InvalidArgument("CoefficientSet: chi must be finite");
        for (double x : chi_particles)
            if (!std::isfinite(x)) throw InvalidArgument("CoefficientSet: chi must be square integrable");
        for (const Coefficient* c : {&lambda2, &lambda3, &lambda5, &gamma, &zeta, &rho, &f_bar, &g_bar})
            if (!std::isfinite(c->sup_abs(T))) throw InvalidArgument("CoefficientSet: coefficients must be bounded");
    }

    RiccatiInput riccati_input() const { return {lambda1, lambda4, 0.0, T}; }
};

struct PicardOptions {
    double tol = 1e-10;
    std::size_t max_iter = 500;
    double damping = 0.5;
    double alpha = -1.0;  // negative: beta/2
    std::size_t basis_degree = 3;
    std::size_t ramp_steps = 0;
    unsigned workers = 1;
    bool random_init = false;
    std::uint64_t init_seed = 0;
    double init_scale = 1.0;
    std::optional<AdaptedField> warm_Q, warm_R;
    RiccatiOptions riccati;
};

struct SolutionBundle {
    AdaptedField Q, H, R;
    RiccatiSolution riccati;
    std::size_t iterations = 0;
    std::vector<double> residual_history;
    double alpha = 0.0;
    std::size_t regression_fallbacks = 0;

    bool penalized() const { return !riccati.terminal.is_singular(); }
};

// ---------------------------------------------------------------- norms

/// sqrt of the particle mean of sup_k |X_k|^2 / (T - t_k + shift)^(2 alpha).
/// The terminal node is skipped when shift is zero.
inline double weighted_norm(const AdaptedField& x, double alpha, const TimeGrid& g, double shift = 0.0) {
    if (alpha < 0.0) throw InvalidArgument("weighted_norm: alpha must be nonnegative");
    if (x.nodes() != g.size()) throw ShapeMismatch("weighted_norm: grid/field mismatch");
    const double T = g.horizon();
    const std::size_t kend = shift > 0.0 ? g.size() : g.last();
    std::vector<double> sup(x.rows(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t k = 0; k < kend; ++k) {
            const double w = alpha == 0.0 ? 1.0 : std::pow(T - g.t(k) + shift, alpha);
            const double v = x.value(r, k) / w;
            sup[r] = std::max(sup[r], v * v);
        }
    return std::sqrt(pairwise_mean(sup));
}

/// sqrt of the particle mean of int_0^T |X|^2 dt.
inline double l2_norm(const AdaptedField& x, const Quadrature& q) {
    std::vector<double> per(x.rows()), sq(x.nodes());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t k = 0; k < x.nodes(); ++k) sq[k] = x.value(r, k) * x.value(r, k);
        per[r] = q.integrate(sq);
    }
    return std::sqrt(std::max(0.0, pairwise_mean(per)));
}

/// sqrt of the particle mean of sup over nodes k <= kmax of |X_k|^2.
inline double sup_norm(const AdaptedField& x, std::size_t kmax) {
    std::vector<double> per(x.rows(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t k = 0; k <= kmax && k < x.nodes(); ++k)
            per[r] = std::max(per[r], x.value(r, k) * x.value(r, k));
    return std::sqrt(pairwise_mean(per));
}

/// Index of the last node with t <= T - eps.
inline std::size_t last_node_before(const TimeGrid& g, double eps) {
    const double cut = g.horizon() - eps * (1.0 - 1e-12);
    std::size_t k = g.last();
    while (k > 0 && g.t(k) > cut) --k;
    return k;
}

// ---------------------------------------------------------------- sweeps

namespace detail {

/// Conditional expectation given F_{t_k} of one value per row.
class ConditionalOperator {
public:
    ConditionalOperator(const ParticleEnsemble& ens, std::size_t degree)
        : common_(ens, degree), full_(ens, degree) {}

    void apply(Measurability tag, std::size_t k, std::vector<double>& y) {
        if (tag == Measurability::common && y.size() > 1) y = common_.apply(k, y);
        else if (tag == Measurability::full && y.size() > 1) y = full_.apply(k, y);
    }
    std::size_t fallbacks() const { return common_.fallback_count() + full_.fallback_count(); }

private:
    CommonRegressor common_;
    FullRegressor full_;
};

/// V = psi * H solves V' = (Lambda4 psi + drift) V - G, V_T = 0, where
/// G = psi * (driver of H). Each cell integral uses the cubic stencil of the
/// grid quadrature; future terms are projected on F_{t_k}, past ones are not.
/// Returns H, with the terminal value G_T / Lambda1_T in the singular case.
inline AdaptedField backward_sweep(const AdaptedField& G, const RiccatiSolution& sol, const Quadrature& quad,
                                   ConditionalOperator& cond) {
    const auto& g = sol.grid;
    const std::size_t K = g.last();
    const Measurability tag = G.tag();
    const std::size_t rows = G.rows();
    AdaptedField H(tag, G.shape());
    std::vector<double> V(rows, 0.0), y(rows);
    for (std::size_t r = 0; r < rows; ++r)
        H.ref(r, K) = sol.terminal.is_singular() ? G.value(r, K) / sol.input.lambda1(g.t(K)) : 0.0;
    for (std::size_t k = K; k-- > 0;) {
        const double e = std::exp(-(sol.L(k) - sol.L(k + 1)));
        const auto& terms = quad.cell_terms(k);
        for (std::size_t r = 0; r < rows; ++r) {
            double v = e * V[r];
            for (const auto& [j, w] : terms)
                if (j > k) v += w * std::exp(-(sol.L(k) - sol.L(j))) * G.value(r, j);
            y[r] = v;
        }
        cond.apply(tag, k, y);
        for (std::size_t r = 0; r < rows; ++r) {
            double v = y[r];
            for (const auto& [j, w] : terms)
                if (j <= k) v += w * std::exp(-(sol.L(k) - sol.L(j))) * G.value(r, j);
            V[r] = v;
            H.ref(r, k) = v / sol.psi[k];
        }
    }
    return H;
}

/// u = X / psi for dX = (-(Lambda1 A - drift) X + S) dt, X_0 = x0. u solves
/// u' = -Lambda4 psi u + S / psi, integrated cell by cell with the cubic
/// stencil of the grid quadrature. In the singular case S / psi at T is
/// extrapolated linearly and X_T = 0. Returns (X, u) at tag `tag`.
inline std::pair<AdaptedField, AdaptedField> forward_sweep(Measurability tag, FieldShape shape,
                                                           const std::vector<double>& x0_rows,
                                                           const AdaptedField& S, const RiccatiSolution& sol,
                                                           const Quadrature& quad, unsigned workers) {
    const auto& g = sol.grid;
    const std::size_t K = g.last();
    const bool singular = sol.terminal.is_singular();
    AdaptedField X(tag, shape), u(tag, shape);
    const std::size_t rows = X.rows();
    std::vector<double> e(K);
    for (std::size_t k = 0; k < K; ++k) e[k] = std::exp(-(sol.Lpsi[k] - sol.Lpsi[k + 1]));
    const double ext = K >= 2 ? (g.t(K) - g.t(K - 1)) / (g.t(K - 1) - g.t(K - 2)) : 0.0;
    parallel_for(rows, workers, [&](std::size_t b, std::size_t end) {
        std::vector<double> f(K + 1);
        for (std::size_t row = b; row < end; ++row) {
            for (std::size_t k = 0; k <= K; ++k)
                if (!singular || k < K) f[k] = S.at(tag, row, k) / sol.psi[k];
            if (singular) f[K] = K >= 2 ? f[K - 1] + ext * (f[K - 1] - f[K - 2]) : f[K - 1];
            double uk = x0_rows[row] / sol.psi[0];
            u.ref(row, 0) = uk;
            X.ref(row, 0) = x0_rows[row];
            for (std::size_t k = 0; k < K; ++k) {
                double v = e[k] * uk;
                for (const auto& [j, w] : quad.cell_terms(k))
                    v += w * std::exp(-(sol.Lpsi[j] - sol.Lpsi[k + 1])) * f[j];
                uk = v;
                u.ref(row, k + 1) = uk;
                X.ref(row, k + 1) = sol.psi[k + 1] * uk;
            }
            if (singular) X.ref(row, K) = 0.0;
        }
    });
    return {std::move(X), std::move(u)};
}

struct Materialized {
    AdaptedField l1, l2, l3, l5, gamma, zeta, rho, fbar, gbar;
    std::vector<double> chi;  // per row of tag
    Measurability tag = Measurability::deterministic;
    bool coupled = false;
};

inline Materialized materialize(const CoefficientSet& c, const ParticleEnsemble& ens) {
    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    Materialized m;
    m.l1 = AdaptedField::from_function(g, s, c.lambda1);
    m.l2 = c.lambda2.on(g, s);
    m.l3 = c.lambda3.on(g, s);
    m.l5 = c.lambda5.on(g, s);
    m.gamma = c.gamma.on(g, s);
    m.zeta = c.zeta.on(g, s);
    m.rho = c.rho.on(g, s);
    m.fbar = c.f_bar.on(g, s);
    m.gbar = c.g_bar.on(g, s);
    Measurability t = Measurability::deterministic;
    for (const AdaptedField* f : {&m.l2, &m.l3, &m.l5, &m.gamma, &m.zeta, &m.rho, &m.fbar, &m.gbar})
        t = max_tag(t, f->tag());
    if (!c.chi_particles.empty()) {
        if (c.chi_particles.size() != ens.particles())
            throw ShapeMismatch("CoefficientSet: chi_particles must have one value per particle");
        t = Measurability::full;
    }
    m.tag = t;
    m.chi.assign(rows_for(t, s), c.chi);
    if (!c.chi_particles.empty()) m.chi = c.chi_particles;
    m.coupled = !(m.l2.is_zero() || m.gamma.is_zero()) || !(m.l3.is_zero() || m.zeta.is_zero()) ||
                !(m.l5.is_zero() || m.rho.is_zero());
    return m;
}

}  // namespace detail

// ---------------------------------------------------------------- solver

namespace detail {

/// One Picard map (Q, R) -> (Q', H', R') with the coupling terms scaled by `ramp`.
struct PicardMap {
    const Materialized& m;
    const ParticleEnsemble& ens;
    const RiccatiSolution& sol;
    const Quadrature& quad;
    ConditionalOperator& cond;
    unsigned workers;
    double ramp = 1.0;

    struct Out { AdaptedField Q, H, R; };

    Out operator()(const AdaptedField& Q, const AdaptedField& R) const {
        const auto s = shape_of(ens);
        const AdaptedField EgQ = project_common(ens, m.gamma * Q, workers);
        const AdaptedField EzR = project_common(ens, m.zeta * R, workers);
        const AdaptedField ErQ = project_common(ens, m.rho * Q, workers);
        Measurability tg = Measurability::deterministic;
        for (const AdaptedField* f : {&m.l2, &m.l3, &m.l5, &m.fbar, &m.gbar, &EgQ, &EzR, &ErQ})
            tg = max_tag(tg, f->tag());
        const AdaptedField G = generate(tg, s, [&](std::size_t r, std::size_t k) {
            const double drift = -ramp * m.l2.at(tg, r, k) * EgQ.at(tg, r, k) + m.fbar.at(tg, r, k);
            const double back = ramp * m.l3.at(tg, r, k) * EzR.at(tg, r, k) +
                                ramp * m.l5.at(tg, r, k) * ErQ.at(tg, r, k) + m.gbar.at(tg, r, k);
            return drift + sol.psi[k] * back;
        });
        AdaptedField H = backward_sweep(G, sol, quad, cond);
        Measurability ts = max_tag(H.tag(), tg);
        const AdaptedField S = generate(ts, s, [&](std::size_t r, std::size_t k) {
            return -m.l1.value(0, k) * H.at(ts, r, k) - ramp * m.l2.at(ts, r, k) * EgQ.at(ts, r, k) +
                   m.fbar.at(ts, r, k);
        });
        auto [Qn, u] = forward_sweep(m.tag, s, m.chi, S, sol, quad, workers);
        AdaptedField Rn = u + H;
        return {std::move(Qn), H.as(m.tag), Rn.as(m.tag)};
    }
};

inline void require_finite(const AdaptedField& f, const char* what) {
    if (!f.finite()) throw NumericalFailure(std::string("solver: non-finite values in ") + what);
}

inline SolutionBundle solve_system(const CoefficientSet& coeffs, const ParticleEnsemble& ens,
                                   const PicardOptions& opts, const Terminal& terminal) {
    coeffs.validate();
    if (std::abs(ens.grid().horizon() - coeffs.T) > 1e-12 * coeffs.T)
        throw InvalidArgument("solver: ensemble horizon differs from T");
    if (!(opts.damping > 0.0 && opts.damping <= 1.0)) throw InvalidArgument("solver: damping must lie in (0,1]");
    if (!(opts.tol > 0.0)) throw InvalidArgument("solver: tol must be positive");

    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    SolutionBundle out;
    out.riccati = solve_riccati(coeffs.riccati_input(), terminal, g, opts.riccati);
    out.alpha = opts.alpha >= 0.0 ? opts.alpha : 0.5 * out.riccati.beta;
    const Materialized m = materialize(coeffs, ens);
    const Quadrature quad(g);
    ConditionalOperator cond(ens, opts.basis_degree);
    const double shift = terminal.shift();

    AdaptedField Q(m.tag, s), R(m.tag, s), H(m.tag, s);
    if (opts.warm_Q && opts.warm_R) {
        Q = opts.warm_Q->as(m.tag);
        R = opts.warm_R->as(m.tag);
    } else if (opts.random_init) {
        std::mt19937_64 gen(opts.init_seed);
        std::normal_distribution<double> z;
        for (auto& x : Q.data()) x = opts.init_scale * z(gen);
        for (auto& x : R.data()) x = opts.init_scale * z(gen);
    }

    auto residual = [&](const AdaptedField& Qa, const AdaptedField& Qb, const AdaptedField& Ra,
                        const AdaptedField& Rb) {
        return weighted_norm(Qa - Qb, out.alpha, g, shift) + l2_norm(Ra - Rb, quad);
    };

    if (!m.coupled) {
        PicardMap F{m, ens, out.riccati, quad, cond, opts.workers, 1.0};
        auto next = F(Q, R);
        require_finite(next.Q, "Q");
        require_finite(next.R, "R");
        out.residual_history.push_back(residual(next.Q, Q, next.R, R));
        out.iterations = 1;
        out.Q = std::move(next.Q);
        out.H = std::move(next.H);
        out.R = std::move(next.R);
        out.regression_fallbacks = cond.fallbacks();
        return out;
    }

    const std::size_t stages = std::max<std::size_t>(1, opts.ramp_steps);
    const double w = opts.damping;
    for (std::size_t st = 1; st <= stages; ++st) {
        PicardMap F{m, ens, out.riccati, quad, cond, opts.workers, double(st) / double(stages)};
        bool done = false;
        while (out.iterations < opts.max_iter) {
            auto next = F(Q, R);
            require_finite(next.Q, "Q");
            require_finite(next.R, "R");
            const double res = residual(next.Q, Q, next.R, R);
            out.residual_history.push_back(res);
            ++out.iterations;
            const bool first = out.iterations == 1 && !opts.warm_Q && !opts.random_init;
            const double ww = first ? 1.0 : w;
            Q = mix(ww, next.Q, Q);
            R = mix(ww, next.R, R);
            H = out.iterations == 1 ? next.H : mix(ww, next.H, H);
            if (res < opts.tol) {
                done = true;
                break;
            }
        }
        if (!done)
            throw NonConvergence("solver: Picard iteration did not reach tol within max_iter", out.residual_history);
    }
    out.Q = std::move(Q);
    out.H = std::move(H);
    out.R = std::move(R);
    out.regression_fallbacks = cond.fallbacks();
    return out;
}

}  // namespace detail

/// Constrained system: singular Riccati field, Q_T = 0.
inline SolutionBundle solve_constrained(const CoefficientSet& coeffs, const ParticleEnsemble& ens,
                                        const PicardOptions& opts = {}) {
    return detail::solve_system(coeffs, ens, opts, Terminal::singular());
}

/// Penalized system: A^n_T = 2n, H^n_T = 0, R^n_T = 2n Q^n_T.
inline SolutionBundle solve_penalized(const CoefficientSet& coeffs, double n, const ParticleEnsemble& ens,
                                      const PicardOptions& opts = {}) {
    return detail::solve_system(coeffs, ens, opts, Terminal::penalized(n));
}

/// Solve with an arbitrary terminal condition.
inline SolutionBundle solve_with_terminal(const CoefficientSet& coeffs, const Terminal& terminal,
                                          const ParticleEnsemble& ens, const PicardOptions& opts = {}) {
    return detail::solve_system(coeffs, ens, opts, terminal);
}

/// max over particles of |Q_0 + int_0^T dQ| / (1 + |Q_0|), the drift of Q
/// integrated by the grid quadrature. Measures the terminal constraint
/// without dividing by psi at T.
inline double liquidation_residual(const SolutionBundle& sol, const CoefficientSet& coeffs,
                                   const ParticleEnsemble& ens) {
    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    const auto m = detail::materialize(coeffs, ens);
    const Quadrature quad(g);
    const AdaptedField EgQ = project_common(ens, m.gamma * sol.Q);
    const Measurability tag = max_tag(sol.Q.tag(), max_tag(EgQ.tag(), max_tag(m.l2.tag(), m.fbar.tag())));
    double worst = 0.0;
    std::vector<double> rate(g.size());
    for (std::size_t r = 0; r < rows_for(tag, s); ++r) {
        for (std::size_t k = 0; k < g.size(); ++k)
            rate[k] = -m.l1.value(0, k) * sol.R.at(tag, r, k) - m.l2.at(tag, r, k) * EgQ.at(tag, r, k) +
                      m.fbar.at(tag, r, k);
        const double x0 = sol.Q.at(tag, r, 0);
        worst = std::max(worst, std::abs(x0 + quad.integrate(rate)) / (1.0 + std::abs(x0)));
    }
    return worst;
}

// ---------------------------------------------------------------- feasibility

struct FeasibilityReport {
    bool feasible = false;
    std::vector<double> theta;    // first feasible tuple, or the best one
    std::vector<double> margins;  // achieved margins at theta
};

/// Both margins of the feasibility condition at (theta1, theta2). Pointwise in
/// time for pure time functions; otherwise from sup/inf bounds.
inline std::pair<double, double> assumption_margins(const CoefficientSet& c, double th1, double th2) {
    const double T = c.T;
    const double ng = c.gamma.sup_abs(T), n3 = c.lambda3.sup_abs(T), n5 = c.lambda5.sup_abs(T),
                 nr = c.rho.sup_abs(T);
    const bool pure = !c.lambda2.has_field() && !c.zeta.has_field();
    if (pure) {
        double m1 = std::numeric_limits<double>::infinity(), m2 = m1;
        const int n = 2000;
        for (int j = 0; j <= n; ++j) {
            const double t = T * j / n;
            const double l2 = c.lambda2.factor()(t), z = c.zeta.factor()(t);
            m1 = std::min(m1, c.lambda1(t) - ng * l2 * l2 / (2 * th1) - n3 * z * z / (2 * th2));
            m2 = std::min(m2, c.lambda4(t) - ng * th1 / 2 - n3 * th2 / 2 - n5 * nr);
        }
        return {m1, m2};
    }
    const double l2 = c.lambda2.sup_abs(T), z = c.zeta.sup_abs(T);
    return {c.lambda1.inf(T) - ng * l2 * l2 / (2 * th1) - n3 * z * z / (2 * th2),
            c.lambda4.inf(T) - ng * th1 / 2 - n3 * th2 / 2 - n5 * nr};
}

inline std::vector<double> default_theta_values() {
    return {0.01, 0.02, 0.05, 0.1, 0.2, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0, 5.0, 10.0, 20.0, 50.0, 100.0};
}

inline std::vector<std::pair<double, double>> default_theta_grid() {
    std::vector<std::pair<double, double>> out;
    for (double a : default_theta_values())
        for (double b : default_theta_values()) out.emplace_back(a, b);
    return out;
}

inline FeasibilityReport check_assumptions(const CoefficientSet& c,
                                           const std::vector<std::pair<double, double>>& theta_grid = default_theta_grid()) {
    FeasibilityReport rep;
    double best = -std::numeric_limits<double>::infinity();
    for (auto [a, b] : theta_grid) {
        if (!(a > 0.0 && b > 0.0)) throw InvalidArgument("check_assumptions: theta values must be positive");
        auto [m1, m2] = assumption_margins(c, a, b);
        if (m1 > 0.0 && m2 > 0.0) {
            rep.feasible = true;
            rep.theta = {a, b};
            rep.margins = {m1, m2};
            return rep;
        }
        if (std::min(m1, m2) > best) {
            best = std::min(m1, m2);
            rep.theta = {a, b};
            rep.margins = {m1, m2};
        }
    }
    return rep;
}

// ---------------------------------------------------------------- affinity

/// max deviation of solution(rho in + (1-rho) in') from rho solution(in) + (1-rho) solution(in')
/// over Q, R and H on [0, T - eps], eps the first refined gap.
inline double affinity_check(const CoefficientSet& coeffs, const std::pair<Coefficient, Coefficient>& in,
                             const std::pair<Coefficient, Coefficient>& in2, double rho,
                             const ParticleEnsemble& ens, const PicardOptions& opts = {}) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgument("affinity_check: rho must lie in [0,1]");
    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    CoefficientSet a = coeffs, b = coeffs, mx = coeffs;
    a.f_bar = in.first;
    a.g_bar = in.second;
    b.f_bar = in2.first;
    b.g_bar = in2.second;
    auto fa = in.first.on(g, s), fb = in2.first.on(g, s), ga = in.second.on(g, s), gb = in2.second.on(g, s);
    mx.f_bar = mix(rho, fa, fb);
    mx.g_bar = mix(rho, ga, gb);
    auto sa = solve_constrained(a, ens, opts), sb = solve_constrained(b, ens, opts), sm = solve_constrained(mx, ens, opts);
    const std::size_t kH = last_node_before(g, g.first_refined_gap());
    double dev = 0.0;
    auto upd = [&](const AdaptedField& m, const AdaptedField& x, const AdaptedField& y, std::size_t kmax) {
        const AdaptedField d = m - mix(rho, x, y);
        for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t k = 0; k <= kmax; ++k) dev = std::max(dev, std::abs(d.value(r, k)));
    };
    upd(sm.Q, sa.Q, sb.Q, g.last());
    upd(sm.R, sa.R, sb.R, g.last());
    upd(sm.H, sa.H, sb.H, kH);
    return dev;
}

}  // namespace mfliq
