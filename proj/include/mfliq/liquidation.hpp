#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mfliq/fbsde.hpp"

namespace mfliq {

/// Single-player liquidation with expectations feedback: minimize
/// E int (kappa X E[xi|F0] + g X + eta xi^2 + lambda X^2) dt subject to
/// dX = -xi dt, X_0 = x, X_T = 0.
struct FollowerModel {
    TimeFunction eta{1.0};
    Coefficient kappa{0.0};
    TimeFunction lambda{0.0};
    Coefficient g_tilde{0.0};
    double x = 1.0;
    std::vector<double> x_particles;  // optional, one initial inventory per particle
    double T = 1.0;

    void validate() const {
        if (!(T > 0.0)) throw InvalidArgument("FollowerModel: T must be positive");
        if (!(eta.inf(T) > 0.0)) throw InvalidArgument("FollowerModel: eta must be bounded away from zero");
        if (lambda.inf(T) < 0.0) throw InvalidArgument("FollowerModel: lambda must be nonnegative");
        if (kappa.inf(T) < 0.0) throw InvalidArgument("FollowerModel: kappa must be nonnegative");
        if (!std::isfinite(x)) throw InvalidArgument("FollowerModel: x must be finite");
        for (double v : {eta.sup(T), lambda.sup(T), kappa.sup_abs(T), g_tilde.sup_abs(T)})
            if (!std::isfinite(v)) throw InvalidArgument("FollowerModel: coefficients must be bounded");
    }
};

/// (eta_* - |kappa|/(2 theta'), lambda_* - |kappa| theta').
inline std::pair<double, double> follower_margins(const FollowerModel& m, double theta) {
    const double k = m.kappa.sup_abs(m.T);
    return {m.eta.inf(m.T) - k / (2.0 * theta), m.lambda.inf(m.T) - k * theta};
}

inline FeasibilityReport check_follower_assumptions(const FollowerModel& m,
                                                    const std::vector<double>& thetas = default_theta_values()) {
    FeasibilityReport rep;
    double best = -std::numeric_limits<double>::infinity();
    for (double th : thetas) {
        if (!(th > 0.0)) throw InvalidArgument("check_follower_assumptions: theta must be positive");
        auto [a, b] = follower_margins(m, th);
        if (a > 0.0 && b > 0.0) return {true, {th}, {a, b}};
        if (std::min(a, b) > best) {
            best = std::min(a, b);
            rep.theta = {th};
            rep.margins = {a, b};
        }
    }
    return rep;
}

/// Coefficients of the core system whose (Q, R) is the follower's (X, Y).
inline CoefficientSet map_to_core(const FollowerModel& m) {
    m.validate();
    const TimeFunction half_inv = (2.0 * m.eta).reciprocal();
    CoefficientSet c;
    c.T = m.T;
    c.lambda1 = half_inv;
    c.lambda2 = -half_inv;
    c.zeta = half_inv;
    c.gamma = m.kappa;
    c.lambda3 = m.kappa;
    c.rho = m.kappa;
    c.lambda4 = 2.0 * m.lambda;
    c.lambda5 = m.kappa * (-half_inv);
    c.chi = m.x;
    c.chi_particles = m.x_particles;
    c.f_bar = 0.0;
    c.g_bar = m.g_tilde;
    return c;
}

struct StrategyBundle {
    AdaptedField xi, X, Y, B;  // B = Y - A X
    double cost = 0.0;
    double cost_std_error = 0.0;
    double liquidation_residual = 0.0;
    SolutionBundle bundle;
};

/// Mean and Monte Carlo standard error of a per-particle quantity. The error
/// is taken across common paths when there are several, across idiosyncratic
/// ones otherwise.
struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
};

inline Estimate estimate(const std::vector<double>& per_row, Measurability tag, const FieldShape& s) {
    Estimate e;
    e.mean = pairwise_mean(per_row);
    std::vector<double> groups;
    if (tag == Measurability::full && s.M_common > 1) {
        groups.resize(s.M_common);
        for (std::size_t c = 0; c < s.M_common; ++c)
            groups[c] = pairwise_sum(per_row.begin() + std::ptrdiff_t(c * s.M_idio), s.M_idio) / double(s.M_idio);
    } else {
        groups = per_row;
    }
    const std::size_t n = groups.size();
    if (n > 1) {
        std::vector<double> sq(n);
        const double mu = pairwise_mean(groups);
        for (std::size_t j = 0; j < n; ++j) sq[j] = (groups[j] - mu) * (groups[j] - mu);
        e.std_error = std::sqrt(pairwise_sum(sq.begin(), n) / double(n - 1) / double(n));
    }
    return e;
}

namespace detail {

/// Initial inventory per row of `tag`.
inline std::vector<double> initial_rows(const FollowerModel& m, Measurability tag, const FieldShape& s) {
    std::vector<double> x0(rows_for(tag, s), m.x);
    if (!m.x_particles.empty()) {
        if (m.x_particles.size() != s.M_common * s.M_idio)
            throw ShapeMismatch("FollowerModel: x_particles must have one value per particle");
        if (tag != Measurability::full) throw InvalidArgument("initial_rows: particle inventories need a full field");
        x0 = m.x_particles;
    }
    return x0;
}

/// X = x - int_0^t xi, by the grid quadrature.
inline AdaptedField inventory(const FollowerModel& m, const AdaptedField& xi, const ParticleEnsemble& ens) {
    const auto s = shape_of(ens);
    const Measurability tag = m.x_particles.empty() ? xi.tag() : Measurability::full;
    const auto x0 = initial_rows(m, tag, s);
    const Quadrature quad(ens.grid());
    AdaptedField X(tag, s);
    std::vector<double> row(s.nodes);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        for (std::size_t k = 0; k < s.nodes; ++k) row[k] = xi.at(tag, r, k);
        auto cum = quad.cumulative(row);
        for (std::size_t k = 0; k < s.nodes; ++k) X.ref(r, k) = x0[r] - cum[k];
    }
    return X;
}

struct CostRows {
    Measurability tag;
    std::vector<double> per;  // time integral per row
};

/// Per-row cost integrals, at a tag no coarser than `at_least`.
inline CostRows cost_rows(const FollowerModel& m, const AdaptedField& xi, const ParticleEnsemble& ens,
                          Measurability at_least = Measurability::deterministic) {
    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    const AdaptedField X = inventory(m, xi, ens);
    const AdaptedField Pxi = project_common(ens, xi);
    const AdaptedField kappa = m.kappa.on(g, s), gt = m.g_tilde.on(g, s);
    const Measurability tag = max_tag(max_tag(at_least, X.tag()), max_tag(kappa.tag(), gt.tag()));
    const Quadrature quad(g);
    CostRows out{tag, std::vector<double>(rows_for(tag, s))};
    std::vector<double> f(s.nodes);
    for (std::size_t r = 0; r < out.per.size(); ++r) {
        for (std::size_t k = 0; k < s.nodes; ++k) {
            const double t = g.t(k), x = X.at(tag, r, k), v = xi.at(tag, r, k);
            f[k] = kappa.at(tag, r, k) * x * Pxi.at(tag, r, k) + gt.at(tag, r, k) * x + m.eta(t) * v * v +
                   m.lambda(t) * x * x;
        }
        out.per[r] = quad.integrate(f);
    }
    return out;
}

/// Cost with no admissibility check.
inline Estimate follower_cost(const FollowerModel& m, const AdaptedField& xi, const ParticleEnsemble& ens) {
    auto c = cost_rows(m, xi, ens);
    return estimate(c.per, c.tag, shape_of(ens));
}

}  // namespace detail

/// max over particles of |int_0^T xi - x|.
inline double constraint_residual(const FollowerModel& m, const AdaptedField& xi, const ParticleEnsemble& ens) {
    const AdaptedField X = detail::inventory(m, xi, ens);
    double worst = 0.0;
    for (std::size_t r = 0; r < X.rows(); ++r) worst = std::max(worst, std::abs(X.value(r, X.nodes() - 1)));
    return worst;
}

/// Expected cost of an admissible strategy. `tol` is the admissibility
/// tolerance on |int xi - x|, relative to 1 + |x|.
inline double cost(const FollowerModel& m, const AdaptedField& xi, const ParticleEnsemble& ens, double tol = 1e-6) {
    m.validate();
    if (!(xi.shape() == shape_of(ens))) throw ShapeMismatch("cost: strategy not on ensemble shape");
    const double res = constraint_residual(m, xi, ens);
    if (res > tol * (1.0 + std::abs(m.x)))
        throw InvalidArgument("cost: strategy violates the liquidation constraint, residual " + std::to_string(res));
    return detail::follower_cost(m, xi, ens).mean;
}

/// Optimal strategy xi* = (Y - E[kappa X|F0]) / (2 eta) from the core system,
/// in constrained mode or with terminal condition Y_T = 2n X_T.
inline StrategyBundle optimal_strategy(const FollowerModel& m, const ParticleEnsemble& ens,
                                       const PicardOptions& opts = {},
                                       const Terminal& terminal = Terminal::singular()) {
    const CoefficientSet c = map_to_core(m);
    StrategyBundle out;
    out.bundle = solve_with_terminal(c, terminal, ens, opts);
    const auto& b = out.bundle;
    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    const AdaptedField kappa = m.kappa.on(g, s);
    const AdaptedField PkX = project_common(ens, kappa * b.Q, opts.workers);
    const Measurability tag = max_tag(b.R.tag(), PkX.tag());
    out.xi = generate(tag, s, [&](std::size_t r, std::size_t k) {
        return (b.R.at(tag, r, k) - PkX.at(tag, r, k)) / (2.0 * m.eta(g.t(k)));
    });
    out.X = b.Q;
    out.Y = b.R;
    out.B = b.H;
    out.liquidation_residual = terminal.is_singular() ? liquidation_residual(b, c, ens) : 0.0;
    if (terminal.is_singular()) {
        auto e = detail::follower_cost(m, out.xi, ens);
        out.cost = e.mean;
        out.cost_std_error = e.std_error;
    } else {
        auto e = detail::follower_cost(m, out.xi, ens);
        // Penalized cost adds n X_T^2.
        std::vector<double> xt(b.Q.rows());
        for (std::size_t r = 0; r < xt.size(); ++r) xt[r] = terminal.n * b.Q.value(r, s.nodes - 1) * b.Q.value(r, s.nodes - 1);
        out.cost = e.mean + pairwise_mean(xt);
        out.cost_std_error = e.std_error;
    }
    return out;
}

/// Left minus right side of the auxiliary convexity inequality at every node.
inline std::vector<double> convexity_gap(const FollowerModel& m, const AdaptedField& xi, const AdaptedField& xi_star,
                                         const ParticleEnsemble& ens) {
    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    const AdaptedField X = detail::inventory(m, xi, ens), Xs = detail::inventory(m, xi_star, ens);
    const AdaptedField kappa = m.kappa.on(g, s);
    const AdaptedField P = project_common(ens, xi), Ps = project_common(ens, xi_star);
    const AdaptedField PkXs = project_common(ens, (kappa * Xs).as(max_tag(kappa.tag(), Xs.tag())));
    Measurability tag = Measurability::deterministic;
    for (const AdaptedField* f : {&X, &Xs, &kappa, &P, &Ps, &PkXs, &xi, &xi_star}) tag = max_tag(tag, f->tag());
    const std::size_t rows = rows_for(tag, s);
    std::vector<double> gap(s.nodes), per(rows);
    for (std::size_t k = 0; k < s.nodes; ++k) {
        const double eta = m.eta(g.t(k)), lam = m.lambda(g.t(k));
        for (std::size_t r = 0; r < rows; ++r) {
            const double x = X.at(tag, r, k), xs = Xs.at(tag, r, k), v = xi.at(tag, r, k), vs = xi_star.at(tag, r, k);
            const double kp = kappa.at(tag, r, k);
            const double lhs = (kp * x * P.at(tag, r, k) + eta * v * v + lam * x * x) -
                               (kp * xs * Ps.at(tag, r, k) + eta * vs * vs + lam * xs * xs);
            const double rhs = (PkXs.at(tag, r, k) + 2.0 * eta * vs) * (v - vs) + 2.0 * lam * xs * (x - xs) +
                               kp * (x - xs) * Ps.at(tag, r, k);
            per[r] = lhs - rhs;
        }
        gap[k] = pairwise_mean(per);
    }
    return gap;
}

/// Zero-integral perturbation shapes: the first eight Legendre polynomials on
/// [0,T] plus a common-noise shape W0_s * P1 switched on at s = T/3, each
/// recentred so that the grid quadrature integrates it to zero.
class PerturbationFamily {
public:
    PerturbationFamily(const ParticleEnsemble& ens, std::uint64_t seed) : ens_(&ens), gen_(seed) {
        const auto& g = ens.grid();
        const Quadrature quad(g);
        const double T = g.horizon();
        for (int j = 1; j <= 8; ++j) {
            std::vector<double> v(g.size());
            for (std::size_t k = 0; k < g.size(); ++k) v[k] = std::legendre(j, 2.0 * g.t(k) / T - 1.0);
            recentre(v, quad, 0);
            shapes_.push_back(std::move(v));
        }
        switch_ = g.cell_of(T / 3.0);
        std::vector<double> tail(g.size(), 0.0);
        for (std::size_t k = switch_; k < g.size(); ++k) tail[k] = 2.0 * (g.t(k) - g.t(switch_)) / (T - g.t(switch_)) - 1.0;
        recentre(tail, quad, switch_);
        tail_ = std::move(tail);
    }

    /// A random mixture, F0-adapted when the ensemble has several common paths.
    AdaptedField draw() {
        const auto s = shape_of(*ens_);
        std::normal_distribution<double> z;
        std::vector<double> a(shapes_.size());
        for (double& v : a) v = z(gen_) / std::sqrt(double(shapes_.size()));
        const double b = z(gen_);
        const Measurability tag = s.M_common > 1 ? Measurability::common : Measurability::deterministic;
        return generate(tag, s, [&](std::size_t r, std::size_t k) {
            double v = 0.0;
            for (std::size_t j = 0; j < a.size(); ++j) v += a[j] * shapes_[j][k];
            if (tag == Measurability::common && k >= switch_) v += b * ens_->W0(r, switch_) * tail_[k];
            return v;
        });
    }

private:
    static void recentre(std::vector<double>& v, const Quadrature& quad, std::size_t from) {
        double w = 0.0, m = 0.0;
        const auto& wt = quad.weights();
        for (std::size_t k = from; k < v.size(); ++k) {
            w += wt[k];
            m += wt[k] * v[k];
        }
        for (std::size_t k = from; k < v.size(); ++k) v[k] -= m / w;
    }

    const ParticleEnsemble* ens_;
    std::mt19937_64 gen_;
    std::vector<std::vector<double>> shapes_;
    std::vector<double> tail_;
    std::size_t switch_ = 0;
};

struct OptimalityCheck {
    double min_difference = 0.0;
    double std_error = 0.0;  // standard error of the difference at the minimum
    std::vector<double> differences;
};

/// J(xi* + delta phi) - J(xi*) over `trials` zero-integral perturbations phi.
inline OptimalityCheck verify_optimality(const FollowerModel& m, const StrategyBundle& b, std::size_t trials,
                                         double delta, std::uint64_t seed, const ParticleEnsemble& ens) {
    PerturbationFamily fam(ens, seed);
    const auto s = shape_of(ens);
    OptimalityCheck out;
    out.min_difference = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < trials; ++j) {
        const AdaptedField phi = fam.draw();
        const Measurability tag = max_tag(b.xi.tag(), phi.tag());
        const AdaptedField xi = generate(tag, s, [&](std::size_t r, std::size_t k) {
            return b.xi.at(tag, r, k) + delta * phi.at(tag, r, k);
        });
        // Paired per-particle differences, so the standard error is that of the difference.
        auto c1 = detail::cost_rows(m, xi, ens);
        auto c0 = detail::cost_rows(m, b.xi, ens, c1.tag);
        if (c0.tag != c1.tag) c1 = detail::cost_rows(m, xi, ens, c0.tag);
        std::vector<double> per(c1.per.size());
        for (std::size_t r = 0; r < per.size(); ++r) per[r] = c1.per[r] - c0.per[r];
        const Estimate e = estimate(per, c1.tag, s);
        out.differences.push_back(e.mean);
        if (e.mean < out.min_difference) {
            out.min_difference = e.mean;
            out.std_error = e.std_error;
        }
    }
    if (trials == 0) out.min_difference = 0.0;
    return out;
}

}  // namespace mfliq
