#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mfliq/errors.hpp"
#include "mfliq/grid.hpp"
#include "mfliq/time_function.hpp"

namespace mfliq {

/// Data of the Riccati equation -dA = (Lambda4 - Lambda1 A^2 + drift A) dt.
struct RiccatiInput {
    TimeFunction lambda1{1.0};
    TimeFunction lambda4{0.0};
    TimeFunction drift_linear{0.0};
    double T = 1.0;

    void validate() const {
        if (!(T > 0.0)) throw InvalidArgument("RiccatiInput: T must be positive");
        if (!(lambda1.inf(T) > 0.0)) throw InvalidArgument("RiccatiInput: lambda1 must be bounded below by a positive constant");
        if (lambda4.inf(T) < 0.0) throw InvalidArgument("RiccatiInput: lambda4 must be nonnegative");
        for (double v : {lambda1.sup(T), lambda4.sup(T), drift_linear.sup_abs(T)})
            if (!std::isfinite(v)) throw InvalidArgument("RiccatiInput: coefficients must be bounded");
    }

    double beta() const { return lambda1.inf(T) / lambda1.sup(T); }
};

/// Terminal condition: singular (A_T = infinity) or a finite value A_T.
struct Terminal {
    enum class Kind { singular, penalized };
    Kind kind = Kind::singular;
    double n = 0.0;
    double A_T = std::numeric_limits<double>::infinity();

    static Terminal singular() { return {}; }
    /// Penalty level n with A_T = 2n.
    static Terminal penalized(double n) { return with_value(n, 2.0 * n); }
    /// Penalty level n with an explicit terminal value.
    static Terminal with_value(double n, double A_T) {
        if (!(n > 0.0) || !(A_T > 0.0) || !std::isfinite(A_T))
            throw InvalidArgument("Terminal: penalty level and terminal value must be positive");
        return {Kind::penalized, n, A_T};
    }

    bool is_singular() const { return kind == Kind::singular; }
    double psi_T() const { return is_singular() ? 0.0 : 1.0 / A_T; }
    /// Time shift of the penalized power bounds, 1/n.
    double shift() const { return is_singular() ? 0.0 : 1.0 / n; }
};

struct RiccatiOptions {
    /// Upper bound on the RK4 substep; infinity integrates with one step per cell.
    double max_substep = 1e-3;
};

/// psi = 1/A on the grid, together with the tail integrals
/// Lpsi_k = int_{t_k}^T Lambda4 psi and Lc_k = int_{t_k}^T drift.
/// Because Lambda1/psi = Lambda4 psi + drift - psi'/psi, every discount
/// factor exp(-int Lambda1 A) is an exact ratio of these quantities.
struct RiccatiSolution {
    TimeGrid grid;
    RiccatiInput input;
    Terminal terminal;
    RiccatiOptions options;
    std::vector<double> psi, Lpsi, Lc;
    double beta = 1.0;

    std::size_t last() const { return psi.size() - 1; }
    double A(std::size_t k) const {
        return psi[k] > 0.0 ? 1.0 / psi[k] : std::numeric_limits<double>::infinity();
    }
    /// Total exponent L = Lpsi + Lc used by backward discounting.
    double L(std::size_t k) const { return Lpsi[k] + Lc[k]; }

    struct State { double psi, Lpsi, Lc; };

    static State rhs(const RiccatiInput& in, double t, const State& y) {
        const double l1 = in.lambda1(t), l4 = in.lambda4(t), c = in.drift_linear(t);
        return {l4 * y.psi * y.psi + c * y.psi - l1, -l4 * y.psi, -c};
    }

    /// Classical RK4 from (t0, y) to t1, in `steps` equal substeps.
    static State integrate(const RiccatiInput& in, double t0, State y, double t1, std::size_t steps) {
        const double h = (t1 - t0) / static_cast<double>(steps);
        for (std::size_t s = 0; s < steps; ++s) {
            const double t = t0 + h * static_cast<double>(s);
            auto add = [](const State& a, const State& b, double w) {
                return State{a.psi + w * b.psi, a.Lpsi + w * b.Lpsi, a.Lc + w * b.Lc};
            };
            State k1 = rhs(in, t, y);
            State k2 = rhs(in, t + 0.5 * h, add(y, k1, 0.5 * h));
            State k3 = rhs(in, t + 0.5 * h, add(y, k2, 0.5 * h));
            State k4 = rhs(in, t + h, add(y, k3, h));
            y.psi += h / 6.0 * (k1.psi + 2.0 * k2.psi + 2.0 * k3.psi + k4.psi);
            y.Lpsi += h / 6.0 * (k1.Lpsi + 2.0 * k2.Lpsi + 2.0 * k3.Lpsi + k4.Lpsi);
            y.Lc += h / 6.0 * (k1.Lc + 2.0 * k2.Lc + 2.0 * k3.Lc + k4.Lc);
        }
        return y;
    }

    static std::size_t substeps(double span, double max_substep) {
        if (!std::isfinite(max_substep) || max_substep <= 0.0) return 1;
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span / max_substep - 1e-12)));
    }

    /// (psi, Lpsi, Lc) at an arbitrary time, integrating from the node above.
    State state_at(double t) const {
        const double T = grid.horizon();
        if (t < 0.0 || t > T) throw InvalidArgument("RiccatiSolution: time outside [0,T]");
        std::size_t k = grid.cell_of(t);
        if (t == grid.t(k)) return {psi[k], Lpsi[k], Lc[k]};
        if (t == grid.t(k + 1)) return {psi[k + 1], Lpsi[k + 1], Lc[k + 1]};
        State y{psi[k + 1], Lpsi[k + 1], Lc[k + 1]};
        return integrate(input, grid.t(k + 1), y, t, substeps(grid.t(k + 1) - t, options.max_substep));
    }
    double psi_at(double t) const { return state_at(t).psi; }
};

inline RiccatiSolution solve_riccati(const RiccatiInput& input, const Terminal& terminal, const TimeGrid& grid,
                                     const RiccatiOptions& opts = {}) {
    input.validate();
    if (std::abs(grid.horizon() - input.T) > 1e-12 * input.T)
        throw InvalidArgument("solve_riccati: grid horizon differs from T");
    RiccatiSolution sol;
    sol.grid = grid;
    sol.input = input;
    sol.terminal = terminal;
    sol.options = opts;
    sol.beta = input.beta();
    const std::size_t K = grid.last();
    sol.psi.assign(K + 1, 0.0);
    sol.Lpsi.assign(K + 1, 0.0);
    sol.Lc.assign(K + 1, 0.0);
    RiccatiSolution::State y{terminal.psi_T(), 0.0, 0.0};
    sol.psi[K] = y.psi;
    for (std::size_t k = K; k-- > 0;) {
        y = RiccatiSolution::integrate(input, grid.t(k + 1), y, grid.t(k),
                                       RiccatiSolution::substeps(grid.gap(k), opts.max_substep));
        if (!std::isfinite(y.psi) || !std::isfinite(y.Lpsi) || !std::isfinite(y.Lc))
            throw NumericalFailure("solve_riccati: non-finite value at t=" + std::to_string(grid.t(k)));
        if (!(y.psi > 0.0))
            throw NumericalFailure("solve_riccati: 1/A crossed zero before T at t=" + std::to_string(grid.t(k)));
        sol.psi[k] = y.psi;
        sol.Lpsi[k] = y.Lpsi;
        sol.Lc[k] = y.Lc;
    }
    return sol;
}

/// exp(-int_{t1}^{t2} Lambda1 A ds), evaluated in log space.
inline double discount(double t1, double t2, const RiccatiSolution& sol) {
    if (!(t1 <= t2)) throw InvalidArgument("discount: need t1 <= t2");
    if (t1 == t2) return 1.0;
    auto a = sol.state_at(t1), b = sol.state_at(t2);
    if (!(b.psi > 0.0)) return 0.0;
    const double lg = std::log(b.psi) - std::log(a.psi) - (a.Lpsi - b.Lpsi) - (a.Lc - b.Lc);
    return std::exp(lg);
}

struct BoundReport {
    bool sandwich_applicable = false;
    double sandwich_max_violation = 0.0;  // relative to A
    double beta = 1.0;
    double fitted_C = 0.0;                // exponent beta
    double fitted_C_one = 0.0;            // exponent 1
    bool C_theorem_applicable = false;    // lower sandwich implies C <= 1
    bool passed = true;
    std::vector<double> lower, upper;     // per node, NaN where undefined
};

/// Sandwich bounds on A and fitted constants of the power-discount bounds.
inline BoundReport check_riccati_bounds(const RiccatiSolution& sol, double slack = 1e-8) {
    const auto& g = sol.grid;
    const auto& in = sol.input;
    const std::size_t K = g.last();
    const double T = g.horizon();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    BoundReport rep;
    rep.beta = sol.beta;
    rep.lower.assign(K + 1, nan);
    rep.upper.assign(K + 1, nan);

    const bool driftless = in.drift_linear.is_zero();
    const bool drift_nonneg = in.drift_linear.inf(T) >= 0.0;
    rep.sandwich_applicable = driftless;
    rep.C_theorem_applicable = sol.terminal.is_singular() && drift_nonneg;

    if (driftless) {
        // Tail integrals by composite Simpson per cell.
        double I1 = 0.0, I2 = 0.0;
        const int m = 16;
        for (std::size_t k = K; k-- > 0;) {
            const double a = g.t(k), b = g.t(k + 1), h = (b - a) / m;
            double s1 = 0.0, s2 = 0.0;
            for (int j = 0; j <= m; ++j) {
                const double u = a + h * j;
                const double w = (j == 0 || j == m) ? 1.0 : (j % 2 ? 4.0 : 2.0);
                const double l1 = in.lambda1(u);
                s1 += w * l1;
                s2 += w * (1.0 / l1 + (T - u) * (T - u) * in.lambda4(u));
            }
            I1 += s1 * h / 3.0;
            I2 += s2 * h / 3.0;
            const double tau = T - a;
            rep.lower[k] = 1.0 / I1;
            rep.upper[k] = I2 / (tau * tau);
            const double A = sol.A(k);
            double v = 0.0;
            if (sol.terminal.is_singular()) v = std::max(v, (rep.lower[k] - A) / A);
            v = std::max(v, (A - rep.upper[k]) / A);
            rep.sandwich_max_violation = std::max(rep.sandwich_max_violation, v);
        }
    }

    const double s = sol.terminal.shift();
    const std::size_t kmax = sol.terminal.is_singular() ? K - 1 : K;
    std::vector<double> lp(K + 1), lt(K + 1);
    for (std::size_t k = 0; k <= kmax; ++k) {
        lp[k] = std::log(sol.psi[k]);
        lt[k] = std::log(T - g.t(k) + s);
    }
    double cb = -std::numeric_limits<double>::infinity(), c1 = cb;
    for (std::size_t k1 = 0; k1 <= kmax; ++k1)
        for (std::size_t k2 = k1 + 1; k2 <= kmax; ++k2) {
            const double lg = lp[k2] - lp[k1] - (sol.L(k1) - sol.L(k2));
            const double lb = lt[k2] - lt[k1];
            cb = std::max(cb, lg - sol.beta * lb);
            c1 = std::max(c1, lg - lb);
        }
    rep.fitted_C = std::isfinite(cb) ? std::exp(cb) : 1.0;
    rep.fitted_C_one = std::isfinite(c1) ? std::exp(c1) : 1.0;

    if (rep.sandwich_applicable && rep.sandwich_max_violation > slack) rep.passed = false;
    if (rep.C_theorem_applicable && rep.fitted_C > 1.0 + slack) rep.passed = false;
    return rep;
}

}  // namespace mfliq
