#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mfliq/fbsde.hpp"

namespace mfliq {

/// Arithmetic mean of the trajectories, per row and node.
inline AdaptedField cesaro(const std::vector<AdaptedField>& trajs) {
    if (trajs.empty()) throw InvalidArgument("cesaro: empty list");
    Measurability tag = trajs.front().tag();
    for (const auto& t : trajs) {
        require_same_shape(t, trajs.front(), "cesaro");
        tag = max_tag(tag, t.tag());
    }
    AdaptedField out(tag, trajs.front().shape());
    const double w = 1.0 / double(trajs.size());
    std::vector<double> buf(trajs.size());
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t k = 0; k < out.nodes(); ++k) {
            for (std::size_t j = 0; j < trajs.size(); ++j) buf[j] = trajs[j].at(tag, r, k);
            out.ref(r, k) = w * pairwise_sum(buf.begin(), buf.size());
        }
    return out;
}

/// Particle mean of int_0^T |a - b|^nu dt by the grid quadrature.
inline double lnu_distance(const AdaptedField& a, const AdaptedField& b, double nu, const TimeGrid& g) {
    if (!(nu > 1.0 && nu < 2.0)) throw InvalidArgument("lnu_distance: nu must lie in (1,2)");
    require_same_shape(a, b, "lnu_distance");
    if (a.nodes() != g.size()) throw ShapeMismatch("lnu_distance: grid/field mismatch");
    const Quadrature quad(g);
    const Measurability tag = max_tag(a.tag(), b.tag());
    std::vector<double> per(rows_for(tag, a.shape())), f(g.size());
    for (std::size_t r = 0; r < per.size(); ++r) {
        for (std::size_t k = 0; k < g.size(); ++k) f[k] = std::pow(std::abs(a.at(tag, r, k) - b.at(tag, r, k)), nu);
        per[r] = quad.integrate(f);
    }
    return pairwise_mean(per);
}

namespace detail {

/// (E sup_{k <= kmax} |a - b|^nu)^(1/nu).
inline double snu_distance(const AdaptedField& a, const AdaptedField& b, double nu, std::size_t kmax) {
    const Measurability tag = max_tag(a.tag(), b.tag());
    std::vector<double> per(rows_for(tag, a.shape()), 0.0);
    for (std::size_t r = 0; r < per.size(); ++r) {
        double m = 0.0;
        for (std::size_t k = 0; k <= kmax; ++k) m = std::max(m, std::abs(a.at(tag, r, k) - b.at(tag, r, k)));
        per[r] = std::pow(m, nu);
    }
    return std::pow(pairwise_mean(per), 1.0 / nu);
}

/// E int_0^{t_kmax} |a - b| dt.
inline double l1_distance(const AdaptedField& a, const AdaptedField& b, const TimeGrid& g, std::size_t kmax) {
    if (kmax == 0) return 0.0;
    std::vector<double> nodes(g.nodes().begin(), g.nodes().begin() + std::ptrdiff_t(kmax + 1));
    const Quadrature quad(nodes);
    const Measurability tag = max_tag(a.tag(), b.tag());
    std::vector<double> per(rows_for(tag, a.shape())), f(kmax + 1);
    for (std::size_t r = 0; r < per.size(); ++r) {
        for (std::size_t k = 0; k <= kmax; ++k) f[k] = std::abs(a.at(tag, r, k) - b.at(tag, r, k));
        per[r] = quad.integrate(f);
    }
    return pairwise_mean(per);
}

}  // namespace detail

struct StudyOptions {
    PicardOptions picard;
    double nu = 1.5;
    double eps = -1.0;     // H window [0, T - eps]; negative: first refined gap
    unsigned workers = 1;  // parallel solves across the schedule
};

struct ConvergenceRow {
    double n = 0.0;
    double dist_Q = 0.0, dist_H = 0.0, dist_R = 0.0;     // S^nu, L^1 on [0,T-eps], L^nu (as norms)
    double cesaro_Q = 0.0, cesaro_H = 0.0, cesaro_R = 0.0;
    double terminal_mean = 0.0, terminal_max = 0.0;     // |Q^n_T|
    double norm_Q = 0.0, norm_H = 0.0, norm_R = 0.0;     // weighted, S^{2,-}, L^2
    double riccati_gap = 0.0;                            // max |A^n - A| on [0, T - eps]
    double bound_ratio = 0.0;                            // norm triple / input norm
    std::size_t iterations = 0;
};

struct ConvergenceReport {
    std::vector<double> n_schedule;
    double nu = 1.5;
    double eps = 0.0;
    double input_norm = 0.0;  // |chi| + ||f_bar||_L2 + ||g_bar||_L2
    double fitted_C = 0.0;    // max bound ratio over the schedule
    double C_spread = 0.0;    // max / min bound ratio
    std::vector<ConvergenceRow> rows;

    template <class Get>
    bool nonincreasing(Get get, double slack = 0.0) const {
        for (std::size_t j = 1; j < rows.size(); ++j)
            if (get(rows[j]) > get(rows[j - 1]) + slack) return false;
        return true;
    }
};

/// Solves the constrained system once and the penalized one per level n.
inline ConvergenceReport penalization_study(const CoefficientSet& coeffs, const std::vector<double>& n_schedule,
                                            const ParticleEnsemble& ens, const StudyOptions& opts = {}) {
    if (n_schedule.empty()) throw InvalidArgument("penalization_study: empty schedule");
    for (std::size_t j = 0; j < n_schedule.size(); ++j)
        if (!(n_schedule[j] > 0.0) || (j && !(n_schedule[j] > n_schedule[j - 1])))
            throw InvalidArgument("penalization_study: schedule must be positive and strictly increasing");
    if (!(opts.nu > 1.0 && opts.nu < 2.0)) throw InvalidArgument("penalization_study: nu must lie in (1,2)");

    const auto& g = ens.grid();
    const auto s = shape_of(ens);
    ConvergenceReport rep;
    rep.n_schedule = n_schedule;
    rep.nu = opts.nu;
    rep.eps = opts.eps >= 0.0 ? opts.eps : g.first_refined_gap();
    const std::size_t kH = last_node_before(g, rep.eps);
    const Quadrature quad(g);

    const SolutionBundle ref = solve_constrained(coeffs, ens, opts.picard);
    std::vector<SolutionBundle> pen(n_schedule.size());
    parallel_for(n_schedule.size(), opts.workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t j = b; j < e; ++j) {
            try {
                pen[j] = solve_penalized(coeffs, n_schedule[j], ens, opts.picard);
            } catch (const NonConvergence& ex) {
                throw NonConvergence(std::string(ex.what()) + " (n = " + std::to_string(n_schedule[j]) + ")",
                                     ex.residual_history());
            } catch (const NumericalFailure& ex) {
                throw NumericalFailure(std::string(ex.what()) + " (n = " + std::to_string(n_schedule[j]) + ")");
            }
        }
    });

    {
        std::vector<double> chi(coeffs.chi_particles.begin(), coeffs.chi_particles.end());
        if (chi.empty()) chi.assign(1, coeffs.chi);
        for (double& x : chi) x *= x;
        rep.input_norm = std::sqrt(pairwise_mean(chi)) + l2_norm(coeffs.f_bar.on(g, s), quad) +
                         l2_norm(coeffs.g_bar.on(g, s), quad);
    }

    const double nu = opts.nu;
    const std::size_t K = g.last();
    std::vector<AdaptedField> Qs, Hs, Rs;
    double rmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_schedule.size(); ++j) {
        const SolutionBundle& b = pen[j];
        ConvergenceRow row;
        row.n = n_schedule[j];
        row.iterations = b.iterations;
        row.dist_Q = detail::snu_distance(b.Q, ref.Q, nu, K);
        row.dist_H = detail::l1_distance(b.H, ref.H, g, kH);
        row.dist_R = std::pow(lnu_distance(b.R, ref.R, nu, g), 1.0 / nu);
        Qs.push_back(b.Q);
        Hs.push_back(b.H);
        Rs.push_back(b.R);
        const AdaptedField cQ = cesaro(Qs), cH = cesaro(Hs), cR = cesaro(Rs);
        row.cesaro_Q = detail::snu_distance(cQ, ref.Q, nu, K);
        row.cesaro_H = detail::l1_distance(cH, ref.H, g, kH);
        row.cesaro_R = std::pow(lnu_distance(cR, ref.R, nu, g), 1.0 / nu);

        std::vector<double> term(b.Q.rows());
        for (std::size_t r = 0; r < term.size(); ++r) term[r] = std::abs(b.Q.value(r, K));
        row.terminal_mean = pairwise_mean(term);
        row.terminal_max = *std::max_element(term.begin(), term.end());

        row.norm_Q = weighted_norm(b.Q, ref.alpha, g, 1.0 / row.n);
        row.norm_H = sup_norm(b.H, kH);
        row.norm_R = l2_norm(b.R, quad);
        for (std::size_t k = 0; k <= kH; ++k)
            row.riccati_gap = std::max(row.riccati_gap, std::abs(b.riccati.A(k) - ref.riccati.A(k)));
        if (rep.input_norm > 0.0) {
            row.bound_ratio = (row.norm_Q + row.norm_H + row.norm_R) / rep.input_norm;
            rep.fitted_C = std::max(rep.fitted_C, row.bound_ratio);
            rmin = std::min(rmin, row.bound_ratio);
        }
        rep.rows.push_back(row);
    }
    rep.C_spread = rep.input_norm > 0.0 && rmin > 0.0 ? rep.fitted_C / rmin : 0.0;
    return rep;
}

}  // namespace mfliq
