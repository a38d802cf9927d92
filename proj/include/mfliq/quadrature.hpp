#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "mfliq/errors.hpp"
#include "mfliq/grid.hpp"

namespace mfliq {

/// Node-based quadrature on a TimeGrid. Each cell integrates the cubic
/// through the four surrounding nodes (one-sided at the ends); on a uniform
/// grid the interior cells use the (-1,13,13,-1)/24 rule.
class Quadrature {
public:
    Quadrature() = default;
    explicit Quadrature(const TimeGrid& g) { build(g.nodes()); }
    explicit Quadrature(std::span<const double> nodes) { build(nodes); }

    std::size_t size() const { return weights_.size(); }
    const std::vector<double>& weights() const { return weights_; }

    double integrate(std::span<const double> f) const {
        check(f);
        double s = 0.0;
        for (std::size_t k = 0; k < f.size(); ++k) s += weights_[k] * f[k];
        return s;
    }

    /// Integral of f over [t_0, t_j] for every node j.
    std::vector<double> cumulative(std::span<const double> f) const {
        check(f);
        std::vector<double> out(f.size(), 0.0);
        for (std::size_t j = 0; j + 1 < f.size(); ++j) {
            double c = 0.0;
            for (const auto& [idx, w] : cells_[j]) c += w * f[idx];
            out[j + 1] = out[j] + c;
        }
        return out;
    }

    /// Integral over the single cell [t_j, t_{j+1}].
    double cell(std::size_t j, std::span<const double> f) const {
        double c = 0.0;
        for (const auto& [idx, w] : cells_[j]) c += w * f[idx];
        return c;
    }

    struct Term { std::size_t idx; double w; };
    /// Stencil of cell [t_j, t_{j+1}]: node indices and weights.
    const std::vector<Term>& cell_terms(std::size_t j) const { return cells_[j]; }

private:
    void check(std::span<const double> f) const {
        if (f.size() != weights_.size()) throw ShapeMismatch("Quadrature: value count differs from node count");
    }

    // Integrals over [lo,hi] of the Lagrange basis polynomials on x; two-point
    // Gauss is exact up to cubics.
    static std::vector<double> lagrange_integrals(std::span<const double> x, double lo, double hi) {
        const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
        const double g = half / std::sqrt(3.0);
        std::vector<double> out(x.size(), 0.0);
        for (double u : {mid - g, mid + g})
            for (std::size_t i = 0; i < x.size(); ++i) {
                double l = 1.0;
                for (std::size_t m = 0; m < x.size(); ++m)
                    if (m != i) l *= (u - x[m]) / (x[i] - x[m]);
                out[i] += half * l;
            }
        return out;
    }

    void build(std::span<const double> t) {
        const std::size_t N = t.size();
        if (N < 2) throw InvalidArgument("Quadrature: need at least two nodes");
        weights_.assign(N, 0.0);
        cells_.assign(N - 1, {});
        const std::size_t width = std::min<std::size_t>(N, 4);
        for (std::size_t j = 0; j + 1 < N; ++j) {
            // Stencil of `width` consecutive nodes around the cell, shifted inward at the ends.
            std::size_t first = j >= 1 ? j - 1 : 0;
            if (first + width > N) first = N - width;
            auto w = lagrange_integrals(t.subspan(first, width), t[j], t[j + 1]);
            for (std::size_t i = 0; i < width; ++i) cells_[j].push_back({first + i, w[i]});
            for (const auto& [idx, wi] : cells_[j]) weights_[idx] += wi;
        }
    }

    std::vector<double> weights_;
    std::vector<std::vector<Term>> cells_;
};

}  // namespace mfliq
