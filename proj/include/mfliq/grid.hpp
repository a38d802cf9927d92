#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfliq/errors.hpp"

namespace mfliq {

/// Nonuniform discretization of [0, T]: a uniform block followed by a block
/// whose distances to T shrink geometrically, then a final step of length
/// epsilon_final onto T.
class TimeGrid {
public:
    TimeGrid() = default;

    /// Arbitrary strictly increasing nodes starting at 0. Used by tests and
    /// refinement studies; no geometric structure is assumed.
    static TimeGrid from_nodes(std::vector<double> nodes) {
        if (nodes.size() < 2) throw InvalidArgument("TimeGrid: need at least two nodes");
        if (nodes.front() != 0.0) throw InvalidArgument("TimeGrid: first node must be 0");
        for (std::size_t k = 1; k < nodes.size(); ++k) {
            if (!(nodes[k] > nodes[k - 1]))
                throw InvalidArgument("TimeGrid: nodes must be strictly increasing");
        }
        TimeGrid g;
        g.nodes_ = std::move(nodes);
        g.switch_index_ = g.nodes_.size() - 1;
        g.ratio_ = 0.0;
        g.epsilon_final_ = g.nodes_.back() - g.nodes_[g.nodes_.size() - 2];
        return g;
    }

    double horizon() const { return nodes_.back(); }
    std::size_t size() const { return nodes_.size(); }
    /// Index of the terminal node T.
    std::size_t last() const { return nodes_.size() - 1; }
    double t(std::size_t k) const { return nodes_[k]; }
    double operator[](std::size_t k) const { return nodes_[k]; }
    /// Length of cell [t_k, t_{k+1}].
    double gap(std::size_t k) const { return nodes_[k + 1] - nodes_[k]; }
    std::span<const double> nodes() const { return nodes_; }
    std::size_t switch_index() const { return switch_index_; }
    double ratio() const { return ratio_; }
    double epsilon_final() const { return epsilon_final_; }
    bool refined() const { return switch_index_ < last(); }

    /// First gap of the refined block, or the final gap without refinement.
    double first_refined_gap() const {
        return refined() ? gap(switch_index_) : epsilon_final_;
    }

    /// Locate the cell containing t: returns k with t_k <= t <= t_{k+1}.
    std::size_t cell_of(double t) const {
        if (t <= nodes_.front()) return 0;
        if (t >= nodes_.back()) return last() - 1;
        std::size_t lo = 0, hi = last();
        while (hi - lo > 1) {
            std::size_t mid = (lo + hi) / 2;
            if (nodes_[mid] <= t) lo = mid; else hi = mid;
        }
        return lo;
    }

private:
    friend TimeGrid build_grid(double, std::size_t, std::size_t, double, double);

    std::vector<double> nodes_;
    std::size_t switch_index_ = 0;
    double ratio_ = 0.0;
    double epsilon_final_ = 0.0;
};

/// Uniform block of n_uniform steps on [0, t_s], then n_refined geometric
/// steps with T - t_{k+1} = ratio (T - t_k) ending at T - epsilon_final, then
/// the final step onto T. The switch point is t_s = T - epsilon_final /
/// ratio^n_refined. With n_refined = 0 the grid is uniform and epsilon_final
/// is the uniform gap.
inline TimeGrid build_grid(double T, std::size_t n_uniform, std::size_t n_refined,
                           double ratio, double epsilon_final) {
    if (!(T > 0.0) || !std::isfinite(T)) throw InvalidArgument("build_grid: T must be positive");
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("build_grid: ratio must lie in (0,1)");
    if (!(epsilon_final > 0.0 && epsilon_final < T))
        throw InvalidArgument("build_grid: epsilon_final must lie in (0,T)");

    TimeGrid g;
    g.ratio_ = ratio;
    if (n_refined == 0) {
        if (n_uniform == 0) throw InvalidArgument("build_grid: empty grid");
        g.nodes_.resize(n_uniform + 1);
        for (std::size_t j = 0; j <= n_uniform; ++j)
            g.nodes_[j] = T * static_cast<double>(j) / static_cast<double>(n_uniform);
        g.nodes_.back() = T;
        g.switch_index_ = n_uniform;
        g.epsilon_final_ = g.nodes_[n_uniform] - g.nodes_[n_uniform - 1];
        return g;
    }

    const double d0 = epsilon_final / std::pow(ratio, static_cast<double>(n_refined));
    const double t_switch = T - d0;
    const double rel = 1e-12 * T;
    if (n_uniform == 0) {
        if (std::abs(t_switch) > rel)
            throw InvalidArgument(
                "build_grid: with n_uniform = 0 the geometric block must start at 0 "
                "(epsilon_final / ratio^n_refined must equal T)");
    } else if (!(t_switch > rel)) {
        throw InvalidArgument(
            "build_grid: refined block does not fit into [0,T]; reduce n_refined or "
            "epsilon_final, or increase ratio");
    }

    g.nodes_.reserve(n_uniform + n_refined + 2);
    if (n_uniform == 0) {
        g.nodes_.push_back(0.0);
    } else {
        for (std::size_t j = 0; j <= n_uniform; ++j)
            g.nodes_.push_back(t_switch * static_cast<double>(j) / static_cast<double>(n_uniform));
    }
    for (std::size_t m = 1; m <= n_refined; ++m) {
        const double dist = epsilon_final / std::pow(ratio, static_cast<double>(n_refined - m));
        g.nodes_.push_back(T - dist);
    }
    g.nodes_.push_back(T);
    for (std::size_t k = 1; k < g.nodes_.size(); ++k) {
        if (!(g.nodes_[k] > g.nodes_[k - 1]))
            throw InvalidArgument("build_grid: refined gaps must stay positive");
    }
    g.switch_index_ = n_uniform;
    g.epsilon_final_ = epsilon_final;
    return g;
}

/// Defaults: 200 uniform steps, 35 geometric steps with ratio 0.85, final gap 1e-4 T.
/// With these values the first refined gap roughly matches the uniform gap.
struct GridSpec {
    double T = 1.0;
    std::size_t n_uniform = 200;
    std::size_t n_refined = 35;
    double ratio = 0.85;
    double epsilon_final = 1e-4;  // relative to T

    TimeGrid build() const { return build_grid(T, n_uniform, n_refined, ratio, epsilon_final * T); }
};

}  // namespace mfliq
