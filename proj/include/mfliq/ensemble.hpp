#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <vector>

#include "mfliq/errors.hpp"
#include "mfliq/grid.hpp"

namespace mfliq {

/// Brownian increments and paths for M_common common-noise paths, each
/// carrying M_idio idiosyncratic paths. Particle (c, i) has flat index
/// c * M_idio + i.
class ParticleEnsemble {
public:
    ParticleEnsemble() = default;

    const TimeGrid& grid() const { return grid_; }
    std::size_t M_common() const { return mc_; }
    std::size_t M_idio() const { return mi_; }
    std::size_t particles() const { return mc_ * mi_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t steps() const { return grid_.size() - 1; }
    std::size_t nodes() const { return grid_.size(); }

    double dW0(std::size_t c, std::size_t k) const { return dw0_[c * steps() + k]; }
    double dWbar(std::size_t c, std::size_t i, std::size_t k) const {
        return dwb_[(c * mi_ + i) * steps() + k];
    }
    double W0(std::size_t c, std::size_t k) const { return w0_[c * nodes() + k]; }
    double Wbar(std::size_t c, std::size_t i, std::size_t k) const {
        return wb_[(c * mi_ + i) * nodes() + k];
    }

    const std::vector<double>& increments_common() const { return dw0_; }
    const std::vector<double>& increments_idio() const { return dwb_; }

    /// Standard normals, one per particle, from a stream independent of both
    /// Brownian streams. Used for random initial conditions.
    std::vector<double> particle_normals(std::uint32_t salt) const {
        std::seed_seq seq{lo(seed_), hi(seed_), 2u + salt};
        std::mt19937_64 gen(seq);
        std::normal_distribution<double> z;
        std::vector<double> out(particles());
        for (auto& x : out) x = z(gen);
        return out;
    }

    bool same_layout(const ParticleEnsemble& o) const {
        return mc_ == o.mc_ && mi_ == o.mi_ && grid_.size() == o.grid_.size();
    }

private:
    friend ParticleEnsemble simulate_ensemble(const TimeGrid&, std::size_t, std::size_t, std::uint64_t);

    static std::uint32_t lo(std::uint64_t s) { return static_cast<std::uint32_t>(s & 0xffffffffu); }
    static std::uint32_t hi(std::uint64_t s) { return static_cast<std::uint32_t>(s >> 32); }

    TimeGrid grid_;
    std::size_t mc_ = 0, mi_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<double> dw0_, dwb_, w0_, wb_;
};

/// Common increments come from one mt19937_64 stream and idiosyncratic
/// increments from a second, distinctly seeded stream. Generation is
/// sequential so the result depends only on (grid, counts, seed).
inline ParticleEnsemble simulate_ensemble(const TimeGrid& grid, std::size_t M_common,
                                          std::size_t M_idio, std::uint64_t seed) {
    if (M_common < 1 || M_idio < 1) throw InvalidArgument("simulate_ensemble: counts must be >= 1");
    if (grid.size() < 2) throw InvalidArgument("simulate_ensemble: grid has no steps");
    ParticleEnsemble e;
    e.grid_ = grid;
    e.mc_ = M_common;
    e.mi_ = M_idio;
    e.seed_ = seed;
    const std::size_t K = grid.size() - 1, N = grid.size();
    std::vector<double> sd(K);
    for (std::size_t k = 0; k < K; ++k) sd[k] = std::sqrt(grid.gap(k));

    std::normal_distribution<double> z;
    {
        std::seed_seq seq{ParticleEnsemble::lo(seed), ParticleEnsemble::hi(seed), 0u};
        std::mt19937_64 gen(seq);
        e.dw0_.resize(M_common * K);
        e.w0_.assign(M_common * N, 0.0);
        for (std::size_t c = 0; c < M_common; ++c)
            for (std::size_t k = 0; k < K; ++k) {
                double d = sd[k] * z(gen);
                e.dw0_[c * K + k] = d;
                e.w0_[c * N + k + 1] = e.w0_[c * N + k] + d;
            }
    }
    {
        z.reset();
        std::seed_seq seq{ParticleEnsemble::lo(seed), ParticleEnsemble::hi(seed), 1u};
        std::mt19937_64 gen(seq);
        const std::size_t P = M_common * M_idio;
        e.dwb_.resize(P * K);
        e.wb_.assign(P * N, 0.0);
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t k = 0; k < K; ++k) {
                double d = sd[k] * z(gen);
                e.dwb_[p * K + k] = d;
                e.wb_[p * N + k + 1] = e.wb_[p * N + k] + d;
            }
    }
    return e;
}

/// CSV dump of all increments: kind,common,idio,step,t0,t1,dW.
inline void write_increments_csv(const ParticleEnsemble& e, std::ostream& os) {
    os.precision(17);
    os << "kind,common,idio,step,t0,t1,dW\n";
    const auto& g = e.grid();
    for (std::size_t c = 0; c < e.M_common(); ++c)
        for (std::size_t k = 0; k < e.steps(); ++k)
            os << "common," << c << ",," << k << ',' << g.t(k) << ',' << g.t(k + 1) << ','
               << e.dW0(c, k) << '\n';
    for (std::size_t c = 0; c < e.M_common(); ++c)
        for (std::size_t i = 0; i < e.M_idio(); ++i)
            for (std::size_t k = 0; k < e.steps(); ++k)
                os << "idio," << c << ',' << i << ',' << k << ',' << g.t(k) << ',' << g.t(k + 1)
                   << ',' << e.dWbar(c, i, k) << '\n';
}

}  // namespace mfliq
