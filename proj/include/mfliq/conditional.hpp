#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mfliq/ensemble.hpp"
#include "mfliq/errors.hpp"
#include "mfliq/field.hpp"
#include "mfliq/parallel.hpp"

namespace mfliq {

/// E[field | F0_t] per common path: the mean over the idiosyncratic index.
/// Fields that are already F0-adapted or deterministic are returned as is.
inline AdaptedField project_common(const ParticleEnsemble& ens, const AdaptedField& field,
                                   unsigned workers = 1) {
    if (!(field.shape() == shape_of(ens))) throw ShapeMismatch("project_common: field not on ensemble shape");
    if (field.tag() != Measurability::full) return field;
    const auto s = field.shape();
    AdaptedField out(Measurability::common, s);
    parallel_for(s.M_common, workers, [&](std::size_t b, std::size_t e) {
        std::vector<double> buf(s.M_idio);
        for (std::size_t c = b; c < e; ++c)
            for (std::size_t k = 0; k < s.nodes; ++k) {
                for (std::size_t i = 0; i < s.M_idio; ++i) buf[i] = field.value(c * s.M_idio + i, k);
                out.ref(c, k) = pairwise_mean(buf);
            }
    });
    return out;
}

struct RegressionInfo {
    std::size_t degree_used = 0;
    bool fallback = false;
};

/// Least-squares projection across common paths onto polynomials of the
/// standardized W0_{t_k}. The QR factorization is cached per node.
class CommonRegressor {
public:
    CommonRegressor(const ParticleEnsemble& ens, std::size_t degree) : ens_(&ens), degree_(degree),
        cache_(ens.nodes()) {}

    std::vector<double> apply(std::size_t k, std::span<const double> y, RegressionInfo* info = nullptr) {
        const std::size_t M = ens_->M_common();
        if (y.size() != M) throw ShapeMismatch("CommonRegressor: one value per common path expected");
        if (M == 1) {
            if (info) *info = {0, false};
            return {y.begin(), y.end()};
        }
        Entry& en = entry(k);
        if (info) *info = {en.degree, en.fallback};
        Eigen::Map<const Eigen::VectorXd> v(y.data(), static_cast<Eigen::Index>(M));
        Eigen::VectorXd fit;
        if (en.degree == 0) {
            fit = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(M), pairwise_sum(y.begin(), M) / double(M));
        } else {
            Eigen::VectorXd coef = en.qr.solve(v);
            fit = en.basis * coef;
        }
        return {fit.data(), fit.data() + fit.size()};
    }

    std::size_t fallback_count() const {
        std::size_t n = 0;
        for (const auto& e : cache_) if (e && e->fallback) ++n;
        return n;
    }

private:
    struct Entry {
        std::size_t degree = 0;
        bool fallback = false;
        Eigen::MatrixXd basis;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
    };

    Entry& entry(std::size_t k) {
        if (cache_[k]) return *cache_[k];
        auto en = std::make_unique<Entry>();
        const std::size_t M = ens_->M_common();
        const double t = ens_->grid().t(k);
        std::size_t d = degree_;
        if (M < d + 2) {
            d = M >= 2 ? M - 2 : 0;
            en->fallback = true;
        }
        if (t <= 0.0) d = 0;  // F0_0 is trivial
        while (d > 0) {
            const double sd = std::sqrt(t);
            Eigen::MatrixXd B(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(d + 1));
            for (std::size_t c = 0; c < M; ++c) {
                double x = ens_->W0(c, k) / sd, p = 1.0;
                for (std::size_t j = 0; j <= d; ++j, p *= x) B(Eigen::Index(c), Eigen::Index(j)) = p;
            }
            en->qr.compute(B);
            if (static_cast<std::size_t>(en->qr.rank()) == d + 1) {
                en->basis = std::move(B);
                break;
            }
            en->fallback = true;
            --d;
        }
        en->degree = d;
        cache_[k] = std::move(en);
        return *cache_[k];
    }

    const ParticleEnsemble* ens_;
    std::size_t degree_;
    std::vector<std::unique_ptr<Entry>> cache_;
};

/// Least-squares projection across all particles onto bivariate polynomials
/// of the standardized (W0_{t_k}, Wbar_{t_k}) of total degree <= degree.
/// Normal equations are formed once per node and cached.
class FullRegressor {
public:
    FullRegressor(const ParticleEnsemble& ens, std::size_t degree) : ens_(&ens), degree_(degree),
        cache_(ens.nodes()) {}

    std::vector<double> apply(std::size_t k, std::span<const double> y, RegressionInfo* info = nullptr) {
        const std::size_t P = ens_->particles();
        if (y.size() != P) throw ShapeMismatch("FullRegressor: one value per particle expected");
        if (P == 1) {
            if (info) *info = {0, false};
            return {y.begin(), y.end()};
        }
        Entry& en = entry(k);
        if (info) *info = {en.degree, en.fallback};
        const std::size_t nb = en.powers.size();
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(Eigen::Index(nb));
        std::vector<double> row(nb);
        for (std::size_t p = 0; p < P; ++p) {
            basis_row(k, p, en, row);
            for (std::size_t j = 0; j < nb; ++j) rhs(Eigen::Index(j)) += row[j] * y[p];
        }
        Eigen::VectorXd coef = en.qr.solve(rhs);
        std::vector<double> out(P);
        for (std::size_t p = 0; p < P; ++p) {
            basis_row(k, p, en, row);
            double s = 0.0;
            for (std::size_t j = 0; j < nb; ++j) s += row[j] * coef(Eigen::Index(j));
            out[p] = s;
        }
        return out;
    }

    std::size_t fallback_count() const {
        std::size_t n = 0;
        for (const auto& e : cache_) if (e && e->fallback) ++n;
        return n;
    }

private:
    struct Entry {
        std::size_t degree = 0;
        bool fallback = false;
        std::vector<std::pair<int, int>> powers;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
    };

    void basis_row(std::size_t k, std::size_t p, const Entry& en, std::vector<double>& row) const {
        const double t = ens_->grid().t(k);
        const double sd = t > 0.0 ? std::sqrt(t) : 1.0;
        const std::size_t mi = ens_->M_idio();
        const double x = ens_->W0(p / mi, k) / sd, z = ens_->Wbar(p / mi, p % mi, k) / sd;
        for (std::size_t j = 0; j < en.powers.size(); ++j)
            row[j] = std::pow(x, en.powers[j].first) * std::pow(z, en.powers[j].second);
    }

    Entry& entry(std::size_t k) {
        if (cache_[k]) return *cache_[k];
        auto en = std::make_unique<Entry>();
        const std::size_t P = ens_->particles();
        std::size_t d = ens_->grid().t(k) <= 0.0 ? 0 : degree_;
        for (;;) {
            en->powers.clear();
            for (int tot = 0; tot <= int(d); ++tot)
                for (int a = tot; a >= 0; --a) en->powers.emplace_back(a, tot - a);
            const std::size_t nb = en->powers.size();
            if (nb + 1 > P && d > 0) {
                en->fallback = true;
                --d;
                continue;
            }
            Eigen::MatrixXd G = Eigen::MatrixXd::Zero(Eigen::Index(nb), Eigen::Index(nb));
            std::vector<double> row(nb);
            for (std::size_t p = 0; p < P; ++p) {
                basis_row(k, p, *en, row);
                for (std::size_t a = 0; a < nb; ++a)
                    for (std::size_t b = 0; b < nb; ++b) G(Eigen::Index(a), Eigen::Index(b)) += row[a] * row[b];
            }
            en->qr.setThreshold(1e-12);
            en->qr.compute(G);
            if (static_cast<std::size_t>(en->qr.rank()) == nb || d == 0) break;
            en->fallback = true;
            --d;
        }
        en->degree = d;
        cache_[k] = std::move(en);
        return *cache_[k];
    }

    const ParticleEnsemble* ens_;
    std::size_t degree_;
    std::vector<std::unique_ptr<Entry>> cache_;
};

/// One-off common-path regression at node t_index.
inline std::vector<double> regress_conditional(const ParticleEnsemble& ens, std::size_t t_index,
                                               std::span<const double> future_values,
                                               std::size_t basis_degree, RegressionInfo* info = nullptr) {
    if (t_index >= ens.nodes()) throw InvalidArgument("regress_conditional: node out of range");
    CommonRegressor reg(ens, basis_degree);
    return reg.apply(t_index, future_values, info);
}

}  // namespace mfliq
