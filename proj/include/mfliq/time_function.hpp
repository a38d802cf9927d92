#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "mfliq/errors.hpp"

namespace mfliq {

/// Deterministic function of time. Constant, tabulated with linear
/// interpolation (flat extrapolation), or an arbitrary callable.
class TimeFunction {
public:
    TimeFunction() : TimeFunction(0.0) {}
    TimeFunction(double c) : kind_(Kind::constant), c_(c) {}  // NOLINT: implicit on purpose

    static TimeFunction constant(double c) { return TimeFunction(c); }

    static TimeFunction table(std::vector<double> t, std::vector<double> v) {
        if (t.empty() || t.size() != v.size())
            throw InvalidArgument("TimeFunction::table: need equally sized nonempty columns");
        for (std::size_t i = 1; i < t.size(); ++i)
            if (!(t[i] > t[i - 1])) throw InvalidArgument("TimeFunction::table: times must increase");
        for (double x : v)
            if (!std::isfinite(x)) throw InvalidArgument("TimeFunction::table: non-finite value");
        TimeFunction f;
        f.kind_ = Kind::table;
        f.t_ = std::make_shared<const std::vector<double>>(std::move(t));
        f.v_ = std::make_shared<const std::vector<double>>(std::move(v));
        return f;
    }

    static TimeFunction function(std::function<double(double)> fn) {
        if (!fn) throw InvalidArgument("TimeFunction::function: empty callable");
        TimeFunction f;
        f.kind_ = Kind::callable;
        f.fn_ = std::make_shared<const std::function<double(double)>>(std::move(fn));
        return f;
    }

    double operator()(double t) const {
        switch (kind_) {
            case Kind::constant: return c_;
            case Kind::table: {
                const auto& ts = *t_;
                const auto& vs = *v_;
                if (t <= ts.front()) return vs.front();
                if (t >= ts.back()) return vs.back();
                auto it = std::upper_bound(ts.begin(), ts.end(), t);
                std::size_t j = static_cast<std::size_t>(it - ts.begin());
                double w = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
                return (1.0 - w) * vs[j - 1] + w * vs[j];
            }
            case Kind::callable: return (*fn_)(t);
        }
        return 0.0;
    }

    bool is_constant() const { return kind_ == Kind::constant; }
    bool is_zero() const { return kind_ == Kind::constant && c_ == 0.0; }
    double constant_value() const { return c_; }

    /// Points at which the function is sampled for sup/inf estimates on [0,T].
    std::vector<double> sample_points(double T, std::size_t n = 2000) const {
        std::vector<double> pts;
        if (kind_ == Kind::constant) return {0.0};
        pts.reserve(n + 1 + (t_ ? t_->size() : 0));
        for (std::size_t i = 0; i <= n; ++i) pts.push_back(T * static_cast<double>(i) / static_cast<double>(n));
        if (t_) for (double s : *t_) if (s >= 0.0 && s <= T) pts.push_back(s);
        return pts;
    }

    double sup(double T) const {
        double m = -std::numeric_limits<double>::infinity();
        for (double s : sample_points(T)) m = std::max(m, (*this)(s));
        return m;
    }
    double inf(double T) const {
        double m = std::numeric_limits<double>::infinity();
        for (double s : sample_points(T)) m = std::min(m, (*this)(s));
        return m;
    }
    double sup_abs(double T) const {
        double m = 0.0;
        for (double s : sample_points(T)) m = std::max(m, std::abs((*this)(s)));
        return m;
    }

    friend TimeFunction operator*(const TimeFunction& a, const TimeFunction& b) {
        if (a.is_constant() && b.is_constant()) return TimeFunction(a.c_ * b.c_);
        if (a.is_zero() || b.is_zero()) return TimeFunction(0.0);
        return function([a, b](double t) { return a(t) * b(t); });
    }
    friend TimeFunction operator+(const TimeFunction& a, const TimeFunction& b) {
        if (a.is_constant() && b.is_constant()) return TimeFunction(a.c_ + b.c_);
        if (a.is_zero()) return b;
        if (b.is_zero()) return a;
        return function([a, b](double t) { return a(t) + b(t); });
    }
    friend TimeFunction operator*(double s, const TimeFunction& a) { return TimeFunction(s) * a; }
    TimeFunction operator-() const { return (-1.0) * (*this); }

    /// Pointwise 1/f; callers guarantee f stays away from zero.
    TimeFunction reciprocal() const {
        if (is_constant()) {
            if (c_ == 0.0) throw InvalidArgument("TimeFunction::reciprocal of zero");
            return TimeFunction(1.0 / c_);
        }
        TimeFunction self = *this;
        return function([self](double t) { return 1.0 / self(t); });
    }

private:
    enum class Kind { constant, table, callable };
    Kind kind_ = Kind::constant;
    double c_ = 0.0;
    std::shared_ptr<const std::vector<double>> t_, v_;
    std::shared_ptr<const std::function<double(double)>> fn_;
};

}  // namespace mfliq
