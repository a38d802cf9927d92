#pragma once

#include <optional>
#include <utility>

#include "mfliq/field.hpp"
#include "mfliq/grid.hpp"
#include "mfliq/time_function.hpp"

namespace mfliq {

/// A coefficient process of the form c(t) * F(omega, t): a deterministic
/// time function, optionally multiplied by an adapted field.
class Coefficient {
public:
    Coefficient() : Coefficient(0.0) {}
    Coefficient(double c) : factor_(c) {}                        // NOLINT
    Coefficient(TimeFunction f) : factor_(std::move(f)) {}       // NOLINT
    Coefficient(AdaptedField f) : factor_(1.0), field_(std::move(f)) {}  // NOLINT

    bool has_field() const { return field_.has_value(); }
    const TimeFunction& factor() const { return factor_; }
    const AdaptedField& field() const { return *field_; }

    Measurability tag() const { return field_ ? field_->tag() : Measurability::deterministic; }
    bool is_zero() const { return factor_.is_zero() || (field_ && field_->is_zero()); }

    /// Values on the grid, in compact storage.
    AdaptedField on(const TimeGrid& g, const FieldShape& s) const {
        if (g.size() != s.nodes) throw ShapeMismatch("Coefficient: grid/shape mismatch");
        if (!field_) return AdaptedField::from_function(g, s, factor_);
        if (!(field_->shape() == s)) throw ShapeMismatch("Coefficient: field shape differs from ensemble");
        AdaptedField out = *field_;
        if (factor_.is_constant() && factor_.constant_value() == 1.0) return out;
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t k = 0; k < s.nodes; ++k) out.ref(r, k) *= factor_(g.t(k));
        return out;
    }

    double sup_abs(double T) const {
        if (!field_) return factor_.sup_abs(T);
        return factor_.sup_abs(T) * field_->sup_abs();
    }
    /// Lower bound of the process; exact for pure time functions, and for a
    /// constant factor times a field.
    double inf(double T) const {
        if (!field_) return factor_.inf(T);
        if (factor_.is_constant()) {
            double c = factor_.constant_value();
            return c >= 0 ? c * field_->inf() : c * field_->sup_abs();
        }
        return -sup_abs(T);
    }

    friend Coefficient operator*(const Coefficient& a, const TimeFunction& b) {
        Coefficient out = a;
        out.factor_ = a.factor_ * b;
        return out;
    }
    friend Coefficient operator*(const TimeFunction& b, const Coefficient& a) { return a * b; }
    friend Coefficient operator*(const Coefficient& a, const Coefficient& b) {
        Coefficient out;
        out.factor_ = a.factor_ * b.factor_;
        if (a.field_ && b.field_) out.field_ = *a.field_ * *b.field_;
        else if (a.field_) out.field_ = a.field_;
        else if (b.field_) out.field_ = b.field_;
        return out;
    }

private:
    TimeFunction factor_;
    std::optional<AdaptedField> field_;
};

}  // namespace mfliq
