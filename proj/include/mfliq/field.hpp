#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfliq/ensemble.hpp"
#include "mfliq/errors.hpp"
#include "mfliq/time_function.hpp"

namespace mfliq {

/// Ordered by information content: deterministic < F0-adapted < F-adapted.
enum class Measurability : int { deterministic = 0, common = 1, full = 2 };

inline Measurability max_tag(Measurability a, Measurability b) {
    return static_cast<int>(a) >= static_cast<int>(b) ? a : b;
}

inline const char* to_string(Measurability m) {
    switch (m) {
        case Measurability::deterministic: return "deterministic";
        case Measurability::common: return "common";
        case Measurability::full: return "full";
    }
    return "?";
}

struct FieldShape {
    std::size_t M_common = 1, M_idio = 1, nodes = 0;
    bool operator==(const FieldShape&) const = default;
};

inline FieldShape shape_of(const ParticleEnsemble& e) { return {e.M_common(), e.M_idio(), e.nodes()}; }

inline std::size_t rows_for(Measurability tag, const FieldShape& s) {
    switch (tag) {
        case Measurability::deterministic: return 1;
        case Measurability::common: return s.M_common;
        case Measurability::full: return s.M_common * s.M_idio;
    }
    return 1;
}

/// One real per (common path, idio index, node), stored compactly by its
/// measurability: one row per distinct trajectory, rows contiguous in time.
class AdaptedField {
public:
    AdaptedField() = default;
    AdaptedField(Measurability tag, FieldShape shape, double fill = 0.0)
        : tag_(tag), shape_(shape), data_(rows_for(tag, shape) * shape.nodes, fill) {}

    static AdaptedField deterministic(FieldShape s, std::span<const double> values) {
        if (values.size() != s.nodes) throw ShapeMismatch("AdaptedField: node count mismatch");
        AdaptedField f(Measurability::deterministic, s);
        std::copy(values.begin(), values.end(), f.data_.begin());
        return f;
    }

    static AdaptedField from_function(const TimeGrid& g, FieldShape s, const TimeFunction& fn) {
        if (g.size() != s.nodes) throw ShapeMismatch("AdaptedField: grid/shape mismatch");
        AdaptedField f(Measurability::deterministic, s);
        for (std::size_t k = 0; k < s.nodes; ++k) f.data_[k] = fn(g.t(k));
        return f;
    }

    Measurability tag() const { return tag_; }
    const FieldShape& shape() const { return shape_; }
    std::size_t nodes() const { return shape_.nodes; }
    std::size_t rows() const { return rows_for(tag_, shape_); }
    bool empty() const { return data_.empty(); }

    /// Row of this field that backs row r of a layout with tag `as`.
    std::size_t row_of(Measurability as, std::size_t r) const {
        switch (tag_) {
            case Measurability::deterministic: return 0;
            case Measurability::common:
                return as == Measurability::full ? r / shape_.M_idio : r;
            case Measurability::full:
                if (as != Measurability::full)
                    throw ShapeMismatch("AdaptedField: cannot read F-adapted field in a coarser layout");
                return r;
        }
        return 0;
    }

    double at(Measurability as, std::size_t r, std::size_t k) const {
        return data_[row_of(as, r) * shape_.nodes + k];
    }
    double operator()(std::size_t c, std::size_t i, std::size_t k) const {
        return at(Measurability::full, c * shape_.M_idio + i, k);
    }
    double& ref(std::size_t r, std::size_t k) { return data_[r * shape_.nodes + k]; }
    double value(std::size_t r, std::size_t k) const { return data_[r * shape_.nodes + k]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * shape_.nodes, shape_.nodes}; }
    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * shape_.nodes, shape_.nodes};
    }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    /// Same values re-stored with a finer (or equal) tag.
    AdaptedField as(Measurability tag) const {
        if (static_cast<int>(tag) < static_cast<int>(tag_))
            throw InvalidArgument("AdaptedField::as: cannot coarsen a field");
        if (tag == tag_) return *this;
        AdaptedField out(tag, shape_);
        for (std::size_t r = 0; r < out.rows(); ++r) {
            auto src = row(row_of(tag, r));
            std::copy(src.begin(), src.end(), out.row(r).begin());
        }
        return out;
    }

    /// Checks the measurability invariant on stored data: nothing to check for
    /// compact storage, so this verifies finiteness only.
    bool finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
    }

    double sup_abs() const {
        double m = 0.0;
        for (double x : data_) m = std::max(m, std::abs(x));
        return m;
    }
    double inf() const { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }
    bool is_zero() const {
        return std::all_of(data_.begin(), data_.end(), [](double x) { return x == 0.0; });
    }

private:
    Measurability tag_ = Measurability::deterministic;
    FieldShape shape_{};
    std::vector<double> data_;
};

inline void require_same_shape(const AdaptedField& a, const AdaptedField& b, const char* where) {
    if (!(a.shape() == b.shape())) throw ShapeMismatch(std::string(where) + ": field shapes differ");
}

/// out(r,k) = fn(r,k) for every row of the given layout.
template <class Fn>
AdaptedField generate(Measurability tag, FieldShape s, Fn&& fn) {
    AdaptedField out(tag, s);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t k = 0; k < s.nodes; ++k) out.ref(r, k) = fn(r, k);
    return out;
}

template <class Op>
AdaptedField zip(const AdaptedField& a, const AdaptedField& b, Op op) {
    require_same_shape(a, b, "zip");
    const Measurability t = max_tag(a.tag(), b.tag());
    return generate(t, a.shape(),
                    [&](std::size_t r, std::size_t k) { return op(a.at(t, r, k), b.at(t, r, k)); });
}

template <class Op>
AdaptedField map(const AdaptedField& a, Op op) {
    AdaptedField out = a;
    for (auto& x : out.data()) x = op(x);
    return out;
}

inline AdaptedField operator+(const AdaptedField& a, const AdaptedField& b) {
    return zip(a, b, [](double x, double y) { return x + y; });
}
inline AdaptedField operator-(const AdaptedField& a, const AdaptedField& b) {
    return zip(a, b, [](double x, double y) { return x - y; });
}
inline AdaptedField operator*(const AdaptedField& a, const AdaptedField& b) {
    return zip(a, b, [](double x, double y) { return x * y; });
}
inline AdaptedField operator*(double s, const AdaptedField& a) {
    return map(a, [s](double x) { return s * x; });
}
inline AdaptedField operator-(const AdaptedField& a) { return (-1.0) * a; }

/// Convex combination w*a + (1-w)*b.
inline AdaptedField mix(double w, const AdaptedField& a, const AdaptedField& b) {
    return zip(a, b, [w](double x, double y) { return w * x + (1.0 - w) * y; });
}

}  // namespace mfliq
