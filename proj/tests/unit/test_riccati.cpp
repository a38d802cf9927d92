#include <gtest/gtest.h>

#include <cmath>

#include "mfliq/riccati.hpp"

using namespace mfliq;

namespace {

TimeGrid test_grid() { return build_grid(1.0, 200, 35, 0.85, 1e-4); }

double max_rel(const RiccatiSolution& s, double (*exact)(double), double cut) {
    double e = 0.0;
    for (std::size_t k = 0; k < s.grid.size(); ++k) {
        double t = s.grid.t(k);
        if (t > cut) break;
        e = std::max(e, std::abs(s.A(k) - exact(t)) / exact(t));
    }
    return e;
}

}  // namespace

TEST(Riccati, SingularLinear) {
    auto s = solve_riccati({1.0, 0.0, 0.0, 1.0}, Terminal::singular(), test_grid());
    EXPECT_LT(max_rel(s, [](double t) { return 1.0 / (1.0 - t); }, 1.0 - 1e-3), 1e-8);
    EXPECT_EQ(s.psi.back(), 0.0);
    EXPECT_DOUBLE_EQ(s.beta, 1.0);
}

TEST(Riccati, SingularCoth) {
    auto s = solve_riccati({1.0, 1.0, 0.0, 1.0}, Terminal::singular(), test_grid());
    EXPECT_LT(max_rel(s, [](double t) { return 1.0 / std::tanh(1.0 - t); }, 1.0 - 1e-3), 1e-8);
}

TEST(Riccati, ScaledCoth) {
    // c coth(k(T-t)), c = sqrt(L4/L1), k = sqrt(L1 L4)
    auto s = solve_riccati({0.5, 2.0, 0.0, 1.0}, Terminal::singular(), test_grid());
    double e = 0.0;
    for (std::size_t k = 0; k + 1 < s.grid.size(); ++k) {
        double t = s.grid.t(k), ex = 2.0 / std::tanh(1.0 - t);
        e = std::max(e, std::abs(s.A(k) - ex) / ex);
    }
    EXPECT_LT(e, 1e-8);
}

TEST(Riccati, PenalizedClosedFormAndGap) {
    auto g = test_grid();
    auto sing = solve_riccati({1.0, 0.0, 0.0, 1.0}, Terminal::singular(), g);
    for (double n : {1.0, 8.0, 256.0}) {
        auto s = solve_riccati({1.0, 0.0, 0.0, 1.0}, Terminal::penalized(n), g);
        EXPECT_NEAR(s.psi.back(), 1.0 / (2 * n), 1e-15);
        for (std::size_t k = 0; k < g.size(); ++k) {
            double t = g.t(k), ex = 2 * n / (1 + 2 * n * (1 - t));
            EXPECT_LT(std::abs(s.A(k) - ex) / ex, 1e-8);
            if (t <= 1.0 - 1e-3) {
                double gap = 1.0 / ((1 - t) * (1 + 2 * n * (1 - t)));
                EXPECT_LT(std::abs(sing.A(k) - s.A(k) - gap) / gap, 1e-8);
            }
        }
    }
}

TEST(Riccati, PenalizedMonotoneInN) {
    auto g = test_grid();
    RiccatiInput in{TimeFunction::function([](double t) { return 1.0 + 0.5 * std::sin(3 * t); }), 0.7, 0.0, 1.0};
    auto sing = solve_riccati(in, Terminal::singular(), g);
    std::vector<double> prev(g.size(), 0.0);
    for (double n : {1.0, 2.0, 4.0, 8.0, 16.0}) {
        auto s = solve_riccati(in, Terminal::penalized(n), g);
        for (std::size_t k = 0; k + 1 < g.size(); ++k) {
            EXPECT_GE(s.A(k), prev[k] - 1e-12);
            EXPECT_LE(s.A(k), sing.A(k) * (1 + 1e-12));
            prev[k] = s.A(k);
        }
    }
}

TEST(Riccati, FourthOrderRefinement) {
    auto err = [](std::size_t n) {
        auto g = build_grid(1.0, n, 0, 0.5, 1.0 / n);
        auto s = solve_riccati({1.0, 1.0, 0.0, 1.0}, Terminal::penalized(1.0), g,
                               RiccatiOptions{std::numeric_limits<double>::infinity()});
        // A^n with A_T = 2, L1 = L4 = 1: A = coth(T - t + atanh(1/2))
        double e = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k)
            e = std::max(e, std::abs(s.A(k) - 1.0 / std::tanh(1.0 - g.t(k) + std::atanh(0.5))));
        return e;
    };
    EXPECT_GE(err(10) / err(20), 8.0);
}

TEST(Riccati, DiscountClosedForms) {
    auto g = test_grid();
    auto s = solve_riccati({1.0, 0.0, 0.0, 1.0}, Terminal::singular(), g);
    EXPECT_EQ(discount(0.3, 0.3, s), 1.0);
    EXPECT_NEAR(discount(0.2, 0.7, s), 0.3 / 0.8, 1e-8);
    EXPECT_NEAR(discount(0.123, 0.9871, s), (1 - 0.9871) / (1 - 0.123), 1e-8);
    EXPECT_EQ(discount(0.5, 1.0, s), 0.0);
    const double n = 4.0;
    auto p = solve_riccati({1.0, 0.0, 0.0, 1.0}, Terminal::penalized(n), g);
    EXPECT_NEAR(discount(0.1, 1.0, p), (1.0 / (2 * n)) / (0.9 + 1.0 / (2 * n)), 1e-8);
    double prev = 1.0;
    for (double t2 = 0.1; t2 <= 1.0; t2 += 0.05) {
        double d = discount(0.1, t2, p);
        EXPECT_LE(d, prev + 1e-15);
        prev = d;
    }
    EXPECT_THROW(discount(0.5, 0.4, s), InvalidArgument);
}

TEST(Riccati, DriftDiscountIncludesDriftTerm) {
    // L1 = 1, L4 = 0, c const: psi' = c psi - 1, psi_T = 0 => psi = (1 - e^{-c(T-t)})/c
    const double c = 0.7;
    auto g = test_grid();
    auto s = solve_riccati({1.0, 0.0, c, 1.0}, Terminal::singular(), g);
    auto psi = [&](double t) { return (1 - std::exp(-c * (1 - t))) / c; };
    for (std::size_t k = 0; k + 1 < g.size(); k += 7) EXPECT_NEAR(s.psi[k] / psi(g.t(k)), 1.0, 1e-9);
    auto direct = [&](double a, double b) {
        const int m = 20000;
        double h = (b - a) / m, sum = 0;
        for (int j = 0; j <= m; ++j) sum += (j == 0 || j == m ? 1 : (j % 2 ? 4 : 2)) / psi(a + j * h);
        return std::exp(-sum * h / 3);
    };
    EXPECT_NEAR(discount(0.1, 0.8, s), direct(0.1, 0.8), 1e-9);
}

TEST(Riccati, BoundsHoldOnTestSets) {
    auto g = test_grid();
    std::vector<RiccatiInput> ins = {
        {1.0, 0.0, 0.0, 1.0},
        {1.0, 1.0, 0.0, 1.0},
        {0.5, 2.0, 0.0, 1.0},
        {TimeFunction::function([](double t) { return 1.0 + 0.5 * std::sin(5 * t); }), 1.0, 0.0, 1.0},
        {TimeFunction::table({0.0, 0.5, 1.0}, {0.5, 2.0, 1.0}), TimeFunction::function([](double t) { return t; }),
         0.0, 1.0},
    };
    for (const auto& in : ins) {
        auto s = solve_riccati(in, Terminal::singular(), g);
        auto rep = check_riccati_bounds(s);
        EXPECT_TRUE(rep.passed);
        EXPECT_LE(rep.sandwich_max_violation, 1e-8);
        EXPECT_LE(rep.fitted_C, 1.0 + 1e-8);
        for (double n : {2.0, 64.0}) {
            auto p = solve_riccati(in, Terminal::penalized(n), g);
            EXPECT_TRUE(check_riccati_bounds(p).passed);
        }
    }
}

TEST(Riccati, TightSandwichForLinearCase) {
    auto s = solve_riccati({1.0, 0.0, 0.0, 1.0}, Terminal::singular(), test_grid());
    auto rep = check_riccati_bounds(s);
    for (std::size_t k = 0; k + 1 < s.grid.size(); ++k) {
        EXPECT_NEAR(rep.lower[k] * (1 - s.grid.t(k)), 1.0, 1e-10);
        EXPECT_NEAR(rep.upper[k] * (1 - s.grid.t(k)), 1.0, 1e-10);
    }
    EXPECT_LT(rep.sandwich_max_violation, 1e-8);
}

TEST(Riccati, BetaForVaryingLambda1) {
    RiccatiInput in{TimeFunction::table({0.0, 1.0}, {0.5, 2.0}), 0.0, 0.0, 1.0};
    EXPECT_NEAR(in.beta(), 0.25, 1e-12);
}

TEST(Riccati, RejectsInvalidInput) {
    auto g = test_grid();
    EXPECT_THROW(solve_riccati({0.0, 0.0, 0.0, 1.0}, Terminal::singular(), g), InvalidArgument);
    EXPECT_THROW(solve_riccati({1.0, -1.0, 0.0, 1.0}, Terminal::singular(), g), InvalidArgument);
    EXPECT_THROW(solve_riccati({1.0, 0.0, 0.0, 2.0}, Terminal::singular(), g), InvalidArgument);
    EXPECT_THROW(Terminal::penalized(0.0), InvalidArgument);
}
