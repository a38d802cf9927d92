#include <gtest/gtest.h>

#include <cmath>

#include "mfliq/stackelberg.hpp"

using namespace mfliq;

namespace {

TimeGrid test_grid() { return build_grid(1.0, 200, 35, 0.85, 1e-4); }

LeaderModel decoupled() {
    LeaderModel m;
    m.eta0 = 1.0;
    m.x0 = 1.0;
    m.follower.eta = 1.0;
    m.follower.x = 1.0;
    return m;
}

LeaderModel coupled() {
    LeaderModel m;
    m.eta0 = 1.0;
    m.kappa0 = 1.0;
    m.lambda0 = 1.0;
    m.kappabar0 = 0.1;
    m.kappatilde0 = 0.1;
    m.lambdabar = 1.0;
    m.x0 = 1.0;
    m.follower.eta = 1.0;
    m.follower.kappa = 1.0;
    m.follower.lambda = 1.0;
    m.follower.x = 1.0;
    return m;
}

double max_node_error(const AdaptedField& f, const TimeGrid& g, double (*oracle)(double), std::size_t kmax) {
    double e = 0.0;
    for (std::size_t k = 0; k <= kmax; ++k) e = std::max(e, std::abs(f.value(0, k) - oracle(g.t(k))));
    return e;
}

}  // namespace

TEST(Game, AssumptionExample) {
    LeaderModel m;
    m.eta0 = 1.0;
    m.lambda0 = 1.0;
    m.lambdabar = 1.0;
    m.kappa0 = 0.1;
    m.kappabar0 = 0.1;
    m.kappatilde0 = 0.1;
    m.follower.eta = 1.0;
    m.follower.lambda = 1.0;
    m.follower.kappa = 0.1;
    auto r = check_game_assumptions(m, test_grid());
    ASSERT_TRUE(r.feasible());
    EXPECT_EQ(r.search.theta, (std::vector<double>{1.0, 1.0, 1.0}));
    ASSERT_EQ(r.search.margins.size(), 5u);
    for (double v : r.search.margins) EXPECT_GT(v, 0.0);
    EXPECT_NEAR(r.search.margins[3], 0.9, 1e-12);

    m.lambdabar = 0.0;
    EXPECT_FALSE(check_game_assumptions(m, test_grid()).search.feasible);
}

TEST(Game, DiscountConstantOneWithoutInventoryPenalty) {
    auto m = decoupled();
    m.follower.eta = 0.5;
    auto r = check_game_assumptions(m, test_grid());
    EXPECT_NEAR(r.discount_C, 1.0, 1e-6);
    EXPECT_LE(r.discount_C, 1.0 + 1e-8);
    EXPECT_LE(r.discount_C_penalized, 1.0 + 1e-6);
}

TEST(Game, FollowerResponseDecouplesWithoutCrossImpact) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    auto m = coupled();
    m.kappatilde0 = 0.0;
    AdaptedField xi0 = AdaptedField::from_function(g, shape_of(e), TimeFunction::function([](double t) { return 2.0 * t; }));
    auto a = follower_response(m, xi0, e);
    auto b = optimal_strategy(m.follower, e);
    EXPECT_LT((a.xi - b.xi).sup_abs(), 1e-12);

    auto m2 = coupled();
    auto c = follower_response(m2, AdaptedField(Measurability::deterministic, shape_of(e)), e);
    EXPECT_LT((c.xi - b.xi).sup_abs(), 1e-12);
}

TEST(Game, FollowerResponseIsAffine) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    auto m = coupled();
    const auto s = shape_of(e);
    AdaptedField x1 = AdaptedField::from_function(g, s, TimeFunction::function([](double t) { return 1.0 + t; }));
    AdaptedField x2 = AdaptedField::from_function(g, s, TimeFunction::function([](double t) { return std::sin(3 * t); }));
    const double rho = 0.3;
    auto a = follower_response(m, x1, e), b = follower_response(m, x2, e), c = follower_response(m, mix(rho, x1, x2), e);
    EXPECT_LT((c.xi - mix(rho, a.xi, b.xi)).sup_abs(), 1e-6);
    EXPECT_LT((c.X - mix(rho, a.X, b.X)).sup_abs(), 1e-6);
}

TEST(Game, AdjointZeroAndSign) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    auto m = coupled();
    const auto s = shape_of(e);
    AdaptedField z(Measurability::deterministic, s);
    auto a = solve_adjoint_qr(m, z, z, e);
    EXPECT_EQ(a.q.sup_abs(), 0.0);
    EXPECT_EQ(a.r.sup_abs(), 0.0);

    AdaptedField f = AdaptedField::from_function(g, s, TimeFunction::function([](double t) { return 1.0 - t; }));
    AdaptedField h = AdaptedField::from_function(g, s, TimeFunction::function([](double t) { return t * t; }));
    auto p = solve_adjoint_qr(m, f, h, e), n = solve_adjoint_qr(m, -f, -h, e);
    EXPECT_LT((p.q + n.q).sup_abs(), 1e-9);
    EXPECT_LT((p.r + n.r).sup_abs(), 1e-9);
    EXPECT_EQ(p.q.value(0, 0), 0.0);
}

TEST(Game, AdjointBoundaryValueOracles) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    LeaderModel m = decoupled();
    m.follower.eta = 0.5;
    m.follower.lambda = 0.5;
    const auto s = shape_of(e);
    AdaptedField one(Measurability::deterministic, s, 1.0), zero(Measurability::deterministic, s);

    // Transport input only: the adjoint stays at rest and r absorbs the input.
    auto a = solve_adjoint_qr(m, one, zero, e);
    EXPECT_LT(a.q.sup_abs(), 1e-9);
    EXPECT_LT((a.r - one).sup_abs(), 1e-9);

    // Source input only: q'' = q - 1, q_0 = q_T = 0.
    auto b = solve_adjoint_qr(m, zero, one, e);
    auto q = [](double t) { return 1.0 - std::cosh(t - 0.5) / std::cosh(0.5); };
    auto dq = [](double t) { return -std::sinh(t - 0.5) / std::cosh(0.5); };
    double eq = 0.0, er = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        eq = std::max(eq, std::abs(b.q.value(0, k) - q(g.t(k))));
        er = std::max(er, std::abs(b.r.value(0, k) - dq(g.t(k))));
    }
    EXPECT_LT(eq, 1e-6);
    EXPECT_LT(er, 1e-6);
}

TEST(Game, PbarOracles) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    const auto s = shape_of(e);
    LeaderModel m = decoupled();
    m.eta0 = 0.5;
    m.kappa0 = 1.0;
    auto A = solve_riccati(m.riccati_input(), Terminal::singular(), g);
    AdaptedField zero(Measurability::deterministic, s);
    const double c = 0.7;
    AdaptedField xi0(Measurability::deterministic, s, c);

    auto m0 = m;
    m0.kappa0 = 0.0;
    auto A0 = solve_riccati(m0.riccati_input(), Terminal::singular(), g);
    EXPECT_EQ(solve_pbar(m0, A0, zero, xi0, xi0, e).sup_abs(), 0.0);

    auto pb = solve_pbar(m, A, zero, xi0, zero, e);
    double err = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double tau = 1.0 - g.t(k);
        const double exact = tau > 0 ? c * (std::expm1(tau) - tau) / std::expm1(tau) : 0.0;
        err = std::max(err, std::abs(pb.value(0, k) - exact));
    }
    EXPECT_LT(err, 1e-6);
    const std::size_t kl = g.last() - 1;
    EXPECT_LT(std::abs(pb.value(0, kl)), 1e-3);

    // Linear in (xi0, xi*, q).
    auto ml = coupled();
    auto Al = solve_riccati(ml.riccati_input(), Terminal::singular(), g);
    AdaptedField q1 = AdaptedField::from_function(g, s, TimeFunction::function([](double t) { return t * (1 - t); }));
    AdaptedField x1 = AdaptedField::from_function(g, s, TimeFunction::function([](double t) { return std::cos(t); }));
    auto p1 = solve_pbar(ml, Al, q1, x1, xi0, e), p2 = solve_pbar(ml, Al, xi0, xi0, x1, e);
    auto p3 = solve_pbar(ml, Al, mix(0.4, q1, xi0), mix(0.4, x1, xi0), mix(0.4, xi0, x1), e);
    EXPECT_LT((p3 - mix(0.4, p1, p2)).sup_abs(), 1e-12);
}

TEST(Game, LeaderTwap) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    auto sol = solve_stackelberg(decoupled(), e);
    for (std::size_t k = 0; k < g.size(); ++k) {
        EXPECT_NEAR(sol.xi0.value(0, k), 1.0, 1e-6);
        EXPECT_NEAR(sol.X0.value(0, k), 1.0 - g.t(k), 1e-6);
        EXPECT_NEAR(sol.follower.xi.value(0, k), 1.0, 1e-6);
    }
    EXPECT_NEAR(sol.J0, 1.0, 1e-8);
    EXPECT_NEAR(leader_cost(decoupled(), sol.xi0, e).mean, 1.0, 1e-8);
    EXPECT_LT(sol.representation_residual, 1e-9);
}

TEST(Game, LeaderSinhProfile) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    auto m = decoupled();
    m.lambda0 = 1.0;
    auto sol = solve_stackelberg(m, e);
    auto X = [](double t) { return std::sinh(1.0 - t) / std::sinh(1.0); };
    auto xi = [](double t) { return std::cosh(1.0 - t) / std::sinh(1.0); };
    EXPECT_LT(max_node_error(sol.X0, g, +X, g.last()), 1e-6);
    double e1 = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) e1 = std::max(e1, std::abs(sol.xi0.value(0, k) - xi(g.t(k))));
    EXPECT_LT(e1, 1e-6);
}

TEST(Game, ZeroInventoryLeaderStaysPut) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    auto m = coupled();
    m.kappabar0 = 0.0;
    m.lambdabar = 0.0;
    m.x0 = 0.0;
    auto sol = solve_stackelberg(m, e);
    EXPECT_LT(sol.xi0.sup_abs(), 1e-8);
    EXPECT_NEAR(sol.J0, 0.0, 1e-8);
}

TEST(Game, PenalizedLeaderClosedForm) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    for (double n : {2.0, 8.0, 32.0, 128.0}) {
        auto sol = solve_leader_penalized(decoupled(), n, e);
        const double rate = 2 * n / (1 + 2 * n);
        for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(sol.xi0.value(0, k), rate, 1e-6);
        EXPECT_NEAR(sol.X0.value(0, g.last()), 1.0 / (1 + 2 * n), 1e-6);
        EXPECT_NEAR(sol.J0, 2 * n / (1 + 2 * n), 1e-6);
        EXPECT_NEAR(leader_cost(decoupled(), sol.xi0, e, n).mean, sol.J0, 1e-8);
    }
}

TEST(Game, ValueConvergenceDecoupled) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    auto rep = value_convergence(decoupled(), {2, 4, 8, 16, 32, 64, 128, 256}, e);
    EXPECT_NEAR(rep.J0, 1.0, 1e-8);
    EXPECT_TRUE(rep.sandwich_holds);
    EXPECT_TRUE(rep.transfer_holds);
    for (std::size_t j = 0; j < rep.rows.size(); ++j) {
        const double n = rep.rows[j].n;
        EXPECT_NEAR(rep.rows[j].J0n, 2 * n / (1 + 2 * n), 1e-6);
        if (j) {
            EXPECT_GT(rep.rows[j].J0n, rep.rows[j - 1].J0n);
            EXPECT_GT(rep.rows[j].cesaro, rep.rows[j - 1].cesaro);
            EXPECT_LT(rep.rows[j].leader_terminal, rep.rows[j - 1].leader_terminal);
        }
    }
}

TEST(Game, CoupledFixedPoint) {
    auto g = test_grid();
    auto e = simulate_ensemble(g, 1, 1, 0);
    auto m = coupled();
    ASSERT_TRUE(check_game_assumptions(m, g).feasible());
    auto sol = solve_stackelberg(m, e);
    EXPECT_LE(sol.outer_iterations, 200u);
    EXPECT_LT(sol.fixed_point_residual, 1e-6);
    EXPECT_LT(sol.representation_residual, 1e-6);
    EXPECT_LT(sol.leader_liquidation_residual, 1e-5);
    EXPECT_LT(sol.follower.liquidation_residual, 1e-5);
    EXPECT_EQ(sol.q.value(0, 0), 0.0);
    // D = r + A q stays bounded up to the last node.
    EXPECT_LT(sol.D.sup_abs(), 10.0);
    auto chk = verify_leader_optimality(m, sol, 10, 0.1, 7, e);
    EXPECT_GE(chk.min_difference, -1e-10);
}
