#include <cmath>
#include <random>

#include "doctest.h"

#include "dicho/block_system.hpp"
#include "dicho/dichotomy.hpp"
#include "dicho/greens.hpp"

using dicho::BlockSystem;
using dicho::GreensFunction;
using dicho::GridTrajectory;
using dicho::TimeGrid;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace {

Mat scalar(double v) {
    Mat m(1, 1);
    m << v;
    return m;
}

BlockSystem<double> two_scalar_system(double eps) {
    BlockSystem<double> sys;
    sys.blocks.push_back(scalar(-1.0));
    sys.blocks.push_back(scalar(1.0));
    sys.couplings[{0, 1}] = scalar(eps);
    sys.couplings[{1, 0}] = scalar(eps);
    return sys;
}

GridTrajectory<double> constant_trajectory(const TimeGrid<double>& grid, const Vec& v) {
    GridTrajectory<double> x;
    x.grid = grid;
    x.values = v.replicate(1, grid.size());
    x.derivatives = Mat::Zero(v.size(), grid.size());
    return x;
}

}  // namespace

TEST_CASE("greens_eval: piecewise values and sign convention") {
    auto agg1 = dicho::extract_aggregate<double>({scalar(-1.0)}, 0.0);
    GreensFunction<double> g1(agg1);
    CHECK(dicho::greens_eval(g1, 1.0)(0, 0) == doctest::Approx(std::exp(-1.0)));

    auto agg2 = dicho::extract_aggregate<double>({scalar(1.0)}, 0.0);
    GreensFunction<double> g2(agg2);
    CHECK(dicho::greens_eval(g2, 1.0)(0, 0) == 0.0);
    CHECK(dicho::greens_eval(g2, -1.0)(0, 0) == doctest::Approx(-std::exp(-1.0)));

    auto agg3 = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.0);
    GreensFunction<double> g3(agg3);
    Mat v = dicho::greens_eval(g3, 2.0);
    CHECK(v(0, 0) == doctest::Approx(std::exp(-2.0)));
    CHECK(v(1, 1) == 0.0);

    // one-sided limits at 0
    CHECK(dicho::greens_eval(g3, 0.0, dicho::GreensSide::Right)(0, 0) == doctest::Approx(1.0));
    CHECK(dicho::greens_eval(g3, 0.0, dicho::GreensSide::Left)(1, 1) == doctest::Approx(-1.0));
}

TEST_CASE("apply_S1: zero coupling and zero input give zero") {
    BlockSystem<double> sys;
    sys.blocks.push_back(scalar(-1.0));
    sys.blocks.push_back(scalar(1.0));
    auto agg = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.0);
    GreensFunction<double> g(agg);
    auto grid = TimeGrid<double>::uniform_step(0.0, 20.0, 0.01);
    Vec ones = Vec::Ones(2);
    auto res = dicho::apply_S1(sys, g, constant_trajectory(grid, ones), 1e3);
    CHECK(res.trajectory.norm_sup() < 1e-14);

    auto sys_c = two_scalar_system(0.1);
    auto res0 = dicho::apply_S1(sys_c, g, constant_trajectory(grid, Vec::Zero(2)), 1e3);
    CHECK(res0.trajectory.norm_sup() == 0.0);
}

TEST_CASE("apply_S1: two-scalar closed-form oracle") {
    // oracle: x == (1,1), f = (0.1, 0.1);
    //   y_1(t) = int_0^t e^{-(t-s)} 0.1 ds = 0.1 (1 - e^{-t})
    //   y_2(t) = -int_t^inf e^{t-s} 0.1 ds = -0.1
    auto sys = two_scalar_system(0.1);
    auto agg = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.0);
    GreensFunction<double> g(agg);
    auto grid = TimeGrid<double>::uniform_step(0.0, 30.0, 0.01);
    auto res = dicho::apply_S1(sys, g, constant_trajectory(grid, Vec::Ones(2)), 1e3);
    for (dicho::Index k = 0; k < grid.size(); ++k) {
        const double t = grid.points[static_cast<std::size_t>(k)];
        if (t > 16.0) break;  // truncated-tail region excluded (e^{-(30-t)} > 1e-6 there)
        CHECK(res.trajectory.values(0, k) == doctest::Approx(0.1 * (1.0 - std::exp(-t))).epsilon(1e-6));
        CHECK(res.trajectory.values(1, k) == doctest::Approx(-0.1).epsilon(1e-6));
    }
}

TEST_CASE("apply_S2: mirrored closed form on the negative half-line") {
    // mirror the S1 oracle under t -> -t: blocks negated, same couplings
    BlockSystem<double> sys;
    sys.blocks.push_back(scalar(1.0));
    sys.blocks.push_back(scalar(-1.0));
    sys.couplings[{0, 1}] = scalar(0.1);
    sys.couplings[{1, 0}] = scalar(0.1);
    auto agg = dicho::extract_aggregate<double>({scalar(1.0), scalar(-1.0)}, 0.0);
    GreensFunction<double> g(agg);
    auto grid = TimeGrid<double>::uniform_step(-30.0, 0.0, 0.01);
    auto res = dicho::apply_S2(sys, g, constant_trajectory(grid, Vec::Ones(2)), 1e3);
    for (dicho::Index k = 0; k < grid.size(); ++k) {
        const double t = grid.points[static_cast<std::size_t>(k)];
        if (t < -16.0) continue;
        // component 1 is unstable forward = stable backward: y_1(t) = 0.1(1 - e^{t}) sign-flipped
        CHECK(res.trajectory.values(0, k) == doctest::Approx(-0.1 * (1.0 - std::exp(t))).epsilon(1e-6));
        CHECK(res.trajectory.values(1, k) == doctest::Approx(0.1).epsilon(1e-6));
    }
}

TEST_CASE("apply_S_fullline: constant input steady values") {
    auto sys = two_scalar_system(0.1);
    auto agg = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.0);
    GreensFunction<double> g(agg);
    auto grid = TimeGrid<double>::uniform_step(-25.0, 25.0, 0.01);
    auto res = dicho::apply_S_fullline(sys, g, constant_trajectory(grid, Vec::Ones(2)), 1e3);
    // interior: y_1 = 0.1 * int_{-inf}^t e^{-(t-s)} ds = 0.1, y_2 = -0.1
    const auto mid = grid.size() / 2;
    CHECK(res.trajectory.values(0, mid) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(res.trajectory.values(1, mid) == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("apply_S1: linearity") {
    auto sys = two_scalar_system(0.2);
    auto agg = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.1);
    GreensFunction<double> g(agg);
    auto grid = TimeGrid<double>::uniform_step(0.0, 25.0, 0.02);

    std::mt19937_64 rng(99);
    std::normal_distribution<double> n(0.0, 1.0);
    GridTrajectory<double> x, y;
    x.grid = y.grid = grid;
    x.values.resize(2, grid.size());
    y.values.resize(2, grid.size());
    for (dicho::Index k = 0; k < grid.size(); ++k) {
        const double t = grid.points[static_cast<std::size_t>(k)];
        x.values.col(k) << std::exp(-0.3 * t) * std::sin(t), std::exp(-0.5 * t);
        y.values.col(k) << std::cos(2 * t) * std::exp(-t), n(rng) * 0.0 + std::exp(-0.2 * t);
    }
    const double a = 1.7, b = -0.6;
    GridTrajectory<double> combo = x;
    combo.values = a * x.values + b * y.values;

    auto sx = dicho::apply_S1(sys, g, x, 1e3);
    auto sy = dicho::apply_S1(sys, g, y, 1e3);
    auto sc = dicho::apply_S1(sys, g, combo, 1e3);
    CHECK((sc.trajectory.values - (a * sx.trajectory.values + b * sy.trajectory.values)).norm() < 1e-9);
}

TEST_CASE("apply_S1: empirical norm bound (nerivn:1)") {
    auto sys = two_scalar_system(0.15);
    auto agg = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.1);
    GreensFunction<double> g(agg);
    const auto q = dicho::contraction_factor(agg, dicho::coupling_norms(sys));
    auto grid = TimeGrid<double>::uniform_step(0.0, 30.0, 0.02);

    std::mt19937_64 rng(4242);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        GridTrajectory<double> x;
        x.grid = grid;
        x.values.resize(2, grid.size());
        const double w1 = 0.5 + 0.1 * trial, r1 = 0.2 + 0.05 * trial;
        for (dicho::Index k = 0; k < grid.size(); ++k) {
            const double t = grid.points[static_cast<std::size_t>(k)];
            x.values.col(k) << n(rng) * std::exp(-r1 * t), std::sin(w1 * t) * std::exp(-0.3 * t);
        }
        auto res = dicho::apply_S1(sys, g, x, 1e3);
        CHECK(res.trajectory.norm_sup() <= q.q_sum * x.norm_sup() + 1e-8);
    }
}

TEST_CASE("contraction_factor: zero couplings and running-example arithmetic") {
    BlockSystem<double> sys;
    sys.blocks.push_back(scalar(-1.0));
    sys.blocks.push_back(scalar(1.0));
    auto agg = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.0);
    auto q0 = dicho::contraction_factor(agg, dicho::coupling_norms(sys));
    CHECK(q0.q_sum == 0.0);
    CHECK(q0.q_max == 0.0);

    auto sys_c = two_scalar_system(0.1);
    auto q = dicho::contraction_factor(agg, dicho::coupling_norms(sys_c));
    CHECK(q.q_sum == doctest::Approx(0.4).epsilon(1e-12));  // (1/1 + 1/1) * 0.2

    auto agg_m = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.1);
    auto qm = dicho::contraction_factor(agg_m, dicho::coupling_norms(sys_c));
    CHECK(qm.q_sum == doctest::Approx((1.0 / 0.9 + 1.0 / 0.9) * 0.2).epsilon(1e-12));
}

TEST_CASE("greens decay envelope holds on sampled grid") {
    auto agg = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.1);
    GreensFunction<double> g(agg);
    for (int k = 1; k <= 40; ++k) {
        const double t = 0.25 * k;
        double bound_pos = 0, bound_neg = 0;
        for (const auto& b : agg.per_block) {
            bound_pos += b.m_const * std::exp(-b.alpha * t);
            bound_neg += b.n_const * std::exp(-b.beta * t);
        }
        CHECK(dicho::operator_norm(dicho::greens_eval(g, t)) <= bound_pos * (1 + 1e-8));
        CHECK(dicho::operator_norm(dicho::greens_eval(g, -t)) <= bound_neg * (1 + 1e-8));
    }
}

TEST_CASE("apply_S_fullline: compact-support input decays away from the support") {
    // oracle: the same convolution on a 10x finer grid
    auto sys = two_scalar_system(0.1);
    auto agg = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.0);
    GreensFunction<double> g(agg);

    auto make_input = [&](double step) {
        auto grid = TimeGrid<double>::uniform_step(-30.0, 30.0, step);
        GridTrajectory<double> x;
        x.grid = grid;
        x.values = Mat::Zero(2, grid.size());
        for (dicho::Index k = 0; k < grid.size(); ++k) {
            const double t = grid.points[static_cast<std::size_t>(k)];
            if (t >= -25.0 && t <= -15.0) {
                const double w = std::sin(M_PI * (t + 25.0) / 10.0);
                x.values.col(k) << w * w, 0.5 * w * w;
            }
        }
        return x;
    };
    auto coarse = dicho::apply_S_fullline(sys, g, make_input(0.01), 1e3);
    auto fine = dicho::apply_S_fullline(sys, g, make_input(0.001), 1e3);

    // evaluation far to the right of the support decays like e^{-alpha dist}
    const double t_eval = 5.0;
    const auto k_eval = static_cast<dicho::Index>((t_eval + 30.0) / 0.01);
    const double val = coarse.trajectory.values.col(k_eval).norm();
    CHECK(val < std::exp(-(t_eval + 15.0)) * 1.0);
    CHECK(val > 0.0);
    const auto k_fine = static_cast<dicho::Index>((t_eval + 30.0) / 0.001);
    CHECK(coarse.trajectory.values.col(k_eval)(0) ==
          doctest::Approx(fine.trajectory.values.col(k_fine)(0)).epsilon(1e-6));
}

TEST_CASE("apply_S1: tail bound triggers TailTooLarge at tight tolerance") {
    auto sys = two_scalar_system(0.1);
    auto agg = dicho::extract_aggregate<double>({scalar(-1.0), scalar(1.0)}, 0.0);
    GreensFunction<double> g(agg);
    auto grid = TimeGrid<double>::uniform_step(0.0, 10.0, 0.01);
    CHECK_THROWS_AS(dicho::apply_S1(sys, g, constant_trajectory(grid, Vec::Ones(2)), 1e-9),
                    dicho::TailTooLarge);
}
