#include <cmath>
#include <random>

#include "doctest.h"

#include "dicho/block_system.hpp"
#include "dicho/dichotomy.hpp"
#include "dicho/greens.hpp"
#include "dicho/oracle.hpp"
#include "dicho/roughness.hpp"
#include "support/test_support.hpp"

using namespace dicho;
using dicho::testing::scalar_mat;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace {

BlockSystem<double> two_scalar(double eps) {
    BlockSystem<double> sys;
    sys.blocks.push_back(scalar_mat(-1.0));
    sys.blocks.push_back(scalar_mat(1.0));
    sys.couplings[{0, 1}] = scalar_mat(eps);
    sys.couplings[{1, 0}] = scalar_mat(eps);
    return sys;
}

/// stable spectral projector of [[-1, eps], [eps, 1]] in closed form
Mat two_scalar_spectral_projector(double eps) {
    const double lam = std::sqrt(1.0 + eps * eps);
    Mat m(2, 2);
    m << -1, eps, eps, 1;
    return (lam * Mat::Identity(2, 2) - m) / (2.0 * lam);
}

TimeGrid<double> plus_grid(const AggregateDichotomy<double>& agg, const BlockSystem<double>& sys) {
    const double t_inf = default_t_infinity(agg, sys, 1e-10);
    return TimeGrid<double>::uniform_step(0.0, t_inf, default_grid_step(agg, sys));
}

TimeGrid<double> minus_grid(const AggregateDichotomy<double>& agg, const BlockSystem<double>& sys) {
    const double t_inf = default_t_infinity(agg, sys, 1e-10);
    return TimeGrid<double>::uniform_step(-t_inf, 0.0, default_grid_step(agg, sys));
}

}  // namespace

TEST_CASE("check_lemma1: zero coupling and running-example arithmetic") {
    auto agg = extract_aggregate<double>({scalar_mat(-1.0), scalar_mat(1.0)}, 0.0);
    BlockSystem<double> uncoupled;
    uncoupled.blocks = {scalar_mat(-1.0), scalar_mat(1.0)};
    auto rep0 = check_lemma1(agg, coupling_norms(uncoupled));
    CHECK(rep0.sum_form.satisfied);
    CHECK(rep0.sum_form.derived.at("amplification") == doctest::Approx(1.0));  // sum M_i

    auto rep = check_lemma1(agg, coupling_norms(two_scalar(0.1)));
    CHECK(rep.sum_form.lhs == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(rep.sum_form.threshold == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(rep.sum_form.satisfied);
    CHECK(rep.sum_form.derived.at("amplification") == doctest::Approx(1.0 / 0.6).epsilon(1e-12));

    auto rep_big = check_lemma1(agg, coupling_norms(two_scalar(0.3)));
    CHECK_FALSE(rep_big.sum_form.satisfied);
    CHECK(rep_big.sum_form.derived.empty());  // derived only when satisfied
}

TEST_CASE("check_lemma2: printed factor 2 on the minus half-line") {
    auto agg = extract_aggregate<double>({scalar_mat(-1.0), scalar_mat(1.0)}, 0.0);
    auto rep = check_lemma2(agg, coupling_norms(two_scalar(0.1)));
    CHECK(rep.sum_form.threshold == doctest::Approx(0.5));
    // max form: 1 / (2 sqrt(2) (K1 + K2)) = 1 / (2 sqrt(2) * 2)
    CHECK(rep.max_form.threshold == doctest::Approx(1.0 / (2.0 * std::sqrt(2.0) * 2.0)));
    CHECK(rep.sum_form.derived.at("amplification") == doctest::Approx(1.0 / 0.6));
}

TEST_CASE("solve_bounded_halfline: zero coupling reproduces e^{tA}c exactly") {
    BlockSystem<double> sys;
    sys.blocks = {scalar_mat(-1.0), scalar_mat(1.0)};
    auto agg = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg);
    auto grid = TimeGrid<double>::uniform_step(0.0, 20.0, 0.01);
    Vec c(2);
    c << 1.0, 0.0;
    auto sol = solve_bounded_halfline(sys, g, c, grid);
    for (Index k = 0; k < grid.size(); k += 50) {
        const double t = grid.points[static_cast<std::size_t>(k)];
        CHECK(sol.trajectory.values(0, k) == doctest::Approx(std::exp(-t)).epsilon(1e-12));
        CHECK(std::abs(sol.trajectory.values(1, k)) < 1e-14);
    }
    CHECK(sol.stats.iterations <= 2);
}

TEST_CASE("solve_bounded_halfline: running example satisfies the ODE") {
    auto sys = two_scalar(0.1);
    auto agg = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg);
    auto grid = plus_grid(agg, sys);
    Vec c(2);
    c << 1.0, 0.0;
    auto sol = solve_bounded_halfline(sys, g, c, grid);

    // geometric convergence with observed ratio <= q_sum
    const auto q = contraction_factor(agg, coupling_norms(sys));
    for (double ratio : sol.stats.ratios) CHECK(ratio <= q.q_sum * (1 + 1e-6));

    // independent finite-difference residual of x' = (A+B)x on the interior
    Mat full = assemble_full(sys).matrix;
    const double resid =
        dicho::testing::ode_residual_max(sol.trajectory, [&](double, const Vec& x) { return (full * x).eval(); });
    CHECK(resid < 1e-4);

    // P_- x(0) = c
    CHECK(sol.trajectory.values(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("solve_bounded_halfline: norm amplification bound for random initial data") {
    auto sys = two_scalar(0.1);
    auto agg = extract_aggregate<double>(sys.blocks, 0.0);
    GreensFunction<double> g(agg);
    auto grid = plus_grid(agg, sys);
    auto rep = check_lemma1(agg, coupling_norms(sys));
    const double amplification = rep.sum_form.derived.at("amplification");

    std::mt19937_64 rng(2718);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Vec c = Vec::Zero(2);
        c(0) = n(rng);
        if (c.norm() < 1e-6) continue;
        auto sol = solve_bounded_halfline(sys, g, c, grid);
        CHECK(sol.trajectory.norm_sup() <= amplification * c.norm() * (1 + 1e-8));
    }
}

TEST_CASE("solve_bounded_halfline: error taxonomy") {
    auto sys = two_scalar(0.1);
    auto agg = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg);
    auto grid = plus_grid(agg, sys);
    Vec bad(2);
    bad << 0.0, 1.0;  // in range(P_+), not range(P_-)
    CHECK_THROWS_AS(solve_bounded_halfline(sys, g, bad, grid), InvalidInitialData);

    auto sys_strong = two_scalar(0.9);  // q = 2 * 1.8 / 0.9 ... not contractive
    Vec c(2);
    c << 1.0, 0.0;
    CHECK_THROWS_AS(solve_bounded_halfline(sys_strong, g, c, grid), ContractionViolated);
}

TEST_CASE("solve_bounded_halfline_minus: mirror problem on the negative half-line") {
    auto sys = two_scalar(0.1);
    auto agg = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg);
    auto grid = minus_grid(agg, sys);
    Vec c(2);
    c << 0.0, 1.0;  // in range(P_+)
    auto sol = solve_bounded_halfline_minus(sys, g, c, grid);
    CHECK(sol.trajectory.values(1, grid.size() - 1) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(sol.trajectory.norm_sup() < 5.0);  // bounded on R_-

    Mat full = assemble_full(sys).matrix;
    const double resid = dicho::testing::ode_residual_max(
        sol.trajectory, [&](double, const Vec& x) { return (full * x).eval(); });
    CHECK(resid < 1e-4);

    Vec wrong(2);
    wrong << 1.0, 0.0;
    CHECK_THROWS_AS(solve_bounded_halfline_minus(sys, g, wrong, grid), InvalidInitialData);
}

TEST_CASE("perturbed evolution obeys the certified two-sided bounds") {
    // ||e^{t(A+B)} P~_-|| <= M~_1 e^{-mu t} and the mirrored unstable bound,
    // through the perturbed Green's function realization
    auto sys = two_scalar(0.1);
    auto agg = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg);
    auto z = compute_Z(sys, g, plus_grid(agg, sys), 1e-10);
    auto zp = compute_Zprime(sys, g, minus_grid(agg, sys), 1e-10);
    auto pd = build_perturbed_projectors(z.op, zp.op, agg);
    auto rep = estimate_theorem1(agg, coupling_norms(sys));
    REQUIRE(rep.sum_form.satisfied);
    const double m1 = rep.sum_form.derived.at("M_tilde");
    const double m2 = rep.sum_form.derived.at("M_tilde_2");
    const double mu = rep.sum_form.derived.at("mu");

    Mat full = assemble_full(sys).matrix;
    for (double t = 0.0; t <= 12.0; t += 0.5) {
        CHECK(operator_norm(perturbed_greens_eval(full, pd, t, GreensSide::Right)) <=
              m1 * std::exp(-mu * t) * (1 + 1e-9));
        if (t > 0)
            CHECK(operator_norm(perturbed_greens_eval(full, pd, -t)) <=
                  m2 * std::exp(-mu * t) * (1 + 1e-9));
    }
}

TEST_CASE("compute_Z: zero coupling gives Z = 0") {
    BlockSystem<double> sys;
    sys.blocks = {scalar_mat(-1.0), scalar_mat(1.0)};
    auto agg = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg);
    auto z = compute_Z(sys, g, plus_grid(agg, sys));
    CHECK(z.op.matrix.norm() < 1e-14);
}

TEST_CASE("compute_Z / compute_Zprime: running example against the closed form") {
    // oracle: Z_21 = eps / (1 + sqrt(1 + eps^2)), same value for Z'_12
    const double eps = 0.1;
    auto sys = two_scalar(eps);
    auto agg = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg);
    auto z = compute_Z(sys, g, plus_grid(agg, sys), 1e-10);
    auto zp = compute_Zprime(sys, g, minus_grid(agg, sys), 1e-10);

    const double expected = eps / (1.0 + std::sqrt(1.0 + eps * eps));
    CHECK(z.op.matrix(1, 0) == doctest::Approx(expected).epsilon(1e-7));
    CHECK(std::abs(z.op.matrix(0, 0)) < 1e-12);
    CHECK(std::abs(z.op.matrix(0, 1)) < 1e-12);
    CHECK(zp.op.matrix(0, 1) == doctest::Approx(expected).epsilon(1e-7));
    CHECK(z.structure_residual < 1e-12);
    CHECK(zp.structure_residual < 1e-12);
}

TEST_CASE("compute_Z: printed norm bound holds for random small couplings") {
    std::mt19937_64 rng(1234);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        BlockSystem<double> sys;
        sys.blocks = {scalar_mat(-1.2), scalar_mat(0.8)};
        sys.couplings[{0, 1}] = scalar_mat(0.05 * n(rng));
        sys.couplings[{1, 0}] = scalar_mat(0.05 * n(rng));
        auto agg = extract_aggregate<double>(sys.blocks, 0.1);
        GreensFunction<double> g(agg);
        auto norms = coupling_norms(sys);
        const auto q = contraction_factor(agg, norms);
        if (!q.contractive()) continue;
        auto z = compute_Z(sys, g, plus_grid(agg, sys));
        const double bound =
            agg.sum_m() * agg.sum_n_over_beta() * norms.sum / (1.0 - q.q_sum);
        CHECK(operator_norm(z.op.matrix) <= bound * (1 + 1e-8) + 1e-12);
    }
}

TEST_CASE("build_perturbed_projectors: zero operators give the unperturbed pair") {
    auto agg = extract_aggregate<double>({scalar_mat(-1.0), scalar_mat(1.0)}, 0.1);
    DenseOperator<double> zero(Mat::Zero(2, 2));
    auto pd = build_perturbed_projectors(zero, zero, agg);
    CHECK((pd.p_tilde_minus.matrix - agg.p_minus.matrix).norm() < 1e-14);
    CHECK((pd.p_tilde_plus.matrix - agg.p_plus.matrix).norm() < 1e-14);
}

TEST_CASE("build_perturbed_projectors: running example matches the spectral projector") {
    const double eps = 0.1;
    auto sys = two_scalar(eps);
    auto agg = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg);
    auto z = compute_Z(sys, g, plus_grid(agg, sys), 1e-10);
    auto zp = compute_Zprime(sys, g, minus_grid(agg, sys), 1e-10);
    auto pd = build_perturbed_projectors(z.op, zp.op, agg);

    Mat p_true = two_scalar_spectral_projector(eps);
    CHECK((pd.p_tilde_minus.matrix - p_true).norm() < 1e-6);

    // structural identities
    Mat idm = Mat::Identity(2, 2);
    CHECK((pd.f_op.matrix * pd.f_inverse() - idm).norm() < 1e-10);
    CHECK((pd.h_op.matrix * pd.h_inverse() - idm).norm() < 1e-10);
    CHECK((pd.p_tilde_minus.matrix + pd.p_tilde_plus.matrix - idm).norm() < 1e-10);
    Mat pm2 = pd.p_tilde_minus.matrix * pd.p_tilde_minus.matrix;
    CHECK((pm2 - pd.p_tilde_minus.matrix).norm() < 1e-9);

    // rank preserved under similarity
    CHECK(Eigen::FullPivLU<Mat>(pd.p_tilde_minus.matrix).rank() ==
          Eigen::FullPivLU<Mat>(agg.p_minus.matrix).rank());

    // half-line projector: correct range, kernel pinned to ker(P_-)
    CHECK((pd.p_tilde_minus_half.matrix * pd.p_tilde_minus_half.matrix - pd.p_tilde_minus_half.matrix)
              .norm() < 1e-9);
    Vec stable_dir(2);
    stable_dir << 1.0, -eps / (1.0 + std::sqrt(1.0 + eps * eps));
    CHECK((pd.p_tilde_minus_half.matrix * stable_dir - stable_dir).norm() < 1e-6);
}

TEST_CASE("similarity exactness: P~_-^2 - P~_- vanishes even with synthetic Z") {
    auto agg = extract_aggregate<double>({scalar_mat(-1.0), scalar_mat(1.0)}, 0.1);
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 0.3);
    for (int trial = 0; trial < 10; ++trial) {
        Mat z = Mat::Zero(2, 2), zp = Mat::Zero(2, 2);
        z(1, 0) = n(rng);
        zp(0, 1) = n(rng);
        if (operator_norm((z + zp).eval()) >= 1.0) continue;
        auto pd = build_perturbed_projectors(DenseOperator<double>(z), DenseOperator<double>(zp), agg);
        Mat resid = pd.p_tilde_minus.matrix * pd.p_tilde_minus.matrix - pd.p_tilde_minus.matrix;
        CHECK(resid.norm() < 1e-9);
    }
}

TEST_CASE("invariance: the coupled flow preserves range(P~_-)") {
    auto sys = two_scalar(0.1);
    auto agg = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg);
    auto z = compute_Z(sys, g, plus_grid(agg, sys), 1e-10);
    auto zp = compute_Zprime(sys, g, minus_grid(agg, sys), 1e-10);
    auto pd = build_perturbed_projectors(z.op, zp.op, agg);
    Mat full = assemble_full(sys).matrix;
    for (double t : {0.5, 2.0, 5.0, 10.0}) {
        Mat leak = (Mat::Identity(2, 2) - pd.p_tilde_minus.matrix) * matrix_exponential(full, t) *
                   pd.p_tilde_minus.matrix;
        CHECK(operator_norm(leak) <= 1e-6);
    }
}

TEST_CASE("estimate_theorem1: running example numbers at margin 0") {
    auto agg = extract_aggregate<double>({scalar_mat(-1.0), scalar_mat(1.0)}, 0.0);
    auto rep = estimate_theorem1(agg, coupling_norms(two_scalar(0.1)));
    CHECK(rep.sum_form.satisfied);
    CHECK(rep.sum_form.threshold == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(rep.sum_form.derived.at("mu_max") == doctest::Approx(std::sqrt(0.6)).epsilon(1e-12));
    CHECK(rep.sum_form.derived.at("M_tilde") == doctest::Approx(5.0).epsilon(1e-12));
    // oracle: true stable decay sqrt(1.01) dominates the certified mu
    CHECK(0.99 * std::sqrt(0.6) <= std::sqrt(1.01));
}

TEST_CASE("estimate_theorem1: zero coupling degenerates to the +inf sentinel") {
    auto agg = extract_aggregate<double>({scalar_mat(-1.0), scalar_mat(1.0)}, 0.0);
    CouplingNorms<double> zero;
    auto rep = estimate_theorem1(agg, zero);
    CHECK(rep.sum_form.satisfied);
    CHECK(rep.sum_form.derived.at("mu_max") == doctest::Approx(1.0));
    CHECK(std::isinf(rep.sum_form.derived.at("M_tilde")));
    CHECK_FALSE(rep.sum_form.notes.empty());
}

TEST_CASE("estimate_theorem2: running example numbers at margin 0") {
    auto agg = extract_aggregate<double>({scalar_mat(-1.0), scalar_mat(1.0)}, 0.0);
    auto rep = estimate_theorem2(agg, coupling_norms(two_scalar(0.1)));
    REQUIRE(rep.sum_form.satisfied);
    // (dost:4) bound: sqrt(1 - 2*1*2*0.2) = sqrt(0.2)
    CHECK(rep.sum_form.derived.at("mu_max") == doctest::Approx(std::sqrt(0.2)).epsilon(1e-12));
    const double mu = rep.sum_form.derived.at("mu");
    const double q1 = 0.8 / (1.0 - mu * mu);
    CHECK(rep.sum_form.derived.at("q1") == doctest::Approx(q1).epsilon(1e-12));
    CHECK(rep.sum_form.derived.at("M_tilde") == doctest::Approx(1.0 / (1.0 - q1)).epsilon(1e-10));
    CHECK(rep.sum_form.derived.at("q1") == doctest::Approx(0.995).epsilon(1e-3));
}

TEST_CASE("estimate_theorem2: zero coupling") {
    auto agg = extract_aggregate<double>({scalar_mat(-1.0), scalar_mat(1.0)}, 0.0);
    CouplingNorms<double> zero;
    auto rep = estimate_theorem2(agg, zero);
    CHECK(rep.sum_form.derived.at("q1") == 0.0);
    CHECK(rep.sum_form.derived.at("M_tilde") == doctest::Approx(1.0));
    CHECK(rep.sum_form.derived.at("mu_max") == doctest::Approx(1.0));
}

TEST_CASE("check_wholeline: running example thresholds and direct check") {
    auto sys = two_scalar(0.1);
    auto agg = extract_aggregate<double>(sys.blocks, 0.0);
    auto agg_m = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg_m);
    auto z = compute_Z(sys, g, plus_grid(agg_m, sys));
    auto zp = compute_Zprime(sys, g, minus_grid(agg_m, sys));
    auto rep = check_wholeline(agg, coupling_norms(sys), z.op, zp.op);
    CHECK(rep.osn1.threshold == doctest::Approx(0.25).epsilon(1e-12));  // 1/(1+1+2)
    CHECK(rep.osn1.satisfied);
    CHECK(rep.direct_ok);
    CHECK(rep.satisfied);
}

TEST_CASE("check_wholeline: direct check can save an unsatisfied printed condition") {
    // coupling above the printed osn1 threshold (0.25) but still contractive
    const double eps = 0.15;  // sum = 0.3 > 0.25, q_sum = 0.6 < 1
    auto sys = two_scalar(eps);
    auto agg = extract_aggregate<double>(sys.blocks, 0.0);
    GreensFunction<double> g(agg);
    auto z = compute_Z(sys, g, plus_grid(agg, sys));
    auto zp = compute_Zprime(sys, g, minus_grid(agg, sys));
    auto rep = check_wholeline(agg, coupling_norms(sys), z.op, zp.op);
    CHECK_FALSE(rep.osn1.satisfied);
    CHECK(rep.direct_ok);  // true tilt eps/(1+sqrt(1+eps^2)) ~ 0.074 << 1
    CHECK(rep.satisfied);
}

TEST_CASE("printed conditions are monotone in the coupling scale") {
    std::mt19937_64 rng(515);
    auto corpus = dicho::testing::make_corpus_system(rng);
    const auto& agg = corpus.agg;
    for (double lam = 0.1; lam < 1.0; lam += 0.2) {
        auto n_small = coupling_norms(corpus.sys.with_scaled_couplings(lam));
        auto n_full = coupling_norms(corpus.sys);
        auto small_rep = check_lemma1(agg, n_small);
        auto full_rep = check_lemma1(agg, n_full);
        if (full_rep.sum_form.satisfied) CHECK(small_rep.sum_form.satisfied);
        if (full_rep.max_form.satisfied) CHECK(small_rep.max_form.satisfied);
        auto small_t1 = estimate_theorem1(agg, n_small);
        auto full_t1 = estimate_theorem1(agg, n_full);
        if (full_t1.sum_form.satisfied) CHECK(small_t1.sum_form.satisfied);
    }
}

TEST_CASE("certified decay: Theorem 1 envelope against the oracle flow") {
    auto sys = two_scalar(0.1);
    auto agg = extract_aggregate<double>(sys.blocks, 0.1);
    GreensFunction<double> g(agg);
    auto z = compute_Z(sys, g, plus_grid(agg, sys), 1e-10);
    auto zp = compute_Zprime(sys, g, minus_grid(agg, sys), 1e-10);
    auto pd = build_perturbed_projectors(z.op, zp.op, agg);
    auto rep = estimate_theorem1(agg, coupling_norms(sys));
    REQUIRE(rep.sum_form.satisfied);
    const double m_tilde = rep.sum_form.derived.at("M_tilde");
    const double mu = rep.sum_form.derived.at("mu");

    Mat full = assemble_full(sys).matrix;
    // the leak of x0 off the true stable subspace bounds how long an
    // exponential envelope is checkable in finite precision
    auto oracle_dich = oracle::spectral_dichotomy(assemble_full(sys));
    std::mt19937_64 rng(864);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Vec raw(2);
        raw << n(rng), n(rng);
        Vec x0 = pd.p_tilde_minus.matrix * raw;
        if (x0.norm() < 1e-3) continue;
        const double leak =
            ((Mat::Identity(2, 2) - oracle_dich.stable_projector.matrix) * x0).norm() + 1e-12 * x0.norm();
        const double horizon =
            std::min(20.0 / mu, dicho::testing::decay_check_horizon(m_tilde, mu, 1.01, leak / x0.norm()));
        auto traj = oracle::integrate_linear(full, x0, 0.0, horizon, 1e-10, 100);
        for (Index k = 0; k < traj.size(); ++k) {
            const double t = traj.grid.points[static_cast<std::size_t>(k)];
            CHECK(traj.values.col(k).norm() <= m_tilde * std::exp(-mu * t) * x0.norm() * (1 + 1e-6));
        }
    }
}
