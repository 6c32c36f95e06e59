#include <random>

#include "doctest.h"

#include "dicho/oracle.hpp"
#include "dicho/schur.hpp"

using Mat = Eigen::MatrixXd;

namespace {

std::mt19937_64 rng(777);

Mat random_hyperbolic(Eigen::Index d, double gap = 0.4) {
    // assemble from 1x1 / 2x2 real Jordan cells with |Re lambda| >= gap
    std::uniform_real_distribution<double> mag(gap, 2.5);
    std::uniform_real_distribution<double> rot(0.3, 2.0);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> g(0.0, 1.0);
    Mat n = Mat::Zero(d, d);
    Eigen::Index k = 0;
    while (k < d) {
        const double sign = coin(rng) ? -1.0 : 1.0;
        if (d - k >= 2 && coin(rng)) {
            const double re = sign * mag(rng), im = rot(rng);
            n(k, k) = re;
            n(k + 1, k + 1) = re;
            n(k, k + 1) = im;
            n(k + 1, k) = -im;
            k += 2;
        } else {
            n(k, k) = sign * mag(rng);
            k += 1;
        }
    }
    Mat v = Mat::Identity(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) v(i, j) += 0.25 * g(rng);
    return v * n * v.inverse();
}

}  // namespace

TEST_CASE("ordered_real_schur: stable block leads, factorization holds") {
    for (int trial = 0; trial < 40; ++trial) {
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 6);
        Mat a = random_hyperbolic(d);
        auto os = dicho::ordered_real_schur<double>(a);
        CHECK((os.q * os.t * os.q.transpose() - a).norm() < 1e-9 * (1.0 + a.norm()));
        CHECK((os.q * os.q.transpose() - Mat::Identity(d, d)).norm() < 1e-12);
        // stable eigenvalues first
        for (Eigen::Index i = 0; i < os.stable_dim; ++i) CHECK(os.eigenvalues[static_cast<std::size_t>(i)].real() < 0);
        for (Eigen::Index i = os.stable_dim; i < d; ++i)
            CHECK(os.eigenvalues[static_cast<std::size_t>(i)].real() > 0);
    }
}

TEST_CASE("spectral_split: projector matches eigensolver oracle") {
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 5);
        Mat a = random_hyperbolic(d);
        auto sp = dicho::spectral_split<double>(a);
        auto oracle = dicho::oracle::spectral_dichotomy(dicho::DenseOperator<double>(a));
        CHECK(sp.stable_dim == oracle.stable_rank);
        CHECK((sp.projector - oracle.stable_projector.matrix).norm() < 1e-9 * (1.0 + a.norm()));
    }
}

TEST_CASE("spectral_split: invariant-subspace factors reproduce the kernels") {
    for (int trial = 0; trial < 15; ++trial) {
        Mat a = random_hyperbolic(4);
        auto sp = dicho::spectral_split<double>(a);
        // P = S Sh, I - P = U Uh, A S = S As, A U = U Au
        CHECK((sp.s * sp.sh - sp.projector).norm() < 1e-11);
        CHECK((sp.u * sp.uh - (Mat::Identity(4, 4) - sp.projector)).norm() < 1e-10);
        if (sp.stable_dim > 0) CHECK((a * sp.s - sp.s * sp.as).norm() < 1e-9);
        if (sp.stable_dim < 4) CHECK((a * sp.u - sp.u * sp.au).norm() < 1e-9);
        // idempotence
        CHECK((sp.projector * sp.projector - sp.projector).norm() < 1e-10);
        // flow factorization against the dense exponential
        const double t = 1.3;
        Mat full = dicho::matrix_exponential(a, t);
        CHECK((sp.stable_flow(t) - full * sp.projector).norm() < 1e-8 * full.norm());
    }
}

TEST_CASE("spectral_split: defective stable block") {
    Mat a(2, 2);
    a << -1, 10, 0, -1;
    auto sp = dicho::spectral_split<double>(a);
    CHECK(sp.stable_dim == 2);
    CHECK((sp.projector - Mat::Identity(2, 2)).norm() < 1e-12);
    CHECK(sp.stable_gap == doctest::Approx(1.0));
}

TEST_CASE("spectral_split: rejects spectrum on the imaginary axis") {
    Mat rot(2, 2);
    rot << 0, 1, -1, 0;
    CHECK_THROWS_AS(dicho::spectral_split<double>(rot), dicho::NotHyperbolic);
}

TEST_CASE("spectral_split: empty parts") {
    Mat stable(2, 2);
    stable << -2, 1, 0, -3;
    auto sp = dicho::spectral_split<double>(stable);
    CHECK(sp.stable_dim == 2);
    CHECK(sp.unstable_flow(1.0).norm() == 0.0);
    CHECK((sp.stable_flow(0.5) - dicho::matrix_exponential(stable, 0.5)).norm() < 1e-12);
}
