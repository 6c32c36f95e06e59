#pragma once

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "dicho/types.hpp"

namespace dicho {

template <typename Derived>
[[nodiscard]] bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

/// e^{tM} for a square matrix; scaling-and-squaring Pade under the hood.
/// Falls back to halving t and squaring when the direct evaluation overflows.
template <typename Derived>
MatX<typename Derived::Scalar> matrix_exponential(const Eigen::MatrixBase<Derived>& m,
                                                  typename Derived::Scalar t = 1) {
    using Scalar = typename Derived::Scalar;
    if (m.rows() != m.cols()) {
        throw ShapeError("matrix_exponential: matrix must be square, got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    if (!std::isfinite(static_cast<double>(t)) || !all_finite(m)) {
        throw ValidationError("matrix_exponential: non-finite input");
    }
    MatX<Scalar> scaled = t * m;
    MatX<Scalar> result = scaled.exp();
    if (all_finite(result)) return result;

    // overflow fallback: repeated squaring of e^{tM/2^k}
    for (int k = 1; k <= 8; ++k) {
        MatX<Scalar> half = (scaled / Scalar(1 << k)).exp();
        if (!all_finite(half)) continue;
        MatX<Scalar> acc = half;
        bool ok = true;
        for (int s = 0; s < k; ++s) {
            acc = (acc * acc).eval();
            if (!all_finite(acc)) {
                ok = false;
                break;
            }
        }
        if (ok) return acc;
    }
    throw NumericalError("matrix_exponential: result not finite (spectral radius too large)");
}

/// Spectral norm (largest singular value); the induced norm of the Euclidean
/// product norm fixed for the whole artifact.
template <typename Derived>
typename Derived::Scalar operator_norm(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    if (m.rows() == 0 || m.cols() == 0) return Scalar(0);
    if (!all_finite(m)) throw ValidationError("operator_norm: non-finite entries");
    if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
    Eigen::JacobiSVD<MatX<Scalar>> svd(m.derived());
    return svd.singularValues()(0);
}

template <typename Derived>
MatX<typename Derived::Scalar> symmetric_part(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    return ((m.derived() + m.derived().transpose()) / Scalar(2)).eval();
}

template <typename Derived>
typename Derived::Scalar min_symmetric_eigenvalue(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    Eigen::SelfAdjointEigenSolver<MatX<Scalar>> es(symmetric_part(m));
    return es.eigenvalues().minCoeff();
}

/// Solve A^T X + X A = Q (continuous Lyapunov/Sylvester family) by the
/// Kronecker route; fine for the small dense blocks this project handles.
template <typename Scalar>
MatX<Scalar> solve_sylvester(const MatX<Scalar>& a, const MatX<Scalar>& b, const MatX<Scalar>& c) {
    // A X - X B = C
    const Index p = a.rows(), q = b.rows();
    if (a.cols() != p || b.cols() != q || c.rows() != p || c.cols() != q) {
        throw ShapeError("solve_sylvester: inconsistent shapes");
    }
    MatX<Scalar> k = MatX<Scalar>::Zero(p * q, p * q);
    // vec(AX) = (I_q (x) A) vec(X), vec(XB) = (B^T (x) I_p) vec(X), column-major vec
    for (Index j = 0; j < q; ++j) k.block(j * p, j * p, p, p) = a;
    for (Index j = 0; j < q; ++j)
        for (Index i = 0; i < q; ++i) k.block(i * p, j * p, p, p).diagonal().array() -= b(j, i);
    VecX<Scalar> rhs(p * q);
    for (Index j = 0; j < q; ++j) rhs.segment(j * p, p) = c.col(j);
    Eigen::PartialPivLU<MatX<Scalar>> lu(k);
    VecX<Scalar> x = lu.solve(rhs);
    if (!x.allFinite()) throw NumericalError("solve_sylvester: singular Kronecker system");
    MatX<Scalar> out(p, q);
    for (Index j = 0; j < q; ++j) out.col(j) = x.segment(j * p, p);
    return out;
}

/// Solve A^* C + C A = -H.
template <typename Scalar>
MatX<Scalar> solve_lyapunov(const MatX<Scalar>& a, const MatX<Scalar>& h) {
    // A^T C - C (-A) = -H
    return solve_sylvester<Scalar>(a.transpose(), (-a).eval(), (-h).eval());
}

/// Panel moments mu_m = int_0^h s^m e^{(h-s)W} ds, m = 0..3, plus e^{hW},
/// via one Van Loan augmented exponential. These make a panel quadrature
/// exact on cubic interpolants against the e^{tW} kernel.
template <typename Scalar>
struct PanelMoments {
    MatX<Scalar> e;                      // e^{hW}
    std::array<MatX<Scalar>, 4> mu;      // mu_0..mu_3
};

template <typename Scalar>
PanelMoments<Scalar> panel_moments(const MatX<Scalar>& w, Scalar h) {
    const Index k = w.rows();
    const Index n = 5 * k;
    MatX<Scalar> c = MatX<Scalar>::Zero(n, n);
    c.topLeftCorner(k, k) = w;
    for (int b = 0; b < 4; ++b) c.block(b * k, (b + 1) * k, k, k).setIdentity();
    MatX<Scalar> e = matrix_exponential(c, h);
    // top-row blocks: e^{hW}, then H_j = int_0^h e^{(h-s)W} s^{j-1}/(j-1)! ds
    PanelMoments<Scalar> out;
    out.e = e.topLeftCorner(k, k);
    Scalar fact = 1;
    for (int m = 0; m < 4; ++m) {
        out.mu[m] = fact * e.block(0, (m + 1) * k, k, k);
        fact *= Scalar(m + 1);
    }
    return out;
}

namespace detail {

/// Golden-section refinement of a 1-d maximum bracketed by [lo, hi].
template <typename Scalar, typename F>
Scalar golden_max(F&& f, Scalar lo, Scalar hi, int iters = 60) {
    const Scalar invphi = Scalar(0.6180339887498949);
    Scalar a = lo, b = hi;
    Scalar x1 = b - invphi * (b - a);
    Scalar x2 = a + invphi * (b - a);
    Scalar f1 = f(x1), f2 = f(x2);
    for (int i = 0; i < iters; ++i) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = f(x1);
        }
    }
    return std::max(f1, f2);
}

}  // namespace detail

}  // namespace dicho
