#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dicho/linalg.hpp"
#include "dicho/types.hpp"

namespace dicho {

template <typename Scalar = double>
struct OrderedSchur {
    MatX<Scalar> q;  // orthogonal
    MatX<Scalar> t;  // quasi upper triangular, stable eigenvalues leading
    Index stable_dim = 0;
    std::vector<std::complex<Scalar>> eigenvalues;  // in T order
};

namespace detail {

template <typename Scalar>
struct QuasiBlock {
    Index start;
    Index size;  // 1 or 2
    Scalar re;   // real part (shared by a complex pair)
};

template <typename Scalar>
std::vector<QuasiBlock<Scalar>> scan_blocks(const MatX<Scalar>& t) {
    std::vector<QuasiBlock<Scalar>> blocks;
    const Index d = t.rows();
    Index k = 0;
    while (k < d) {
        if (k + 1 < d && t(k + 1, k) != Scalar(0)) {
            blocks.push_back({k, 2, (t(k, k) + t(k + 1, k + 1)) / 2});
            k += 2;
        } else {
            blocks.push_back({k, 1, t(k, k)});
            k += 1;
        }
    }
    return blocks;
}

/// Swap two adjacent diagonal blocks of a quasi-triangular T (Bai-Demmel
/// direct swap): orthogonal basis of the trailing block's invariant subspace
/// from a small Sylvester solve, then one QR.
template <typename Scalar>
void swap_adjacent_blocks(MatX<Scalar>& t, MatX<Scalar>& q, Index r, Index p, Index sz2) {
    const Index w = p + sz2;
    MatX<Scalar> t11 = t.block(r, r, p, p);
    MatX<Scalar> t22 = t.block(r + p, r + p, sz2, sz2);
    MatX<Scalar> t12 = t.block(r, r + p, p, sz2);
    MatX<Scalar> x = solve_sylvester<Scalar>(t11, t22, (-t12).eval());
    MatX<Scalar> v(w, sz2);
    v.topRows(p) = x;
    v.bottomRows(sz2).setIdentity();
    Eigen::HouseholderQR<MatX<Scalar>> qr(v);
    MatX<Scalar> g = qr.householderQ();
    t.middleCols(r, w) = (t.middleCols(r, w) * g).eval();
    t.middleRows(r, w) = (g.transpose() * t.middleRows(r, w)).eval();
    q.middleCols(r, w) = (q.middleCols(r, w) * g).eval();
    // the swapped window is block triangular again by construction
    t.block(r + sz2, r, p, sz2).setZero();
    if (sz2 == 2 && std::abs(t(r + 1, r)) < Scalar(1e-300)) t(r + 1, r) = Scalar(0);
    if (p == 2) {
        const Index rr = r + sz2;
        if (std::abs(t(rr + 1, rr)) < Scalar(1e-300)) t(rr + 1, rr) = Scalar(0);
    }
}

}  // namespace detail

/// Real Schur form with the stable (Re < 0) eigenvalues ordered first.
template <typename Scalar>
OrderedSchur<Scalar> ordered_real_schur(const MatX<Scalar>& a) {
    if (a.rows() != a.cols()) throw ShapeError("ordered_real_schur: matrix must be square");
    if (!all_finite(a)) throw ValidationError("ordered_real_schur: non-finite entries");

    OrderedSchur<Scalar> out;
    if (a.rows() == 1) {
        out.q = MatX<Scalar>::Identity(1, 1);
        out.t = a;
    } else {
        Eigen::RealSchur<MatX<Scalar>> schur(a);
        if (schur.info() != Eigen::Success) throw NumericalError("ordered_real_schur: Schur iteration failed");
        out.q = schur.matrixU();
        out.t = schur.matrixT();
        // clean the strictly-lower part so block detection sees exact zeros
        for (Index j = 0; j < out.t.cols(); ++j)
            for (Index i = j + 2; i < out.t.rows(); ++i) out.t(i, j) = Scalar(0);
    }

    auto blocks = detail::scan_blocks(out.t);
    bool moved = true;
    while (moved) {
        moved = false;
        for (std::size_t b = 0; b + 1 < blocks.size(); ++b) {
            const bool first_stable = blocks[b].re < Scalar(0);
            const bool second_stable = blocks[b + 1].re < Scalar(0);
            if (!first_stable && second_stable) {
                detail::swap_adjacent_blocks(out.t, out.q, blocks[b].start, blocks[b].size,
                                             blocks[b + 1].size);
                blocks = detail::scan_blocks(out.t);
                moved = true;
                break;
            }
        }
    }

    for (const auto& blk : blocks) {
        if (blk.re < 0) out.stable_dim += blk.size;
        if (blk.size == 1) {
            out.eigenvalues.emplace_back(out.t(blk.start, blk.start), Scalar(0));
        } else {
            const Scalar aa = out.t(blk.start, blk.start), bb = out.t(blk.start, blk.start + 1);
            const Scalar cc = out.t(blk.start + 1, blk.start), dd = out.t(blk.start + 1, blk.start + 1);
            const Scalar disc = (aa - dd) * (aa - dd) + 4 * bb * cc;
            const Scalar im = disc < 0 ? std::sqrt(-disc) / 2 : Scalar(0);
            out.eigenvalues.emplace_back(blk.re, im);
            out.eigenvalues.emplace_back(blk.re, -im);
        }
    }

    const Scalar resid = operator_norm((out.q * out.t * out.q.transpose() - a).eval());
    if (resid > Scalar(1e-10) * (1 + operator_norm(a)))
        throw NumericalError("ordered_real_schur: reordering lost accuracy");
    return out;
}

/// Invariant-subspace factorization of a hyperbolic matrix:
///   P  = S Sh   (spectral projector, stable part),    A S = S As,
///   I-P = U Uh,                                       A U = U Au.
/// Long-range kernels e^{tA}P, e^{-tA}(I-P) are always evaluated through
/// these factors so that the growing directions never enter numerically.
template <typename Scalar = double>
struct SpectralSplit {
    Index dim = 0;
    Index stable_dim = 0;
    MatX<Scalar> projector;  // P
    MatX<Scalar> s, sh, as;
    MatX<Scalar> u, uh, au;
    Scalar stable_gap = 0;    // min |Re lambda| over the stable part
    Scalar unstable_gap = 0;  // min Re lambda over the unstable part
    std::vector<std::complex<Scalar>> eigenvalues;

    [[nodiscard]] MatX<Scalar> stable_flow(Scalar t) const {
        if (stable_dim == 0) return MatX<Scalar>::Zero(dim, dim);
        return s * matrix_exponential(as, t) * sh;
    }
    [[nodiscard]] MatX<Scalar> unstable_flow(Scalar t) const {
        if (stable_dim == dim) return MatX<Scalar>::Zero(dim, dim);
        return u * matrix_exponential(au, t) * uh;
    }
};

template <typename Scalar>
SpectralSplit<Scalar> spectral_split(const MatX<Scalar>& a, Scalar hyperbolicity_tol = Scalar(1e-8)) {
    OrderedSchur<Scalar> os = ordered_real_schur(a);
    for (const auto& ev : os.eigenvalues) {
        if (std::abs(ev.real()) <= hyperbolicity_tol)
            throw NotHyperbolic("eigenvalue with real part " + std::to_string(ev.real()) +
                                " within tolerance of the imaginary axis");
    }

    SpectralSplit<Scalar> sp;
    sp.dim = a.rows();
    sp.stable_dim = os.stable_dim;
    sp.eigenvalues = os.eigenvalues;
    const Index ks = sp.stable_dim, ku = sp.dim - ks;

    MatX<Scalar> qs = os.q.leftCols(ks), qu = os.q.rightCols(ku);
    sp.as = os.t.topLeftCorner(ks, ks);
    sp.au = os.t.bottomRightCorner(ku, ku);
    MatX<Scalar> t12 = os.t.topRightCorner(ks, ku);
    MatX<Scalar> r = (ks > 0 && ku > 0) ? solve_sylvester<Scalar>(sp.as, sp.au, t12)
                                        : MatX<Scalar>::Zero(ks, ku);
    sp.s = qs;
    sp.sh = qs.transpose() + r * qu.transpose();
    sp.u = qu - qs * r;
    sp.uh = qu.transpose();
    sp.projector = sp.s * sp.sh;

    sp.stable_gap = infinity<Scalar>();
    sp.unstable_gap = infinity<Scalar>();
    for (const auto& ev : os.eigenvalues) {
        if (ev.real() < 0)
            sp.stable_gap = std::min(sp.stable_gap, -ev.real());
        else
            sp.unstable_gap = std::min(sp.unstable_gap, ev.real());
    }
    if (ks == 0) sp.stable_gap = 0;
    if (ku == 0) sp.unstable_gap = 0;
    return sp;
}

}  // namespace dicho
