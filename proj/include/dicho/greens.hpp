#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dicho/block_system.hpp"
#include "dicho/dichotomy.hpp"
#include "dicho/grid.hpp"
#include "dicho/linalg.hpp"
#include "dicho/types.hpp"

namespace dicho {

enum class GreensSide { Left, Right };

/// Green's function of the uncoupled system,
///   G_A(t) = e^{tA} P_-  (t > 0),   -e^{tA} P_+  (t < 0),
/// evaluated through the per-block invariant-subspace factors.
template <typename Scalar = double>
struct GreensFunction {
    const AggregateDichotomy<Scalar>* agg = nullptr;

    explicit GreensFunction(const AggregateDichotomy<Scalar>& a) : agg(&a) {}

    // single-threaded evaluation cache; clear() before sharing across threads
    mutable std::map<std::pair<Scalar, int>, MatX<Scalar>> cache;

    [[nodiscard]] Index dim() const { return agg->dim(); }
};

/// e^{tA}P_- on the full space (block diagonal of stable flows).
template <typename Scalar>
MatX<Scalar> flow_minus(const AggregateDichotomy<Scalar>& agg, Scalar t) {
    MatX<Scalar> out = MatX<Scalar>::Zero(agg.dim(), agg.dim());
    Index off = 0;
    for (const auto& b : agg.per_block) {
        out.block(off, off, b.dim(), b.dim()) = b.split.stable_flow(t);
        off += b.dim();
    }
    return out;
}

/// e^{tA}P_+ on the full space.
template <typename Scalar>
MatX<Scalar> flow_plus(const AggregateDichotomy<Scalar>& agg, Scalar t) {
    MatX<Scalar> out = MatX<Scalar>::Zero(agg.dim(), agg.dim());
    Index off = 0;
    for (const auto& b : agg.per_block) {
        out.block(off, off, b.dim(), b.dim()) = b.split.unstable_flow(t);
        off += b.dim();
    }
    return out;
}

template <typename Scalar>
MatX<Scalar> greens_eval(const GreensFunction<Scalar>& g, Scalar t,
                         GreensSide side_at_zero = GreensSide::Right) {
    const int side = t > 0 ? 1 : (t < 0 ? -1 : (side_at_zero == GreensSide::Right ? 1 : -1));
    auto key = std::make_pair(t, side);
    if (auto it = g.cache.find(key); it != g.cache.end()) return it->second;

    MatX<Scalar> value;
    if (t > 0 || (t == Scalar(0) && side == 1)) {
        value = flow_minus(*g.agg, t);
    } else {
        value = (-flow_plus(*g.agg, t)).eval();
    }
#ifndef NDEBUG
    // decay envelope sanity from the extracted constants
    const Scalar nrm = operator_norm(value);
    Scalar bound = 0;
    for (const auto& b : g.agg->per_block)
        bound += t >= 0 ? b.m_const * std::exp(-b.alpha * t) : b.n_const * std::exp(b.beta * t);
    eigen_assert(nrm <= bound * (1 + Scalar(1e-8)) + Scalar(1e-12));
#endif
    if (g.cache.size() > 4096) g.cache.clear();
    g.cache.emplace(key, value);
    return value;
}

template <typename Scalar = double>
struct ContractionFactors {
    Scalar q_sum = 0;  // (nerivn:1)
    Scalar q_max = 0;  // (nerivn:2)
    [[nodiscard]] Scalar best() const { return std::min(q_sum, q_max); }
    [[nodiscard]] bool contractive() const { return best() < Scalar(1); }
};

/// Contraction factors of the coupling convolution operator:
///   q_sum = sum_i(M_i/a_i + N_i/b_i) * sum_{i!=j}||A_ij||,
///   q_max = n sqrt(n-1) (K_1+K_2)    * max_{i!=j}||A_ij||.
template <typename Scalar>
ContractionFactors<Scalar> contraction_factor(const AggregateDichotomy<Scalar>& agg,
                                              const CouplingNorms<Scalar>& couplings) {
    ContractionFactors<Scalar> q;
    const auto n = static_cast<Scalar>(agg.block_count());
    q.q_sum = agg.greens_mass() * couplings.sum;
    q.q_max = n * std::sqrt(std::max<Scalar>(n - 1, 0)) * (agg.k1 + agg.k2) * couplings.max;
    return q;
}

enum class Halfline { PlusAxis, MinusAxis, WholeLine };

namespace detail {

/// Reduced-coordinate panel data for one diagonal block and one step size:
/// everything needed to integrate e^{(t-tau)A}P_- f and e^{(t-tau)A}P_+ f
/// exactly against cubic (or linear) interpolants of f.
template <typename Scalar>
struct BlockPanels {
    // stable side (forward sweep)
    MatX<Scalar> es;                  // e^{h As}
    std::array<MatX<Scalar>, 4> mus;  // int_0^h s^m e^{(h-s)As} ds
    // unstable side (backward sweep)
    MatX<Scalar> eu;                  // e^{-h Au}
    std::array<MatX<Scalar>, 4> nus;  // int_0^h s^m e^{-s Au} ds
};

template <typename Scalar>
BlockPanels<Scalar> make_block_panels(const SpectralSplit<Scalar>& sp, Scalar h) {
    BlockPanels<Scalar> bp;
    const Index ks = sp.stable_dim, ku = sp.dim - sp.stable_dim;
    if (ks > 0) {
        auto pm = panel_moments(sp.as, h);
        bp.es = pm.e;
        bp.mus = pm.mu;
    }
    if (ku > 0) {
        auto pm = panel_moments(sp.au, h);
        bp.eu = matrix_exponential(sp.au, -h);
        for (int m = 0; m < 4; ++m) bp.nus[m] = bp.eu * pm.mu[m];
    }
    return bp;
}

/// Monomial coefficients of the interpolant of g on [0,h]: cubic Hermite when
/// derivatives are present, linear otherwise.
template <typename Scalar>
void panel_coeffs(const MatX<Scalar>& g0, const MatX<Scalar>& g1, const MatX<Scalar>* d0,
                  const MatX<Scalar>* d1, Scalar h, std::array<MatX<Scalar>, 4>& a) {
    a[0] = g0;
    if (d0 && d1) {
        a[1] = *d0;
        a[2] = (3 * (g1 - g0) / (h * h) - (2 * (*d0) + (*d1)) / h).eval();
        a[3] = (2 * (g0 - g1) / (h * h * h) + ((*d0) + (*d1)) / (h * h)).eval();
    } else {
        a[1] = ((g1 - g0) / h).eval();
        a[2].setZero(g0.rows(), g0.cols());
        a[3].setZero(g0.rows(), g0.cols());
    }
}

}  // namespace detail

template <typename Scalar = double>
struct ConvolutionResult {
    std::vector<MatX<Scalar>> values;       // per grid point
    std::vector<MatX<Scalar>> derivatives;  // d/dt of the output, per point
    Scalar tail_bound = 0;
};

/// Convolution with the Green's function over the grid span:
///   y(t) = int G_A(t - tau) f(tau) dtau
/// by forward/backward reduced recursions with panel product integration.
/// The omitted semi-infinite tails (which sides depend on the domain) are
/// returned as a certified bound from the endpoint forcing norms.
template <typename Scalar>
ConvolutionResult<Scalar> greens_convolve(const AggregateDichotomy<Scalar>& agg,
                                          const TimeGrid<Scalar>& grid,
                                          const std::vector<MatX<Scalar>>& f,
                                          const std::vector<MatX<Scalar>>* f_deriv, Halfline domain) {
    grid.validate();
    if (!grid.uniform()) throw ValidationError("greens_convolve: uniform grid required");
    const auto n_pts = static_cast<std::size_t>(grid.size());
    if (f.size() != n_pts) throw ShapeError("greens_convolve: sample count does not match grid");
    if (f_deriv && f_deriv->size() != n_pts) throw ShapeError("greens_convolve: derivative count mismatch");
    const Scalar h = grid.step();
    const Index d = agg.dim(), cols = f.front().cols();
    if (f.front().rows() != d) throw ShapeError("greens_convolve: forcing dimension mismatch");

    ConvolutionResult<Scalar> out;
    out.values.assign(n_pts, MatX<Scalar>::Zero(d, cols));

    Index off = 0;
    for (const auto& blk : agg.per_block) {
        const auto& sp = blk.split;
        const Index ks = sp.stable_dim, ku = sp.dim - sp.stable_dim, bd = sp.dim;
        const auto panels = detail::make_block_panels(sp, h);
        std::array<MatX<Scalar>, 4> a;

        if (ks > 0) {
            // u(t) = int_{t0}^{t} e^{(t-tau)A}P_- f(tau) dtau, reduced by P_- = S Sh
            MatX<Scalar> u = MatX<Scalar>::Zero(ks, cols);
            MatX<Scalar> g0 = sp.sh * f[0].middleRows(off, bd);
            MatX<Scalar> d0, d1;
            if (f_deriv) d0 = sp.sh * (*f_deriv)[0].middleRows(off, bd);
            for (std::size_t k = 0; k + 1 < n_pts; ++k) {
                MatX<Scalar> g1 = sp.sh * f[k + 1].middleRows(off, bd);
                if (f_deriv) d1 = sp.sh * (*f_deriv)[k + 1].middleRows(off, bd);
                detail::panel_coeffs<Scalar>(g0, g1, f_deriv ? &d0 : nullptr, f_deriv ? &d1 : nullptr, h, a);
                u = (panels.es * u).eval();
                for (int m = 0; m < 4; ++m) u.noalias() += panels.mus[m] * a[m];
                out.values[k + 1].middleRows(off, bd).noalias() += sp.s * u;
                g0.swap(g1);
                d0.swap(d1);
            }
        }
        if (ku > 0) {
            // v(t) = int_t^{t1} e^{(t-tau)A}P_+ f(tau) dtau enters with a minus
            MatX<Scalar> v = MatX<Scalar>::Zero(ku, cols);
            MatX<Scalar> g1 = sp.uh * f[n_pts - 1].middleRows(off, bd);
            MatX<Scalar> d0, d1;
            if (f_deriv) d1 = sp.uh * (*f_deriv)[n_pts - 1].middleRows(off, bd);
            for (std::size_t k = n_pts - 1; k-- > 0;) {
                MatX<Scalar> g0 = sp.uh * f[k].middleRows(off, bd);
                if (f_deriv) d0 = sp.uh * (*f_deriv)[k].middleRows(off, bd);
                detail::panel_coeffs<Scalar>(g0, g1, f_deriv ? &d0 : nullptr, f_deriv ? &d1 : nullptr, h, a);
                v = (panels.eu * v).eval();
                for (int m = 0; m < 4; ++m) v.noalias() += panels.nus[m] * a[m];
                out.values[k].middleRows(off, bd).noalias() -= sp.u * v;
                g1.swap(g0);
                d1.swap(d0);
            }
        }
        off += bd;
    }

    // y' = A y + f along the convolution
    out.derivatives.assign(n_pts, MatX<Scalar>::Zero(d, cols));
    Index boff = 0;
    for (const auto& blk : agg.per_block) {
        const Index bd = blk.dim();
        MatX<Scalar> a_ii = blk.split.s * blk.split.as * blk.split.sh + blk.split.u * blk.split.au * blk.split.uh;
        for (std::size_t k = 0; k < n_pts; ++k)
            out.derivatives[k].middleRows(boff, bd) =
                a_ii * out.values[k].middleRows(boff, bd) + f[k].middleRows(boff, bd);
        boff += bd;
    }

    const Scalar f_left = operator_norm(f.front());
    const Scalar f_right = operator_norm(f.back());
    Scalar tail = 0;
    if (domain != Halfline::MinusAxis) tail += agg.sum_n_over_beta() * f_right;  // truncated at +T_inf
    if (domain != Halfline::PlusAxis) tail += agg.sum_m_over_alpha() * f_left;   // truncated at -T_inf
    out.tail_bound = tail;
    return out;
}

template <typename Scalar = double>
struct SApplyResult {
    GridTrajectory<Scalar> trajectory;
    Scalar tail_bound = 0;
};

namespace detail {

template <typename Scalar>
SApplyResult<Scalar> apply_coupling_convolution(const BlockSystem<Scalar>& sys,
                                                const GreensFunction<Scalar>& g,
                                                const GridTrajectory<Scalar>& x, Halfline domain,
                                                Scalar tail_tol) {
    x.validate();
    const auto n_pts = static_cast<std::size_t>(x.size());
    std::vector<MatX<Scalar>> f(n_pts), fd;
    for (std::size_t k = 0; k < n_pts; ++k) f[k] = sys.apply_coupling(x.values.col(static_cast<Index>(k)));
    const bool with_d = x.derivatives.has_value();
    if (with_d) {
        fd.resize(n_pts);
        for (std::size_t k = 0; k < n_pts; ++k)
            fd[k] = sys.apply_coupling(x.derivatives->col(static_cast<Index>(k)));
    }
    auto conv = greens_convolve(*g.agg, x.grid, f, with_d ? &fd : nullptr, domain);
    if (conv.tail_bound > tail_tol)
        throw TailTooLarge("coupling convolution: certified tail bound " + std::to_string(conv.tail_bound) +
                           " above tolerance; enlarge T_infinity");

    SApplyResult<Scalar> out;
    out.trajectory.grid = x.grid;
    out.trajectory.values.resize(x.dim(), static_cast<Index>(n_pts));
    MatX<Scalar> derivs(x.dim(), static_cast<Index>(n_pts));
    for (std::size_t k = 0; k < n_pts; ++k) {
        out.trajectory.values.col(static_cast<Index>(k)) = conv.values[k];
        derivs.col(static_cast<Index>(k)) = conv.derivatives[k];
    }
    out.trajectory.derivatives = derivs;
    out.tail_bound = conv.tail_bound;
    return out;
}

}  // namespace detail

/// S_1 x (t) = int_0^{+inf} G_A(t - tau) (B x)(tau) dtau on R_+.
template <typename Scalar>
SApplyResult<Scalar> apply_S1(const BlockSystem<Scalar>& sys, const GreensFunction<Scalar>& g,
                              const GridTrajectory<Scalar>& x, Scalar tail_tol = Scalar(1e-6)) {
    if (std::abs(x.grid.front()) > Scalar(1e-12))
        throw ValidationError("apply_S1: grid must start at t = 0");
    return detail::apply_coupling_convolution(sys, g, x, Halfline::PlusAxis, tail_tol);
}

/// S_2 x (t) = int_{-inf}^{0} G_A(t - tau) (B x)(tau) dtau on R_-.
template <typename Scalar>
SApplyResult<Scalar> apply_S2(const BlockSystem<Scalar>& sys, const GreensFunction<Scalar>& g,
                              const GridTrajectory<Scalar>& x, Scalar tail_tol = Scalar(1e-6)) {
    if (std::abs(x.grid.back()) > Scalar(1e-12))
        throw ValidationError("apply_S2: grid must end at t = 0");
    return detail::apply_coupling_convolution(sys, g, x, Halfline::MinusAxis, tail_tol);
}

/// S x (t) = int_R G_A(t - tau) (B x)(tau) dtau on the whole line.
template <typename Scalar>
SApplyResult<Scalar> apply_S_fullline(const BlockSystem<Scalar>& sys, const GreensFunction<Scalar>& g,
                                      const GridTrajectory<Scalar>& x, Scalar tail_tol = Scalar(1e-6)) {
    return detail::apply_coupling_convolution(sys, g, x, Halfline::WholeLine, tail_tol);
}

// ---------------------------------------------------------------------------
// Picard machinery shared by the linear and nonlinear bounded-solution solvers
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct PicardStats {
    std::vector<Scalar> deltas;  // |||x_{k+1} - x_k|||
    std::vector<Scalar> ratios;  // successive delta ratios
    Scalar residual = 0;         // |||x - g - S x||| of the returned iterate
    Scalar tail_bound = 0;
    int iterations = 0;
};

template <typename Scalar>
Scalar batch_sup_norm(const std::vector<MatX<Scalar>>& vals) {
    Scalar m = 0;
    for (const auto& v : vals)
        for (Index c = 0; c < v.cols(); ++c) m = std::max(m, v.col(c).norm());
    return m;
}

/// Solve x = g + conv(F(x)) by Picard iteration from x_0 = g, stopping at
/// |||x_{k+1} - x_k||| < tol (1-q)/q (a-posteriori contraction bound).
/// `forcing` maps batch values (and derivatives when available) at one grid
/// point to the forcing value/derivative fed into the Green's convolution.
template <typename Scalar, typename Forcing>
PicardStats<Scalar> picard_solve(const AggregateDichotomy<Scalar>& agg, const TimeGrid<Scalar>& grid,
                                 const std::vector<MatX<Scalar>>& inhom_values,
                                 const std::vector<MatX<Scalar>>& inhom_derivs, Forcing&& forcing,
                                 Scalar q, Scalar tol, Halfline domain,
                                 std::vector<MatX<Scalar>>& x_values,
                                 std::vector<MatX<Scalar>>& x_derivs, int max_iters = 400,
                                 Scalar confine_radius = Scalar(0)) {
    if (!(q < Scalar(1)))
        throw ContractionViolated("picard_solve: contraction factor q = " + std::to_string(q) + " >= 1");
    const Scalar stop = q > Scalar(0) ? tol * (1 - q) / q : tol;

    PicardStats<Scalar> stats;
    const auto n_pts = inhom_values.size();
    x_values = inhom_values;
    x_derivs = inhom_derivs;

    std::vector<MatX<Scalar>> f(n_pts), fd(n_pts), prev_values;
    for (int it = 0; it < max_iters; ++it) {
        for (std::size_t k = 0; k < n_pts; ++k) forcing(k, x_values[k], x_derivs[k], f[k], fd[k]);
        auto conv = greens_convolve(agg, grid, f, &fd, domain);
        stats.tail_bound = conv.tail_bound;
        prev_values.swap(x_values);
        x_values.resize(n_pts);
        for (std::size_t k = 0; k < n_pts; ++k) {
            x_values[k] = inhom_values[k] + conv.values[k];
            x_derivs[k] = inhom_derivs[k] + conv.derivatives[k];
        }
        if (confine_radius > 0 && batch_sup_norm(x_values) > confine_radius * (1 + Scalar(1e-8)))
            throw ConfinementViolated("picard_solve: iterate escaped the ball of radius " +
                                      std::to_string(confine_radius));
        Scalar delta = 0;
        for (std::size_t k = 0; k < n_pts; ++k)
            for (Index c = 0; c < x_values[k].cols(); ++c)
                delta = std::max(delta, (x_values[k].col(c) - prev_values[k].col(c)).norm());
        if (!stats.deltas.empty() && stats.deltas.back() > 0)
            stats.ratios.push_back(delta / stats.deltas.back());
        stats.deltas.push_back(delta);
        stats.iterations = it + 1;
        if (delta < stop) {
            // residual audit: one extra application
            for (std::size_t k = 0; k < n_pts; ++k) forcing(k, x_values[k], x_derivs[k], f[k], fd[k]);
            auto audit = greens_convolve(agg, grid, f, &fd, domain);
            Scalar resid = 0;
            for (std::size_t k = 0; k < n_pts; ++k)
                for (Index c = 0; c < x_values[k].cols(); ++c)
                    resid = std::max(resid,
                                     (x_values[k].col(c) - inhom_values[k].col(c) - audit.values[k].col(c)).norm());
            stats.residual = resid;
            return stats;
        }
        if (stats.ratios.size() >= 2 && stats.ratios.back() > Scalar(1) &&
            stats.ratios[stats.ratios.size() - 2] > Scalar(1))
            throw ContractionViolated("picard_solve: iteration diverging (observed ratio > 1)");
    }
    throw ContractionViolated("picard_solve: no convergence within iteration budget");
}

/// Step and far-end cutoff for the S-operator grids: h <= Lambda/50 capped by
/// the forcing curvature scale, T_inf so the certified tail sits below tol.
template <typename Scalar>
Scalar default_grid_step(const AggregateDichotomy<Scalar>& agg, const BlockSystem<Scalar>& sys) {
    Scalar omega = 0;
    for (const auto& b : agg.per_block) {
        for (const auto& ev : b.split.eigenvalues) omega = std::max(omega, std::abs(ev.real()));
    }
    omega += coupling_norms(sys).sum;
    const Scalar by_lambda = agg.lambda / Scalar(50);
    const Scalar by_curvature = Scalar(0.03) / std::max(omega, Scalar(1e-3));
    return std::min(by_lambda, by_curvature);
}

template <typename Scalar>
Scalar default_t_infinity(const AggregateDichotomy<Scalar>& agg, const BlockSystem<Scalar>& sys,
                          Scalar tol = Scalar(1e-9)) {
    const Scalar mass = std::max<Scalar>(1, agg.greens_mass() * std::max<Scalar>(1, coupling_norms(sys).sum));
    return (std::log(mass) + std::log(1 / tol)) / agg.lambda;
}

}  // namespace dicho
