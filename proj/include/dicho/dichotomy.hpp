#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dicho/linalg.hpp"
#include "dicho/schur.hpp"
#include "dicho/types.hpp"

namespace dicho {

/// Per-block dichotomy data: projector P_i and constants realizing
///   ||e^{tA_ii} P_i||     <= M_i e^{-alpha_i t},  t >= 0,
///   ||e^{-tA_ii}(I-P_i)|| <= N_i e^{-beta_i t},   t >= 0.
/// Empty-part convention: constant 0 and rate sentinel 1 (the sentinel never
/// enters Lambda/alpha/beta minima).
template <typename Scalar = double>
struct SubsystemDichotomy {
    MatX<Scalar> projector;
    Scalar m_const = 0;
    Scalar alpha = 1;
    Scalar n_const = 0;
    Scalar beta = 1;
    Index stable_dim = 0;
    SpectralSplit<Scalar> split;

    [[nodiscard]] Index dim() const { return projector.rows(); }
    [[nodiscard]] bool stable_part_empty() const { return stable_dim == 0; }
    [[nodiscard]] bool unstable_part_empty() const { return stable_dim == dim(); }
};

namespace detail {

template <typename Scalar, typename NormAtT>
Scalar certified_sup(NormAtT&& g, Scalar horizon, Index grid_points) {
    // dense grid scan, golden-section polish around the argmax, then a 1%
    // safety inflation unless the sup sits at t = 0 where g is exact
    const Scalar at_zero = g(Scalar(0));
    Scalar best = at_zero;
    Index best_k = 0;
    const Scalar h = horizon / Scalar(grid_points);
    for (Index k = 1; k <= grid_points; ++k) {
        const Scalar v = g(h * Scalar(k));
        if (v > best) {
            best = v;
            best_k = k;
        }
    }
    if (best <= at_zero * (1 + Scalar(1e-12))) return at_zero;
    const Scalar lo = h * Scalar(best_k - 1);
    const Scalar hi = h * Scalar(std::min(best_k + 1, grid_points));
    const Scalar polished = golden_max<Scalar>(g, lo, hi);
    return std::max(best, polished) * Scalar(1.01);
}

}  // namespace detail

/// Construct the dichotomy data the theory assumes given: spectral projector
/// by ordered Schur, rates shrunk by `margin` inside the spectral gap, and
/// constants as certified grid suprema of the flow against those rates.
template <typename Scalar>
SubsystemDichotomy<Scalar> extract_dichotomy(const MatX<Scalar>& a_ii, Scalar margin = Scalar(0.1),
                                             Scalar hyperbolicity_tol = Scalar(1e-8),
                                             Index sup_grid_points = 400) {
    if (!(margin >= Scalar(0) && margin < Scalar(1)))
        throw ValidationError("extract_dichotomy: margin must lie in [0, 1)");

    SubsystemDichotomy<Scalar> d;
    d.split = spectral_split(a_ii, hyperbolicity_tol);
    d.projector = d.split.projector;
    d.stable_dim = d.split.stable_dim;

    if (d.stable_dim > 0) {
        d.alpha = (1 - margin) * d.split.stable_gap;
        auto g = [&](Scalar t) { return operator_norm(d.split.stable_flow(t)) * std::exp(d.alpha * t); };
        d.m_const = detail::certified_sup<Scalar>(g, Scalar(50) / d.alpha, sup_grid_points);
    } else {
        d.m_const = 0;
        d.alpha = 1;
    }
    if (d.stable_dim < d.dim()) {
        d.beta = (1 - margin) * d.split.unstable_gap;
        auto g = [&](Scalar t) { return operator_norm(d.split.unstable_flow(-t)) * std::exp(d.beta * t); };
        d.n_const = detail::certified_sup<Scalar>(g, Scalar(50) / d.beta, sup_grid_points);
    } else {
        d.n_const = 0;
        d.beta = 1;
    }
    return d;
}

/// Aggregated dichotomy of the uncoupled system: block projectors P_-, P_+
/// and every constant of the text ((dost:3)-style), with empty parts
/// contributing zero constants and excluded from the rate minima.
template <typename Scalar = double>
struct AggregateDichotomy {
    std::vector<SubsystemDichotomy<Scalar>> per_block;
    DenseOperator<Scalar> p_minus;
    DenseOperator<Scalar> p_plus;
    Scalar k1 = 0;      // max_i M_i/alpha_i
    Scalar k2 = 0;      // max_i N_i/beta_i
    Scalar lambda = 0;  // min over nonempty parts of {alpha_i, beta_i}
    Scalar m_bar = 0;   // max{sum M_i, sum N_i}
    Scalar n_bar = 0;   // max_i{M_i, N_i}
    Scalar m_max = 0;   // max_i M_i
    Scalar n_max = 0;   // max_i N_i
    Scalar alpha = 1;   // min over nonempty stable parts
    Scalar beta = 1;    // min over nonempty unstable parts

    [[nodiscard]] Index block_count() const { return static_cast<Index>(per_block.size()); }
    [[nodiscard]] Index dim() const { return p_minus.matrix.rows(); }
    [[nodiscard]] Index block_dim(Index i) const { return per_block[static_cast<std::size_t>(i)].dim(); }
    [[nodiscard]] Index block_offset(Index i) const {
        Index off = 0;
        for (Index k = 0; k < i; ++k) off += block_dim(k);
        return off;
    }

    [[nodiscard]] Scalar sum_m() const {
        Scalar s = 0;
        for (const auto& b : per_block) s += b.m_const;
        return s;
    }
    [[nodiscard]] Scalar sum_n() const {
        Scalar s = 0;
        for (const auto& b : per_block) s += b.n_const;
        return s;
    }
    [[nodiscard]] Scalar sum_m_over_alpha() const {
        Scalar s = 0;
        for (const auto& b : per_block) s += b.m_const / b.alpha;
        return s;
    }
    [[nodiscard]] Scalar sum_n_over_beta() const {
        Scalar s = 0;
        for (const auto& b : per_block) s += b.n_const / b.beta;
        return s;
    }
    /// sum_i (M_i/alpha_i + N_i/beta_i), the (nerivn:1) prefactor
    [[nodiscard]] Scalar greens_mass() const { return sum_m_over_alpha() + sum_n_over_beta(); }
    /// max_i (alpha_i + beta_i) over stored rates (sentinels included)
    [[nodiscard]] Scalar alpha_beta_max() const {
        Scalar s = 0;
        for (const auto& b : per_block) s = std::max(s, b.alpha + b.beta);
        return s;
    }
    [[nodiscard]] Index stable_rank() const {
        Index r = 0;
        for (const auto& b : per_block) r += b.stable_dim;
        return r;
    }
};

template <typename Scalar>
AggregateDichotomy<Scalar> aggregate(std::vector<SubsystemDichotomy<Scalar>> per_block) {
    if (per_block.empty()) throw ValidationError("aggregate: no blocks");
    AggregateDichotomy<Scalar> agg;
    agg.per_block = std::move(per_block);

    Index dim = 0;
    for (const auto& b : agg.per_block) dim += b.dim();
    MatX<Scalar> pm = MatX<Scalar>::Zero(dim, dim);
    Index off = 0;
    Scalar lambda = infinity<Scalar>(), alpha = infinity<Scalar>(), beta = infinity<Scalar>();
    for (const auto& b : agg.per_block) {
        pm.block(off, off, b.dim(), b.dim()) = b.projector;
        off += b.dim();
        agg.k1 = std::max(agg.k1, b.m_const / b.alpha);
        agg.k2 = std::max(agg.k2, b.n_const / b.beta);
        agg.n_bar = std::max({agg.n_bar, b.m_const, b.n_const});
        agg.m_max = std::max(agg.m_max, b.m_const);
        agg.n_max = std::max(agg.n_max, b.n_const);
        if (!b.stable_part_empty()) {
            lambda = std::min(lambda, b.alpha);
            alpha = std::min(alpha, b.alpha);
        }
        if (!b.unstable_part_empty()) {
            lambda = std::min(lambda, b.beta);
            beta = std::min(beta, b.beta);
        }
    }
    agg.p_minus = DenseOperator<Scalar>(pm);
    agg.p_plus = DenseOperator<Scalar>((MatX<Scalar>::Identity(dim, dim) - pm).eval());
    agg.m_bar = std::max(agg.sum_m(), agg.sum_n());
    agg.lambda = std::isfinite(lambda) ? lambda : Scalar(1);
    agg.alpha = std::isfinite(alpha) ? alpha : Scalar(1);
    agg.beta = std::isfinite(beta) ? beta : Scalar(1);
    return agg;
}

template <typename Scalar>
AggregateDichotomy<Scalar> extract_aggregate(const std::vector<MatX<Scalar>>& blocks,
                                             Scalar margin = Scalar(0.1),
                                             Scalar hyperbolicity_tol = Scalar(1e-8)) {
    std::vector<SubsystemDichotomy<Scalar>> per_block;
    per_block.reserve(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        try {
            per_block.push_back(extract_dichotomy(blocks[i], margin, hyperbolicity_tol));
        } catch (const NotHyperbolic& e) {
            throw NotHyperbolic("block " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return aggregate(std::move(per_block));
}

}  // namespace dicho
