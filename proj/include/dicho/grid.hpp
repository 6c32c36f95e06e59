#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dicho/linalg.hpp"
#include "dicho/types.hpp"

namespace dicho {

enum class QuadScheme { Trapezoid, GaussLaguerreTail };

/// Finite time grid plus the data needed to account for the truncated tail of
/// a semi-infinite integral: the cutoff T_inf and the exponential rate the
/// integrand is known to decay with beyond it.
template <typename Scalar = double>
struct TimeGrid {
    std::vector<Scalar> points;
    QuadScheme scheme = QuadScheme::Trapezoid;
    Scalar tail_cutoff = 0;
    Scalar tail_rate = 1;

    [[nodiscard]] Index size() const { return static_cast<Index>(points.size()); }
    [[nodiscard]] Scalar front() const { return points.front(); }
    [[nodiscard]] Scalar back() const { return points.back(); }

    [[nodiscard]] bool uniform(Scalar rel_tol = Scalar(1e-12)) const {
        if (points.size() < 3) return true;
        const Scalar h = points[1] - points[0];
        for (std::size_t k = 1; k + 1 < points.size(); ++k) {
            if (std::abs((points[k + 1] - points[k]) - h) > rel_tol * std::max<Scalar>(1, std::abs(h)))
                return false;
        }
        return true;
    }

    [[nodiscard]] Scalar step() const {
        if (points.size() < 2) return Scalar(0);
        return points[1] - points[0];
    }

    void validate() const {
        if (points.empty()) throw ValidationError("TimeGrid: empty grid");
        for (std::size_t k = 0; k + 1 < points.size(); ++k) {
            if (!(points[k] < points[k + 1]))
                throw ValidationError("TimeGrid: points must be strictly increasing");
        }
        if (!(tail_rate > 0)) throw ValidationError("TimeGrid: tail_rate must be positive");
        if (tail_cutoff < points.back() && scheme == QuadScheme::Trapezoid && points.back() > 0)
            throw ValidationError("TimeGrid: tail_cutoff must cover the grid");
    }

    static TimeGrid uniform_grid(Scalar t0, Scalar t1, Index n_points, Scalar tail_rate = 1) {
        if (n_points < 1) throw ValidationError("TimeGrid: need at least one point");
        TimeGrid g;
        g.points.resize(static_cast<std::size_t>(n_points));
        if (n_points == 1) {
            g.points[0] = t0;
        } else {
            const Scalar h = (t1 - t0) / Scalar(n_points - 1);
            for (Index k = 0; k < n_points; ++k) g.points[static_cast<std::size_t>(k)] = t0 + h * Scalar(k);
            g.points.back() = t1;
        }
        g.tail_cutoff = std::max(t0, t1);
        g.tail_rate = tail_rate;
        return g;
    }

    static TimeGrid uniform_step(Scalar t0, Scalar t1, Scalar step, Scalar tail_rate = 1) {
        const auto n = static_cast<Index>(std::ceil((t1 - t0) / step - Scalar(0.5))) + 1;
        return uniform_grid(t0, t1, std::max<Index>(n, 2), tail_rate);
    }
};

/// Gauss-Laguerre nodes/weights by Golub-Welsch; weights come pre-multiplied
/// by e^{node} so that sum_i w_i f(x_i) ~ int_0^inf f.
template <typename Scalar>
void gauss_laguerre(int n, std::vector<Scalar>& nodes, std::vector<Scalar>& weights) {
    MatX<Scalar> j = MatX<Scalar>::Zero(n, n);
    for (int k = 0; k < n; ++k) {
        j(k, k) = Scalar(2 * k + 1);
        if (k + 1 < n) {
            j(k, k + 1) = Scalar(k + 1);
            j(k + 1, k) = Scalar(k + 1);
        }
    }
    Eigen::SelfAdjointEigenSolver<MatX<Scalar>> es(j);
    nodes.resize(static_cast<std::size_t>(n));
    weights.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const Scalar x = es.eigenvalues()(k);
        const Scalar w = es.eigenvectors()(0, k) * es.eigenvectors()(0, k);
        nodes[static_cast<std::size_t>(k)] = x;
        weights[static_cast<std::size_t>(k)] = w * std::exp(x);
    }
}

/// Grid for int_0^inf: uniform points up to the cutoff, then mapped
/// Gauss-Laguerre nodes carrying the exponential tail.
template <typename Scalar>
TimeGrid<Scalar> semi_infinite_grid(Scalar cutoff, Scalar step, Scalar tail_rate, int laguerre_nodes = 8) {
    TimeGrid<Scalar> g = TimeGrid<Scalar>::uniform_step(Scalar(0), cutoff, step, tail_rate);
    g.scheme = QuadScheme::GaussLaguerreTail;
    g.tail_cutoff = cutoff;
    std::vector<Scalar> nodes, weights;
    gauss_laguerre<Scalar>(laguerre_nodes, nodes, weights);
    for (Scalar s : nodes) g.points.push_back(cutoff + s / tail_rate);
    return g;
}

template <typename Scalar = double>
struct IntegralResult {
    MatX<Scalar> value;
    Scalar tail_bound = 0;
};

/// Quadrature of a sampled matrix-valued function over the grid. Trapezoid
/// scheme applies a Gregory end correction (one-sided second-order slope
/// estimates), which vanishes on polynomials of degree <= 1; the
/// Gauss-Laguerre scheme additionally sums the mapped tail nodes. The
/// certified tail bound ||f(cutoff)|| / tail_rate is reported alongside.
template <typename Scalar>
IntegralResult<Scalar> integrate_kernel(const std::vector<MatX<Scalar>>& values, const TimeGrid<Scalar>& grid) {
    grid.validate();
    if (values.size() != grid.points.size())
        throw ShapeError("integrate_kernel: sample count does not match grid");
    const Index rows = values.front().rows(), cols = values.front().cols();
    for (const auto& v : values) {
        if (v.rows() != rows || v.cols() != cols) throw ShapeError("integrate_kernel: ragged samples");
    }

    IntegralResult<Scalar> out;
    out.value = MatX<Scalar>::Zero(rows, cols);

    // split off tail nodes (beyond the cutoff) under the Laguerre scheme
    std::size_t n_core = values.size();
    if (grid.scheme == QuadScheme::GaussLaguerreTail) {
        while (n_core > 1 && grid.points[n_core - 1] > grid.tail_cutoff * (1 + Scalar(1e-14))) --n_core;
    }

    for (std::size_t k = 0; k + 1 < n_core; ++k) {
        const Scalar h = grid.points[k + 1] - grid.points[k];
        out.value += (h / 2) * (values[k] + values[k + 1]);
    }

    // Gregory correction -h^2/12 (f'(b) - f'(a)) on uniform cores
    bool core_uniform = n_core >= 3;
    for (std::size_t k = 0; core_uniform && k + 1 < n_core; ++k) {
        const Scalar h0 = grid.points[1] - grid.points[0];
        if (std::abs((grid.points[k + 1] - grid.points[k]) - h0) >
            Scalar(1e-12) * std::max<Scalar>(1, std::abs(h0)))
            core_uniform = false;
    }
    if (core_uniform) {
        const Scalar h = grid.points[1] - grid.points[0];
        MatX<Scalar> da = (-3 * values[0] + 4 * values[1] - values[2]) / (2 * h);
        MatX<Scalar> db =
            (3 * values[n_core - 1] - 4 * values[n_core - 2] + values[n_core - 3]) / (2 * h);
        out.value -= (h * h / 12) * (db - da);
    }

    if (grid.scheme == QuadScheme::GaussLaguerreTail && n_core < values.size()) {
        const int n_tail = static_cast<int>(values.size() - n_core);
        std::vector<Scalar> nodes, weights;
        gauss_laguerre<Scalar>(n_tail, nodes, weights);
        for (int k = 0; k < n_tail; ++k)
            out.value += (weights[static_cast<std::size_t>(k)] / grid.tail_rate) *
                         values[n_core + static_cast<std::size_t>(k)];
    }

    out.tail_bound = operator_norm(values[n_core - 1]) / grid.tail_rate;
    return out;
}

/// A vector-valued function sampled on a grid; columns of `values` are the
/// samples, linear interpolation between nodes.
template <typename Scalar = double>
struct GridTrajectory {
    TimeGrid<Scalar> grid;
    MatX<Scalar> values;                      // dim x n_points
    std::optional<MatX<Scalar>> derivatives;  // same shape, when carried

    [[nodiscard]] Index dim() const { return values.rows(); }
    [[nodiscard]] Index size() const { return values.cols(); }

    [[nodiscard]] Scalar norm_sup() const {
        Scalar m = 0;
        for (Index k = 0; k < values.cols(); ++k) m = std::max(m, values.col(k).norm());
        return m;
    }

    [[nodiscard]] VecX<Scalar> eval(Scalar t) const {
        const auto& p = grid.points;
        if (t <= p.front()) return values.col(0);
        if (t >= p.back()) return values.col(values.cols() - 1);
        const auto it = std::upper_bound(p.begin(), p.end(), t);
        const auto k = static_cast<Index>(std::distance(p.begin(), it)) - 1;
        const Scalar h = p[static_cast<std::size_t>(k + 1)] - p[static_cast<std::size_t>(k)];
        const Scalar w = (t - p[static_cast<std::size_t>(k)]) / h;
        return (1 - w) * values.col(k) + w * values.col(k + 1);
    }

    void validate() const {
        grid.validate();
        if (values.cols() != grid.size()) throw ShapeError("GridTrajectory: value count does not match grid");
        if (derivatives && (derivatives->rows() != values.rows() || derivatives->cols() != values.cols()))
            throw ShapeError("GridTrajectory: derivative shape mismatch");
    }
};

}  // namespace dicho
