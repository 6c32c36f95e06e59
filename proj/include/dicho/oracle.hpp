#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dicho/grid.hpp"
#include "dicho/linalg.hpp"
#include "dicho/types.hpp"

namespace dicho::oracle {

/// Ground-truth dichotomy data measured from the assembled constant matrix by
/// complex eigendecomposition (independent of the ordered-Schur main path).
template <typename Scalar = double>
struct EmpiricalDichotomy {
    DenseOperator<Scalar> stable_projector;
    Scalar stable_rate = 0;        // min |Re lambda| over the stable spectrum
    Scalar unstable_rate = 0;      // min Re lambda over the unstable spectrum
    Scalar unstable_rate_max = 0;  // spectral abscissa: growth of the fastest mode
    Scalar fitted_m = 0;
    Index sample_count = 0;
    Index stable_rank = 0;
    std::vector<std::complex<Scalar>> eigenvalues;
};

template <typename Scalar>
EmpiricalDichotomy<Scalar> spectral_dichotomy(const DenseOperator<Scalar>& full,
                                              Scalar hyperbolicity_tol = Scalar(1e-8),
                                              Scalar margin = Scalar(0.1), Index samples = 200) {
    using Complex = std::complex<Scalar>;
    const MatX<Scalar>& m = full.matrix;
    if (m.rows() != m.cols()) throw ShapeError("spectral_dichotomy: square matrix required");
    Eigen::EigenSolver<MatX<Scalar>> es(m);
    if (es.info() != Eigen::Success) throw NumericalError("spectral_dichotomy: eigensolver failed");

    const Index d = m.rows();
    EmpiricalDichotomy<Scalar> out;
    out.sample_count = samples;
    Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic> v = es.eigenvectors();
    Eigen::Matrix<Complex, Eigen::Dynamic, 1> lam = es.eigenvalues();

    Scalar stable_rate = infinity<Scalar>(), unstable_rate = infinity<Scalar>();
    Eigen::Matrix<Complex, Eigen::Dynamic, 1> chi(d);
    for (Index i = 0; i < d; ++i) {
        out.eigenvalues.push_back(lam(i));
        const Scalar re = lam(i).real();
        if (std::abs(re) <= hyperbolicity_tol)
            throw NotHyperbolic("spectral_dichotomy: eigenvalue real part " + std::to_string(re) +
                                " within tolerance of the imaginary axis");
        if (re < 0) {
            chi(i) = Complex(1, 0);
            out.stable_rank += 1;
            stable_rate = std::min(stable_rate, -re);
        } else {
            chi(i) = Complex(0, 0);
            unstable_rate = std::min(unstable_rate, re);
            out.unstable_rate_max = std::max(out.unstable_rate_max, re);
        }
    }
    out.stable_rate = std::isfinite(stable_rate) ? stable_rate : Scalar(0);
    out.unstable_rate = std::isfinite(unstable_rate) ? unstable_rate : Scalar(0);

    Eigen::PartialPivLU<Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>> lu(v);
    Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic> vinv =
        lu.solve(Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>::Identity(d, d));
    Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic> pc = v * chi.asDiagonal() * vinv;
    out.stable_projector = DenseOperator<Scalar>(pc.real());

    if (out.stable_rank > 0) {
        const Scalar rate = (1 - margin) * out.stable_rate;
        const Scalar horizon = Scalar(30) / out.stable_rate;
        Scalar sup = 0;
        for (Index k = 0; k <= samples; ++k) {
            const Scalar t = horizon * Scalar(k) / Scalar(samples);
            Eigen::Matrix<Complex, Eigen::Dynamic, 1> phase(d);
            for (Index i = 0; i < d; ++i) phase(i) = chi(i) * std::exp(lam(i) * Complex(t, 0));
            MatX<Scalar> flow = (v * phase.asDiagonal() * vinv).real();
            sup = std::max(sup, operator_norm(flow) * std::exp(rate * t));
        }
        out.fitted_m = sup;
    }
    return out;
}

using Rhs = std::function<VecX<double>(double, const VecX<double>&)>;

template <typename Scalar>
using RhsT = std::function<VecX<Scalar>(Scalar, const VecX<Scalar>&)>;

/// Adaptive Dormand-Prince RK5(4) with PI-free step control; samples are
/// hit exactly by step truncation. This is the verification integrator: it
/// shares no code with the Green's-function quadrature machinery.
template <typename Scalar>
GridTrajectory<Scalar> integrate_trajectory(const RhsT<Scalar>& rhs, const VecX<Scalar>& x0, Scalar t0,
                                            Scalar t1, Scalar tol = Scalar(1e-8),
                                            Index n_samples = 200) {
    static const Scalar a21 = Scalar(1) / 5;
    static const Scalar a31 = Scalar(3) / 40, a32 = Scalar(9) / 40;
    static const Scalar a41 = Scalar(44) / 45, a42 = Scalar(-56) / 15, a43 = Scalar(32) / 9;
    static const Scalar a51 = Scalar(19372) / 6561, a52 = Scalar(-25360) / 2187,
                        a53 = Scalar(64448) / 6561, a54 = Scalar(-212) / 729;
    static const Scalar a61 = Scalar(9017) / 3168, a62 = Scalar(-355) / 33, a63 = Scalar(46732) / 5247,
                        a64 = Scalar(49) / 176, a65 = Scalar(-5103) / 18656;
    static const Scalar b1 = Scalar(35) / 384, b3 = Scalar(500) / 1113, b4 = Scalar(125) / 192,
                        b5 = Scalar(-2187) / 6784, b6 = Scalar(11) / 84;
    static const Scalar e1 = Scalar(71) / 57600, e3 = Scalar(-71) / 16695, e4 = Scalar(71) / 1920,
                        e5 = Scalar(-17253) / 339200, e6 = Scalar(22) / 525, e7 = Scalar(-1) / 40;
    static const Scalar c2 = Scalar(1) / 5, c3 = Scalar(3) / 10, c4 = Scalar(4) / 5, c5 = Scalar(8) / 9;

    if (!(t1 > t0)) throw ValidationError("integrate_trajectory: need t1 > t0");
    if (!x0.allFinite()) throw ValidationError("integrate_trajectory: non-finite initial data");

    GridTrajectory<Scalar> out;
    out.grid = TimeGrid<Scalar>::uniform_grid(t0, t1, n_samples + 1);
    out.values.resize(x0.size(), n_samples + 1);
    out.values.col(0) = x0;

    VecX<Scalar> y = x0;
    Scalar t = t0;
    VecX<Scalar> k1 = rhs(t, y);
    Scalar h = (t1 - t0) / 100;
    const Scalar h_min = (t1 - t0) * std::numeric_limits<Scalar>::epsilon() * 100;
    Index next_sample = 1;

    while (next_sample <= n_samples) {
        const Scalar t_target = out.grid.points[static_cast<std::size_t>(next_sample)];
        bool clipped = false;
        if (t + h >= t_target) {
            h = t_target - t;
            clipped = true;
        }
        VecX<Scalar> k2 = rhs(t + c2 * h, (y + h * a21 * k1).eval());
        VecX<Scalar> k3 = rhs(t + c3 * h, (y + h * (a31 * k1 + a32 * k2)).eval());
        VecX<Scalar> k4 = rhs(t + c4 * h, (y + h * (a41 * k1 + a42 * k2 + a43 * k3)).eval());
        VecX<Scalar> k5 = rhs(t + c5 * h, (y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)).eval());
        VecX<Scalar> k6 =
            rhs(t + h, (y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)).eval());
        VecX<Scalar> ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        VecX<Scalar> k7 = rhs(t + h, ynew);
        VecX<Scalar> err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        const Scalar scale =
            tol * std::max<Scalar>({Scalar(1), y.norm(), ynew.norm()});
        Scalar err = err_vec.norm() / scale;
        if (!std::isfinite(err) || !ynew.allFinite()) err = infinity<Scalar>();

        if (err <= 1 || h <= h_min * 2) {
            t = t + h;
            y = ynew;
            k1 = k7;  // FSAL
            if (clipped && std::abs(t - t_target) <= h_min) {
                out.values.col(next_sample) = y;
                ++next_sample;
            } else if (t >= t_target) {
                out.values.col(next_sample) = y;
                ++next_sample;
            }
        }
        Scalar factor = Scalar(5);
        if (std::isinf(err))
            factor = Scalar(0.2);
        else if (err > 0)
            factor = Scalar(0.9) * std::pow(err, Scalar(-0.2));
        h = h * std::clamp(factor, Scalar(0.2), Scalar(5));
        if (h < h_min) throw StiffnessError("integrate_trajectory: step size underflow");
        if (!y.allFinite()) throw NumericalError("integrate_trajectory: solution blew up");
    }
    return out;
}

template <typename Scalar>
GridTrajectory<Scalar> integrate_linear(const MatX<Scalar>& m, const VecX<Scalar>& x0, Scalar t0,
                                        Scalar t1, Scalar tol = Scalar(1e-8), Index n_samples = 200) {
    RhsT<Scalar> rhs = [&m](Scalar, const VecX<Scalar>& x) { return (m * x).eval(); };
    return integrate_trajectory<Scalar>(rhs, x0, t0, t1, tol, n_samples);
}

template <typename Scalar = double>
struct DecayFit {
    Scalar rate = 0;       // positive = decay
    Scalar prefactor = 0;  // exp of the fitted intercept
};

/// Least-squares fit of log||x(t)|| against t on the window [0.2 T, T].
template <typename Scalar>
DecayFit<Scalar> measure_decay(const GridTrajectory<Scalar>& traj) {
    const Scalar t_end = traj.grid.back();
    const Scalar t_begin = traj.grid.front() + Scalar(0.2) * (t_end - traj.grid.front());
    Scalar sx = 0, sy = 0, sxx = 0, sxy = 0;
    Index count = 0;
    for (Index k = 0; k < traj.size(); ++k) {
        const Scalar t = traj.grid.points[static_cast<std::size_t>(k)];
        if (t < t_begin) continue;
        const Scalar nrm = traj.values.col(k).norm();
        if (nrm < Scalar(1e-300)) continue;  // truncate the fit window
        const Scalar y = std::log(nrm);
        sx += t;
        sy += y;
        sxx += t * t;
        sxy += t * y;
        ++count;
    }
    if (count < 2) throw NumericalError("measure_decay: not enough usable samples in the fit window");
    const Scalar denom = Scalar(count) * sxx - sx * sx;
    const Scalar slope = (Scalar(count) * sxy - sx * sy) / denom;
    const Scalar intercept = (sy - slope * sx) / Scalar(count);
    return {-slope, std::exp(intercept)};
}

}  // namespace dicho::oracle
