#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dicho/block_system.hpp"
#include "dicho/dichotomy.hpp"
#include "dicho/greens.hpp"
#include "dicho/grid.hpp"
#include "dicho/roughness.hpp"
#include "dicho/types.hpp"

namespace dicho {

/// Nonlinearity of class (T_i, L_i, rho): per-block evaluators R_i that see
/// the full stacked state but only read the foreign components, with sup
/// bounds T_i and Lipschitz constants L_i valid on the ball S_rho.
template <typename Scalar = double>
struct Nonlinearity {
    using Eval = std::function<VecX<Scalar>(const VecX<Scalar>&)>;
    using JacAction = std::function<VecX<Scalar>(const VecX<Scalar>&, const VecX<Scalar>&)>;

    std::vector<Eval> components;         // R_i(x), value in B_i
    std::vector<JacAction> jac_actions;   // dR_i[x] v, for Hermite panels
    std::vector<Scalar> t_bounds;
    std::vector<Scalar> l_bounds;
    Scalar rho = 1;
    std::string kind;

    [[nodiscard]] Scalar t_sum() const {
        Scalar s = 0;
        for (Scalar t : t_bounds) s += t;
        return s;
    }
    [[nodiscard]] Scalar t_max() const {
        Scalar s = 0;
        for (Scalar t : t_bounds) s = std::max(s, t);
        return s;
    }
    [[nodiscard]] Scalar l_sum() const {
        Scalar s = 0;
        for (Scalar l : l_bounds) s += l;
        return s;
    }
    [[nodiscard]] Scalar l_max() const {
        Scalar s = 0;
        for (Scalar l : l_bounds) s = std::max(s, l);
        return s;
    }
};

namespace detail {

template <typename Scalar>
VecX<Scalar> resize_to(const VecX<Scalar>& v, Index d) {
    VecX<Scalar> out = VecX<Scalar>::Zero(d);
    out.head(std::min(d, v.size())) = v.head(std::min(d, v.size()));
    return out;
}

}  // namespace detail

/// Built-in nonlinearities of the system-file format. Every one is of the
/// shape R_i(x) = scale * phi(sum_{j != i} resize(x_j)) with phi applied
/// elementwise, phi(0) = 0:
///   sin-coupling:      phi = sin
///   cubic:             phi = u^3
///   saturated-linear:  phi = clamp(u, -1, 1)
template <typename Scalar>
Nonlinearity<Scalar> make_builtin_nonlinearity(const std::vector<Index>& dims, const std::string& kind,
                                               Scalar scale) {
    std::function<Scalar(Scalar)> phi, dphi;
    if (kind == "sin-coupling") {
        phi = [](Scalar u) { return std::sin(u); };
        dphi = [](Scalar u) { return std::cos(u); };
    } else if (kind == "cubic") {
        phi = [](Scalar u) { return u * u * u; };
        dphi = [](Scalar u) { return 3 * u * u; };
    } else if (kind == "saturated-linear") {
        phi = [](Scalar u) { return std::clamp<Scalar>(u, -1, 1); };
        dphi = [](Scalar u) { return std::abs(u) < Scalar(1) ? Scalar(1) : Scalar(0); };
    } else {
        throw ValidationError("unknown builtin nonlinearity '" + kind + "'");
    }

    const Index n = static_cast<Index>(dims.size());
    std::vector<Index> offsets(dims.size() + 1, 0);
    for (std::size_t i = 0; i < dims.size(); ++i)
        offsets[i + 1] = offsets[i] + dims[i];

    Nonlinearity<Scalar> r;
    r.kind = kind;
    for (Index i = 0; i < n; ++i) {
        const Index di = dims[static_cast<std::size_t>(i)];
        auto foreign_sum = [dims, offsets, i, di](const VecX<Scalar>& x) {
            VecX<Scalar> u = VecX<Scalar>::Zero(di);
            for (std::size_t j = 0; j < dims.size(); ++j) {
                if (static_cast<Index>(j) == i) continue;
                u += detail::resize_to<Scalar>(x.segment(offsets[j], dims[j]), di);
            }
            return u;
        };
        r.components.push_back([foreign_sum, phi, scale](const VecX<Scalar>& x) {
            VecX<Scalar> u = foreign_sum(x);
            return (scale * u.unaryExpr(phi)).eval();
        });
        r.jac_actions.push_back([foreign_sum, dphi, scale](const VecX<Scalar>& x, const VecX<Scalar>& v) {
            VecX<Scalar> u = foreign_sum(x);
            VecX<Scalar> uv = foreign_sum(v);
            return (scale * u.unaryExpr(dphi).cwiseProduct(uv)).eval();
        });
    }
    return r;
}

template <typename Scalar>
VecX<Scalar> apply_nonlinearity(const Nonlinearity<Scalar>& r, const std::vector<Index>& dims,
                                const VecX<Scalar>& x) {
    VecX<Scalar> out(x.size());
    Index off = 0;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        out.segment(off, dims[i]) = r.components[i](x);
        off += dims[i];
    }
    return out;
}

template <typename Scalar>
VecX<Scalar> apply_nonlinearity_jac(const Nonlinearity<Scalar>& r, const std::vector<Index>& dims,
                                    const VecX<Scalar>& x, const VecX<Scalar>& v) {
    VecX<Scalar> out(x.size());
    Index off = 0;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        out.segment(off, dims[i]) = r.jac_actions[i](x, v);
        off += dims[i];
    }
    return out;
}

template <typename Scalar = double>
struct SampledCertification {
    unsigned long long seed = 0;
    Index samples = 0;
    Scalar worst_t_ratio = 0;  // max ||R_i|| / T_i observed
    Scalar worst_l_ratio = 0;  // max Lipschitz quotient / L_i observed
};

/// Randomized validation of the (T_i, L_i, rho) class membership on S_rho
/// (Definition 1 is semantic; sampling is the only general check). Failure is
/// a hard error, success is recorded as a sampled certification.
template <typename Scalar>
SampledCertification<Scalar> validate_nonlinearity(const Nonlinearity<Scalar>& r,
                                                   const std::vector<Index>& dims, Index n_samples = 1000,
                                                   unsigned long long seed = 12345) {
    Index d = 0;
    for (Index di : dims) d += di;
    if (r.components.size() != dims.size() || r.t_bounds.size() != dims.size() ||
        r.l_bounds.size() != dims.size())
        throw ShapeError("validate_nonlinearity: per-block data sizes mismatch");

    // Definition 1 item 3 at the origin
    VecX<Scalar> zero = VecX<Scalar>::Zero(d);
    Index off = 0;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (r.components[i](zero).norm() > Scalar(1e-12))
            throw ValidationError("nonlinearity: R_" + std::to_string(i + 1) + "(0) != 0");
        off += dims[i];
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto sample_ball = [&]() {
        VecX<Scalar> v(d);
        for (Index k = 0; k < d; ++k) v(k) = Scalar(gauss(rng));
        const Scalar nrm = v.norm();
        if (nrm == 0) return VecX<Scalar>(VecX<Scalar>::Zero(d));
        const Scalar radius =
            r.rho * std::pow(Scalar(unif(rng)), Scalar(1) / Scalar(std::max<Index>(d, 1)));
        return ((radius / nrm) * v).eval();
    };

    SampledCertification<Scalar> record;
    record.seed = seed;
    record.samples = n_samples;
    const Scalar slack = 1 + Scalar(1e-8);
    for (Index s = 0; s < n_samples; ++s) {
        VecX<Scalar> x1 = sample_ball(), x2 = sample_ball();
        Index ioff = 0;
        for (std::size_t i = 0; i < dims.size(); ++i) {
            const Scalar t_i = r.t_bounds[i], l_i = r.l_bounds[i];
            const Scalar v1 = r.components[i](x1).norm();
            if (t_i > 0) record.worst_t_ratio = std::max(record.worst_t_ratio, v1 / t_i);
            if (v1 > t_i * slack)
                throw ValidationError("nonlinearity: sampled ||R_" + std::to_string(i + 1) + "|| = " +
                                      std::to_string(v1) + " exceeds T = " + std::to_string(t_i));
            Scalar foreign = 0;
            Index joff = 0;
            for (std::size_t j = 0; j < dims.size(); ++j) {
                if (j != i) foreign += (x2.segment(joff, dims[j]) - x1.segment(joff, dims[j])).squaredNorm();
                joff += dims[j];
            }
            foreign = std::sqrt(foreign);
            const Scalar dr = (r.components[i](x2) - r.components[i](x1)).norm();
            if (foreign > Scalar(1e-12)) {
                if (l_i > 0) record.worst_l_ratio = std::max(record.worst_l_ratio, dr / (l_i * foreign));
                if (dr > l_i * foreign * slack)
                    throw ValidationError("nonlinearity: sampled Lipschitz quotient " +
                                          std::to_string(dr / foreign) + " exceeds L = " +
                                          std::to_string(l_i));
            }
            ioff += dims[i];
        }
    }
    return record;
}

template <typename Scalar = double>
struct Lemma3Report {
    ConditionReport<Scalar> l_sum;  // lem3_sum
    ConditionReport<Scalar> l_max;  // lem3_max
    Scalar t_sum_lhs = 0, t_sum_threshold = 0;
    bool t_sum_ok = false;  // (nonlinear:1)
    Scalar t_max_lhs = 0, t_max_threshold = 0;
    bool t_max_ok = false;  // (nonlinear:2)
    bool satisfied = false;
};

/// Lemma 3: unique bounded solution of the nonlinear system on R with
/// |||x||| <= rho under the L-contraction and T-ball conditions.
template <typename Scalar>
Lemma3Report<Scalar> check_lemma3(const AggregateDichotomy<Scalar>& agg, const Nonlinearity<Scalar>& r) {
    const Index n = agg.block_count();
    const Scalar mass = agg.greens_mass();
    const Scalar kfac = detail::sqrt_nn1<Scalar>(n) * (agg.k1 + agg.k2);

    Lemma3Report<Scalar> out;
    out.l_sum = ConditionReport<Scalar>::make(ConditionId::lem3_sum, r.l_sum(), 1 / mass);
    out.l_sum.derive("q", mass * r.l_sum());
    out.l_max = ConditionReport<Scalar>::make(ConditionId::lem3_max, r.l_max(),
                                              kfac > 0 ? 1 / kfac : infinity<Scalar>());
    out.l_max.derive("q", kfac * r.l_max());

    out.t_sum_lhs = r.t_sum();
    out.t_sum_threshold = r.rho / mass;
    out.t_sum_ok = out.t_sum_lhs <= out.t_sum_threshold;
    out.t_max_lhs = r.t_max();
    out.t_max_threshold = kfac > 0 ? r.rho / kfac : infinity<Scalar>();
    out.t_max_ok = out.t_max_lhs <= out.t_max_threshold;

    out.satisfied = (out.l_sum.satisfied && out.t_sum_ok) || (out.l_max.satisfied && out.t_max_ok);
    return out;
}

template <typename Scalar = double>
struct NonlinearSolution {
    GridTrajectory<Scalar> trajectory;
    PicardStats<Scalar> stats;
    Scalar q_used = 0;
    Scalar max_norm = 0;  // confinement witness
};

/// Bounded solution of x' = Ax + R(x): the whole-line fixed point
/// x = S_R x from x_0 = 0 when c_minus is absent (grid spanning [-T, T]), or
/// the half-line representation x = e^{tA}c_- + int_0^inf G_A(t-tau)R(x) dtau
/// on [0, T] when initial data c_- = P_- c_- is given.
template <typename Scalar>
NonlinearSolution<Scalar> solve_bounded_nonlinear(const BlockSystem<Scalar>& sys,
                                                  const GreensFunction<Scalar>& g,
                                                  const Nonlinearity<Scalar>& r,
                                                  const TimeGrid<Scalar>& grid,
                                                  const VecX<Scalar>* c_minus = nullptr,
                                                  Scalar tol = Scalar(1e-9)) {
    const auto& agg = *g.agg;
    const Scalar q = agg.greens_mass() * r.l_sum();  // (nonlinear:3) sum form
    if (!(q < 1))
        throw ContractionViolated("solve_bounded_nonlinear: q = " + std::to_string(q) + " >= 1");

    std::vector<Index> dims;
    for (Index i = 0; i < sys.block_count(); ++i) dims.push_back(sys.block_dim(i));

    const auto n_pts = static_cast<std::size_t>(grid.size());
    std::vector<MatX<Scalar>> inhom_v, inhom_d;
    Halfline domain = Halfline::WholeLine;
    if (c_minus != nullptr) {
        if (std::abs(grid.front()) > Scalar(1e-12))
            throw ValidationError("solve_bounded_nonlinear: half-line grid must start at 0");
        if ((*c_minus - agg.p_minus.matrix * (*c_minus)).norm() >
            Scalar(1e-10) * std::max<Scalar>(1, c_minus->norm()))
            throw InvalidInitialData("solve_bounded_nonlinear: c_- must satisfy c = P_- c");
        detail::flow_trajectory(agg, grid, MatX<Scalar>(*c_minus), true, inhom_v, inhom_d);
        domain = Halfline::PlusAxis;
    } else {
        inhom_v.assign(n_pts, MatX<Scalar>::Zero(agg.dim(), 1));
        inhom_d.assign(n_pts, MatX<Scalar>::Zero(agg.dim(), 1));
    }

    auto forcing = [&](std::size_t, const MatX<Scalar>& xval, const MatX<Scalar>& xder, MatX<Scalar>& f,
                       MatX<Scalar>& fd) {
        f = apply_nonlinearity(r, dims, VecX<Scalar>(xval.col(0)));
        fd = apply_nonlinearity_jac(r, dims, VecX<Scalar>(xval.col(0)), VecX<Scalar>(xder.col(0)));
    };

    std::vector<MatX<Scalar>> xv, xd;
    NonlinearSolution<Scalar> out;
    out.q_used = q;
    out.stats = picard_solve(agg, grid, inhom_v, inhom_d, forcing, q, tol, domain, xv, xd, 400, r.rho);

    out.trajectory.grid = grid;
    out.trajectory.values.resize(agg.dim(), grid.size());
    MatX<Scalar> dmat(agg.dim(), grid.size());
    for (Index k = 0; k < grid.size(); ++k) {
        out.trajectory.values.col(k) = xv[static_cast<std::size_t>(k)];
        dmat.col(k) = xd[static_cast<std::size_t>(k)];
    }
    out.trajectory.derivatives = dmat;
    out.max_norm = out.trajectory.norm_sup();
    if (out.max_norm > r.rho * (1 + Scalar(1e-8)))
        throw ConfinementViolated("solve_bounded_nonlinear: solution escapes S_rho (max norm " +
                                  std::to_string(out.max_norm) + ")");
    return out;
}

template <typename Scalar = double>
struct Theorem45Report {
    ConditionPair<Scalar> thm4;
    ConditionPair<Scalar> thm5;
    Scalar t5_lhs = 0, t5_threshold = 0;
    bool t5_ok = false;  // (nonlinear:5)
    Scalar t6_lhs = 0, t6_threshold = 0;
    bool t6_ok = false;  // (nonlinear:6)
};

/// Theorems 4/5: the Theorem 1/2 estimates with coupling norms replaced by
/// the Lipschitz constants, plus the (nonlinear:5)/(nonlinear:6) initial-ball
/// conditions and admissible initial-data radii.
template <typename Scalar>
Theorem45Report<Scalar> certify_theorem45(const AggregateDichotomy<Scalar>& agg,
                                          const Nonlinearity<Scalar>& r) {
    CouplingNorms<Scalar> subst;
    subst.sum = r.l_sum();
    subst.max = r.l_max();
    Theorem45Report<Scalar> out;
    out.thm4 = estimate_theorem1(agg, subst);
    out.thm4.sum_form.id = ConditionId::thm4_sum;
    out.thm4.max_form.id = ConditionId::thm4_max;
    out.thm5 = estimate_theorem2(agg, subst);
    out.thm5.sum_form.id = ConditionId::thm5_sum;
    out.thm5.max_form.id = ConditionId::thm5_max;

    const Scalar radius_sum = agg.sum_m() > 0 ? r.rho / (2 * agg.sum_m()) : infinity<Scalar>();
    const Scalar radius_max =
        agg.m_max > 0 ? r.rho / (2 * std::sqrt(static_cast<Scalar>(agg.block_count())) * agg.m_max)
                      : infinity<Scalar>();
    for (auto* pair : {&out.thm4, &out.thm5}) {
        pair->sum_form.derive("initial_radius", radius_sum);
        pair->max_form.derive("initial_radius", radius_max);
    }

    out.t5_lhs = r.t_sum();
    out.t5_threshold = r.rho / (2 * agg.greens_mass());
    out.t5_ok = out.t5_lhs <= out.t5_threshold;
    const Scalar kfac = detail::sqrt_nn1<Scalar>(agg.block_count()) * (agg.k1 + agg.k2);
    out.t6_lhs = r.t_max();
    out.t6_threshold = kfac > 0 ? r.rho / (2 * kfac) : infinity<Scalar>();
    out.t6_ok = out.t6_lhs <= out.t6_threshold;
    return out;
}

/// R(x) = Bx + R~(x): the linear part feeds the roughness pipeline, the
/// remainder goes through Corollary 4.
template <typename Scalar = double>
struct SplitNonlinearity {
    std::map<std::pair<Index, Index>, MatX<Scalar>> linear_part;
    Nonlinearity<Scalar> remainder;
};

template <typename Scalar = double>
struct Corollary4Report {
    ConditionReport<Scalar> sum_form;  // cor4_sum, the L-condition of item 2
    ConditionReport<Scalar> max_form;  // cor4_max
    Scalar t1_sum_lhs = 0, t1_sum_threshold = 0;
    bool t1_sum_ok = false;
    Scalar t1_max_lhs = 0, t1_max_threshold = 0;
    bool t1_max_ok = false;
    Scalar m_tilde_1 = 0, m_tilde_2 = 0, m_tilde_3 = 0, mu = 0;
    bool satisfied_sum = false;
    bool satisfied_max = false;
};

/// Corollary 4 on top of a certified linear stage: conditions 1-3 as printed,
/// nu = 0.99 of its strict bound, both printed M~ forms, and the admissible
/// initial-data radii.
template <typename Scalar>
Corollary4Report<Scalar> certify_corollary4(const SplitNonlinearity<Scalar>& split, Scalar m_tilde_1,
                                            Scalar m_tilde_2, Scalar mu) {
    if (!(mu > 0) || !std::isfinite(m_tilde_1) || !std::isfinite(m_tilde_2))
        throw PrerequisiteMissing("certify_corollary4: linear stage not certified (need finite M~_1, M~_2, mu)");
    const auto& rt = split.remainder;
    Corollary4Report<Scalar> out;
    out.m_tilde_1 = m_tilde_1;
    out.m_tilde_2 = m_tilde_2;
    out.m_tilde_3 = std::max(m_tilde_1, m_tilde_2);
    out.mu = mu;
    const Scalar m3 = out.m_tilde_3;

    out.sum_form = ConditionReport<Scalar>::make(ConditionId::cor4_sum, rt.l_sum(), mu / (2 * m3));
    out.max_form = ConditionReport<Scalar>::make(ConditionId::cor4_max, rt.l_max(), mu / (2 * m3));

    out.t1_sum_lhs = rt.t_sum();
    out.t1_sum_threshold = rt.rho * mu / (m_tilde_1 + m_tilde_2);
    out.t1_sum_ok = out.t1_sum_lhs < out.t1_sum_threshold;
    out.t1_max_lhs = rt.t_max();
    out.t1_max_threshold = rt.rho * mu / (2 * m3);
    out.t1_max_ok = out.t1_max_lhs < out.t1_max_threshold;

    auto fill = [&](ConditionReport<Scalar>& rep, Scalar l_agg, Scalar radius) {
        if (!rep.satisfied) return;
        const Scalar nu_bound = std::sqrt(mu * mu - 2 * mu * m3 * l_agg);
        const Scalar nu = Scalar(0.99) * nu_bound;
        rep.derive("nu_bound", nu_bound);
        rep.derive("nu", nu);
        rep.derive("M_tilde", l_agg > 0 ? m_tilde_1 * mu / (m3 * l_agg) : infinity<Scalar>());
        const Scalar denom = mu * mu - nu * nu - 2 * mu * l_agg * m3;
        rep.derive("M_tilde_resolvent", denom > 0 ? m_tilde_1 * (mu * mu - nu * nu) / denom
                                                  : infinity<Scalar>());
        rep.derive("initial_radius", radius);
    };
    fill(out.sum_form, rt.l_sum(), rt.rho / (2 * (m_tilde_1 + m_tilde_2)));
    fill(out.max_form, rt.l_max(), rt.rho / (4 * m3));

    out.satisfied_sum = out.sum_form.satisfied && out.t1_sum_ok;
    out.satisfied_max = out.max_form.satisfied && out.t1_max_ok;
    return out;
}

}  // namespace dicho
