#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dicho/block_system.hpp"
#include "dicho/dichotomy.hpp"
#include "dicho/greens.hpp"
#include "dicho/io.hpp"
#include "dicho/lyapunov.hpp"
#include "dicho/nonlinear.hpp"
#include "dicho/oracle.hpp"
#include "dicho/report.hpp"
#include "dicho/roughness.hpp"
#include "dicho/types.hpp"

namespace dicho {

struct CertifiedRoute {
    std::string name;
    double m_tilde = 0;
    double m_tilde_2 = 0;
    double mu = 0;
};

/// Preferred certified (M~, mu) pair: Theorem 1 before Theorem 2, sum form
/// before max form, finite M~ only.
inline std::optional<CertifiedRoute> pick_route(const std::vector<ConditionReport<double>>& conditions) {
    const ConditionId order[] = {ConditionId::thm1_sum, ConditionId::thm1_max, ConditionId::thm2_sum,
                                 ConditionId::thm2_max};
    for (ConditionId id : order) {
        for (const auto& c : conditions) {
            if (c.id != id || !c.satisfied) continue;
            auto m = c.derived.find("M_tilde");
            auto m2 = c.derived.find("M_tilde_2");
            auto mu = c.derived.find("mu");
            if (m == c.derived.end() || mu == c.derived.end()) continue;
            if (!std::isfinite(m->second)) continue;
            CertifiedRoute route;
            route.name = condition_name(id);
            route.m_tilde = m->second;
            route.m_tilde_2 = m2 != c.derived.end() ? m2->second : m->second;
            route.mu = mu->second;
            return route;
        }
    }
    return std::nullopt;
}

namespace pipeline_detail {

inline TimeGrid<double> plus_grid(const AggregateDichotomy<double>& agg, const BlockSystem<double>& sys,
                                  const AnalysisOptions& opt) {
    const double t_inf =
        opt.t_infinity > 0 ? opt.t_infinity : default_t_infinity(agg, sys, opt.tolerance * 1e-1);
    const double h = opt.grid_step > 0 ? opt.grid_step : default_grid_step(agg, sys);
    return TimeGrid<double>::uniform_step(0.0, t_inf, h);
}

inline TimeGrid<double> minus_grid(const AggregateDichotomy<double>& agg, const BlockSystem<double>& sys,
                                   const AnalysisOptions& opt) {
    const double t_inf =
        opt.t_infinity > 0 ? opt.t_infinity : default_t_infinity(agg, sys, opt.tolerance * 1e-1);
    const double h = opt.grid_step > 0 ? opt.grid_step : default_grid_step(agg, sys);
    return TimeGrid<double>::uniform_step(-t_inf, 0.0, h);
}

/// R(x) = Bx + R~(x) as one (T, L, rho) class: the coupling rows contribute
/// sqrt(sum_j ||A_ij||^2) to the Lipschitz constants (Cauchy-Schwarz) and
/// rho times that to the sup bounds.
inline Nonlinearity<double> combined_class(const BlockSystem<double>& sys, const Nonlinearity<double>& rem) {
    std::vector<Index> dims;
    for (Index i = 0; i < sys.block_count(); ++i) dims.push_back(sys.block_dim(i));
    Nonlinearity<double> r;
    r.kind = rem.kind.empty() ? "couplings" : rem.kind + "+couplings";
    r.rho = rem.rho;
    for (Index i = 0; i < sys.block_count(); ++i) {
        double s2 = 0;
        for (Index jj = 0; jj < sys.block_count(); ++jj) {
            if (const auto* c = sys.coupling(i, jj)) {
                const double nrm = operator_norm(*c);
                s2 += nrm * nrm;
            }
        }
        s2 = std::sqrt(s2);
        r.t_bounds.push_back(rem.t_bounds[static_cast<std::size_t>(i)] + r.rho * s2);
        r.l_bounds.push_back(rem.l_bounds[static_cast<std::size_t>(i)] + s2);
        const Index bi = i;
        r.components.push_back([&sys, &rem, bi, dims](const VecX<double>& x) {
            VecX<double> f = rem.components[static_cast<std::size_t>(bi)](x);
            for (Index j = 0; j < sys.block_count(); ++j)
                if (const auto* c = sys.coupling(bi, j))
                    f += (*c) * x.segment(sys.block_offset(j), sys.block_dim(j));
            return f;
        });
        r.jac_actions.push_back([&sys, &rem, bi, dims](const VecX<double>& x, const VecX<double>& v) {
            VecX<double> f = rem.jac_actions[static_cast<std::size_t>(bi)](x, v);
            for (Index j = 0; j < sys.block_count(); ++j)
                if (const auto* c = sys.coupling(bi, j))
                    f += (*c) * v.segment(sys.block_offset(j), sys.block_dim(j));
            return f;
        });
    }
    return r;
}

}  // namespace pipeline_detail

inline AnalysisReport run_analysis(const SystemFile& file, const AnalysisOptions& opt,
                                   const std::string& input_path = "") {
    const auto& sys = file.system;
    sys.validate();

    AnalysisReport rep;
    rep.input_path = input_path;
    rep.digest = file.digest;
    rep.options = opt;

    AggregateDichotomy<double> agg;
    try {
        agg = extract_aggregate<double>(sys.blocks, opt.margin);
    } catch (const NotHyperbolic& e) {
        // name the offending block by label
        std::string msg = e.what();
        for (std::size_t i = 0; i < sys.blocks.size(); ++i) {
            const std::string key = "block " + std::to_string(i + 1);
            if (msg.find(key) != std::string::npos) msg += " (label '" + file.labels[i] + "')";
        }
        throw NotHyperbolic(msg);
    }

    for (Index i = 0; i < agg.block_count(); ++i) {
        const auto& b = agg.per_block[static_cast<std::size_t>(i)];
        BlockReport br;
        br.label = file.labels[static_cast<std::size_t>(i)];
        br.dim = b.dim();
        br.stable_dim = b.stable_dim;
        br.m_const = b.m_const;
        br.alpha = b.alpha;
        br.n_const = b.n_const;
        br.beta = b.beta;
        br.projector_norm = operator_norm(b.projector);
        rep.blocks.push_back(br);
    }

    const auto norms = coupling_norms(sys);
    rep.aggregate = {agg.dim(),
                     agg.block_count(),
                     agg.stable_rank(),
                     agg.k1,
                     agg.k2,
                     agg.lambda,
                     agg.m_bar,
                     agg.n_bar,
                     agg.m_max,
                     agg.n_max,
                     agg.sum_m(),
                     agg.sum_n(),
                     agg.greens_mass(),
                     agg.alpha_beta_max(),
                     norms.sum,
                     norms.max};

    auto lem1 = check_lemma1(agg, norms);
    auto lem2 = check_lemma2(agg, norms);
    auto thm1 = estimate_theorem1(agg, norms);
    auto thm2 = estimate_theorem2(agg, norms);
    rep.conditions = {lem1.sum_form, lem1.max_form, lem2.sum_form, lem2.max_form,
                      thm1.sum_form, thm1.max_form, thm2.sum_form, thm2.max_form};

    // perturbed projectors through Z / Z'
    GreensFunction<double> g(agg);
    std::optional<PerturbedDichotomy<double>> pd;
    rep.perturbed.rank_p_minus = agg.stable_rank();
    const auto qf = contraction_factor(agg, norms);
    const double q_minus =
        2 * std::sqrt(static_cast<double>(agg.block_count() * (agg.block_count() - 1))) *
        (agg.k1 + agg.k2) * norms.max;
    if (qf.contractive() || std::min(qf.q_sum, q_minus) < 1) {
        try {
            auto z = compute_Z(sys, g, pipeline_detail::plus_grid(agg, sys, opt), opt.tolerance);
            auto zp = compute_Zprime(sys, g, pipeline_detail::minus_grid(agg, sys, opt), opt.tolerance);
            pd = build_perturbed_projectors(z.op, zp.op, agg);
            rep.perturbed.computed = true;
            rep.perturbed.norm_z = pd->norm_z;
            rep.perturbed.norm_zprime = pd->norm_zprime;
            rep.perturbed.norm_z_plus_zprime = pd->norm_z_plus_zprime;
            rep.perturbed.idempotency_residual = operator_norm(
                (pd->p_tilde_minus.matrix * pd->p_tilde_minus.matrix - pd->p_tilde_minus.matrix).eval());
            rep.perturbed.rank_p_tilde_minus =
                Eigen::FullPivLU<MatX<double>>(pd->p_tilde_minus.matrix).rank();
            rep.perturbed.direct_wholeline_ok = pd->norm_z_plus_zprime < 1;
            auto wl = check_wholeline(agg, norms, pd->z, pd->zprime);
            rep.conditions.push_back(wl.osn1);
            rep.conditions.push_back(wl.osn2);
        } catch (const NumericalError& e) {
            rep.perturbed.skip_reason = e.what();
        }
    } else {
        rep.perturbed.skip_reason = "S-operators not contractive (q_sum = " + std::to_string(qf.q_sum) + ")";
    }
    if (!rep.perturbed.computed) {
        // printed whole-line thresholds remain well defined without Z, Z'
        DenseOperator<double> zero(MatX<double>::Zero(agg.dim(), agg.dim()));
        auto wl = check_wholeline(agg, norms, zero, zero);
        wl.osn1.notes.push_back("Z, Z' not computed; direct check unavailable");
        wl.osn2.notes.push_back("Z, Z' not computed; direct check unavailable");
        rep.conditions.push_back(wl.osn1);
        rep.conditions.push_back(wl.osn2);
    }

    // Lyapunov route
    try {
        auto cert = lyapunov_certificate(sys, agg);
        rep.lyapunov.computed = true;
        rep.lyapunov.self_adjoint = cert.projectors_self_adjoint;
        rep.lyapunov.norm_c = operator_norm(cert.c.matrix);
        for (const auto& b : cert.blocks) {
            rep.lyapunov.max_block_residual = std::max(rep.lyapunov.max_block_residual, b.lyap_residual);
            rep.lyapunov.max_quad_direct_gap = std::max(rep.lyapunov.max_quad_direct_gap, b.quad_direct_gap);
        }
        rep.lyapunov.wer1_lhs = cert.wer1_lhs;
        rep.lyapunov.wer1_ok = cert.wer1_ok;
        rep.lyapunov.positivity_margin = cert.positivity_margin;
        rep.lyapunov.derivative_margin = cert.derivative_margin;
        rep.lyapunov.satisfied = cert.satisfied;
        rep.conditions.push_back(cert.osnov1);
        rep.conditions.push_back(cert.osnov2);
    } catch (const NumericalError& e) {
        rep.lyapunov.skip_reason = e.what();
    }

    // nonlinear route
    if (file.nonlinearity) {
        auto& nl = rep.nonlinear;
        nl.present = true;
        nl.kind = file.nonlinearity->kind;
        nl.rho = file.nonlinearity->rho;
        auto remainder = build_nonlinearity(file);
        std::vector<Index> dims;
        for (const auto& b : sys.blocks) dims.push_back(b.rows());
        auto record = validate_nonlinearity(remainder, dims, 1000, opt.seed);
        nl.validated = true;
        nl.sample_seed = record.seed;
        nl.samples = record.samples;

        const bool has_couplings = !sys.couplings.empty();
        Nonlinearity<double> full_class =
            has_couplings ? pipeline_detail::combined_class(sys, remainder) : remainder;
        auto lem3 = check_lemma3(agg, full_class);
        rep.conditions.push_back(lem3.l_sum);
        rep.conditions.push_back(lem3.l_max);
        nl.t_sum_lhs = lem3.t_sum_lhs;
        nl.t_sum_threshold = lem3.t_sum_threshold;
        nl.t_sum_ok = lem3.t_sum_ok;
        nl.t_max_lhs = lem3.t_max_lhs;
        nl.t_max_threshold = lem3.t_max_threshold;
        nl.t_max_ok = lem3.t_max_ok;
        nl.lemma3_satisfied = lem3.satisfied;
        if (has_couplings)
            nl.note = "lemma 3 / theorems 4-5 evaluated for the combined class Bx + R(x)";

        auto t45 = certify_theorem45(agg, full_class);
        rep.conditions.push_back(t45.thm4.sum_form);
        rep.conditions.push_back(t45.thm4.max_form);
        rep.conditions.push_back(t45.thm5.sum_form);
        rep.conditions.push_back(t45.thm5.max_form);
        nl.t5_lhs = t45.t5_lhs;
        nl.t5_threshold = t45.t5_threshold;
        nl.t5_ok = t45.t5_ok;
        nl.t6_lhs = t45.t6_lhs;
        nl.t6_threshold = t45.t6_threshold;
        nl.t6_ok = t45.t6_ok;

        if (has_couplings) {
            auto route = pick_route(rep.conditions);
            if (route && pd) {
                pd->m_tilde_1 = route->m_tilde;
                pd->m_tilde_2 = route->m_tilde_2;
                pd->mu = route->mu;
                pd->route = route->name;
            }
            if (route) {
                SplitNonlinearity<double> split;
                split.linear_part = sys.couplings;
                split.remainder = remainder;
                auto cor4 = certify_corollary4<double>(split, route->m_tilde, route->m_tilde_2, route->mu);
                nl.cor4_applicable = true;
                nl.cor4_route = route->name;
                nl.cor4_m1 = cor4.m_tilde_1;
                nl.cor4_m2 = cor4.m_tilde_2;
                nl.cor4_mu = cor4.mu;
                nl.cor4_t1_sum_ok = cor4.t1_sum_ok;
                nl.cor4_t1_max_ok = cor4.t1_max_ok;
                nl.cor4_satisfied_sum = cor4.satisfied_sum;
                nl.cor4_satisfied_max = cor4.satisfied_max;
                rep.conditions.push_back(cor4.sum_form);
                rep.conditions.push_back(cor4.max_form);
            } else {
                nl.note += (nl.note.empty() ? "" : "; ");
                nl.note += "corollary 4 skipped: no certified finite (M~, mu) linear route";
            }
        }
    }

    // oracle comparison
    try {
        auto full = assemble_full(sys);
        auto emp = oracle::spectral_dichotomy(full, 1e-8, opt.margin);
        rep.oracle.hyperbolic = true;
        rep.oracle.stable_rank = emp.stable_rank;
        rep.oracle.stable_rate = emp.stable_rate;
        rep.oracle.unstable_rate = emp.unstable_rate;
        rep.oracle.fitted_m = emp.fitted_m;
        if (pd) {
            rep.oracle.projector_compared = true;
            rep.oracle.projector_distance =
                operator_norm((pd->p_tilde_minus.matrix - emp.stable_projector.matrix).eval());
        }
        for (const auto& c : rep.conditions) {
            if (!c.satisfied) continue;
            auto mu = c.derived.find("mu");
            if (mu == c.derived.end()) continue;
            if (c.id == ConditionId::thm1_sum || c.id == ConditionId::thm1_max ||
                c.id == ConditionId::thm2_sum || c.id == ConditionId::thm2_max) {
                rep.oracle.certified_mu.emplace_back(condition_name(c.id), mu->second);
                if (mu->second > emp.stable_rate * (1 + 1e-6)) rep.oracle.mu_consistent = false;
            }
        }
    } catch (const NotHyperbolic& e) {
        rep.oracle.hyperbolic = false;
        rep.oracle.note = e.what();
    }

    auto satisfied = [&](ConditionId id) {
        for (const auto& c : rep.conditions)
            if (c.id == id && c.satisfied) return true;
        return false;
    };
    rep.verdicts["halfline_plus (lemma 1)"] =
        satisfied(ConditionId::dost1) || satisfied(ConditionId::dost2);
    rep.verdicts["halfline_minus (lemma 2)"] =
        satisfied(ConditionId::lem2_sum) || satisfied(ConditionId::lem2_max);
    rep.verdicts["decay_theorem1"] = satisfied(ConditionId::thm1_sum) || satisfied(ConditionId::thm1_max);
    rep.verdicts["decay_theorem2"] = satisfied(ConditionId::thm2_sum) || satisfied(ConditionId::thm2_max);
    rep.verdicts["wholeline"] = satisfied(ConditionId::osn1) || satisfied(ConditionId::osn2) ||
                                rep.perturbed.direct_wholeline_ok;
    rep.verdicts["lyapunov"] = rep.lyapunov.satisfied;
    if (rep.nonlinear.present) {
        rep.verdicts["nonlinear_lemma3"] = rep.nonlinear.lemma3_satisfied;
        if (rep.nonlinear.cor4_applicable)
            rep.verdicts["nonlinear_corollary4"] =
                rep.nonlinear.cor4_satisfied_sum || rep.nonlinear.cor4_satisfied_max;
    }
    rep.verdicts["projector_matches_oracle"] =
        rep.oracle.projector_compared && rep.oracle.projector_distance <= 1e-5;
    return rep;
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

struct SolveRequest {
    std::optional<VecX<double>> init;  // full-space vector in range(P_-)
    Index init_basis = 0;              // used when init is absent (basis of range(P_-))
    double horizon = 10.0;
    std::string out_stem = "solution";
};

struct SolveArtifacts {
    GridTrajectory<double> trajectory;
    double envelope_m = 0;
    double envelope_mu = 0;
    std::string envelope_route;
    std::string trajectory_path;
    std::string envelope_path;
    double residual = 0;
};

namespace pipeline_detail {

inline void write_trajectory(const std::string& path, const GridTrajectory<double>& traj) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out.precision(17);
    out << "# t";
    for (Index i = 0; i < traj.dim(); ++i) out << " x" << (i + 1);
    out << "\n";
    for (Index k = 0; k < traj.size(); ++k) {
        out << traj.grid.points[static_cast<std::size_t>(k)];
        for (Index i = 0; i < traj.dim(); ++i) out << " " << traj.values(i, k);
        out << "\n";
    }
}

inline void write_envelope(const std::string& path, const GridTrajectory<double>& traj, double m,
                           double mu, const std::string& route) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out.precision(17);
    const double x0 = traj.values.col(0).norm();
    out << "# t log_norm log_envelope   (envelope " << m << " * exp(-" << mu << " t) * " << x0
        << ", route " << route << ")\n";
    for (Index k = 0; k < traj.size(); ++k) {
        const double nrm = traj.values.col(k).norm();
        out << traj.grid.points[static_cast<std::size_t>(k)] << " "
            << (nrm > 0 ? std::log(nrm) : -750.0) << " " << std::log(m * x0) - mu * traj.grid.points[static_cast<std::size_t>(k)]
            << "\n";
    }
}

}  // namespace pipeline_detail

inline SolveArtifacts run_solve(const SystemFile& file, const AnalysisOptions& opt,
                                const SolveRequest& req) {
    const auto& sys = file.system;
    sys.validate();
    auto agg = extract_aggregate<double>(sys.blocks, opt.margin);
    GreensFunction<double> g(agg);
    const auto norms = coupling_norms(sys);

    // initial data
    MatX<double> s_full, sh_full;
    detail::aggregate_bases(agg, true, s_full, sh_full);
    if (s_full.cols() == 0) throw InvalidInitialData("stable subspace is trivial; nothing to solve");
    VecX<double> c;
    if (req.init) {
        if (req.init->size() != agg.dim())
            throw InvalidInitialData("initial vector has dimension " + std::to_string(req.init->size()) +
                                     ", system has " + std::to_string(agg.dim()));
        c = *req.init;
    } else {
        if (req.init_basis < 0 || req.init_basis >= s_full.cols())
            throw InvalidInitialData("basis index out of range (stable rank " +
                                     std::to_string(s_full.cols()) + ")");
        c = s_full.col(req.init_basis);
    }

    const double t_inf =
        std::max(req.horizon, opt.t_infinity > 0 ? opt.t_infinity
                                                 : default_t_infinity(agg, sys, opt.tolerance * 1e-1));
    const double h = opt.grid_step > 0 ? opt.grid_step : default_grid_step(agg, sys);
    auto grid = TimeGrid<double>::uniform_step(0.0, t_inf, h);

    SolveArtifacts out;
    std::vector<ConditionReport<double>> conds;
    if (!file.nonlinearity) {
        auto lem1 = check_lemma1(agg, norms);
        if (!lem1.any())
            throw ContractionViolated("solve refused: conditions dost1 (" +
                                      std::to_string(lem1.sum_form.lhs) + " >= " +
                                      std::to_string(lem1.sum_form.threshold) + ") and dost2 both fail");
        auto sol = solve_bounded_halfline(sys, g, c, grid, opt.tolerance);
        out.trajectory = sol.trajectory;
        out.residual = sol.stats.residual;
        auto thm1 = estimate_theorem1(agg, norms);
        auto thm2 = estimate_theorem2(agg, norms);
        conds = {thm1.sum_form, thm1.max_form, thm2.sum_form, thm2.max_form};
        auto route = pick_route(conds);
        if (route) {
            out.envelope_m = route->m_tilde;
            out.envelope_mu = route->mu;
            out.envelope_route = route->name;
        } else {
            out.envelope_m = lem1.sum_form.satisfied ? lem1.sum_form.derived.at("amplification")
                                                     : lem1.max_form.derived.at("amplification");
            out.envelope_mu = agg.lambda;
            out.envelope_route = "lemma1 amplification with mu = Lambda";
        }
    } else {
        auto remainder = build_nonlinearity(file);
        std::vector<Index> dims;
        for (const auto& b : sys.blocks) dims.push_back(b.rows());
        validate_nonlinearity(remainder, dims, 1000, opt.seed);
        Nonlinearity<double> full_class =
            sys.couplings.empty() ? remainder : pipeline_detail::combined_class(sys, remainder);
        auto lem3 = check_lemma3(agg, full_class);
        if (!lem3.satisfied)
            throw ContractionViolated(
                "solve refused: lemma 3 certificate fails (L-sum " + std::to_string(lem3.l_sum.lhs) +
                " vs " + std::to_string(lem3.l_sum.threshold) + ", T-sum " +
                std::to_string(lem3.t_sum_lhs) + " vs " + std::to_string(lem3.t_sum_threshold) + ")");
        auto t45 = certify_theorem45(agg, full_class);
        // theorem 4 initial ball
        const double radius = agg.sum_m() > 0 ? full_class.rho / (2 * agg.sum_m()) : full_class.rho;
        if (c.norm() > radius * (1 + 1e-12))
            throw InvalidInitialData("initial data norm " + std::to_string(c.norm()) +
                                     " outside the admissible ball of radius " + std::to_string(radius));
        auto sol = solve_bounded_nonlinear(sys.couplings.empty() ? sys : [&] {
            BlockSystem<double> bare;
            bare.blocks = sys.blocks;
            return bare;
        }(), g, full_class, grid, &c, opt.tolerance);
        out.trajectory = sol.trajectory;
        out.residual = sol.stats.residual;
        conds = {t45.thm4.sum_form, t45.thm4.max_form, t45.thm5.sum_form, t45.thm5.max_form};
        // reuse the linear preference logic by relabeling
        for (auto& cc : conds) {
            if (cc.id == ConditionId::thm4_sum) cc.id = ConditionId::thm1_sum;
            if (cc.id == ConditionId::thm4_max) cc.id = ConditionId::thm1_max;
            if (cc.id == ConditionId::thm5_sum) cc.id = ConditionId::thm2_sum;
            if (cc.id == ConditionId::thm5_max) cc.id = ConditionId::thm2_max;
        }
        auto route = pick_route(conds);
        if (route) {
            out.envelope_m = route->m_tilde;
            out.envelope_mu = route->mu;
            out.envelope_route = "theorem 4/5 (" + route->name + " analogue)";
        } else {
            out.envelope_m = 1.0;
            out.envelope_mu = 0.0;
            out.envelope_route = "uncertified decay (confinement only)";
        }
    }

    // restrict the emitted trajectory to [0, horizon]
    Index keep = 0;
    while (keep + 1 < out.trajectory.size() &&
           out.trajectory.grid.points[static_cast<std::size_t>(keep)] < req.horizon - 1e-12)
        ++keep;
    GridTrajectory<double> emitted;
    emitted.grid.points.assign(out.trajectory.grid.points.begin(),
                               out.trajectory.grid.points.begin() + keep + 1);
    emitted.grid.tail_cutoff = emitted.grid.points.back();
    emitted.values = out.trajectory.values.leftCols(keep + 1);
    out.trajectory = emitted;

    out.trajectory_path = req.out_stem + ".trajectory.dat";
    out.envelope_path = req.out_stem + ".envelope.dat";
    pipeline_detail::write_trajectory(out.trajectory_path, out.trajectory);
    pipeline_detail::write_envelope(out.envelope_path, out.trajectory, out.envelope_m, out.envelope_mu,
                                    out.envelope_route);
    return out;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    double lambda = 0;
    std::map<std::string, bool> conditions;
    bool oracle_hyperbolic = false;
    Index oracle_stable_rank = 0;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    std::map<std::string, double> first_failure;  // condition -> smallest failing lambda
    Index base_rank = 0;
    bool rank_changed = false;
    double rank_change_lambda = 0;
};

inline SweepReport run_sweep(const SystemFile& file, const AnalysisOptions& opt, double lambda_max,
                             int steps) {
    if (steps < 1) throw ValidationError("sweep: need at least one step");
    const auto& sys = file.system;
    sys.validate();
    auto agg = extract_aggregate<double>(sys.blocks, opt.margin);

    SweepReport rep;
    bool have_base_rank = false;
    for (int k = 0; k <= steps; ++k) {
        const double lambda = lambda_max * k / steps;
        auto scaled = sys.with_scaled_couplings(lambda);
        const auto norms = coupling_norms(scaled);

        SweepRow row;
        row.lambda = lambda;
        auto lem1 = check_lemma1(agg, norms);
        auto thm1 = estimate_theorem1(agg, norms);
        auto thm2 = estimate_theorem2(agg, norms);
        DenseOperator<double> zero(MatX<double>::Zero(agg.dim(), agg.dim()));
        auto wl = check_wholeline(agg, norms, zero, zero);
        row.conditions["dost1"] = lem1.sum_form.satisfied;
        row.conditions["dost2"] = lem1.max_form.satisfied;
        row.conditions["thm1_sum"] = thm1.sum_form.satisfied;
        row.conditions["thm1_max"] = thm1.max_form.satisfied;
        row.conditions["thm2_sum"] = thm2.sum_form.satisfied;
        row.conditions["thm2_max"] = thm2.max_form.satisfied;
        row.conditions["osn1"] = wl.osn1.satisfied;
        row.conditions["osn2"] = wl.osn2.satisfied;
        {
            // Lyapunov printed thresholds depend only on the constants
            double d_sum = 0, d_max = 0;
            for (const auto& b : agg.per_block) {
                const double di = b.m_const * b.m_const / b.alpha + b.n_const * b.n_const / b.beta;
                d_sum += di;
                d_max = std::max(d_max, di);
            }
            const auto n = static_cast<double>(agg.block_count());
            row.conditions["lyap_sum"] = norms.sum < 1.0 / d_sum;
            const double nfac = n * std::sqrt(std::max(n - 1.0, 0.0));
            row.conditions["lyap_max"] = nfac > 0 ? norms.max < 1.0 / (nfac * d_max) : true;
        }

        try {
            auto emp = oracle::spectral_dichotomy(assemble_full(scaled));
            row.oracle_hyperbolic = true;
            row.oracle_stable_rank = emp.stable_rank;
            if (!have_base_rank) {
                rep.base_rank = emp.stable_rank;
                have_base_rank = true;
            } else if (emp.stable_rank != rep.base_rank && !rep.rank_changed) {
                rep.rank_changed = true;
                rep.rank_change_lambda = lambda;
            }
        } catch (const NotHyperbolic&) {
            row.oracle_hyperbolic = false;
            if (!rep.rank_changed) {
                rep.rank_changed = true;
                rep.rank_change_lambda = lambda;
            }
        }

        for (const auto& [name, ok] : row.conditions) {
            if (!ok && rep.first_failure.find(name) == rep.first_failure.end())
                rep.first_failure[name] = lambda;
        }
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

inline Json to_json(const SweepReport& rep) {
    Json j;
    j["schema_version"] = "1";
    j["rows"] = Json::array();
    for (const auto& row : rep.rows) {
        Json r;
        r["lambda"] = row.lambda;
        for (const auto& [name, ok] : row.conditions) r[name] = ok;
        r["oracle_hyperbolic"] = row.oracle_hyperbolic;
        r["oracle_stable_rank"] = row.oracle_stable_rank;
        j["rows"].push_back(r);
    }
    Json ff = Json::object();
    for (const auto& [name, lambda] : rep.first_failure) ff[name] = lambda;
    j["first_failure"] = ff;
    j["base_stable_rank"] = rep.base_rank;
    j["rank_changed"] = rep.rank_changed;
    j["rank_change_lambda"] = rep.rank_change_lambda;
    return j;
}

inline std::string render_human(const SweepReport& rep) {
    std::ostringstream os;
    os << "lambda   dost1 dost2 thm1s thm1m thm2s thm2m osn1 osn2 lyaps lyapm  oracle rank\n";
    for (const auto& row : rep.rows) {
        os.setf(std::ios::fixed);
        os.precision(3);
        os << row.lambda << "   ";
        for (const char* k : {"dost1", "dost2", "thm1_sum", "thm1_max", "thm2_sum", "thm2_max", "osn1",
                              "osn2", "lyap_sum", "lyap_max"})
            os << (row.conditions.at(k) ? "  +  " : "  -  ");
        os << (row.oracle_hyperbolic ? "  hyp " : "  --- ") << row.oracle_stable_rank << "\n";
    }
    os << "\nfirst failures:";
    if (rep.first_failure.empty()) os << " none";
    for (const auto& [name, lambda] : rep.first_failure) os << " " << name << "@" << lambda;
    os << "\n";
    if (rep.rank_changed)
        os << "oracle stable rank changes at lambda = " << rep.rank_change_lambda << "\n";
    else
        os << "oracle hyperbolicity persists with constant rank across the sweep\n";
    return os.str();
}

}  // namespace dicho
