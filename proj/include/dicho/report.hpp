#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dicho/io.hpp"
#include "dicho/roughness.hpp"
#include "dicho/types.hpp"

namespace dicho {

struct BlockReport {
    std::string label;
    Index dim = 0;
    Index stable_dim = 0;
    double m_const = 0, alpha = 0, n_const = 0, beta = 0;
    double projector_norm = 0;
};

struct AggregateReport {
    Index dim = 0, block_count = 0, stable_rank = 0;
    double k1 = 0, k2 = 0, lambda = 0, m_bar = 0, n_bar = 0, m_max = 0, n_max = 0;
    double sum_m = 0, sum_n = 0, greens_mass = 0, alpha_beta_max = 0;
    double coupling_sum = 0, coupling_max = 0;
};

struct PerturbedReport {
    bool computed = false;
    std::string skip_reason;
    double norm_z = 0, norm_zprime = 0, norm_z_plus_zprime = 0;
    double idempotency_residual = 0;
    Index rank_p_minus = 0, rank_p_tilde_minus = 0;
    bool direct_wholeline_ok = false;
};

struct LyapunovReport {
    bool computed = false;
    std::string skip_reason;
    bool self_adjoint = false;
    double norm_c = 0;
    double max_block_residual = 0;     // ||A*C + CA + H|| over blocks
    double max_quad_direct_gap = 0;    // quadrature vs direct solve
    double wer1_lhs = 0;
    bool wer1_ok = false;
    double positivity_margin = 0;
    double derivative_margin = 0;
    bool satisfied = false;
};

struct NonlinearAnalysisReport {
    bool present = false;
    std::string kind;
    double rho = 0;
    unsigned long long sample_seed = 0;
    Index samples = 0;
    bool validated = false;
    // lemma 3 T-conditions
    double t_sum_lhs = 0, t_sum_threshold = 0;
    bool t_sum_ok = false;
    double t_max_lhs = 0, t_max_threshold = 0;
    bool t_max_ok = false;
    bool lemma3_satisfied = false;
    // theorem 4/5 ball conditions
    double t5_lhs = 0, t5_threshold = 0;
    bool t5_ok = false;
    double t6_lhs = 0, t6_threshold = 0;
    bool t6_ok = false;
    // corollary 4 (only with a linear part)
    bool cor4_applicable = false;
    std::string cor4_route;
    double cor4_m1 = 0, cor4_m2 = 0, cor4_mu = 0;
    bool cor4_t1_sum_ok = false, cor4_t1_max_ok = false;
    bool cor4_satisfied_sum = false, cor4_satisfied_max = false;
    std::string note;
};

struct OracleComparison {
    bool hyperbolic = false;
    std::string note;
    Index stable_rank = 0;
    double stable_rate = 0, unstable_rate = 0, fitted_m = 0;
    bool projector_compared = false;
    double projector_distance = 0;
    // certified mu per route vs the oracle rate
    std::vector<std::pair<std::string, double>> certified_mu;
    bool mu_consistent = true;
};

struct AnalysisReport {
    std::string input_path;
    std::string digest;
    AnalysisOptions options;
    std::vector<BlockReport> blocks;
    AggregateReport aggregate;
    std::vector<ConditionReport<double>> conditions;
    PerturbedReport perturbed;
    LyapunovReport lyapunov;
    NonlinearAnalysisReport nonlinear;
    OracleComparison oracle;
    std::map<std::string, bool> verdicts;
};

inline Json to_json(const ConditionReport<double>& c) {
    Json j;
    j["id"] = condition_name(c.id);
    j["lhs"] = json_number(c.lhs);
    j["threshold"] = json_number(c.threshold);
    j["satisfied"] = c.satisfied;
    Json derived = Json::object();
    for (const auto& [k, v] : c.derived) derived[k] = json_number(v);
    j["derived"] = derived;
    j["notes"] = c.notes;
    return j;
}

inline Json to_json(const AnalysisReport& r) {
    Json j;
    j["schema_version"] = "1";
    j["tool"] = "dicho";
    j["input"] = {{"path", r.input_path}, {"digest", r.digest}};
    j["options"] = {{"margin", r.options.margin},
                    {"tolerance", r.options.tolerance},
                    {"t_infinity", r.options.t_infinity},
                    {"grid_step", r.options.grid_step},
                    {"seed", r.options.seed}};

    j["blocks"] = Json::array();
    for (const auto& b : r.blocks) {
        j["blocks"].push_back({{"label", b.label},
                               {"dim", b.dim},
                               {"stable_dim", b.stable_dim},
                               {"M", json_number(b.m_const)},
                               {"alpha", json_number(b.alpha)},
                               {"N", json_number(b.n_const)},
                               {"beta", json_number(b.beta)},
                               {"projector_norm", json_number(b.projector_norm)}});
    }

    const auto& a = r.aggregate;
    j["aggregate"] = {{"dim", a.dim},
                      {"block_count", a.block_count},
                      {"stable_rank", a.stable_rank},
                      {"K1", json_number(a.k1)},
                      {"K2", json_number(a.k2)},
                      {"Lambda", json_number(a.lambda)},
                      {"M_bar", json_number(a.m_bar)},
                      {"N_bar", json_number(a.n_bar)},
                      {"M_max", json_number(a.m_max)},
                      {"N_max", json_number(a.n_max)},
                      {"sum_M", json_number(a.sum_m)},
                      {"sum_N", json_number(a.sum_n)},
                      {"greens_mass", json_number(a.greens_mass)},
                      {"alpha_beta_max", json_number(a.alpha_beta_max)},
                      {"coupling_sum", json_number(a.coupling_sum)},
                      {"coupling_max", json_number(a.coupling_max)}};

    j["conditions"] = Json::array();
    for (const auto& c : r.conditions) j["conditions"].push_back(to_json(c));

    j["perturbed"] = {{"computed", r.perturbed.computed},
                      {"skip_reason", r.perturbed.skip_reason},
                      {"norm_Z", json_number(r.perturbed.norm_z)},
                      {"norm_Zprime", json_number(r.perturbed.norm_zprime)},
                      {"norm_Z_plus_Zprime", json_number(r.perturbed.norm_z_plus_zprime)},
                      {"idempotency_residual", json_number(r.perturbed.idempotency_residual)},
                      {"rank_P_minus", r.perturbed.rank_p_minus},
                      {"rank_P_tilde_minus", r.perturbed.rank_p_tilde_minus},
                      {"direct_wholeline_ok", r.perturbed.direct_wholeline_ok}};

    j["lyapunov"] = {{"computed", r.lyapunov.computed},
                     {"skip_reason", r.lyapunov.skip_reason},
                     {"self_adjoint_projectors", r.lyapunov.self_adjoint},
                     {"norm_C", json_number(r.lyapunov.norm_c)},
                     {"max_block_residual", json_number(r.lyapunov.max_block_residual)},
                     {"max_quad_direct_gap", json_number(r.lyapunov.max_quad_direct_gap)},
                     {"wer1_lhs", json_number(r.lyapunov.wer1_lhs)},
                     {"wer1_ok", r.lyapunov.wer1_ok},
                     {"positivity_margin", json_number(r.lyapunov.positivity_margin)},
                     {"derivative_margin", json_number(r.lyapunov.derivative_margin)},
                     {"satisfied", r.lyapunov.satisfied}};

    if (r.nonlinear.present) {
        const auto& nl = r.nonlinear;
        j["nonlinear"] = {{"kind", nl.kind},
                          {"rho", json_number(nl.rho)},
                          {"sample_seed", nl.sample_seed},
                          {"samples", nl.samples},
                          {"validated", nl.validated},
                          {"t_sum",
                           {{"lhs", json_number(nl.t_sum_lhs)},
                            {"threshold", json_number(nl.t_sum_threshold)},
                            {"ok", nl.t_sum_ok}}},
                          {"t_max",
                           {{"lhs", json_number(nl.t_max_lhs)},
                            {"threshold", json_number(nl.t_max_threshold)},
                            {"ok", nl.t_max_ok}}},
                          {"lemma3_satisfied", nl.lemma3_satisfied},
                          {"t5",
                           {{"lhs", json_number(nl.t5_lhs)},
                            {"threshold", json_number(nl.t5_threshold)},
                            {"ok", nl.t5_ok}}},
                          {"t6",
                           {{"lhs", json_number(nl.t6_lhs)},
                            {"threshold", json_number(nl.t6_threshold)},
                            {"ok", nl.t6_ok}}},
                          {"cor4",
                           {{"applicable", nl.cor4_applicable},
                            {"route", nl.cor4_route},
                            {"M_tilde_1", json_number(nl.cor4_m1)},
                            {"M_tilde_2", json_number(nl.cor4_m2)},
                            {"mu", json_number(nl.cor4_mu)},
                            {"t1_sum_ok", nl.cor4_t1_sum_ok},
                            {"t1_max_ok", nl.cor4_t1_max_ok},
                            {"satisfied_sum", nl.cor4_satisfied_sum},
                            {"satisfied_max", nl.cor4_satisfied_max}}},
                          {"note", nl.note}};
    } else {
        j["nonlinear"] = nullptr;
    }

    Json mu = Json::array();
    for (const auto& [route, value] : r.oracle.certified_mu)
        mu.push_back({{"route", route}, {"mu", json_number(value)}});
    j["oracle"] = {{"hyperbolic", r.oracle.hyperbolic},
                   {"note", r.oracle.note},
                   {"stable_rank", r.oracle.stable_rank},
                   {"stable_rate", json_number(r.oracle.stable_rate)},
                   {"unstable_rate", json_number(r.oracle.unstable_rate)},
                   {"fitted_M", json_number(r.oracle.fitted_m)},
                   {"projector_compared", r.oracle.projector_compared},
                   {"projector_distance", json_number(r.oracle.projector_distance)},
                   {"certified_mu", mu},
                   {"mu_consistent", r.oracle.mu_consistent}};

    j["verdicts"] = r.verdicts;
    return j;
}

namespace report_detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    if (std::isfinite(v)) {
        os.precision(9);
        os << v;
    } else if (std::isnan(v)) {
        os << "nan";
    } else {
        os << (v > 0 ? "inf" : "-inf");
    }
    return os.str();
}

}  // namespace report_detail

inline std::string render_human(const AnalysisReport& r) {
    using report_detail::fmt;
    std::ostringstream os;
    os << "dicho analysis of " << r.input_path << " (digest " << r.digest << ")\n";
    os << "options: margin=" << fmt(r.options.margin) << " tol=" << fmt(r.options.tolerance)
       << " seed=" << r.options.seed << "\n\n";

    os << "subsystem dichotomies\n";
    for (const auto& b : r.blocks) {
        os << "  " << b.label << ": dim=" << b.dim << " stable_dim=" << b.stable_dim
           << " M=" << fmt(b.m_const) << " alpha=" << fmt(b.alpha) << " N=" << fmt(b.n_const)
           << " beta=" << fmt(b.beta) << "\n";
    }
    const auto& a = r.aggregate;
    os << "\naggregate: K1=" << fmt(a.k1) << " K2=" << fmt(a.k2) << " Lambda=" << fmt(a.lambda)
       << " M_bar=" << fmt(a.m_bar) << " N_bar=" << fmt(a.n_bar) << "\n";
    os << "couplings: sum=" << fmt(a.coupling_sum) << " max=" << fmt(a.coupling_max) << "\n\n";

    os << "conditions (lhs < threshold)\n";
    for (const auto& c : r.conditions) {
        os << "  " << condition_name(c.id) << ": " << fmt(c.lhs) << " < " << fmt(c.threshold) << " -> "
           << (c.satisfied ? "satisfied" : "NOT satisfied");
        if (!c.derived.empty()) {
            os << "  [";
            bool first = true;
            for (const auto& [k, v] : c.derived) {
                if (!first) os << ", ";
                os << k << "=" << fmt(v);
                first = false;
            }
            os << "]";
        }
        os << "\n";
    }

    os << "\nperturbed splitting: ";
    if (r.perturbed.computed) {
        os << "||Z||=" << fmt(r.perturbed.norm_z) << " ||Z'||=" << fmt(r.perturbed.norm_zprime)
           << " ||Z+Z'||=" << fmt(r.perturbed.norm_z_plus_zprime)
           << " rank(P~_-)=" << r.perturbed.rank_p_tilde_minus << "\n";
    } else {
        os << "skipped (" << r.perturbed.skip_reason << ")\n";
    }

    os << "lyapunov: ";
    if (r.lyapunov.computed) {
        os << (r.lyapunov.satisfied ? "certified" : "NOT certified")
           << " derivative_margin=" << fmt(r.lyapunov.derivative_margin)
           << " residual=" << fmt(r.lyapunov.max_block_residual) << "\n";
    } else {
        os << "skipped (" << r.lyapunov.skip_reason << ")\n";
    }

    if (r.nonlinear.present) {
        os << "nonlinear (" << r.nonlinear.kind << ", rho=" << fmt(r.nonlinear.rho)
           << "): validated=" << (r.nonlinear.validated ? "yes" : "no")
           << " lemma3=" << (r.nonlinear.lemma3_satisfied ? "satisfied" : "NOT satisfied") << "\n";
    }

    os << "\noracle: ";
    if (r.oracle.hyperbolic) {
        os << "hyperbolic, stable_rank=" << r.oracle.stable_rank
           << " stable_rate=" << fmt(r.oracle.stable_rate);
        if (r.oracle.projector_compared)
            os << " ||P~_- - spectral||=" << fmt(r.oracle.projector_distance);
        os << (r.oracle.mu_consistent ? " (certified mu within oracle rate)" : " (MU INCONSISTENT)")
           << "\n";
    } else {
        os << "not hyperbolic: " << r.oracle.note << "\n";
    }

    os << "\nverdicts\n";
    for (const auto& [k, v] : r.verdicts) os << "  " << k << ": " << (v ? "yes" : "no") << "\n";
    return os.str();
}

}  // namespace dicho
