#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dicho/io.hpp"
#include "dicho/pipeline.hpp"
#include "dicho/report.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct CommonFlags {
    double margin = -1;  // negative = take from file / default
    double tol = -1;
    double t_inf = -1;
    double grid_step = -1;
    unsigned long long seed = 0;
    bool seed_set = false;
    std::string format = "human";
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--margin", f.margin, "spectral-gap margin in [0,1)");
    cmd->add_option("--tol", f.tol, "solver tolerance");
    cmd->add_option("--tinf", f.t_inf, "integration cutoff T_infinity (0 = auto)");
    cmd->add_option("--grid-step", f.grid_step, "uniform grid step (0 = auto)");
    cmd->add_option("--seed", f.seed, "seed for sampling-based checks")->each([&f](const std::string&) {
        f.seed_set = true;
    });
    cmd->add_option("--format", f.format, "output format")
        ->check(CLI::IsMember({"human", "machine"}));
}

dicho::AnalysisOptions merge_options(const dicho::SystemFile& file, const CommonFlags& f) {
    dicho::AnalysisOptions opt = file.analysis;
    if (const char* env = std::getenv("DICHO_TOL")) {
        try {
            opt.tolerance = std::stod(env);
        } catch (...) {
            throw dicho::ValidationError("DICHO_TOL is not a number");
        }
    }
    if (f.margin >= 0) opt.margin = f.margin;
    if (f.tol >= 0) opt.tolerance = f.tol;
    if (f.t_inf >= 0) opt.t_infinity = f.t_inf;
    if (f.grid_step >= 0) opt.grid_step = f.grid_step;
    if (f.seed_set) opt.seed = f.seed;
    if (!(opt.margin >= 0.0 && opt.margin < 1.0))
        throw dicho::ValidationError("margin must lie in [0, 1)");
    if (!(opt.tolerance > 0)) throw dicho::ValidationError("tolerance must be positive");
    return opt;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dicho - dichotomy roughness certification for interconnected block systems"};
    app.require_subcommand(1);

    std::string path;
    CommonFlags flags;

    auto* analyze = app.add_subcommand("analyze", "run the full certification pipeline");
    analyze->add_option("file", path, "system file (JSON)")->required();
    add_common(analyze, flags);

    auto* solve = app.add_subcommand("solve", "construct a certified bounded solution");
    solve->add_option("file", path, "system file (JSON)")->required();
    add_common(solve, flags);
    std::string init_csv;
    dicho::Index init_basis = 0;
    double horizon = 10.0;
    std::string out_stem = "solution";
    solve->add_option("--init", init_csv, "initial data c_- as comma-separated coordinates");
    solve->add_option("--init-basis", init_basis, "stable-basis column to use as initial data");
    solve->add_option("--horizon", horizon, "emitted trajectory horizon");
    solve->add_option("--out", out_stem, "output file stem");

    auto* sweep = app.add_subcommand("sweep", "scale couplings and map condition boundaries");
    sweep->add_option("file", path, "system file (JSON)")->required();
    add_common(sweep, flags);
    double lambda_max = 5.0;
    int steps = 50;
    sweep->add_option("--lambda-max", lambda_max, "largest coupling scale");
    sweep->add_option("--steps", steps, "number of sweep steps");

    CLI11_PARSE(app, argc, argv);

    try {
        auto file = dicho::load_system_file(path);
        auto opt = merge_options(file, flags);

        if (analyze->parsed()) {
            auto rep = dicho::run_analysis(file, opt, path);
            if (flags.format == "machine")
                std::cout << dicho::to_json(rep).dump(2) << "\n";
            else
                std::cout << dicho::render_human(rep);
            return kExitOk;
        }

        if (solve->parsed()) {
            dicho::SolveRequest req;
            req.horizon = horizon;
            req.out_stem = out_stem;
            req.init_basis = init_basis;
            if (!init_csv.empty()) {
                std::vector<double> vals;
                std::stringstream ss(init_csv);
                std::string tok;
                while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
                Eigen::VectorXd v(static_cast<dicho::Index>(vals.size()));
                for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<dicho::Index>(i)) = vals[i];
                req.init = v;
            }
            auto art = dicho::run_solve(file, opt, req);
            if (flags.format == "machine") {
                dicho::Json j;
                j["trajectory"] = art.trajectory_path;
                j["envelope"] = art.envelope_path;
                j["envelope_M"] = dicho::json_number(art.envelope_m);
                j["envelope_mu"] = dicho::json_number(art.envelope_mu);
                j["route"] = art.envelope_route;
                j["residual"] = dicho::json_number(art.residual);
                std::cout << j.dump(2) << "\n";
            } else {
                std::cout << "wrote " << art.trajectory_path << " and " << art.envelope_path
                          << "\nenvelope: " << art.envelope_m << " * exp(-" << art.envelope_mu
                          << " t)  [" << art.envelope_route << "]\nresidual: " << art.residual << "\n";
            }
            return kExitOk;
        }

        if (sweep->parsed()) {
            auto rep = dicho::run_sweep(file, opt, lambda_max, steps);
            if (flags.format == "machine")
                std::cout << dicho::to_json(rep).dump(2) << "\n";
            else
                std::cout << dicho::render_human(rep);
            return kExitOk;
        }
    } catch (const dicho::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const dicho::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
