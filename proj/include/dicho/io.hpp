#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dicho/block_system.hpp"
#include "dicho/nonlinear.hpp"
#include "dicho/types.hpp"

namespace dicho {

using Json = nlohmann::ordered_json;

/// Analysis options of the system-file `analysis` section and the CLI flags;
/// zeros mean "choose automatically".
struct AnalysisOptions {
    double margin = 0.1;
    double tolerance = 1e-9;
    double t_infinity = 0.0;
    double grid_step = 0.0;
    unsigned long long seed = 12345;
    std::set<std::string> which_theorems;  // empty = all

    [[nodiscard]] bool wants(const std::string& name) const {
        return which_theorems.empty() || which_theorems.count(name) > 0;
    }
};

struct NonlinearitySection {
    std::string kind;
    double scale = 0.0;
    std::vector<double> t_bounds;
    std::vector<double> l_bounds;
    double rho = 1.0;
};

/// Parsed and validated system file (schema version 1).
struct SystemFile {
    std::string schema_version;
    std::vector<std::string> labels;
    BlockSystem<double> system;
    std::optional<NonlinearitySection> nonlinearity;
    AnalysisOptions analysis;
    std::string digest;  // FNV-1a of the canonical serialization
};

namespace io_detail {

inline Eigen::MatrixXd parse_matrix(const Json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw ValidationError(what + ": matrix must be a non-empty array of rows");
    const auto rows = static_cast<Index>(j.size());
    Index cols = -1;
    Eigen::MatrixXd m;
    for (Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || row.empty()) throw ValidationError(what + ": rows must be non-empty arrays");
        if (cols < 0) {
            cols = static_cast<Index>(row.size());
            m.resize(rows, cols);
        }
        if (static_cast<Index>(row.size()) != cols) throw ValidationError(what + ": ragged matrix");
        for (Index c = 0; c < cols; ++c) {
            const auto& v = row[static_cast<std::size_t>(c)];
            if (!v.is_number()) throw ValidationError(what + ": entries must be numbers");
            m(r, c) = v.get<double>();
            if (!std::isfinite(m(r, c))) throw ValidationError(what + ": non-finite entry");
        }
    }
    return m;
}

inline Json dump_matrix(const Eigen::MatrixXd& m) {
    Json rows = Json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

}  // namespace io_detail

inline SystemFile parse_system_json(const Json& j) {
    SystemFile out;
    if (!j.is_object()) throw ValidationError("system file: top level must be an object");
    out.schema_version = j.value("schema_version", std::string{});
    if (out.schema_version != "1")
        throw ValidationError("system file: unsupported schema_version '" + out.schema_version + "'");

    if (!j.contains("blocks") || !j["blocks"].is_array() || j["blocks"].empty())
        throw ValidationError("system file: 'blocks' must be a non-empty array");
    Index idx = 0;
    for (const auto& b : j["blocks"]) {
        std::string label = b.value("label", "b" + std::to_string(idx + 1));
        if (!b.contains("matrix")) throw ValidationError("block '" + label + "': missing 'matrix'");
        Eigen::MatrixXd m = io_detail::parse_matrix(b["matrix"], "block '" + label + "'");
        if (m.rows() != m.cols()) throw ShapeError("block '" + label + "': matrix must be square");
        out.labels.push_back(label);
        out.system.blocks.push_back(m);
        ++idx;
    }
    const auto n = static_cast<Index>(out.system.blocks.size());

    if (j.contains("couplings")) {
        if (!j["couplings"].is_array()) throw ValidationError("system file: 'couplings' must be an array");
        for (const auto& c : j["couplings"]) {
            if (!c.contains("from") || !c.contains("to") || !c.contains("matrix"))
                throw ValidationError("coupling: needs 'from', 'to' and 'matrix'");
            const auto from = c["from"].get<Index>();
            const auto to = c["to"].get<Index>();
            if (from < 1 || from > n || to < 1 || to > n)
                throw ValidationError("coupling: block index out of range (1-based)");
            if (from == to) throw ValidationError("coupling: 'from' and 'to' must differ");
            Eigen::MatrixXd m = io_detail::parse_matrix(
                c["matrix"], "coupling " + std::to_string(to) + "<-" + std::to_string(from));
            if (out.system.couplings.count({to - 1, from - 1}))
                throw ValidationError("coupling " + std::to_string(to) + "<-" + std::to_string(from) +
                                      " given twice");
            out.system.couplings[{to - 1, from - 1}] = m;
        }
    }
    out.system.validate();

    if (j.contains("nonlinearity") && !j["nonlinearity"].is_null()) {
        const auto& nl = j["nonlinearity"];
        NonlinearitySection sec;
        sec.kind = nl.value("kind", std::string{});
        if (sec.kind != "sin-coupling" && sec.kind != "cubic" && sec.kind != "saturated-linear")
            throw ValidationError("nonlinearity: unknown kind '" + sec.kind + "'");
        if (nl.contains("params") && nl["params"].contains("scale"))
            sec.scale = nl["params"]["scale"].get<double>();
        if (!std::isfinite(sec.scale)) throw ValidationError("nonlinearity: non-finite scale");
        sec.rho = nl.value("rho", 1.0);
        if (!(sec.rho > 0)) throw ValidationError("nonlinearity: rho must be positive");
        if (!nl.contains("T") || !nl.contains("L"))
            throw ValidationError("nonlinearity: 'T' and 'L' bound arrays are required");
        sec.t_bounds = nl["T"].get<std::vector<double>>();
        sec.l_bounds = nl["L"].get<std::vector<double>>();
        if (sec.t_bounds.size() != static_cast<std::size_t>(n) ||
            sec.l_bounds.size() != static_cast<std::size_t>(n))
            throw ValidationError("nonlinearity: 'T'/'L' need one entry per block");
        for (double v : sec.t_bounds)
            if (!(v >= 0)) throw ValidationError("nonlinearity: T bounds must be >= 0");
        for (double v : sec.l_bounds)
            if (!(v >= 0)) throw ValidationError("nonlinearity: L bounds must be >= 0");
        out.nonlinearity = sec;
    }

    if (j.contains("analysis") && !j["analysis"].is_null()) {
        const auto& a = j["analysis"];
        out.analysis.margin = a.value("margin", 0.1);
        out.analysis.tolerance = a.value("tolerance", 1e-9);
        out.analysis.t_infinity = a.value("t_infinity", 0.0);
        out.analysis.grid_step = a.value("grid_step", 0.0);
        out.analysis.seed = a.value("seed", 12345ULL);
        if (a.contains("which_theorems"))
            for (const auto& w : a["which_theorems"]) out.analysis.which_theorems.insert(w.get<std::string>());
        if (!(out.analysis.margin >= 0.0 && out.analysis.margin < 1.0))
            throw ValidationError("analysis: margin must lie in [0, 1)");
        if (!(out.analysis.tolerance > 0)) throw ValidationError("analysis: tolerance must be positive");
        if (out.analysis.t_infinity < 0) throw ValidationError("analysis: t_infinity must be >= 0");
        if (out.analysis.grid_step < 0) throw ValidationError("analysis: grid_step must be >= 0");
    }

    // canonical digest: re-serialize the parsed content
    Json canon;
    canon["schema_version"] = out.schema_version;
    canon["blocks"] = Json::array();
    for (std::size_t i = 0; i < out.system.blocks.size(); ++i) {
        Json b;
        b["label"] = out.labels[i];
        b["matrix"] = io_detail::dump_matrix(out.system.blocks[i]);
        canon["blocks"].push_back(b);
    }
    canon["couplings"] = Json::array();
    for (const auto& [key, m] : out.system.couplings) {
        Json c;
        c["to"] = key.first + 1;
        c["from"] = key.second + 1;
        c["matrix"] = io_detail::dump_matrix(m);
        canon["couplings"].push_back(c);
    }
    if (out.nonlinearity) {
        Json nl;
        nl["kind"] = out.nonlinearity->kind;
        nl["scale"] = out.nonlinearity->scale;
        nl["T"] = out.nonlinearity->t_bounds;
        nl["L"] = out.nonlinearity->l_bounds;
        nl["rho"] = out.nonlinearity->rho;
        canon["nonlinearity"] = nl;
    }
    out.digest = io_detail::fnv1a_hex(canon.dump());
    return out;
}

inline SystemFile load_system_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open system file '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("system file '" + path + "': JSON parse error: " + e.what());
    }
    return parse_system_json(j);
}

inline Nonlinearity<double> build_nonlinearity(const SystemFile& file) {
    if (!file.nonlinearity) throw PrerequisiteMissing("system file has no nonlinearity section");
    std::vector<Index> dims;
    dims.reserve(file.system.blocks.size());
    for (const auto& b : file.system.blocks) dims.push_back(b.rows());
    auto r = make_builtin_nonlinearity<double>(dims, file.nonlinearity->kind, file.nonlinearity->scale);
    r.t_bounds = file.nonlinearity->t_bounds;
    r.l_bounds = file.nonlinearity->l_bounds;
    r.rho = file.nonlinearity->rho;
    return r;
}

/// JSON-safe number: infinities and NaNs become strings.
inline Json json_number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

}  // namespace dicho
