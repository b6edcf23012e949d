// Plain-text run configuration: [section] headers, key = value lines,
// '#' comments. Every key has a default; unknown sections or keys are parse
// errors so typos fail loudly.
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stclab/errors.hpp"

namespace stclab {

class ConfigParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // [geometry]
    int dim = 1;
    double x_lo = -0.5;
    double x_hi = 0.5;
    double radius = 1.0;
    int n_cells = 16;
    int n_vel = 4; // dim 2 only

    // [tree]
    double horizon = 1.5;
    int n_steps = 6;

    // [coefficients] kind: zero | constant | random
    std::string coeff_kind = "zero";
    double a1 = 0.0, a2 = 0.0, a3 = 0.0; // constant values
    double a1_bound = 1.0, a2_bound = 1.0, a3_bound = 1.0;
    bool adapted = true;

    // [initial]
    std::string y0_kind = "zero"; // zero | constant | bump
    double y0_value = 1.0;

    // [target]
    std::string target_kind = "random"; // random | ones | manufactured

    // [terminal]  (backward runs)
    std::string zt_kind = "random"; // random | ones

    // [weight]
    std::string lambda_spec = "auto";
    std::string c_spec = "auto";

    // [solver]
    double tol = 1e-8;
    int max_iter = 200;
    int substeps = 0; // 0 = auto
    int eig_iterations = 5;
    int samples = 20;
    double dissipation = 0.0; // uniform-dissipation budget kappa

    // [negative]
    std::vector<int> depths = {2, 4, 6};
    double g0_lo = 0.0;
    double g0_hi = 0.25;
    std::string localized_mode = "both"; // v_off_g0 | drift_only | both

    // [output]
    std::string out_dir = "out";

    // [run]
    std::uint64_t seed = 20240915;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigParseError("config: bad number for '" + key + "': " + v);
    }
}

inline long parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        long d = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigParseError("config: bad integer for '" + key + "': " + v);
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigParseError("config: bad boolean for '" + key + "': " + v);
}

} // namespace detail

inline std::vector<int> parse_depth_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = detail::trim(tok);
        if (tok.empty()) continue;
        out.push_back(static_cast<int>(detail::parse_int(tok, "depths")));
    }
    if (out.empty()) throw ConfigParseError("config: empty depth list");
    return out;
}

inline void apply_config_entry(RunConfig& c, const std::string& section, const std::string& key,
                               const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_int;
    const std::string where = section + "." + key;
    if (section == "geometry") {
        if (key == "dim") c.dim = static_cast<int>(parse_int(value, where));
        else if (key == "x_lo") c.x_lo = parse_double(value, where);
        else if (key == "x_hi") c.x_hi = parse_double(value, where);
        else if (key == "radius") c.radius = parse_double(value, where);
        else if (key == "n_cells") c.n_cells = static_cast<int>(parse_int(value, where));
        else if (key == "n_vel") c.n_vel = static_cast<int>(parse_int(value, where));
        else throw ConfigParseError("config: unknown key " + where);
    } else if (section == "tree") {
        if (key == "horizon") c.horizon = parse_double(value, where);
        else if (key == "n_steps") c.n_steps = static_cast<int>(parse_int(value, where));
        else throw ConfigParseError("config: unknown key " + where);
    } else if (section == "coefficients") {
        if (key == "kind") c.coeff_kind = value;
        else if (key == "a1") c.a1 = parse_double(value, where);
        else if (key == "a2") c.a2 = parse_double(value, where);
        else if (key == "a3") c.a3 = parse_double(value, where);
        else if (key == "a1_bound") c.a1_bound = parse_double(value, where);
        else if (key == "a2_bound") c.a2_bound = parse_double(value, where);
        else if (key == "a3_bound") c.a3_bound = parse_double(value, where);
        else if (key == "adapted") c.adapted = parse_bool(value, where);
        else throw ConfigParseError("config: unknown key " + where);
    } else if (section == "initial") {
        if (key == "kind") c.y0_kind = value;
        else if (key == "value") c.y0_value = parse_double(value, where);
        else throw ConfigParseError("config: unknown key " + where);
    } else if (section == "target") {
        if (key == "kind") c.target_kind = value;
        else throw ConfigParseError("config: unknown key " + where);
    } else if (section == "terminal") {
        if (key == "kind") c.zt_kind = value;
        else throw ConfigParseError("config: unknown key " + where);
    } else if (section == "weight") {
        if (key == "lambda") c.lambda_spec = value;
        else if (key == "c") c.c_spec = value;
        else throw ConfigParseError("config: unknown key " + where);
    } else if (section == "solver") {
        if (key == "tol") c.tol = parse_double(value, where);
        else if (key == "max_iter") c.max_iter = static_cast<int>(parse_int(value, where));
        else if (key == "substeps")
            c.substeps = value == "auto" ? 0 : static_cast<int>(parse_int(value, where));
        else if (key == "eig_iterations") c.eig_iterations = static_cast<int>(parse_int(value, where));
        else if (key == "samples") c.samples = static_cast<int>(parse_int(value, where));
        else if (key == "dissipation") c.dissipation = parse_double(value, where);
        else throw ConfigParseError("config: unknown key " + where);
    } else if (section == "negative") {
        if (key == "depths") c.depths = parse_depth_list(value);
        else if (key == "g0_lo") c.g0_lo = parse_double(value, where);
        else if (key == "g0_hi") c.g0_hi = parse_double(value, where);
        else if (key == "mode") c.localized_mode = value;
        else throw ConfigParseError("config: unknown key " + where);
    } else if (section == "output") {
        if (key == "dir") c.out_dir = value;
        else throw ConfigParseError("config: unknown key " + where);
    } else if (section == "run") {
        if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value, where));
        else throw ConfigParseError("config: unknown key " + where);
    } else {
        throw ConfigParseError("config: unknown section [" + section + "]");
    }
}

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigParseError("config line " + std::to_string(lineno) +
                                       ": malformed section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigParseError("config line " + std::to_string(lineno) +
                                   ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigParseError("config line " + std::to_string(lineno) +
                                   ": key outside any [section]");
        apply_config_entry(cfg, section, key, value);
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigParseError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

/// Resolved (post-default) configuration for provenance in summaries.
inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["geometry"] = {{"dim", c.dim},     {"x_lo", c.x_lo},       {"x_hi", c.x_hi},
                     {"radius", c.radius}, {"n_cells", c.n_cells}, {"n_vel", c.n_vel}};
    j["tree"] = {{"horizon", c.horizon}, {"n_steps", c.n_steps}};
    j["coefficients"] = {{"kind", c.coeff_kind},   {"a1", c.a1},
                         {"a2", c.a2},             {"a3", c.a3},
                         {"a1_bound", c.a1_bound}, {"a2_bound", c.a2_bound},
                         {"a3_bound", c.a3_bound}, {"adapted", c.adapted}};
    j["initial"] = {{"kind", c.y0_kind}, {"value", c.y0_value}};
    j["target"] = {{"kind", c.target_kind}};
    j["terminal"] = {{"kind", c.zt_kind}};
    j["weight"] = {{"lambda", c.lambda_spec}, {"c", c.c_spec}};
    j["solver"] = {{"tol", c.tol},
                   {"max_iter", c.max_iter},
                   {"substeps", c.substeps},
                   {"eig_iterations", c.eig_iterations},
                   {"samples", c.samples},
                   {"dissipation", c.dissipation}};
    j["negative"] = {{"depths", c.depths},
                     {"g0_lo", c.g0_lo},
                     {"g0_hi", c.g0_hi},
                     {"mode", c.localized_mode}};
    j["output"] = {{"dir", c.out_dir}};
    j["run"] = {{"seed", c.seed}};
    return j;
}

} // namespace stclab
