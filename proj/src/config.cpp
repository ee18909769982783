#include "mbsde/config.hpp"

#include "mbsde/error.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace mbsde {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double to_double(std::string_view key, std::string_view v) {
    if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
    if (v == "-inf") return -std::numeric_limits<double>::infinity();
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError(std::string(key) + " expects a number, got '" + std::string(v) + "'");
    return out;
}

template <class Int>
Int to_integer(std::string_view key, std::string_view v) {
    Int out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError(std::string(key) + " expects an integer, got '" + std::string(v) + "'");
    return out;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(std::string(key) + " expects true or false, got '" + std::string(v) + "'");
}

std::vector<std::string_view> split_list(std::string_view v) {
    std::vector<std::string_view> out;
    while (true) {
        const auto c = v.find(',');
        out.push_back(trim(v.substr(0, c)));
        if (c == std::string_view::npos) break;
        v.remove_prefix(c + 1);
    }
    return out;
}

Component to_component(std::string_view key, std::string_view v) {
    if (v == "Y") return Component::Y;
    if (v == "Z") return Component::Z;
    throw ConfigError(std::string(key) + " entries must be Y or Z, got '" + std::string(v) + "'");
}

struct Key {
    std::string name;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

std::vector<Key> keys() {
    using C = ExperimentConfig;
    auto family = [](auto member) {
        return std::make_pair(
            [member](C& c, std::string_view v) { member(c) = CoefficientFamily::parse(v); },
            [member](const C& c) { return member(const_cast<C&>(c)).to_string(); });
    };
    std::vector<Key> k;
    auto add_family = [&](std::string name, auto member) {
        auto [s, g] = family(member);
        k.push_back({std::move(name), s, g});
    };
    auto add_double = [&](std::string name, auto member) {
        k.push_back({name, [member, name](C& c, std::string_view v) { member(c) = to_double(name, v); },
                     [member](const C& c) { return fmt(member(const_cast<C&>(c))); }});
    };
    auto add_int = [&](std::string name, auto member) {
        k.push_back({name,
                     [member, name](C& c, std::string_view v) {
                         using T = std::remove_reference_t<decltype(member(c))>;
                         member(c) = to_integer<T>(name, v);
                     },
                     [member](const C& c) { return std::to_string(member(const_cast<C&>(c))); }});
    };

    add_double("model.x0", [](C& c) -> double& { return c.problem.x0; });
    add_double("model.T", [](C& c) -> double& { return c.problem.horizon; });
    add_family("model.b", [](C& c) -> CoefficientFamily& { return c.problem.b; });
    add_family("model.sigma", [](C& c) -> CoefficientFamily& { return c.problem.sigma; });
    add_family("model.driver_x", [](C& c) -> CoefficientFamily& { return c.problem.driver.x_part; });
    add_family("model.driver_y", [](C& c) -> CoefficientFamily& { return c.problem.driver.y_part; });
    add_double("model.driver_xy", [](C& c) -> double& { return c.problem.driver.xy_coupling; });
    add_double("model.alpha", [](C& c) -> double& { return c.problem.driver.alpha; });
    k.push_back({"model.terminal",
                 [](C& c, std::string_view v) { c.problem.terminal = parse_terminal_kind(v); },
                 [](const C& c) { return std::string(to_string(c.problem.terminal)); }});
    add_family("model.phi", [](C& c) -> CoefficientFamily& { return c.problem.phi; });

    add_int("grid.n_steps", [](C& c) -> int& { return c.n_steps; });
    add_int("mc.n_paths", [](C& c) -> std::size_t& { return c.n_paths; });
    add_int("mc.seed", [](C& c) -> std::uint64_t& { return c.seed; });
    k.push_back({"mc.antithetic", [](C& c, std::string_view v) { c.antithetic = to_bool("mc.antithetic", v); },
                 [](const C& c) { return std::string(c.antithetic ? "true" : "false"); }});

    k.push_back({"basis.kind",
                 [](C& c, std::string_view v) {
                     if (v == "auto") c.basis_kind.reset();
                     else c.basis_kind = parse_basis_kind(v);
                 },
                 [](const C& c) { return c.basis_kind ? std::string(to_string(*c.basis_kind)) : std::string("auto"); }});
    add_int("basis.degree", [](C& c) -> int& { return c.basis_degree; });
    k.push_back({"basis.ridge",
                 [](C& c, std::string_view v) {
                     if (v == "auto") c.ridge.reset();
                     else c.ridge = to_double("basis.ridge", v);
                 },
                 [](const C& c) { return c.ridge ? fmt(*c.ridge) : std::string("auto"); }});

    k.push_back({"eval.times",
                 [](C& c, std::string_view v) {
                     c.eval_times.clear();
                     for (auto item : split_list(v)) c.eval_times.push_back(to_double("eval.times", item));
                 },
                 [](const C& c) {
                     std::string s;
                     for (double t : c.eval_times) s += (s.empty() ? "" : ", ") + fmt(t);
                     return s;
                 }});

    add_double("hypotheses.box_lo", [](C& c) -> double& { return c.hypothesis_box.lo; });
    add_double("hypotheses.box_hi", [](C& c) -> double& { return c.hypothesis_box.hi; });
    add_int("hypotheses.n_grid", [](C& c) -> int& { return c.hypothesis_grid; });
    add_double("sim.box_lo", [](C& c) -> double& { return c.simulation_box.lo; });
    add_double("sim.box_hi", [](C& c) -> double& { return c.simulation_box.hi; });

    add_int("g.n_outer", [](C& c) -> std::size_t& { return c.g_outer; });
    add_int("g.n_inner", [](C& c) -> int& { return c.g_inner; });
    add_int("g.u_nodes", [](C& c) -> int& { return c.g_u_nodes; });
    add_int("g.x_points", [](C& c) -> int& { return c.g_x_points; });
    add_double("g.quantile", [](C& c) -> double& { return c.bound_quantile; });

    k.push_back({"verify.components",
                 [](C& c, std::string_view v) {
                     c.components.clear();
                     for (auto item : split_list(v)) c.components.push_back(to_component("verify.components", item));
                 },
                 [](const C& c) {
                     std::string s;
                     for (auto comp : c.components) s += (s.empty() ? "" : ", ") + std::string(to_string(comp));
                     return s;
                 }});
    add_int("verify.density_points", [](C& c) -> int& { return c.density_points; });
    add_double("verify.quantile_range", [](C& c) -> double& { return c.quantile_range; });
    add_double("verify.tol", [](C& c) -> double& { return c.tol; });
    add_double("verify.allowed_fraction", [](C& c) -> double& { return c.allowed_fraction; });
    add_double("verify.dz_noise_floor", [](C& c) -> double& { return c.dz_noise_floor; });
    k.push_back({"output.dir", [](C& c, std::string_view v) { c.out_dir = std::string(v); },
                 [](const C& c) { return c.out_dir.string(); }});
    return k;
}

}  // namespace

std::string_view to_string(Component c) { return c == Component::Y ? "Y" : "Z"; }

RegressionBasis ExperimentConfig::basis() const {
    RegressionBasis b;
    b.degree = basis_degree;
    b.ridge = ridge;
    if (basis_kind) {
        b.kind = *basis_kind;
    } else {
        const bool x_is_state = problem.terminal == TerminalKind::phi_of_XT ||
                                (problem.sigma.is_constant() && problem.b.is_constant());
        b.kind = x_is_state ? BasisKind::polynomial_in_X : BasisKind::polynomial_in_XW;
    }
    return b;
}

void ExperimentConfig::validate() const {
    if (!(problem.horizon > 0.0)) throw ConfigError("model.T must be positive");
    if (!std::isfinite(problem.x0)) throw ConfigError("model.x0 must be finite");
    if (n_steps < 1) throw ConfigError("grid.n_steps must be at least 1");
    if (n_paths < 2) throw ConfigError("mc.n_paths must be at least 2");
    if (basis_degree < 0) throw ConfigError("basis.degree must be non-negative");
    if (ridge && !(*ridge >= 0.0)) throw ConfigError("basis.ridge must be non-negative");
    if (eval_times.empty()) throw ConfigError("eval.times must list at least one time");
    for (double t : eval_times)
        if (!(t > 0.0 && t < problem.horizon)) throw ConfigError("eval.times entries must lie in (0, model.T)");
    if (!(hypothesis_box.lo < hypothesis_box.hi)) throw ConfigError("hypotheses.box_lo must be below hypotheses.box_hi");
    if (hypothesis_grid < 2) throw ConfigError("hypotheses.n_grid must be at least 2");
    if (!simulation_box.bounded()) throw ConfigError("sim.box_lo and sim.box_hi must bound a finite interval");
    if (!simulation_box.contains(problem.x0)) throw ConfigError("sim.box_lo/sim.box_hi must contain model.x0");
    if (g_outer < 40) throw ConfigError("g.n_outer must be at least 40");
    if (g_inner < 1) throw ConfigError("g.n_inner must be at least 1");
    if (g_u_nodes < 1) throw ConfigError("g.u_nodes must be at least 1");
    if (g_x_points < 2) throw ConfigError("g.x_points must be at least 2");
    if (!(bound_quantile >= 0.0 && bound_quantile < 0.5)) throw ConfigError("g.quantile must lie in [0, 0.5)");
    if (components.empty()) throw ConfigError("verify.components must list Y and/or Z");
    if (density_points < 2) throw ConfigError("verify.density_points must be at least 2");
    if (!(quantile_range > 0.0 && quantile_range < 1.0)) throw ConfigError("verify.quantile_range must lie in (0, 1)");
    if (!(tol >= 0.0)) throw ConfigError("verify.tol must be non-negative");
    if (!(allowed_fraction >= 0.0 && allowed_fraction <= 1.0))
        throw ConfigError("verify.allowed_fraction must lie in [0, 1]");
    if (!(dz_noise_floor >= 0.0)) throw ConfigError("verify.dz_noise_floor must be non-negative");
    if (out_dir.empty()) throw ConfigError("output.dir must not be empty");
}

std::string ExperimentConfig::echo() const {
    std::string s;
    for (const auto& k : keys()) s += k.name + " = " + k.get(*this) + "\n";
    return s;
}

ExperimentConfig parse_config_text(std::string_view text) {
    const auto table = keys();
    ExperimentConfig cfg;
    std::vector<std::string> seen;
    int line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("expected 'section.key = value', got '" + std::string(line) + "'", line_no);
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (value.empty()) throw ConfigError("missing value for " + std::string(key), line_no);
        const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return k.name == key; });
        if (it == table.end()) throw ConfigError("unknown key '" + std::string(key) + "'", line_no);
        if (std::find(seen.begin(), seen.end(), key) != seen.end())
            throw ConfigError("duplicate key '" + std::string(key) + "'", line_no);
        seen.emplace_back(key);
        try {
            it->set(cfg, value);
        } catch (const ConfigError& e) {
            if (e.line() > 0) throw;
            std::string what = e.what();
            if (what.rfind("cli: ", 0) == 0) what.erase(0, 5);
            throw ConfigError(std::string(key) + ": " + what, line_no);
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace mbsde
