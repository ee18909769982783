#include "mbsde/experiment.hpp"

#include "mbsde/error.hpp"
#include "mbsde/verify.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace mbsde {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kThetaPoints = 21;

void say(const RunOptions& o, const std::string& msg) {
    if (o.log) *o.log << msg << '\n';
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error("cli", "cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cli", "missing artifact " + path.string() + " (run the earlier stages first)");
    return json::parse(in);
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<const std::vector<double>*>& cols) {
    std::string s;
    for (std::size_t c = 0; c < header.size(); ++c) s += (c ? "," : "") + header[c];
    s += '\n';
    const std::size_t rows = cols.empty() ? 0 : cols.front()->size();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) s += (c ? "," : "") + fmt((*cols[c])[r]);
        s += '\n';
    }
    write_text(path, s);
}

std::vector<std::vector<double>> read_csv(const fs::path& path, std::size_t n_cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cli", "missing artifact " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> cols(n_cols);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        for (std::size_t c = 0; c < n_cols; ++c) {
            if (!std::getline(ls, cell, ',')) throw Error("cli", "malformed CSV row in " + path.string());
            cols[c].push_back(std::strtod(cell.c_str(), nullptr));
        }
    }
    return cols;
}

void write_doubles(const fs::path& path, const std::vector<double>& v) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!out) throw Error("cli", "cannot write " + path.string());
}

std::vector<double> read_doubles(const fs::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error("cli", "missing artifact " + path.string());
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<double> v(size / sizeof(double));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    return v;
}

std::string tag(Component c, int k) { return std::string(to_string(c)) + "_t" + std::to_string(k); }

ProblemSpec effective_problem(const ExperimentConfig& cfg, bool normalized) {
    return normalized ? sign_normalized(cfg.problem) : cfg.problem;
}

std::vector<int> theta_subgrid(int k) {
    std::vector<int> out;
    for (int j = 0; j < kThetaPoints; ++j) {
        const int th = static_cast<int>(std::lround(static_cast<double>(j) * k / (kThetaPoints - 1)));
        if (out.empty() || out.back() != th) out.push_back(th);
    }
    return out;
}

struct Stats {
    double mean = 0.0, min = 0.0, max = 0.0;
};

Stats stats(const std::vector<double>& v) {
    Stats s{0.0, v.front(), v.front()};
    for (double a : v) {
        s.mean += a;
        s.min = std::min(s.min, a);
        s.max = std::max(s.max, a);
    }
    s.mean /= static_cast<double>(v.size());
    return s;
}

json entry_json(const HypothesisEntry& e) {
    json c = json::object();
    for (const auto& [k, v] : e.constants) c[k] = number(v);
    json w = json::array();
    for (double v : e.witness) w.push_back(number(v));
    return {{"id", e.id},
            {"status", std::string(to_string(e.status))},
            {"inequality", e.inequality},
            {"witness", w},
            {"violation_value", number(e.violation_value)},
            {"constants", c},
            {"note", e.note}};
}

// ---------------------------------------------------------------------------

int stage_hypotheses(const ExperimentConfig& cfg, const RunOptions& opt) {
    const auto rep = check_hypotheses(cfg.problem, cfg.hypothesis_box, cfg.hypothesis_grid);
    json entries = json::array();
    for (const auto& e : rep.entries) entries.push_back(entry_json(e));
    write_json(cfg.out_dir / "hypotheses.json",
               {{"box", {rep.box.lo, rep.box.hi}},
                {"n_grid", rep.n_grid},
                {"sign_normalized", rep.sign_normalized},
                {"sigma_positive", rep.sigma_positive()},
                {"all_pass", rep.all_pass()},
                {"entries", entries}});
    write_text(cfg.out_dir / "hypotheses.txt", rep.to_text());
    for (const auto& e : rep.entries)
        if (e.status == HypothesisStatus::fail) say(opt, "warning: " + e.id + " fails: " + e.inequality);
    if (!rep.sigma_positive()) {
        say(opt, "H3 sigma-sign failure: sigma is not positive on the hypothesis box; stopping");
        return exit_sigma_sign;
    }
    return exit_pass;
}

int stage_simulate(const ExperimentConfig& cfg, const RunOptions& opt) {
    const json hyp = read_json(cfg.out_dir / "hypotheses.json");
    if (!hyp.at("sigma_positive").get<bool>()) return exit_sigma_sign;
    const bool normalized = hyp.at("sign_normalized").get<bool>();
    const ProblemSpec problem = effective_problem(cfg, normalized);
    const LampertiMap map(problem.sigma, problem.b, cfg.simulation_box);
    const auto ens = simulate_forward(problem, map, cfg.grid(), cfg.n_paths, cfg.seed, opt.workers, cfg.antithetic);
    {
        std::ofstream out(cfg.out_dir / "ensemble.bin", std::ios::binary);
        ens.write(out);
    }
    write_json(cfg.out_dir / "simulate.json",
               {{"n_paths", ens.n_paths()},
                {"n_flagged", ens.n_flagged()},
                {"seed", cfg.seed},
                {"antithetic", cfg.antithetic},
                {"n_steps", cfg.n_steps},
                {"T", cfg.problem.horizon},
                {"sign_normalized", normalized}});
    say(opt, "simulated " + std::to_string(ens.n_paths()) + " paths (" + std::to_string(ens.n_flagged()) +
                 " excluded)");
    return exit_pass;
}

int stage_density(const ExperimentConfig& cfg, const RunOptions& opt) {
    const json sim = read_json(cfg.out_dir / "simulate.json");
    const ProblemSpec problem = effective_problem(cfg, sim.at("sign_normalized").get<bool>());
    const LampertiMap map(problem.sigma, problem.b, cfg.simulation_box);
    PathEnsemble ens;
    {
        std::ifstream in(cfg.out_dir / "ensemble.bin", std::ios::binary);
        if (!in) throw Error("cli", "missing artifact ensemble.bin (run the simulate stage first)");
        ens = PathEnsemble::read(in);
    }
    const TimeGrid grid = ens.grid();
    const std::size_t N = ens.n_paths();
    const auto basis = cfg.basis();
    const ForwardTableau ftab(ens, map, opt.workers);
    const auto sol = solve_bsde(ens, problem, basis, opt.workers);
    const BackwardTableau btab(ftab, sol, opt.workers);
    say(opt, "solved backward equation, Y0 = " + fmt(sol.y0()));

    std::vector<double> col_t, col_theta;
    std::array<std::vector<double>, 9> summary;
    std::vector<double> dz_all;
    json entries = json::array();
    const bool want_z = std::find(cfg.components.begin(), cfg.components.end(), Component::Z) != cfg.components.end();

    for (double t : cfg.eval_times) {
        const int k = grid.index_of(t);
        const double tk = grid.time(k);
        const auto thetas = theta_subgrid(k);
        std::vector<double> dy_all, dz_t;
        for (int th : thetas) {
            std::vector<double> dx(N), dy(N), dz(N);
            for (std::size_t p = 0; p < N; ++p) {
                dx[p] = ftab.malliavin_first_X(p, th, k);
                dy[p] = btab.malliavin_first_Y(p, th, k);
                dz[p] = btab.malliavin_first_Z(p, th, k);
            }
            col_t.push_back(tk);
            col_theta.push_back(grid.time(th));
            const std::array<Stats, 3> st{stats(dx), stats(dy), stats(dz)};
            for (int q = 0; q < 3; ++q) {
                summary[static_cast<std::size_t>(3 * q)].push_back(st[static_cast<std::size_t>(q)].mean);
                summary[static_cast<std::size_t>(3 * q + 1)].push_back(st[static_cast<std::size_t>(q)].min);
                summary[static_cast<std::size_t>(3 * q + 2)].push_back(st[static_cast<std::size_t>(q)].max);
            }
            dy_all.insert(dy_all.end(), dy.begin(), dy.end());
            dz_t.insert(dz_t.end(), dz.begin(), dz.end());
        }
        if (want_z) dz_all.insert(dz_all.end(), dz_t.begin(), dz_t.end());

        for (Component c : cfg.components) {
            std::vector<double> f(N);
            for (std::size_t p = 0; p < N; ++p) f[p] = c == Component::Y ? sol.y(p, k) : btab.clark_ocone_Z(p, k);
            const auto& dsamples = c == Component::Y ? dy_all : dz_t;
            const auto bc = derivative_bound_constants(dsamples, tk, cfg.bound_quantile);
            double mean = 0.0, abs_moment = 0.0;
            for (double v : f) mean += v;
            mean /= static_cast<double>(N);
            for (double v : f) abs_moment += std::abs(v - mean);
            abs_moment /= static_cast<double>(N);

            const auto [lo_it, hi_it] = std::minmax_element(f.begin(), f.end());
            double sd = 0.0;
            for (double v : f) sd += (v - mean) * (v - mean);
            sd = std::sqrt(sd / static_cast<double>(N - 1));
            const double h = 1.06 * sd * std::pow(static_cast<double>(N), -0.2);
            std::vector<double> z(static_cast<std::size_t>(cfg.density_points));
            const double zlo = *lo_it - 3.0 * h, zhi = *hi_it + 3.0 * h;
            for (std::size_t i = 0; i < z.size(); ++i)
                z[i] = zlo + (zhi - zlo) * static_cast<double>(i) / static_cast<double>(z.size() - 1);
            const auto est = kde(f, z, std::nullopt, opt.workers);
            const auto env = gaussian_envelopes(mean, abs_moment, bc.gamma_min_sq, bc.gamma_max_sq, z);
            write_csv(cfg.out_dir / ("density_" + tag(c, k) + ".csv"), {"z", "kde", "lower", "upper"},
                      {&est.z, &est.density, &env.lower, &env.upper});
            write_csv(cfg.out_dir / ("envelope_alt_" + tag(c, k) + ".csv"), {"z", "lower", "upper"},
                      {&env.z, &env.alt_lower, &env.alt_upper});
            write_doubles(cfg.out_dir / ("samples_" + tag(c, k) + ".bin"), f);

            // g-estimate on the first outer paths.
            const std::size_t n_outer = std::min(cfg.g_outer, N);
            std::vector<std::vector<double>> outer(n_outer, std::vector<double>(static_cast<std::size_t>(k)));
            for (std::size_t p = 0; p < n_outer; ++p)
                for (int i = 0; i < k; ++i) outer[p][static_cast<std::size_t>(i)] = ens.increment(p, i);
            const auto parts = c == Component::Y ? btab.first_Y_parts(k) : btab.first_Z_parts(k);
            GOptions go;
            go.n_inner = cfg.g_inner;
            go.u_nodes = cfg.g_u_nodes;
            go.x_points = cfg.g_x_points;
            go.seed = cfg.seed;
            go.workers = opt.workers;
            StateFunction value;
            if (c == Component::Y) {
                value = [&sol, k](double x, double w) { return sol.evaluate_y(k, x, w); };
            } else {
                const auto y_parts = btab.first_Y_parts(k);
                value = [y_parts](double x, double w) { return y_parts.c0(x, w) + y_parts.c1(x, w); };
            }
            const auto g = estimate_g(tableau_sampler(map, problem.x0, grid.dt(), value, parts, k), outer,
                                      grid.dt(), go);
            std::vector<double> rel(g.reliable.begin(), g.reliable.end());
            write_csv(cfg.out_dir / ("g_" + tag(c, k) + ".csv"), {"x", "g", "se", "reliable"},
                      {&g.x, &g.g, &g.se, &rel});
            bool g_within = true;
            for (std::size_t i = 0; i < g.x.size(); ++i) {
                if (!g.reliable[i]) continue;
                const double se = std::isfinite(g.se[i]) ? g.se[i] : 0.0;
                if (g.g[i] < bc.gamma_min_sq - 3.0 * se - 1e-12 || g.g[i] > bc.gamma_max_sq + 3.0 * se + 1e-12)
                    g_within = false;
            }

            entries.push_back({{"component", std::string(to_string(c))},
                               {"t", tk},
                               {"t_index", k},
                               {"tag", tag(c, k)},
                               {"mean", mean},
                               {"abs_moment", abs_moment},
                               {"bandwidth", est.bandwidth},
                               {"c_hat", bc.c_hat},
                               {"C_hat", bc.C_hat},
                               {"gamma_min_sq", bc.gamma_min_sq},
                               {"gamma_max_sq", bc.gamma_max_sq},
                               {"bound_quantile", bc.quantile},
                               {"n_nonpositive_derivatives", bc.n_nonpositive},
                               {"c_hat_clamped", bc.clamped},
                               {"g_outer", g.n_outer},
                               {"g_skipped", g.n_skipped},
                               {"g_within_bounds", g_within}});
        }
    }
    write_csv(cfg.out_dir / "tableau_summary.csv",
              {"t", "theta", "dx_mean", "dx_min", "dx_max", "dy_mean", "dy_min", "dy_max", "dz_mean", "dz_min", "dz_max"},
              {&col_t, &col_theta, &summary[0], &summary[1], &summary[2], &summary[3], &summary[4], &summary[5],
               &summary[6], &summary[7], &summary[8]});
    if (want_z) write_doubles(cfg.out_dir / "dz_samples.bin", dz_all);
    write_json(cfg.out_dir / "density_meta.json",
               {{"y0", sol.y0()},
                {"basis", std::string(to_string(basis.kind))},
                {"basis_degree", basis.degree},
                {"ridge", sol.ridge()},
                {"alpha", sol.shift().alpha},
                {"positivity_samples", want_z},
                {"entries", entries}});
    return exit_pass;
}

json side_json(const SideViolations& s) {
    return {{"count", s.count}, {"fraction", s.fraction}, {"max_violation", s.max_violation}};
}

json report_json(const DensityReport& r) {
    return {{"pass", r.pass},
            {"range", {r.range_lo, r.range_hi}},
            {"n_compared", r.n_compared},
            {"below", side_json(r.below)},
            {"above", side_json(r.above)}};
}

int stage_verify(const ExperimentConfig& cfg, const RunOptions& opt) {
    const json meta = read_json(cfg.out_dir / "density_meta.json");
    const json hyp = read_json(cfg.out_dir / "hypotheses.json");
    const json sim = read_json(cfg.out_dir / "simulate.json");
    bool all_pass = true;
    json checks = json::array();
    for (const auto& e : meta.at("entries")) {
        const std::string tg = e.at("tag");
        const auto cols = read_csv(cfg.out_dir / ("density_" + tg + ".csv"), 4);
        const auto alt = read_csv(cfg.out_dir / ("envelope_alt_" + tg + ".csv"), 3);
        DensityEstimate est;
        est.z = cols[0];
        est.density = cols[1];
        est.sorted_samples = read_doubles(cfg.out_dir / ("samples_" + tg + ".bin"));
        std::sort(est.sorted_samples.begin(), est.sorted_samples.end());
        est.n_samples = est.sorted_samples.size();
        Envelope env;
        env.z = cols[0];
        env.lower = cols[2];
        env.upper = cols[3];
        const auto rep = envelope_check(est, env, cfg.quantile_range, cfg.tol, cfg.allowed_fraction);
        Envelope env_alt;
        env_alt.z = alt[0];
        env_alt.lower = alt[1];
        env_alt.upper = alt[2];
        const auto rep_alt = envelope_check(est, env_alt, cfg.quantile_range, cfg.tol, cfg.allowed_fraction);
        all_pass = all_pass && rep.pass;
        say(opt, "envelope check " + tg + ": " + (rep.pass ? "pass" : "FAIL"));
        checks.push_back({{"tag", tg},
                          {"component", e.at("component")},
                          {"t", e.at("t")},
                          {"envelope", report_json(rep)},
                          {"swapped_prefactor_envelope", report_json(rep_alt)}});
    }
    json positivity = nullptr;
    if (meta.at("positivity_samples").get<bool>()) {
        const auto dz = read_doubles(cfg.out_dir / "dz_samples.bin");
        const auto rep = positivity_report(dz, cfg.dz_noise_floor);
        all_pass = all_pass && rep.pass;
        say(opt, std::string("positivity of D_theta Z: ") + (rep.pass ? "pass" : "FAIL"));
        positivity = {{"pass", rep.pass},
                      {"min", rep.min_value},
                      {"max", rep.max_value},
                      {"n_samples", rep.n_samples},
                      {"n_nonpositive", rep.n_nonpositive},
                      {"nonpositive_fraction", rep.nonpositive_fraction},
                      {"noise_floor", rep.noise_floor},
                      {"witness_indices", rep.witnesses}};
    }
    const json verify = {{"pass", all_pass},
                         {"quantile_range", cfg.quantile_range},
                         {"tol", cfg.tol},
                         {"allowed_fraction", cfg.allowed_fraction},
                         {"density_checks", checks},
                         {"positivity", positivity}};
    write_json(cfg.out_dir / "verify.json", verify);

    json constants = json::array();
    for (const auto& e : meta.at("entries")) constants.push_back(e);
    write_json(cfg.out_dir / "run_metadata.json",
               {{"version", std::string(kVersion)},
                {"seed", cfg.seed},
                {"config", cfg.echo()},
                {"n_paths", sim.at("n_paths")},
                {"n_flagged", sim.at("n_flagged")},
                {"sign_normalized", sim.at("sign_normalized")},
                {"hypotheses_all_pass", hyp.at("all_pass")},
                {"y0", meta.at("y0")},
                {"basis", meta.at("basis")},
                {"basis_degree", meta.at("basis_degree")},
                {"ridge", meta.at("ridge")},
                {"alpha", meta.at("alpha")},
                {"constants", constants},
                {"verdicts", verify}});
    return all_pass ? exit_pass : exit_verdict_failed;
}

}  // namespace

Stage parse_stage(std::string_view text) {
    if (text == "hypotheses") return Stage::hypotheses;
    if (text == "simulate") return Stage::simulate;
    if (text == "density") return Stage::density;
    if (text == "verify") return Stage::verify;
    throw ConfigError("unknown stage '" + std::string(text) + "' (expected hypotheses, simulate, density or verify)");
}

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::hypotheses: return "hypotheses";
        case Stage::simulate: return "simulate";
        case Stage::density: return "density";
        case Stage::verify: return "verify";
    }
    return "?";
}

int run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    fs::create_directories(config.out_dir);
    write_text(config.out_dir / "config_echo.txt", config.echo());
    using StageFn = int (*)(const ExperimentConfig&, const RunOptions&);
    constexpr StageFn stages[] = {stage_hypotheses, stage_simulate, stage_density, stage_verify};
    for (int s = 0; s <= static_cast<int>(options.last_stage); ++s) {
        say(options, "stage " + std::string(to_string(static_cast<Stage>(s))));
        const int code = stages[s](config, options);
        if (code != exit_pass) return code;
    }
    return exit_pass;
}

int check_hypotheses_command(const ExperimentConfig& config, std::ostream& out) {
    const auto rep = check_hypotheses(config.problem, config.hypothesis_box, config.hypothesis_grid);
    out << rep.to_text();
    if (!rep.sigma_positive()) return exit_sigma_sign;
    return rep.all_pass() ? exit_pass : exit_verdict_failed;
}

PhiSampler tableau_sampler(const LampertiMap& map, double x0, double dt, StateFunction value,
                           const AffineParts& parts, int k) {
    return [&map, x0, dt, value = std::move(value), parts, k](std::span<const double> inc, double& out,
                                                             std::vector<double>& d) {
        const auto nodes = static_cast<std::size_t>(k) + 1;
        if (inc.size() + 1 != nodes) throw ContractViolation("nvdensity", "increment count must equal the time index");
        std::vector<double> w(nodes), u(nodes), x(nodes), kk(nodes);
        for (std::size_t i = 1; i < nodes; ++i) w[i] = w[i - 1] + inc[i - 1];
        if (!simulate_path(map, x0, dt, w, u, x)) return false;
        running_log_du(map, x, dt, kk);
        const double xt = x.back(), wt = w.back();
        out = value(xt, wt);
        const double c0 = parts.c0(xt, wt), c1 = parts.c1(xt, wt);
        d.resize(nodes);
        for (std::size_t i = 0; i < nodes; ++i) d[i] = c0 + std::exp(kk.back() - kk[i]) * c1;
        return true;
    };
}

}  // namespace mbsde
