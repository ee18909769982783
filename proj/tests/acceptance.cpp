// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include "mbsde/backward.hpp"
#include "mbsde/coeffs.hpp"
#include "mbsde/error.hpp"
#include "mbsde/experiment.hpp"
#include "mbsde/forward.hpp"
#include "mbsde/lamperti.hpp"
#include "mbsde/nvdensity.hpp"
#include "mbsde/verify.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace mbsde;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

double normal_pdf(double z, double mean, double var) {
    return std::exp(-(z - mean) * (z - mean) / (2 * var)) / std::sqrt(2 * std::numbers::pi * var);
}

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> z(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) z[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    return z;
}

std::vector<std::vector<double>> gaussian_increments(std::size_t n, int steps, double dt, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(dt));
    std::vector<std::vector<double>> out(n, std::vector<double>(static_cast<std::size_t>(steps)));
    for (auto& v : out)
        for (auto& d : v) d = normal(rng);
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double a : v) s += a;
    return s / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double a : v) s += (a - m) * (a - m);
    return s / static_cast<double>(v.size() - 1);
}

double abs_moment_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double a : v) s += std::abs(a - m);
    return s / static_cast<double>(v.size());
}

// Sup relative error of the KDE against N(mean, var) on the central 95% of the samples.
double sup_relative_error(const DensityEstimate& est, double mean, double var) {
    const auto [lo, hi] = central_range(est.sorted_samples, 0.95);
    double worst = 0.0;
    for (std::size_t i = 0; i < est.z.size(); ++i) {
        if (est.z[i] < lo || est.z[i] > hi) continue;
        const double exact = normal_pdf(est.z[i], mean, var);
        worst = std::max(worst, std::abs(est.density[i] - exact) / exact);
    }
    return worst;
}

// KDE of the samples and its envelope check against the bounds from the derivative samples.
struct DensityCheck {
    double sup_rel = 0.0;
    DensityReport report;
    BoundConstants constants;
};

DensityCheck density_check(const std::vector<double>& f, const std::vector<double>& derivatives, double t,
                           double exact_mean, double exact_var) {
    DensityCheck out;
    out.constants = derivative_bound_constants(derivatives, t);
    const double m = mean_of(f), sd = std::sqrt(variance_of(f));
    const auto z = linspace(m - 6 * sd, m + 6 * sd, 401);
    const auto est = kde(f, z);
    const auto env = gaussian_envelopes(m, abs_moment_of(f), out.constants.gamma_min_sq,
                                        out.constants.gamma_max_sq, z);
    out.report = envelope_check(est, env, 0.95, 0.03);
    out.sup_rel = sup_relative_error(est, exact_mean, exact_var);
    return out;
}

struct Solved {
    ProblemSpec problem;
    LampertiMap map;
    PathEnsemble ens;
    BackwardSolution sol;

    Solved(ProblemSpec p, std::size_t n_paths, int n_steps, RegressionBasis basis, std::uint64_t seed,
           bool antithetic = false)
        : problem(std::move(p)),
          map(problem.sigma, problem.b, Box{-10, 10}),
          ens(simulate_forward(problem, map, TimeGrid{problem.horizon, n_steps}, n_paths, seed, 1, antithetic)),
          sol(solve_bsde(ens, problem, basis)) {}
};

std::vector<int> theta_nodes(int k) { return {0, k / 4, k / 2, 3 * k / 4, k}; }

Outcome brownian_density() {
    Solved s(ProblemSpec{}, 200000, 200, RegressionBasis{}, 101);
    const ForwardTableau fwd(s.ens, s.map);
    const BackwardTableau tab(fwd, s.sol);
    const int k = 100;
    const std::size_t n = s.sol.n_paths();
    std::vector<double> y(n), dy;
    for (std::size_t p = 0; p < n; ++p) y[p] = s.sol.y(p, k);
    for (int th : theta_nodes(k))
        for (std::size_t p = 0; p < n; ++p) dy.push_back(tab.malliavin_first_Y(p, th, k));
    const auto c = density_check(y, dy, 0.5, 0.0, 0.5);
    const bool ok = c.sup_rel < 0.03 && c.report.pass && std::abs(c.constants.c_hat - 1) < 1e-6 &&
                    std::abs(c.constants.C_hat - 1) < 1e-6;
    return {ok, "sup rel err " + num(c.sup_rel) + ", c_hat " + num(c.constants.c_hat) + ", C_hat " +
                    num(c.constants.C_hat) + ", envelope " + (c.report.pass ? "pass" : "fail")};
}

Outcome envelope_identity() {
    const double t = 0.7, mean = -0.4;
    const auto z = linspace(mean - 4, mean + 4, 161);
    const auto env = gaussian_envelopes(mean, std::sqrt(2 * t / std::numbers::pi), t, t, z);
    double gap = 0.0, err = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        gap = std::max(gap, std::abs(env.lower[i] - env.upper[i]));
        err = std::max(err, std::abs(env.upper[i] - normal_pdf(z[i], mean, t)));
    }
    const double peak = std::abs(env.upper[80] - 1.0 / std::sqrt(2 * std::numbers::pi * t));
    return {gap < 1e-12 && peak < 1e-12 && err < 1e-12,
            "max |lower-upper| " + num(gap) + ", peak err " + num(peak) + ", max density err " + num(err)};
}

Outcome g_calibration() {
    const int steps = 50;
    const double dt = 1.0 / steps;
    auto sampler = [](std::span<const double> inc, double& value, std::vector<double>& d) {
        value = 0.0;
        for (double a : inc) value += a;
        d.assign(inc.size() + 1, 1.0);
        return true;
    };
    GOptions opt;
    opt.seed = 7;
    opt.x_points = 21;
    const auto est = estimate_g(sampler, gaussian_increments(10000, steps, dt, 3), dt, opt);
    double worst = 0.0;
    for (double g : est.g) worst = std::max(worst, std::abs(g - 1.0));
    return {est.g.size() == 21 && worst < 0.05, "max |g-1| " + num(worst) + " over " +
                                                    std::to_string(est.g.size()) + " points"};
}

Outcome ou_tableau() {
    const double kappa = 0.5;
    ProblemSpec p;
    p.b = CoefficientFamily::affine(0.0, -kappa);
    const LampertiMap map(p.sigma, p.b, Box{-10, 10});
    const TimeGrid grid{1.0, 1000};
    const auto ens = simulate_forward(p, map, grid, 50, 11);
    const ForwardTableau tab(ens, map);
    double worst = 0.0;
    for (std::size_t q = 0; q < ens.n_paths(); ++q)
        for (int t = 0; t <= 1000; t += 50)
            for (int th = 0; th <= t; th += 50)
                worst = std::max(worst, std::abs(tab.malliavin_first_X(q, th, t) -
                                                 std::exp(-kappa * (grid.time(t) - grid.time(th)))));
    return {worst < 1e-3, "max |DX - exp(-k(t-theta))| " + num(worst)};
}

Outcome linear_driver() {
    const double a = 0.5;
    ProblemSpec p;
    p.driver.y_part = CoefficientFamily::affine(0.0, a);
    Solved s(p, 200000, 100, RegressionBasis{}, 5);
    const ForwardTableau fwd(s.ens, s.map);
    const BackwardTableau tab(fwd, s.sol);
    double var_err = 0.0, dy_err = 0.0;
    for (int i : {25, 50, 75}) {
        const double t = s.sol.grid().time(i);
        std::vector<double> y(s.sol.n_paths());
        for (std::size_t q = 0; q < y.size(); ++q) y[q] = s.sol.y(q, i);
        var_err = std::max(var_err, std::abs(variance_of(y) / (t * std::exp(2 * a * (1 - t))) - 1));
        for (std::size_t q = 0; q < 200; q += 7)
            for (int th : theta_nodes(i))
                dy_err = std::max(dy_err, std::abs(tab.malliavin_first_Y(q, th, i) / std::exp(a * (1 - t)) - 1));
    }
    return {var_err < 0.02 && dy_err < 0.02, "max rel var err " + num(var_err) + ", max rel DY err " + num(dy_err)};
}

Outcome clark_ocone() {
    ProblemSpec p;
    p.phi = CoefficientFamily::trig_affine(0, 0, 1);
    Solved s(p, 200000, 100, RegressionBasis{BasisKind::polynomial_in_X, 6, {}}, 17);
    const ForwardTableau fwd(s.ens, s.map);
    const BackwardTableau tab(fwd, s.sol);
    std::vector<double> exact(s.sol.n_paths());
    double se = 0.0;
    for (std::size_t q = 0; q < exact.size(); ++q) {
        exact[q] = std::cos(s.ens.w(q, 50)) * std::exp(-0.25);
        const double d = tab.clark_ocone_Z(q, 50) - exact[q];
        se += d * d;
    }
    const double rmse = std::sqrt(se / static_cast<double>(exact.size()));
    const double sd = std::sqrt(variance_of(exact));
    return {rmse < 0.02 * sd, "rmse " + num(rmse) + " vs 2% of sd " + num(0.02 * sd)};
}

Outcome girsanov() {
    ProblemSpec p;
    p.driver.alpha = 0.3;
    Solved s(p, 400000, 20, RegressionBasis{}, 23, true);
    const double err = std::abs(s.sol.y0() - 0.3);
    return {err < 0.003, "Y0 " + num(s.sol.y0()) + ", |Y0 - 0.3| " + num(err)};
}

Outcome z_pipeline() {
    ProblemSpec p;
    p.phi = CoefficientFamily::quadratic(0.0, 0.0, 0.5);
    Solved s(p, 100000, 100, RegressionBasis{}, 29);
    const ForwardTableau fwd(s.ens, s.map);
    const BackwardTableau tab(fwd, s.sol);
    const std::size_t n = s.sol.n_paths();
    std::vector<double> all;
    double worst_sigmas = 0.0;
    for (int t : {25, 50, 75}) {
        for (int th : theta_nodes(t)) {
            std::vector<double> dz(n);
            for (std::size_t q = 0; q < n; ++q) dz[q] = tab.malliavin_first_Z(q, th, t);
            const double m = mean_of(dz);
            const double se = std::max(tab.first_Z_se(t, 1.0), std::sqrt(variance_of(dz) / static_cast<double>(n)));
            const double dev = std::abs(m - 1.0);
            worst_sigmas = std::max(worst_sigmas, se > 0 ? dev / se : (dev > 1e-12 ? 1e300 : 0.0));
            all.insert(all.end(), dz.begin(), dz.end());
        }
    }
    const auto pos = positivity_report(all);
    std::vector<double> z(n), dz_t;
    const int k = 50;
    for (std::size_t q = 0; q < n; ++q) z[q] = tab.clark_ocone_Z(q, k);
    for (int th : theta_nodes(k))
        for (std::size_t q = 0; q < n; ++q) dz_t.push_back(tab.malliavin_first_Z(q, th, k));
    const auto c = density_check(z, dz_t, 0.5, 0.0, 0.5);
    const bool ok = worst_sigmas <= 3.0 && pos.pass && c.report.pass && c.sup_rel < 0.03;
    return {ok, "max |DZ-1|/se " + num(worst_sigmas) + ", min DZ " + num(pos.min_value) + ", Z sup rel err " +
                    num(c.sup_rel) + ", Z envelope " + (c.report.pass ? "pass" : "fail")};
}

Outcome hypotheses() {
    ProblemSpec a;
    a.b = CoefficientFamily::trig_affine(0, 0, 1);
    a.sigma = CoefficientFamily::trig_affine(2, 1);
    const auto ra = check_hypotheses(a, Box{-4, 4}, 1000);
    const auto& h3 = ra.at("H3");
    const double M = h3.constants.at("M");
    const bool h3_ok = h3.status == HypothesisStatus::pass && M <= 3.0 + 1e-9;

    ProblemSpec b;
    b.phi = CoefficientFamily::trig_affine(0, 0, 0.1, 1, 1);
    const auto rb = check_hypotheses(b, Box{-4, 4}, 1000);
    const auto& h7 = rb.at("H7");
    bool witness_ok = h7.status == HypothesisStatus::fail && h7.witness.size() == 1;
    if (witness_ok) {
        const double w = h7.witness[0];
        witness_ok = b.phi.derivative(2, w) < 0 && std::abs(w - std::numbers::pi / 2) <= 8.0 / 999.0 &&
                     h7.violation_value == b.phi.derivative(2, w);
    }

    bool refused = false;
    std::string message;
    try {
        const double inf = std::numeric_limits<double>::infinity();
        (void)check_hypotheses(b, Box{-inf, inf}, 1000);
    } catch (const DomainError& e) {
        message = e.what();
        refused = message.find("global") != std::string::npos;
    }
    return {h3_ok && witness_ok && refused,
            "H3 M " + num(M) + ", H7 witness " + (h7.witness.empty() ? std::string("none") : num(h7.witness[0])) +
                ", global refusal " + (refused ? "yes" : "no")};
}

Outcome second_order() {
    ProblemSpec p;
    p.sigma = CoefficientFamily::constant(2.0);
    p.b = CoefficientFamily::quadratic(0.0, 0.0, 1.0);
    p.horizon = 0.25;
    const LampertiMap map(p.sigma, p.b, Box{-10, 10});
    const TimeGrid grid{0.25, 1000};
    const auto inc = gaussian_increments(1, grid.n_steps, grid.dt(), 31);
    const auto base = ensemble_from_increments(p, map, grid, inc);
    const ForwardTableau tab(base, map);
    const double h = 1e-4;
    double worst = 0.0;
    for (const auto& [theta, t, s] : std::vector<std::array<int, 3>>{{100, 400, 1000}, {200, 200, 800}, {0, 500, 900}}) {
        auto u_at = [&](double da, double db) {
            auto v = inc;
            v[0][static_cast<std::size_t>(theta)] += da;
            v[0][static_cast<std::size_t>(t)] += db;
            return ensemble_from_increments(p, map, grid, v).u(0, s);
        };
        const double fd = (u_at(h, h) - u_at(h, -h) - u_at(-h, h) + u_at(-h, -h)) / (4 * h * h);
        const double an = tab.malliavin_second_U(0, theta, t, s);
        worst = std::max(worst, std::abs(an - fd) / std::abs(fd));
    }
    return {worst < 0.05, "max rel err vs second difference " + num(worst)};
}

Outcome derivative_validation() {
    const std::vector<CoefficientFamily> families{CoefficientFamily::constant(1.7),
                                                  CoefficientFamily::affine(0.3, -1.2),
                                                  CoefficientFamily::trig_affine(2.0, 1.0, 0.5, 1.3, 0.2),
                                                  CoefficientFamily::scaled_sigmoid(0.5, 2.0, 0.8),
                                                  CoefficientFamily::quadratic(1.0, -0.5, 0.25),
                                                  CoefficientFamily::polynomial({0.1, -0.2, 0.3, 0.05, -0.01})};
    const double h = 1e-5;
    double worst = 0.0;
    for (const auto& f : families)
        for (int order = 1; order <= 3; ++order)
            for (double x : linspace(-5, 5, 100)) {
                const double fd = (f.derivative(order - 1, x + h) - f.derivative(order - 1, x - h)) / (2 * h);
                const double exact = f.derivative(order, x);
                worst = std::max(worst, std::abs(fd - exact) / (1.0 + std::abs(exact)));
            }
    return {worst < 1e-6, "max rel err " + num(worst) + " over " + std::to_string(families.size()) + " families"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism() {
    const auto root = fs::temp_directory_path() / "mbsde_acceptance_det";
    fs::remove_all(root);
    const std::string text = R"(
model.sigma = trig-affine(a=2,b=1)
model.b = trig-affine(c=1)
model.phi = quadratic(b=5,c=0.5)
verify.components = Y, Z
grid.n_steps = 40
mc.n_paths = 8000
g.n_outer = 300
)";
    auto run = [&](const std::string& name, int workers) {
        auto cfg = parse_config_text(text);
        cfg.out_dir = root / name;
        RunOptions opt;
        opt.workers = workers;
        (void)run_experiment(cfg, opt);
    };
    run("a", 1);
    run("b", 1);
    run("c", 3);
    std::size_t n_csv = 0, mismatches = 0;
    for (const auto& e : fs::directory_iterator(root / "a")) {
        if (e.path().extension() != ".csv") continue;
        ++n_csv;
        const auto name = e.path().filename();
        const auto ref = slurp(e.path());
        if (ref != slurp(root / "b" / name) || ref != slurp(root / "c" / name)) ++mismatches;
    }
    fs::remove_all(root);
    return {n_csv > 0 && mismatches == 0,
            std::to_string(n_csv) + " CSVs compared, " + std::to_string(mismatches) + " differ"};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"brownian-density", brownian_density},
        {"envelope-identity", envelope_identity},
        {"g-calibration", g_calibration},
        {"ou-forward-tableau", ou_tableau},
        {"linear-driver", linear_driver},
        {"clark-ocone", clark_ocone},
        {"girsanov-reduction", girsanov},
        {"z-pipeline", z_pipeline},
        {"hypothesis-checker", hypotheses},
        {"second-order-consistency", second_order},
        {"derivative-validation", derivative_validation},
        {"determinism", determinism},
    };
    int failed = 0, index = 0;
    for (const auto& [name, check] : criteria) {
        ++index;
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = check();
        } catch (const std::exception& e) {
            out = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!out.pass) ++failed;
        std::printf("%s %2d %-26s %s (%.1fs)\n", out.pass ? "PASS" : "FAIL", index, name, out.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", index - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
