#include "mbsde/nvdensity.hpp"

#include "mbsde/error.hpp"
#include "mbsde/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace mbsde {

namespace {

constexpr std::size_t kOuterBlock = 64;

double trapezoid_product(const std::vector<double>& a, const std::vector<double>& b, double dt) {
    if (a.size() < 2) return 0.0;
    double s = 0.5 * (a.front() * b.front() + a.back() * b.back());
    for (std::size_t i = 1; i + 1 < a.size(); ++i) s += a[i] * b[i];
    return s * dt;
}

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(std::span<const double> v, double mean) {
    double ss = 0.0;
    for (double a : v) ss += (a - mean) * (a - mean);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

// Nearest-rank quantile of a sorted sample.
double sorted_quantile(const std::vector<double>& sorted, double q, bool round_up) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto idx = static_cast<std::size_t>(round_up ? std::ceil(pos) : std::floor(pos));
    return sorted[std::min(idx, sorted.size() - 1)];
}

}  // namespace

std::vector<double> mehler_shift(std::span<const double> dw, std::span<const double> dw_prime, double u) {
    if (dw.size() != dw_prime.size())
        throw ContractViolation("nvdensity", "increment arrays differ in length");
    if (!(u >= 0.0)) throw ContractViolation("nvdensity", "shift parameter u must be non-negative");
    const double uu = std::min(u, 40.0);
    const double a = std::exp(-uu), b = std::sqrt(-std::expm1(-2.0 * uu));
    std::vector<double> out(dw.size());
    for (std::size_t i = 0; i < dw.size(); ++i) out[i] = a * dw[i] + b * dw_prime[i];
    return out;
}

GaussLaguerre gauss_laguerre(int n) {
    if (n < 1) throw ContractViolation("nvdensity", "Gauss-Laguerre order must be at least 1");
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        jacobi(i, i) = 2.0 * i + 1.0;
        if (i + 1 < n) jacobi(i, i + 1) = jacobi(i + 1, i) = i + 1.0;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    GaussLaguerre q;
    for (int i = 0; i < n; ++i) {
        q.nodes.push_back(eig.eigenvalues()(i));
        const double v = eig.eigenvectors()(0, i);
        q.weights.push_back(v * v);
    }
    return q;
}

GEstimate estimate_g(const PhiSampler& sampler, const std::vector<std::vector<double>>& outer,
                     double dt, const GOptions& opt) {
    if (outer.empty()) throw ContractViolation("nvdensity", "no outer samples");
    if (opt.n_inner < 1 || opt.batches < 2)
        throw ContractViolation("nvdensity", "n_inner must be >= 1 and batches >= 2");
    if (!(dt > 0.0)) throw ContractViolation("nvdensity", "dt must be positive");

    GEstimate est;
    est.quadrature = gauss_laguerre(opt.u_nodes);
    est.n_outer = outer.size();
    est.n_inner = static_cast<std::size_t>(opt.n_inner);
    const std::size_t n = outer.size();
    std::vector<double> f(n), g(n);
    std::vector<char> ok(n, 0);
    const double sqrt_dt = std::sqrt(dt);

    parallel_blocks(n, kOuterBlock, opt.workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<double> d, d_shift, w_prime;
        double v_shift = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const auto& inc = outer[i];
            if (!sampler(inc, f[i], d)) continue;
            double acc = 0.0;
            bool good = true;
            for (int m = 0; m < opt.n_inner && good; ++m) {
                std::mt19937_64 rng(stream_seed(opt.seed, i, 1 + static_cast<std::uint64_t>(m)));
                std::normal_distribution<double> normal;
                w_prime.resize(inc.size());
                for (auto& v : w_prime) v = sqrt_dt * normal(rng);
                for (std::size_t j = 0; j < est.quadrature.nodes.size(); ++j) {
                    const auto shifted = mehler_shift(inc, w_prime, std::min(est.quadrature.nodes[j], opt.u_cap));
                    if (!sampler(shifted, v_shift, d_shift) || d_shift.size() != d.size()) {
                        good = false;
                        break;
                    }
                    acc += est.quadrature.weights[j] * trapezoid_product(d, d_shift, dt);
                }
            }
            if (!good) continue;
            g[i] = acc / opt.n_inner;
            ok[i] = 1;
        }
    });

    for (std::size_t i = 0; i < n; ++i) {
        if (!ok[i]) {
            ++est.n_skipped;
            continue;
        }
        est.f_samples.push_back(f[i]);
        est.g_samples.push_back(g[i]);
    }
    const std::size_t m = est.f_samples.size();
    if (m < static_cast<std::size_t>(opt.batches))
        throw SolverError("nvdensity", "only " + std::to_string(m) + " usable outer samples");
    est.mean = mean_of(est.f_samples);
    std::vector<double> centered(m);
    for (std::size_t i = 0; i < m; ++i) centered[i] = est.f_samples[i] - est.mean;
    const double sd = sd_of(centered, 0.0);

    if (!opt.x_grid.empty()) {
        est.x = opt.x_grid;
    } else {
        if (opt.x_points < 2) throw ContractViolation("nvdensity", "x_points must be at least 2");
        auto sorted = centered;
        std::sort(sorted.begin(), sorted.end());
        const double tail = 0.5 * (1.0 - opt.grid_mass);
        const double lo = sorted_quantile(sorted, tail, true), hi = sorted_quantile(sorted, 1.0 - tail, false);
        for (int k = 0; k < opt.x_points; ++k)
            est.x.push_back(lo + (hi - lo) * k / (opt.x_points - 1));
    }
    // A degenerate F has no spread for a kernel; fall back to a unit-scale window.
    est.bandwidth = opt.bandwidth ? *opt.bandwidth
                                  : 1.06 * (sd > 0.0 ? sd : 1.0) * std::pow(static_cast<double>(m), -0.2);
    if (!(est.bandwidth > 0.0)) throw ContractViolation("nvdensity", "bandwidth must be positive");

    const std::size_t nb = static_cast<std::size_t>(opt.batches);
    const double inv_h = 1.0 / est.bandwidth;
    for (double x : est.x) {
        double sk = 0.0, sk2 = 0.0, skg = 0.0;
        std::vector<double> bk(nb, 0.0), bkg(nb, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            const double z = (centered[i] - x) * inv_h;
            const double k = std::exp(-0.5 * z * z);
            sk += k;
            sk2 += k * k;
            skg += k * est.g_samples[i];
            const std::size_t b = i * nb / m;
            bk[b] += k;
            bkg[b] += k * est.g_samples[i];
        }
        const double eff = sk2 > 0.0 ? sk * sk / sk2 : 0.0;
        est.effective.push_back(eff);
        est.reliable.push_back(eff >= opt.min_effective ? 1 : 0);
        est.g.push_back(sk > 0.0 ? skg / sk : std::nan(""));
        std::vector<double> means;
        for (std::size_t b = 0; b < nb; ++b)
            if (bk[b] > 0.0) means.push_back(bkg[b] / bk[b]);
        if (means.size() < 2) {
            est.se.push_back(std::nan(""));
        } else {
            const double mu = mean_of(means);
            double ss = 0.0;
            for (double v : means) ss += (v - mu) * (v - mu);
            est.se.push_back(std::sqrt(ss / static_cast<double>(means.size() - 1) / static_cast<double>(means.size())));
        }
    }
    return est;
}

BoundConstants derivative_bound_constants(std::span<const double> samples, double t, double quantile) {
    if (samples.empty()) throw ContractViolation("nvdensity", "no derivative samples");
    if (!(t > 0.0)) throw ContractViolation("nvdensity", "t must be positive");
    if (!(quantile >= 0.0 && quantile < 0.5))
        throw ContractViolation("nvdensity", "robust quantile must lie in [0, 0.5)");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    BoundConstants bc;
    bc.quantile = quantile;
    bc.c_hat = sorted_quantile(sorted, quantile, false);
    bc.C_hat = sorted_quantile(sorted, 1.0 - quantile, true);
    bc.n_nonpositive = static_cast<std::size_t>(std::count_if(sorted.begin(), sorted.end(), [](double v) { return v <= 0.0; }));
    if (bc.c_hat <= 0.0) {
        const auto it = std::upper_bound(sorted.begin(), sorted.end(), 0.0);
        if (it == sorted.end())
            throw ContractViolation("nvdensity", "no positive derivative samples; bounds undefined");
        bc.c_hat = *it;
        bc.clamped = true;
    }
    bc.gamma_min_sq = bc.c_hat * bc.c_hat * t;
    bc.gamma_max_sq = bc.C_hat * bc.C_hat * t;
    return bc;
}

Envelope gaussian_envelopes(double mean, double abs_moment, double gamma_min_sq, double gamma_max_sq,
                            std::vector<double> z) {
    if (!(gamma_min_sq > 0.0) || !(gamma_max_sq > 0.0))
        throw ContractViolation("nvdensity", "envelope variances must be positive");
    if (!(abs_moment > 0.0)) throw ContractViolation("nvdensity", "absolute moment must be positive");
    Envelope env{gamma_min_sq, gamma_max_sq, mean, abs_moment, std::move(z), {}, {}, {}, {}};
    const double p_min = abs_moment / (2.0 * gamma_min_sq), p_max = abs_moment / (2.0 * gamma_max_sq);
    for (double v : env.z) {
        const double d2 = (v - mean) * (v - mean);
        const double e_min = std::exp(-d2 / (2.0 * gamma_min_sq)), e_max = std::exp(-d2 / (2.0 * gamma_max_sq));
        env.lower.push_back(p_max * e_min);
        env.upper.push_back(p_min * e_max);
        env.alt_lower.push_back(p_min * e_min);
        env.alt_upper.push_back(p_max * e_max);
    }
    return env;
}

}  // namespace mbsde
