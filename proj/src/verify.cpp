#include "mbsde/verify.hpp"

#include "mbsde/error.hpp"
#include "mbsde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace mbsde {

DensityEstimate kde(std::span<const double> samples, std::vector<double> grid,
                    std::optional<double> bandwidth, int workers) {
    if (samples.size() < 2) throw ContractViolation("verify", "kde needs at least two samples");
    const double n = static_cast<double>(samples.size());
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 1e-14 * std::max(1.0, std::abs(mean))))
        throw DomainError("verify", "degenerate samples (zero variance) have no density estimate");

    DensityEstimate est;
    est.n_samples = samples.size();
    est.bandwidth = bandwidth ? *bandwidth : 1.06 * sd * std::pow(n, -0.2);
    if (!(est.bandwidth > 0.0)) throw ContractViolation("verify", "bandwidth must be positive");
    est.sorted_samples.assign(samples.begin(), samples.end());
    std::sort(est.sorted_samples.begin(), est.sorted_samples.end());
    est.z = std::move(grid);
    est.density.assign(est.z.size(), 0.0);

    // Sorted samples let each grid point sum only over the ±9h window.
    const double h = est.bandwidth, reach = 9.0 * h;
    const double norm = 1.0 / (n * h * std::sqrt(2.0 * std::numbers::pi));
    const auto& s = est.sorted_samples;
    parallel_blocks(est.z.size(), 16, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t g = begin; g < end; ++g) {
            const double z = est.z[g];
            auto it = std::lower_bound(s.begin(), s.end(), z - reach);
            const auto stop = std::upper_bound(it, s.end(), z + reach);
            double acc = 0.0;
            for (; it != stop; ++it) {
                const double u = (z - *it) / h;
                acc += std::exp(-0.5 * u * u);
            }
            est.density[g] = acc * norm;
        }
    });
    return est;
}

std::pair<double, double> central_range(const std::vector<double>& sorted, double mass) {
    if (sorted.empty()) throw ContractViolation("verify", "no samples for a quantile range");
    if (!(mass > 0.0 && mass < 1.0)) throw ContractViolation("verify", "quantile range must lie in (0, 1)");
    const double tail = 0.5 * (1.0 - mass);
    const double last = static_cast<double>(sorted.size() - 1);
    return {sorted[static_cast<std::size_t>(std::ceil(tail * last))],
            sorted[static_cast<std::size_t>(std::floor((1.0 - tail) * last))]};
}

DensityReport envelope_check(const DensityEstimate& est, const Envelope& env, double quantile_range,
                             double tol, double allowed_fraction) {
    if (env.z != est.z) throw ContractViolation("verify", "envelope and kde grids differ");
    if (!(tol >= 0.0)) throw ContractViolation("verify", "tolerance must be non-negative");
    DensityReport rep;
    rep.quantile_range = quantile_range;
    rep.tol = tol;
    rep.allowed_fraction = allowed_fraction;
    std::tie(rep.range_lo, rep.range_hi) = central_range(est.sorted_samples, quantile_range);
    for (std::size_t i = 0; i < est.z.size(); ++i) {
        const double z = est.z[i];
        if (z < rep.range_lo || z > rep.range_hi) continue;
        ++rep.n_compared;
        const double up = env.upper[i], lo = env.lower[i], k = est.density[i];
        const double slack = std::isinf(tol) ? tol : tol * up;
        if (k < lo - slack) {
            ++rep.below.count;
            rep.below.max_violation = std::max(rep.below.max_violation, (lo - k) / up);
        }
        if (k > up + slack) {
            ++rep.above.count;
            rep.above.max_violation = std::max(rep.above.max_violation, (k - up) / up);
        }
    }
    if (rep.n_compared == 0) throw ContractViolation("verify", "empty comparison range");
    rep.below.fraction = static_cast<double>(rep.below.count) / static_cast<double>(rep.n_compared);
    rep.above.fraction = static_cast<double>(rep.above.count) / static_cast<double>(rep.n_compared);
    rep.pass = rep.below.fraction <= allowed_fraction && rep.above.fraction <= allowed_fraction;
    return rep;
}

PositivityReport positivity_report(std::span<const double> samples, double noise_floor) {
    PositivityReport rep;
    rep.noise_floor = noise_floor;
    rep.n_samples = samples.size();
    if (samples.empty()) throw ContractViolation("verify", "positivity report needs at least one sample");
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    rep.min_value = *mn;
    rep.max_value = *mx;
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double v = samples[i];
        if (noise_floor > 0.0 ? v <= -noise_floor : v <= 0.0) bad.push_back(i);
    }
    rep.n_nonpositive = bad.size();
    rep.nonpositive_fraction = static_cast<double>(bad.size()) / static_cast<double>(samples.size());
    std::stable_sort(bad.begin(), bad.end(), [&](std::size_t a, std::size_t b) { return samples[a] < samples[b]; });
    bad.resize(std::min<std::size_t>(bad.size(), 10));
    rep.witnesses = std::move(bad);
    rep.pass = rep.n_nonpositive == 0;
    return rep;
}

}  // namespace mbsde
