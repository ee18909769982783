#pragma once

#include "mbsde/nvdensity.hpp"

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace mbsde {

struct DensityEstimate {
    std::vector<double> z, density;
    double bandwidth = 0.0;
    std::size_t n_samples = 0;
    std::vector<double> sorted_samples;  // kept for quantile ranges
};

/// Gaussian-kernel density estimate; default bandwidth 1.06 σ̂ n^{-1/5}.
[[nodiscard]] DensityEstimate kde(std::span<const double> samples, std::vector<double> grid,
                                  std::optional<double> bandwidth = std::nullopt, int workers = 1);

/// Interval holding the central `mass` of the sorted samples.
[[nodiscard]] std::pair<double, double> central_range(const std::vector<double>& sorted, double mass);

struct SideViolations {
    std::size_t count = 0;
    double fraction = 0.0;
    double max_violation = 0.0;  // largest excess relative to upper(z)
};

struct DensityReport {
    double range_lo = 0.0, range_hi = 0.0;
    double quantile_range = 0.0, tol = 0.0, allowed_fraction = 0.0;
    std::size_t n_compared = 0;
    SideViolations below, above;
    bool pass = false;
};

/// Compares kde to the envelope on grid points inside the central
/// quantile_range of the samples. A point violates below when
/// kde < lower - tol·upper and above when kde > upper + tol·upper. Pass iff
/// the violating fraction on each side is at most allowed_fraction.
[[nodiscard]] DensityReport envelope_check(const DensityEstimate& kde, const Envelope& env,
                                           double quantile_range, double tol,
                                           double allowed_fraction = 0.0);

struct PositivityReport {
    double min_value = 0.0, max_value = 0.0;
    std::size_t n_samples = 0, n_nonpositive = 0;
    double nonpositive_fraction = 0.0;
    double noise_floor = 0.0;
    std::vector<std::size_t> witnesses;  // indices of the smallest offending samples (at most 10)
    bool pass = false;
};

/// A sample counts as non-positive when it is ≤ -noise_floor (≤ 0 for a
/// zero floor). Pass iff there are none.
[[nodiscard]] PositivityReport positivity_report(std::span<const double> samples, double noise_floor = 0.0);

}  // namespace mbsde
