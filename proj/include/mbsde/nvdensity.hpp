#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace mbsde {

/// e^{-u} ΔW + sqrt(1 - e^{-2u}) ΔW' elementwise; u is capped at 40.
[[nodiscard]] std::vector<double> mehler_shift(std::span<const double> dw,
                                               std::span<const double> dw_prime, double u);

/// Nodes and weights for ∫_0^∞ e^{-u} h(u) du (Golub–Welsch).
struct GaussLaguerre {
    std::vector<double> nodes, weights;
};
[[nodiscard]] GaussLaguerre gauss_laguerre(int n);

/// Evaluates F and its Malliavin derivative D_θF at the grid nodes
/// θ_0..θ_k from the first k Brownian increments. Returns false when the
/// path cannot be evaluated (it left the certified box); the sample is then
/// skipped.
using PhiSampler =
    std::function<bool(std::span<const double> increments, double& value, std::vector<double>& derivative)>;

struct GOptions {
    int n_inner = 1;
    int u_nodes = 16;
    double u_cap = 40.0;
    /// Grid of x = F - E F: explicit, or x_points across the central
    /// grid_mass of the centered samples.
    std::vector<double> x_grid;
    int x_points = 21;
    double grid_mass = 0.95;
    std::optional<double> bandwidth;
    int batches = 20;
    double min_effective = 30.0;
    std::uint64_t seed = 0;
    int workers = 1;
};

struct GEstimate {
    std::vector<double> x, g, se, effective;
    std::vector<char> reliable;
    GaussLaguerre quadrature;
    std::size_t n_outer = 0, n_inner = 0, n_skipped = 0;
    double mean = 0.0;       // E F
    double bandwidth = 0.0;
    std::vector<double> f_samples, g_samples;  // per accepted outer sample
};

/// g(x) = ∫_0^∞ e^{-u} E(E'⟨Φ_F(W), Φ_F(W^u)⟩ | F - E F = x) du, with the
/// inner product over [0, t] by the trapezoidal rule, the conditioning by
/// Nadaraya–Watson and standard errors by batch means. Outer sample i is
/// the increment vector outer[i]; its independent copies W' are seeded by
/// (options.seed, i, 1 + inner index).
[[nodiscard]] GEstimate estimate_g(const PhiSampler& sampler,
                                   const std::vector<std::vector<double>>& outer, double dt,
                                   const GOptions& options);

struct BoundConstants {
    double c_hat = 0.0, C_hat = 0.0;
    double gamma_min_sq = 0.0, gamma_max_sq = 0.0;
    double quantile = 0.0;
    std::size_t n_nonpositive = 0;
    bool clamped = false;
};

/// Robust extrema of sampled D_θF values (nearest-rank quantiles at q and
/// 1 - q) and γ² = ĉ² t, Γ² = Ĉ² t. A non-positive lower quantile is
/// replaced by the smallest positive sample and flagged.
[[nodiscard]] BoundConstants derivative_bound_constants(std::span<const double> samples, double t,
                                                        double quantile = 0.001);

struct Envelope {
    double gamma_min_sq = 0.0, gamma_max_sq = 0.0;
    double mean = 0.0, abs_moment = 0.0;
    std::vector<double> z, lower, upper;
    /// Variant with the prefactors swapped: E|F-EF|/(2γ_min²) on the lower
    /// curve and E|F-EF|/(2γ_max²) on the upper one.
    std::vector<double> alt_lower, alt_upper;
};

///   lower(z) = E|F-EF| / (2γ_max²) exp(-(z-EF)² / (2γ_min²))
///   upper(z) = E|F-EF| / (2γ_min²) exp(-(z-EF)² / (2γ_max²))
[[nodiscard]] Envelope gaussian_envelopes(double mean, double abs_moment, double gamma_min_sq,
                                          double gamma_max_sq, std::vector<double> z);

}  // namespace mbsde
