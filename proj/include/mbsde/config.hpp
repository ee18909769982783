#pragma once

#include "mbsde/coeffs.hpp"
#include "mbsde/forward.hpp"
#include "mbsde/regression.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mbsde {

enum class Component { Y, Z };

[[nodiscard]] std::string_view to_string(Component c);

/// Everything a run needs. Populated by parse_config; every field has a
/// documented default (see docs/config.md).
struct ExperimentConfig {
    ProblemSpec problem;
    int n_steps = 200;
    std::size_t n_paths = 100000;
    std::uint64_t seed = 20240611;
    bool antithetic = false;

    /// Unset kind means: polynomial-in-X when X_t determines the state
    /// (terminal φ(X_T), or σ and b constant), polynomial-in-XW otherwise.
    std::optional<BasisKind> basis_kind;
    int basis_degree = 3;
    std::optional<double> ridge;

    std::vector<double> eval_times{0.5};

    Box hypothesis_box{-4.0, 4.0};
    int hypothesis_grid = 1000;
    Box simulation_box{-10.0, 10.0};

    std::size_t g_outer = 2000;
    int g_inner = 1;
    int g_u_nodes = 16;
    int g_x_points = 21;
    double bound_quantile = 0.001;

    std::vector<Component> components{Component::Y};
    int density_points = 401;
    double quantile_range = 0.95;
    double tol = 0.03;
    double allowed_fraction = 0.0;
    double dz_noise_floor = 0.0;

    std::filesystem::path out_dir = "out";

    [[nodiscard]] TimeGrid grid() const { return {problem.horizon, n_steps}; }
    [[nodiscard]] RegressionBasis basis() const;
    /// Checks ranges; throws ConfigError naming the key.
    void validate() const;
    /// Every key with its effective value, one `key = value` per line.
    [[nodiscard]] std::string echo() const;
};

[[nodiscard]] ExperimentConfig parse_config_text(std::string_view text);
[[nodiscard]] ExperimentConfig parse_config(const std::filesystem::path& path);

}  // namespace mbsde
