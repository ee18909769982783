#pragma once

#include "mbsde/coeffs.hpp"
#include "mbsde/lamperti.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace mbsde {

/// Uniform grid t_i = i T / n on [0, T].
struct TimeGrid {
    double horizon = 1.0;
    int n_steps = 200;

    [[nodiscard]] double dt() const noexcept { return horizon / n_steps; }
    [[nodiscard]] double time(int i) const noexcept {
        return i == n_steps ? horizon : horizon * i / n_steps;
    }
    [[nodiscard]] int nodes() const noexcept { return n_steps + 1; }
    /// Nearest grid node to t (θ arguments snap to nodes).
    [[nodiscard]] int index_of(double t) const;

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

/// Brownian, Lamperti and state paths of the forward SDE, stored per path
/// as contiguous arrays of grid().nodes() values.
class PathEnsemble {
public:
    PathEnsemble() = default;
    PathEnsemble(TimeGrid grid, double x0, std::uint64_t seed, std::size_t n_paths);

    [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] std::size_t n_paths() const noexcept { return path_index_.size(); }
    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] double x0() const noexcept { return x0_; }
    /// Paths dropped because they left the certified σ > 0 box.
    [[nodiscard]] std::size_t n_flagged() const noexcept { return n_flagged_; }
    /// Index of the path in the original seeded stream.
    [[nodiscard]] std::uint64_t path_index(std::size_t p) const { return path_index_[p]; }

    [[nodiscard]] double w(std::size_t p, int i) const { return w_[offset(p, i)]; }
    [[nodiscard]] double u(std::size_t p, int i) const { return u_[offset(p, i)]; }
    [[nodiscard]] double x(std::size_t p, int i) const { return x_[offset(p, i)]; }
    /// ΔW_i = W_{i+1} - W_i.
    [[nodiscard]] double increment(std::size_t p, int i) const {
        return w_[offset(p, i + 1)] - w_[offset(p, i)];
    }

    [[nodiscard]] std::span<const double> w_path(std::size_t p) const { return row(w_, p); }
    [[nodiscard]] std::span<const double> u_path(std::size_t p) const { return row(u_, p); }
    [[nodiscard]] std::span<const double> x_path(std::size_t p) const { return row(x_, p); }

    /// Binary dump; layout in docs/ensemble_format.md.
    void write(std::ostream& out) const;
    [[nodiscard]] static PathEnsemble read(std::istream& in);

    friend bool operator==(const PathEnsemble&, const PathEnsemble&) = default;

private:
    friend PathEnsemble simulate_forward(const ProblemSpec&, const LampertiMap&, const TimeGrid&,
                                         std::size_t, std::uint64_t, int, bool);
    friend PathEnsemble ensemble_from_increments(const ProblemSpec&, const LampertiMap&,
                                                 const TimeGrid&,
                                                 const std::vector<std::vector<double>>&);

    [[nodiscard]] std::size_t offset(std::size_t p, int i) const {
        return p * static_cast<std::size_t>(grid_.nodes()) + static_cast<std::size_t>(i);
    }
    [[nodiscard]] std::span<const double> row(const std::vector<double>& v, std::size_t p) const {
        return {v.data() + offset(p, 0), static_cast<std::size_t>(grid_.nodes())};
    }

    TimeGrid grid_;
    double x0_ = 0.0;
    std::uint64_t seed_ = 0;
    std::size_t n_flagged_ = 0;
    std::vector<std::uint64_t> path_index_;
    std::vector<double> w_, u_, x_;
};

/// Euler–Maruyama on the Lamperti process dU = β(g⁻¹(U))dt + dW from the
/// given Brownian path; writes U and X = g⁻¹(U). Returns false if the path
/// leaves g(validity box).
bool simulate_path(const LampertiMap& map, double x0, double dt, std::span<const double> w,
                   std::span<double> u, std::span<double> x);

/// K_i = ∫_0^{t_i} (β∘g⁻¹)'(U_s) ds along one state path, trapezoidal rule.
void running_log_du(const LampertiMap& map, std::span<const double> x, double dt, std::span<double> k);

/// Seeded ensemble; path p uses the stream stream_seed(seed, p). Paths that
/// leave the validity box are excluded and counted; more than 1% excluded
/// raises SolverError. Results do not depend on the worker count. With
/// antithetic set, odd paths reuse the preceding path's increments negated.
[[nodiscard]] PathEnsemble simulate_forward(const ProblemSpec& problem, const LampertiMap& map,
                                            const TimeGrid& grid, std::size_t n_paths,
                                            std::uint64_t seed, int workers = 1,
                                            bool antithetic = false);

/// Ensemble on frozen Brownian increments (one vector of n_steps per path).
[[nodiscard]] PathEnsemble ensemble_from_increments(
    const ProblemSpec& problem, const LampertiMap& map, const TimeGrid& grid,
    const std::vector<std::vector<double>>& increments);

/// First- and second-order Malliavin derivatives of U and X along each path.
///
/// D_θU_t = exp ∫_θ^t (β∘g⁻¹)'(U_s) ds with the integral by the trapezoidal
/// rule. Only the per-path running integral K_t = ∫_0^t is stored, so every
/// triangular entry is exp(K_t - K_θ). Second-order entries use the running
/// integral J_t = ∫_0^t (β∘g⁻¹)''(U_r) e^{K_r} dr, built on first use:
///
///   D²_{θ,t}U_s = ∫_t^s (β∘g⁻¹)''(U_r) D_rU_s D_tU_r D_θU_r dr
///              = e^{K_s - K_t - K_θ} (J_s - J_t),     θ ≤ t ≤ s.
class ForwardTableau {
public:
    ForwardTableau(const PathEnsemble& ensemble, const LampertiMap& map, int workers = 1);

    [[nodiscard]] const PathEnsemble& ensemble() const noexcept { return *ens_; }
    [[nodiscard]] const LampertiMap& map() const noexcept { return *map_; }

    [[nodiscard]] double malliavin_first_U(std::size_t path, int theta, int t) const;
    [[nodiscard]] double malliavin_first_X(std::size_t path, int theta, int t) const;
    /// Arguments in either order for the two derivative times; requires
    /// max(θ, t) ≤ s. The diagonal θ = t uses the same formula.
    [[nodiscard]] double malliavin_second_U(std::size_t path, int theta, int t, int s) const;
    [[nodiscard]] double malliavin_second_X(std::size_t path, int theta, int t, int s) const;

    /// Running integral K along a path (log D_0U_t).
    [[nodiscard]] std::span<const double> log_du(std::size_t path) const;
    /// Running integral J along a path; computes all paths on first call.
    [[nodiscard]] std::span<const double> second_order_integral(std::size_t path) const;

private:
    void check_first(int theta, int t) const;
    void ensure_second_order() const;

    const PathEnsemble* ens_;
    const LampertiMap* map_;
    int workers_;
    std::size_t nodes_;
    std::vector<double> k_;
    mutable std::vector<double> j_;
};

}  // namespace mbsde
