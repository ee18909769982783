#pragma once

#include "mbsde/coeffs.hpp"
#include "mbsde/forward.hpp"
#include "mbsde/regression.hpp"

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

namespace mbsde {

/// Function of the time-t state (X_t, W_t).
using StateFunction = std::function<double(double x, double w)>;

/// Deterministic measure change for a driver f(x, y) + αz: under Q with
/// dQ/dP = exp(αW_T - α²T/2) the process W̃_t = W_t - αt is Brownian and
/// the z-term disappears.
struct GirsanovShift {
    double alpha = 0.0;

    [[nodiscard]] bool is_identity() const noexcept { return alpha == 0.0; }
    [[nodiscard]] double shifted_increment(double dw, double dt) const noexcept { return dw - alpha * dt; }
    /// dQ/dP restricted to an interval of length span on which W moves by dw.
    [[nodiscard]] double density(double dw, double span) const;
};

struct ReducedProblem {
    ProblemSpec problem;  // driver with α = 0
    GirsanovShift shift;
};

[[nodiscard]] ReducedProblem girsanov_reduce(const ProblemSpec& problem);

/// ξ and its first two derivatives with respect to the terminal argument.
struct TerminalDerivatives {
    double value = 0.0;
    double d_w = 0.0;   // ∂ξ/∂W_T
    double d_x = 0.0;   // ∂ξ/∂X_T
    double d_ww = 0.0;
    double d_xx = 0.0;
};

[[nodiscard]] TerminalDerivatives terminal_derivatives(const ProblemSpec& problem, double x_T,
                                                       double w_T);

/// LSMC solution of the backward equation on one ensemble.
class BackwardSolution {
public:
    [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] std::size_t n_paths() const noexcept { return n_paths_; }
    /// The reduced problem (α moved into shift()).
    [[nodiscard]] const ProblemSpec& problem() const noexcept { return problem_; }
    [[nodiscard]] const GirsanovShift& shift() const noexcept { return shift_; }
    [[nodiscard]] const RegressionBasis& basis() const noexcept { return basis_; }
    [[nodiscard]] double ridge() const noexcept { return ridge_; }

    [[nodiscard]] double y(std::size_t p, int i) const { return y_[offset(p, i)]; }
    [[nodiscard]] double z(std::size_t p, int i) const { return z_[offset(p, i)]; }
    [[nodiscard]] std::span<const double> y_path(std::size_t p) const;
    [[nodiscard]] double y0() const { return y_[0]; }

    /// Y_{t_i} and Z_{t_i} from the stored fits at an arbitrary state.
    [[nodiscard]] double evaluate_y(int i, double x, double w) const;
    [[nodiscard]] double evaluate_z(int i, double x, double w) const;

    /// Standard error of the Z regression at step i (0 at the terminal node).
    [[nodiscard]] double z_se(int i) const { return z_se_[static_cast<std::size_t>(i)]; }
    /// Coefficients of the continuation fit at step i < n.
    [[nodiscard]] const FittedFunction& continuation(int i) const { return cont_[static_cast<std::size_t>(i)]; }

    /// dQ/dP over [t_i, T] along path p.
    [[nodiscard]] double weight_to_terminal(const PathEnsemble& ens, std::size_t p, int i) const;

private:
    friend BackwardSolution solve_bsde(const PathEnsemble&, const ProblemSpec&,
                                       const RegressionBasis&, int);

    [[nodiscard]] std::size_t offset(std::size_t p, int i) const {
        return p * static_cast<std::size_t>(grid_.nodes()) + static_cast<std::size_t>(i);
    }
    [[nodiscard]] double implicit_step(double e, double x) const;

    TimeGrid grid_;
    std::size_t n_paths_ = 0;
    ProblemSpec problem_;
    GirsanovShift shift_;
    RegressionBasis basis_;
    double ridge_ = 0.0;
    std::vector<double> y_, z_;
    std::vector<FittedFunction> cont_, zfit_;
    std::vector<double> z_se_;
};

/// Backward sweep i = n-1..0: E_i = regression of Y_{i+1}, Y_i the fixed
/// point of Y = E_i + f(X_i, Y)Δt, Z_i = regression of (Y_{i+1} - E_i)ΔW̃_i/Δt.
/// A z-term in the driver is removed by girsanov_reduce and the regressions
/// become weighted by the one-step density. The problem's α is taken from
/// problem.driver.alpha.
[[nodiscard]] BackwardSolution solve_bsde(const PathEnsemble& ens, const ProblemSpec& problem,
                                          const RegressionBasis& basis, int workers = 1);

/// D_θF = c0(X_t, W_t) + D_θU_t · c1(X_t, W_t) for F = Y_t or Z_t.
struct AffineParts {
    StateFunction c0, c1;
    double se0 = 0.0, se1 = 0.0;
};

/// Malliavin derivatives of Y and Z on the ensemble.
///
/// First order: D_θY_t = A_t + D_θU_t B_t with
///   A_t = Ẽ[e^{∫_t^T f_y} ∂_wξ | F_t],
///   B_t = Ẽ[e^{∫_t^T f_y} ∂_xξ σ(X_T) D_tU_T + ∫_t^T e^{∫_t^s f_y} f_x σ(X_s) D_tU_s ds | F_t],
/// both regressed at every node and stored per path.
///
/// Second order at anchor s (θ ≤ t ≤ s) the linear equation for D²Y gives
///   D²_{θ,t}Y_s = G1 + (a + b) G_lin + ab G_prod + m G_m,
/// a = D_θU_s, b = D_tU_s, m = D²_{θ,t}U_s, where the four G are regressions
/// of path functionals independent of (θ, t). Anchors are fitted on first
/// use and cached. D_θZ_t is the anchor s = t case.
class BackwardTableau {
public:
    BackwardTableau(const ForwardTableau& forward, const BackwardSolution& solution, int workers = 1);

    [[nodiscard]] double malliavin_first_Y(std::size_t path, int theta, int t) const;
    [[nodiscard]] double malliavin_second_Y(std::size_t path, int theta, int t, int s) const;
    [[nodiscard]] double clark_ocone_Z(std::size_t path, int t) const;
    [[nodiscard]] double malliavin_first_Z(std::size_t path, int theta, int t) const;

    /// Standard errors of the regressed quantities at node t.
    [[nodiscard]] double first_Y_se(int t, double du) const;
    [[nodiscard]] double clark_ocone_se(int t) const;
    [[nodiscard]] double first_Z_se(int t, double du) const;

    [[nodiscard]] AffineParts first_Y_parts(int t) const;
    [[nodiscard]] AffineParts first_Z_parts(int t) const;

    [[nodiscard]] const ForwardTableau& forward() const noexcept { return *fwd_; }
    [[nodiscard]] const BackwardSolution& solution() const noexcept { return *sol_; }

private:
    struct Anchor {
        // fitted values per path and fits, in the order 1, lin, prod, m
        std::array<std::vector<double>, 4> values;
        std::array<StateFunction, 4> functions;
        std::array<double, 4> se{};
    };

    [[nodiscard]] const Anchor& anchor(int s) const;
    [[nodiscard]] Anchor build_anchor(int s) const;
    [[nodiscard]] std::vector<double> weights_to_terminal(int s) const;
    void check_order(int theta, int t) const;

    const ForwardTableau* fwd_;
    const BackwardSolution* sol_;
    int workers_;
    std::size_t nodes_;
    std::vector<double> a_, b_;  // fitted A, B per path and node
    std::vector<StateFunction> a_fit_, b_fit_;
    std::vector<double> a_se_, b_se_, ab_se_;
    mutable std::mutex anchor_mutex_;
    mutable std::map<int, std::unique_ptr<Anchor>> anchors_;
};

}  // namespace mbsde
