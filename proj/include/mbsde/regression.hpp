#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mbsde {

enum class BasisKind { polynomial_in_X, polynomial_in_XW };

[[nodiscard]] std::string_view to_string(BasisKind kind);
[[nodiscard]] BasisKind parse_basis_kind(std::string_view text);

/// Polynomial basis for cross-sectional conditional expectations. Regressors
/// are standardized per time step; the intercept is never penalized.
struct RegressionBasis {
    BasisKind kind = BasisKind::polynomial_in_X;
    int degree = 3;
    /// Ridge weight on the normal equations; unset means 1e-8 * n_paths.
    std::optional<double> ridge;

    [[nodiscard]] double ridge_for(std::size_t n_paths) const {
        return ridge ? *ridge : 1e-8 * static_cast<double>(n_paths);
    }
};

/// A regression fit as a function of the state (x, w). Regressors with zero
/// cross-sectional variance are dropped, leaving those terms out.
class FittedFunction {
public:
    FittedFunction() = default;

    [[nodiscard]] double operator()(double x, double w) const;
    [[nodiscard]] const Eigen::VectorXd& coefficients() const noexcept { return coef_; }

    /// A fit that returns c everywhere.
    [[nodiscard]] static FittedFunction constant(double c);

private:
    friend class Regressor;

    BasisKind kind_ = BasisKind::polynomial_in_X;
    int degree_ = 0;
    bool use_x_ = false, use_w_ = false;
    double mx_ = 0.0, sx_ = 1.0, mw_ = 0.0, sw_ = 1.0;
    Eigen::VectorXd coef_ = Eigen::VectorXd::Zero(1);
};

struct FitResult {
    FittedFunction function;
    std::vector<double> fitted;  // fitted value per sample
    double se = 0.0;             // standard error of a fitted value
};

/// Least-squares projection onto the basis evaluated at one time step. The
/// Gram matrix is factored once and reused for every target.
class Regressor {
public:
    /// label names the time step in error messages. Non-empty weights give a
    /// weighted least-squares fit (projection under the reweighted measure).
    Regressor(const RegressionBasis& basis, std::span<const double> x, std::span<const double> w,
              std::span<const double> weights, int workers, std::string label);

    [[nodiscard]] FitResult fit(std::span<const double> target) const;
    [[nodiscard]] std::size_t n_samples() const noexcept { return n_; }
    [[nodiscard]] int n_terms() const noexcept { return static_cast<int>(design_.cols()); }
    [[nodiscard]] double ridge() const noexcept { return ridge_; }

private:
    std::size_t n_;
    int workers_;
    std::string label_;
    double ridge_;
    FittedFunction proto_;
    Eigen::MatrixXd design_;  // n x p
    std::vector<double> weights_;
    double weight_mean_ = 1.0;
    Eigen::LDLT<Eigen::MatrixXd> gram_;
};

}  // namespace mbsde
