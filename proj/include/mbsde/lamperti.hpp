#pragma once

#include "mbsde/coeffs.hpp"

#include <vector>

namespace mbsde {

/// Lamperti transform g(x) = ∫_0^x du / σ(u) of dX = b(X)dt + σ(X)dW and the
/// drift functions of the unit-diffusion process U = g(X):
///
///   dU = β(g⁻¹(U)) dt + dW,   β = b/σ - σ'/2.
///
/// Derived drifts are exposed in X-coordinates: beta_prime_sigma(x) is
/// (β∘g⁻¹)'(g(x)) and beta_comp_second(x) is (β∘g⁻¹)''(g(x)).
///
/// Cumulative integrals on a lattice of spacing quadrature_step (anchored at
/// 0) are built eagerly by adaptive Simpson, so the object is immutable and
/// safe to share across threads. A constant σ is handled in closed form.
class LampertiMap {
public:
    LampertiMap(CoefficientFamily sigma, CoefficientFamily b, Box validity,
                double quadrature_step = 1e-2, double root_tolerance = 1e-12);

    [[nodiscard]] double transform(double x) const;
    [[nodiscard]] double inverse_transform(double u) const;

    [[nodiscard]] double beta(double x) const;
    [[nodiscard]] double beta_prime_sigma(double x) const;
    [[nodiscard]] double beta_comp_second(double x) const;

    [[nodiscard]] const CoefficientFamily& sigma() const noexcept { return sigma_; }
    [[nodiscard]] const CoefficientFamily& drift() const noexcept { return b_; }
    [[nodiscard]] const Box& validity_box() const noexcept { return box_; }
    /// g(validity box).
    [[nodiscard]] const Box& image() const noexcept { return image_; }
    [[nodiscard]] double root_tolerance() const noexcept { return root_tol_; }

private:
    [[nodiscard]] double sigma_checked(double x) const;
    [[nodiscard]] double integrate(double a, double b) const;
    [[nodiscard]] double transform_unchecked(double x) const;

    CoefficientFamily sigma_;
    CoefficientFamily b_;
    Box box_;
    Box image_;
    double step_;
    double root_tol_;
    bool constant_sigma_;
    double sigma0_ = 1.0;
    long first_node_ = 0;              // lattice node index of lattice_[0]
    std::vector<double> lattice_;      // g at nodes k * step_
};

}  // namespace mbsde
