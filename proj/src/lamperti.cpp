#include "mbsde/lamperti.hpp"

#include "mbsde/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

namespace mbsde {

namespace {

constexpr double kSimpsonTolerance = 1e-14;
constexpr int kSimpsonMaxDepth = 40;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class F>
double simpson_step(const F& f, double a, double b, double fa, double fm, double fb, double whole,
                    double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol) {
    if (a == b) return 0.0;
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return simpson_step(f, a, b, fa, fm, fb, whole, tol, kSimpsonMaxDepth);
}

}  // namespace

LampertiMap::LampertiMap(CoefficientFamily sigma, CoefficientFamily b, Box validity,
                         double quadrature_step, double root_tolerance)
    : sigma_(std::move(sigma)),
      b_(std::move(b)),
      box_(validity),
      step_(quadrature_step),
      root_tol_(root_tolerance),
      constant_sigma_(sigma_.is_constant()) {
    if (!box_.bounded()) throw DomainError("lamperti", "validity box must be bounded");
    if (!(step_ > 0.0) || !(root_tol_ > 0.0))
        throw ContractViolation("lamperti", "quadrature step and root tolerance must be positive");

    // σ must be positive on the hull of the box and 0 (g integrates from 0).
    const double lo = std::min(box_.lo, 0.0), hi = std::max(box_.hi, 0.0);
    first_node_ = static_cast<long>(std::floor(lo / step_));
    const long last_node = static_cast<long>(std::ceil(hi / step_));
    for (long k = first_node_; k <= last_node; ++k) {
        (void)sigma_checked(static_cast<double>(k) * step_);
        (void)sigma_checked((static_cast<double>(k) + 0.5) * step_);
    }
    (void)sigma_checked(box_.lo);
    (void)sigma_checked(box_.hi);

    if (constant_sigma_) {
        sigma0_ = sigma_(0.0);
    } else {
        lattice_.assign(static_cast<std::size_t>(last_node - first_node_ + 1), 0.0);
        const auto zero = static_cast<std::size_t>(-first_node_);
        for (std::size_t i = zero + 1; i < lattice_.size(); ++i) {
            const double a = (static_cast<double>(i) - 1.0 + first_node_) * step_;
            lattice_[i] = lattice_[i - 1] + integrate(a, a + step_);
        }
        for (std::size_t i = zero; i-- > 0;) {
            const double a = (static_cast<double>(i) + first_node_) * step_;
            lattice_[i] = lattice_[i + 1] - integrate(a, a + step_);
        }
    }
    image_ = {transform_unchecked(box_.lo), transform_unchecked(box_.hi)};
}

double LampertiMap::sigma_checked(double x) const {
    const double s = sigma_(x);
    if (!(s > 0.0))
        throw DomainError("lamperti", "sigma(" + fmt(x) + ") = " + fmt(s) +
                                          " is not positive; the Lamperti transform needs sigma > 0");
    return s;
}

double LampertiMap::integrate(double a, double b) const {
    return adaptive_simpson([this](double u) { return 1.0 / sigma_checked(u); }, a, b,
                            kSimpsonTolerance);
}

double LampertiMap::transform_unchecked(double x) const {
    if (constant_sigma_) return x / sigma0_;
    auto k = static_cast<long>(std::floor(x / step_));
    k = std::clamp(k, first_node_, first_node_ + static_cast<long>(lattice_.size()) - 1);
    return lattice_[static_cast<std::size_t>(k - first_node_)] +
           integrate(static_cast<double>(k) * step_, x);
}

double LampertiMap::transform(double x) const {
    if (!box_.contains(x))
        throw DomainError("lamperti", "x = " + fmt(x) + " outside the validity box [" +
                                          fmt(box_.lo) + ", " + fmt(box_.hi) + "]");
    return transform_unchecked(x);
}

double LampertiMap::inverse_transform(double u) const {
    if (!(u >= image_.lo - root_tol_ && u <= image_.hi + root_tol_))
        throw DomainError("lamperti", "u = " + fmt(u) + " outside g(validity box) = [" +
                                          fmt(image_.lo) + ", " + fmt(image_.hi) + "]");
    if (constant_sigma_) return std::clamp(u * sigma0_, box_.lo, box_.hi);

    // Bracket by the lattice, then Newton steps (g⁻¹)' = σ∘g⁻¹ guarded by bisection.
    double lo = box_.lo, hi = box_.hi;
    const auto it = std::upper_bound(lattice_.begin(), lattice_.end(), u);
    if (it != lattice_.begin() && it != lattice_.end()) {
        const auto i = static_cast<long>(it - lattice_.begin()) - 1;
        lo = std::max(lo, static_cast<double>(i + first_node_) * step_);
        hi = std::min(hi, static_cast<double>(i + 1 + first_node_) * step_);
    }
    double g_lo = transform_unchecked(lo), g_hi = transform_unchecked(hi);
    double x = g_hi > g_lo ? lo + (u - g_lo) / (g_hi - g_lo) * (hi - lo) : 0.5 * (lo + hi);
    for (int iter = 0; iter < 200; ++iter) {
        const double r = transform_unchecked(x) - u;
        if (std::abs(r) < 0.5 * root_tol_) return x;
        if (r > 0) hi = x; else lo = x;
        double next = x - r * sigma_checked(x);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == x || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x)))
            return next;
        x = next;
    }
    return x;
}

double LampertiMap::beta(double x) const {
    const double s = sigma_checked(x);
    return b_(x) / s - 0.5 * sigma_.derivative(1, x);
}

double LampertiMap::beta_prime_sigma(double x) const {
    const double s = sigma_checked(x);
    return lie_bracket(sigma_, b_, x) / s - 0.5 * s * sigma_.derivative(2, x);
}

double LampertiMap::beta_comp_second(double x) const {
    const double s = sigma_checked(x);
    const double s1 = sigma_.derivative(1, x), s2 = sigma_.derivative(2, x),
                 s3 = sigma_.derivative(3, x);
    const double d_s2s = s3 * s + s2 * s1;  // (σ''σ)'
    return iterated_bracket(sigma_, b_, x) / s - 0.5 * d_s2s * s;
}

}  // namespace mbsde
