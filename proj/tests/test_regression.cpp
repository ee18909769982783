#include "mbsde/error.hpp"
#include "mbsde/regression.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mbsde;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, sd);
    std::vector<double> v(n);
    for (auto& a : v) a = d(rng);
    return v;
}

}  // namespace

TEST(Regression, BasisKindNames) {
    EXPECT_EQ(to_string(BasisKind::polynomial_in_XW), "polynomial-in-XW");
    EXPECT_EQ(parse_basis_kind("polynomial-in-(X,W)"), BasisKind::polynomial_in_XW);
    EXPECT_EQ(parse_basis_kind("polynomial-in-X"), BasisKind::polynomial_in_X);
    EXPECT_THROW((void)parse_basis_kind("splines"), ConfigError);
}

TEST(Regression, RecoversPolynomialExactly) {
    const auto x = normals(5000, 1);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 - 2.0 * x[i] + 0.5 * x[i] * x[i] * x[i];
    RegressionBasis basis;
    basis.ridge = 0.0;
    const Regressor reg(basis, x, x, {}, 1, "t0");
    const auto r = reg.fit(y);
    for (std::size_t i = 0; i < x.size(); i += 97) EXPECT_NEAR(r.fitted[i], y[i], 1e-9);
    EXPECT_NEAR(r.function(0.3, 0.0), 1.0 - 0.6 + 0.5 * 0.027, 1e-9);
    EXPECT_LT(r.se, 1e-9);
}

TEST(Regression, TwoDimensionalBasis) {
    const auto x = normals(8000, 2), w = normals(8000, 3);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * w[i] + w[i] * w[i];
    RegressionBasis basis{BasisKind::polynomial_in_XW, 2, 0.0};
    const Regressor reg(basis, x, w, {}, 2, "t0");
    EXPECT_EQ(reg.n_terms(), 6);
    const auto r = reg.fit(y);
    EXPECT_NEAR(r.function(0.5, -1.5), -0.75 + 2.25, 1e-9);
}

TEST(Regression, ConditionalMeanOfNoisyTargetProperty) {
    const std::size_t n = 40000;
    const auto x = normals(n, 4), eps = normals(n, 5, 0.5);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = std::sin(x[i]) + eps[i];
    const Regressor reg(RegressionBasis{BasisKind::polynomial_in_X, 5, {}}, x, x, {}, 1, "t");
    const auto r = reg.fit(y);
    // se ≈ noise sd · sqrt(p / n)
    EXPECT_NEAR(r.se, 0.5 * std::sqrt(6.0 / n), 0.2 * 0.5 * std::sqrt(6.0 / n));
    for (double t : {-1.0, 0.0, 0.8}) EXPECT_NEAR(r.function(t, 0.0), std::sin(t), 0.02) << t;
}

TEST(Regression, WeightsActAsRepeatedSamples) {
    const std::vector<double> x{-1.0, 0.0, 1.0, 2.0};
    const std::vector<double> y{1.0, 0.0, 3.0, 2.0};
    const std::vector<double> wt{2.0, 1.0, 1.0, 3.0};
    const std::vector<double> xr{-1, -1, 0, 1, 2, 2, 2}, yr{1, 1, 0, 3, 2, 2, 2};
    RegressionBasis basis{BasisKind::polynomial_in_X, 1, 0.0};
    const auto a = Regressor(basis, x, x, wt, 1, "w").fit(y);
    const auto b = Regressor(basis, xr, xr, {}, 1, "r").fit(yr);
    for (double t : {-2.0, 0.5, 3.0}) EXPECT_NEAR(a.function(t, 0), b.function(t, 0), 1e-12);
}

TEST(Regression, ZeroSpreadRegressorIsDropped) {
    const std::vector<double> x(100, 0.25), y(100, 4.0);
    const auto r = Regressor(RegressionBasis{}, x, x, {}, 1, "t0").fit(y);
    EXPECT_DOUBLE_EQ(r.function(0.25, 0.0), 4.0);
    EXPECT_EQ(r.function.coefficients().size(), 1);
}

TEST(Regression, CollinearWIsDropped) {
    const auto x = normals(1000, 6);
    std::vector<double> w(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) w[i] = 2.0 * x[i] + 1.0;
    const Regressor reg(RegressionBasis{BasisKind::polynomial_in_XW, 3, {}}, x, w, {}, 1, "t");
    EXPECT_EQ(reg.n_terms(), 4);
}

TEST(Regression, RankDeficiencyIsReported) {
    std::vector<double> x(50);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = i % 2 ? 1.0 : -1.0;
    RegressionBasis basis{BasisKind::polynomial_in_X, 3, 0.0};
    try {
        (void)Regressor(basis, x, x, {}, 1, "step 17");
        FAIL();
    } catch (const SolverError& e) {
        EXPECT_NE(std::string(e.what()).find("step 17"), std::string::npos);
    }
    basis.ridge = 1e-3;
    EXPECT_NO_THROW((void)Regressor(basis, x, x, {}, 1, "step 17"));
}

TEST(Regression, WorkerCountDoesNotChangeFit) {
    const auto x = normals(30000, 8), y = normals(30000, 9);
    const RegressionBasis basis{BasisKind::polynomial_in_X, 4, {}};
    const auto a = Regressor(basis, x, x, {}, 1, "t").fit(y);
    const auto b = Regressor(basis, x, x, {}, 3, "t").fit(y);
    EXPECT_EQ(a.fitted, b.fitted);
    EXPECT_EQ(a.se, b.se);
}

TEST(Regression, ContractChecks) {
    const std::vector<double> x{1, 2, 3}, w{1, 2};
    EXPECT_THROW((void)Regressor(RegressionBasis{}, x, w, {}, 1, "t"), ContractViolation);
    EXPECT_THROW((void)Regressor(RegressionBasis{}, {}, {}, {}, 1, "t"), ContractViolation);
    const std::vector<double> neg{1, -1, 1};
    EXPECT_THROW((void)Regressor(RegressionBasis{}, x, x, neg, 1, "t"), ContractViolation);
}
