#include "mbsde/error.hpp"
#include "mbsde/forward.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace mbsde;

namespace {

ProblemSpec brownian() { return ProblemSpec{}; }

ProblemSpec ou(double lambda) {
    ProblemSpec p;
    p.b = CoefficientFamily::affine(0.0, -lambda);
    return p;
}

std::vector<std::vector<double>> gaussian_increments(std::size_t n_paths, int n_steps, double dt,
                                                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(dt));
    std::vector<std::vector<double>> inc(n_paths, std::vector<double>(static_cast<std::size_t>(n_steps)));
    for (auto& v : inc)
        for (auto& d : v) d = normal(rng);
    return inc;
}

}  // namespace

TEST(TimeGrid, NodesAndSnapping) {
    const TimeGrid g{2.0, 8};
    EXPECT_EQ(g.nodes(), 9);
    EXPECT_DOUBLE_EQ(g.dt(), 0.25);
    EXPECT_DOUBLE_EQ(g.time(8), 2.0);
    EXPECT_EQ(g.index_of(0.6), 2);
    EXPECT_EQ(g.index_of(2.0), 8);
    EXPECT_THROW((void)g.index_of(2.5), ContractViolation);
}

TEST(Forward, BrownianStateEqualsW) {
    const auto p = brownian();
    const LampertiMap map(p.sigma, p.b, Box{-10, 10});
    const auto ens = simulate_forward(p, map, TimeGrid{1.0, 50}, 64, 11);
    ASSERT_EQ(ens.n_paths(), 64u);
    for (std::size_t q = 0; q < ens.n_paths(); ++q)
        for (int i = 0; i <= 50; ++i) {
            EXPECT_DOUBLE_EQ(ens.x(q, i), ens.w(q, i));
            EXPECT_DOUBLE_EQ(ens.u(q, i), ens.w(q, i));
        }
    const ForwardTableau tab(ens, map);
    EXPECT_DOUBLE_EQ(tab.malliavin_first_X(3, 10, 40), 1.0);
    EXPECT_DOUBLE_EQ(tab.malliavin_second_X(3, 10, 20, 40), 0.0);
}

TEST(Forward, BrownianMomentsProperty) {
    const auto p = brownian();
    const LampertiMap map(p.sigma, p.b, Box{-10, 10});
    const auto ens = simulate_forward(p, map, TimeGrid{1.0, 20}, 20000, 5);
    double m = 0.0, v = 0.0;
    for (std::size_t q = 0; q < ens.n_paths(); ++q) {
        m += ens.w(q, 20);
        v += ens.w(q, 20) * ens.w(q, 20);
    }
    m /= 20000.0;
    v /= 20000.0;
    EXPECT_NEAR(m, 0.0, 4.0 / std::sqrt(20000.0));
    EXPECT_NEAR(v, 1.0, 4.0 * std::sqrt(2.0 / 20000.0));
}

TEST(Forward, OrnsteinUhlenbeckFirstDerivativeIsExact) {
    const double lambda = 0.8;
    const auto p = ou(lambda);
    const LampertiMap map(p.sigma, p.b, Box{-10, 10});
    const TimeGrid grid{1.0, 100};
    const auto ens = simulate_forward(p, map, grid, 16, 3);
    const ForwardTableau tab(ens, map);
    for (std::size_t q = 0; q < ens.n_paths(); ++q)
        for (auto [th, t] : {std::pair{0, 100}, {25, 75}, {40, 40}}) {
            EXPECT_NEAR(tab.malliavin_first_X(q, th, t), std::exp(-lambda * (t - th) * grid.dt()), 1e-12);
            EXPECT_NEAR(tab.malliavin_second_X(q, th, t, 100), 0.0, 1e-14);
        }
}

TEST(Forward, FirstDerivativeMatchesPathPerturbation) {
    ProblemSpec p;
    p.b = CoefficientFamily::trig_affine(0, 0, 1);
    p.sigma = CoefficientFamily::trig_affine(2, 1);
    const LampertiMap map(p.sigma, p.b, Box{-8, 8});
    const TimeGrid grid{1.0, 2000};
    auto inc = gaussian_increments(1, grid.n_steps, grid.dt(), 9);
    const auto base = ensemble_from_increments(p, map, grid, inc);
    const ForwardTableau tab(base, map);
    const double eps = 1e-6;
    for (int theta : {0, 500, 1200}) {
        auto bumped = inc;
        bumped[0][static_cast<std::size_t>(theta)] += eps;
        const auto pert = ensemble_from_increments(p, map, grid, bumped);
        for (int t : {theta + 200, 2000}) {
            const double fd = (pert.x(0, t) - base.x(0, t)) / eps;
            EXPECT_NEAR(tab.malliavin_first_X(0, theta, t), fd, 5e-3 * (1.0 + std::abs(fd)))
                << theta << " " << t;
        }
    }
}

TEST(Forward, SecondDerivativeMatchesPathPerturbation) {
    ProblemSpec p;
    p.b = CoefficientFamily::quadratic(0.0, 0.0, 0.5);
    p.horizon = 0.5;
    const LampertiMap map(p.sigma, p.b, Box{-6, 6});
    const TimeGrid grid{0.5, 2000};
    auto inc = gaussian_increments(1, grid.n_steps, grid.dt(), 21);
    const auto x_at = [&](const std::vector<std::vector<double>>& v, int s) {
        return ensemble_from_increments(p, map, grid, v).x(0, s);
    };
    const auto base = ensemble_from_increments(p, map, grid, inc);
    const ForwardTableau tab(base, map);
    const double h = 1e-4;
    const int theta = 400, t = 1000, s = 2000;
    auto bump = [&](double a, double b) {
        auto v = inc;
        v[0][theta] += a;
        v[0][t] += b;
        return v;
    };
    const double fd = (x_at(bump(h, h), s) - x_at(bump(h, -h), s) - x_at(bump(-h, h), s) +
                       x_at(bump(-h, -h), s)) / (4 * h * h);
    const double an = tab.malliavin_second_X(0, theta, t, s);
    EXPECT_NEAR(an, fd, 1e-2 * (1.0 + std::abs(fd)));
    EXPECT_DOUBLE_EQ(an, tab.malliavin_second_X(0, t, theta, s));
}

TEST(Forward, OrderingIsEnforced) {
    const auto p = brownian();
    const LampertiMap map(p.sigma, p.b, Box{-10, 10});
    const auto ens = simulate_forward(p, map, TimeGrid{1.0, 10}, 4, 1);
    const ForwardTableau tab(ens, map);
    EXPECT_THROW((void)tab.malliavin_first_U(0, 5, 3), OrderingError);
    EXPECT_THROW((void)tab.malliavin_second_U(0, 2, 6, 4), OrderingError);
}

TEST(Forward, DeterministicAcrossWorkerCounts) {
    ProblemSpec p;
    p.sigma = CoefficientFamily::trig_affine(2, 1);
    const LampertiMap map(p.sigma, p.b, Box{-10, 10});
    const auto a = simulate_forward(p, map, TimeGrid{1.0, 30}, 3000, 77, 1);
    const auto b = simulate_forward(p, map, TimeGrid{1.0, 30}, 3000, 77, 4);
    EXPECT_TRUE(a == b);
}

TEST(Forward, AntitheticPairsMirrorIncrements) {
    const auto p = brownian();
    const LampertiMap map(p.sigma, p.b, Box{-10, 10});
    const auto ens = simulate_forward(p, map, TimeGrid{1.0, 10}, 6, 2, 1, true);
    for (std::size_t q = 0; q < 6; q += 2)
        for (int i = 0; i <= 10; ++i) EXPECT_DOUBLE_EQ(ens.w(q + 1, i), -ens.w(q, i));
}

TEST(Forward, ExcessiveExitsRaise) {
    const auto p = brownian();
    const LampertiMap map(p.sigma, p.b, Box{-0.5, 0.5});
    EXPECT_THROW((void)simulate_forward(p, map, TimeGrid{1.0, 50}, 200, 1), SolverError);
}

TEST(Forward, DumpRoundTrip) {
    ProblemSpec p;
    p.sigma = CoefficientFamily::trig_affine(2, 1);
    const LampertiMap map(p.sigma, p.b, Box{-10, 10});
    const auto ens = simulate_forward(p, map, TimeGrid{1.0, 12}, 37, 4);
    std::stringstream buf;
    ens.write(buf);
    const auto back = PathEnsemble::read(buf);
    EXPECT_TRUE(back == ens);
    std::stringstream bad("NOTANENS");
    EXPECT_THROW((void)PathEnsemble::read(bad), Error);
}
