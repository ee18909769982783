#include "mbsde/coeffs.hpp"
#include "mbsde/error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace mbsde;

namespace {

std::vector<CoefficientFamily> registry_samples() {
    return {CoefficientFamily::constant(1.7),
            CoefficientFamily::affine(0.3, -1.2),
            CoefficientFamily::trig_affine(2.0, 1.0, 0.5, 1.3),
            CoefficientFamily::trig_affine(0.0, 0.0, 0.1, 1.0, 1.0),
            CoefficientFamily::scaled_sigmoid(0.5, 2.0, 0.8),
            CoefficientFamily::quadratic(1.0, -0.5, 0.25),
            CoefficientFamily::polynomial({0.1, -0.2, 0.3, 0.05, -0.01})};
}

ProblemSpec wt_problem(CoefficientFamily phi) {
    ProblemSpec p;
    p.phi = std::move(phi);
    return p;
}

}  // namespace

TEST(CoefficientFamily, ParsesAndRoundTrips) {
    const auto s = CoefficientFamily::parse("trig-affine(a=2,b=1)");
    EXPECT_EQ(s.id(), FamilyId::trig_affine);
    EXPECT_DOUBLE_EQ(s(0.0), 3.0);
    EXPECT_DOUBLE_EQ(s(std::numbers::pi), 1.0);
    for (const auto& f : registry_samples()) {
        const auto back = CoefficientFamily::parse(f.to_string());
        EXPECT_EQ(back.id(), f.id());
        EXPECT_EQ(back.params(), f.params());
    }
}

TEST(CoefficientFamily, ParseDefaults) {
    const auto sig = CoefficientFamily::parse("scaled-sigmoid(a=1, b=2)");
    EXPECT_DOUBLE_EQ(sig(0.0), 2.0);  // c defaults to 1: 1 + 2 / 2
    const auto tr = CoefficientFamily::parse("trig-affine(c=1)");
    EXPECT_DOUBLE_EQ(tr(std::numbers::pi / 2), 1.0);
}

TEST(CoefficientFamily, ParseRejectsMalformedInput) {
    EXPECT_THROW((void)CoefficientFamily::parse("cubic(a=1)"), ConfigError);
    EXPECT_THROW((void)CoefficientFamily::parse("affine(q=1)"), ConfigError);
    EXPECT_THROW((void)CoefficientFamily::parse("affine(a=x)"), ConfigError);
    EXPECT_THROW((void)CoefficientFamily::parse("affine(a=1"), ConfigError);
}

TEST(CoefficientFamily, DerivativeOrderOutOfRange) {
    const auto f = CoefficientFamily::affine(0, 1);
    EXPECT_THROW((void)f.derivative(4, 0.0), ContractViolation);
    EXPECT_THROW((void)eval_derivative(f, -1, 0.0), ContractViolation);
}

TEST(CoefficientFamily, AnalyticDerivativesMatchFiniteDifferences) {
    const double h = 1e-5;
    for (const auto& f : registry_samples()) {
        for (int order = 1; order <= 3; ++order) {
            for (int i = 0; i < 100; ++i) {
                const double x = -5.0 + 10.0 * i / 99.0;
                const double fd = (f.derivative(order - 1, x + h) - f.derivative(order - 1, x - h)) / (2 * h);
                const double exact = f.derivative(order, x);
                EXPECT_LT(std::abs(fd - exact) / (1.0 + std::abs(exact)), 1e-6)
                    << f.to_string() << " order " << order << " at " << x;
            }
        }
    }
}

TEST(CoefficientFamily, NegatedAndReflected) {
    for (const auto& f : registry_samples()) {
        const auto n = f.negated(), r = f.reflected();
        for (double x : {-2.0, -0.3, 0.0, 1.1}) {
            EXPECT_NEAR(n(x), -f(x), 1e-14);
            EXPECT_NEAR(r(x), f(-x), 1e-14);
        }
    }
}

TEST(Brackets, LieBracketOfSinAndShiftedCos) {
    const auto b = CoefficientFamily::trig_affine(0, 0, 1);
    const auto s = CoefficientFamily::trig_affine(2, 1);
    for (double x : {-1.0, 0.0, 0.7, 2.5}) {
        // [b, σ] = bσ' - σb' = -1 - 2cos x
        EXPECT_NEAR(lie_bracket(b, s, x), -1.0 - 2.0 * std::cos(x), 1e-14);
    }
}

TEST(Brackets, IteratedBracketMatchesFiniteDifference) {
    const auto b = CoefficientFamily::quadratic(0.2, 0.1, 1.0);
    const auto s = CoefficientFamily::scaled_sigmoid(1.0, 1.0, 1.0);
    const double h = 1e-5;
    for (double x : {-1.5, 0.0, 0.9}) {
        const double d = (lie_bracket(s, b, x + h) - lie_bracket(s, b, x - h)) / (2 * h);
        EXPECT_NEAR(iterated_bracket(s, b, x), s(x) * d - lie_bracket(s, b, x) * s.derivative(1, x), 1e-8);
    }
}

TEST(Terminal, KindParsing) {
    EXPECT_EQ(parse_terminal_kind("phi-of-WT"), TerminalKind::phi_of_WT);
    EXPECT_EQ(parse_terminal_kind("phi-of-XT"), TerminalKind::phi_of_XT);
    EXPECT_EQ(to_string(TerminalKind::phi_of_XT), "phi-of-XT");
    EXPECT_THROW((void)parse_terminal_kind("phi-of-YT"), ConfigError);
}

TEST(Hypotheses, H3BoundForSinDriftShiftedCosVolatility) {
    ProblemSpec p;
    p.b = CoefficientFamily::trig_affine(0, 0, 1);
    p.sigma = CoefficientFamily::trig_affine(2, 1);
    const auto rep = check_hypotheses(p, Box{-4, 4}, 1000);
    const auto& h3 = rep.at("H3");
    EXPECT_EQ(h3.status, HypothesisStatus::pass);
    EXPECT_LE(h3.constants.at("M"), 3.0 + 1e-9);
    // |1 + 2cos x| / (2 + cos x) peaks at 1 (x = 0 and x = π).
    EXPECT_NEAR(h3.constants.at("M"), 1.0, 1e-4);
    EXPECT_TRUE(rep.sigma_positive());
}

TEST(Hypotheses, H7FailsForNonConvexTerminalWithWitness) {
    // φ(w) = w + 0.1 sin w, φ'' = -0.1 sin w
    const auto p = wt_problem(CoefficientFamily::parse("trig-affine(c=0.1, s=1)"));
    const auto rep = check_hypotheses(p, Box{-3, 3}, 1000);
    const auto& h7 = rep.at("H7");
    ASSERT_EQ(h7.status, HypothesisStatus::fail);
    ASSERT_EQ(h7.witness.size(), 1u);
    EXPECT_NEAR(h7.witness[0], std::numbers::pi / 2, 6.0 / 999.0);
    EXPECT_LT(p.phi.derivative(2, h7.witness[0]), 0.0);
    EXPECT_DOUBLE_EQ(h7.violation_value, p.phi.derivative(2, h7.witness[0]));
    EXPECT_EQ(rep.at("H1").status, HypothesisStatus::pass);
}

TEST(Hypotheses, GlobalDomainIsRefused) {
    ProblemSpec p;
    const double inf = std::numeric_limits<double>::infinity();
    try {
        (void)check_hypotheses(p, Box{-inf, inf}, 1000);
        FAIL() << "expected a refusal";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("global"), std::string::npos);
    }
}

TEST(Hypotheses, SigmaChangingSignFailsH3) {
    ProblemSpec p;
    p.sigma = CoefficientFamily::affine(0, 1);
    const auto rep = check_hypotheses(p, Box{-4, 4}, 101);
    EXPECT_EQ(rep.at("H3").status, HypothesisStatus::fail);
    EXPECT_FALSE(rep.sigma_positive());
    EXPECT_FALSE(rep.sign_normalized);
}

TEST(Hypotheses, NegativeSigmaIsSignNormalized) {
    ProblemSpec p;
    p.sigma = CoefficientFamily::constant(-1.0);
    p.phi = CoefficientFamily::affine(0, 1);
    const auto rep = check_hypotheses(p, Box{-4, 4}, 101);
    EXPECT_TRUE(rep.sign_normalized);
    EXPECT_TRUE(rep.sigma_positive());
    const auto n = sign_normalized(p);
    EXPECT_DOUBLE_EQ(n.sigma(0.0), 1.0);
    // ξ = φ(W_T) is unchanged under W -> -W with φ reflected.
    EXPECT_DOUBLE_EQ(n.phi(-0.7), p.phi(0.7));
}

TEST(Hypotheses, BrownianOracleSatisfiesFirstOrderHypotheses) {
    const auto rep = check_hypotheses(ProblemSpec{}, Box{-4, 4}, 200);
    for (const char* id : {"H1", "H2", "H3"}) EXPECT_EQ(rep.at(id).status, HypothesisStatus::pass) << id;
    EXPECT_DOUBLE_EQ(rep.at("H1").constants.at("c"), 1.0);
}

TEST(Hypotheses, TooFewGridPoints) {
    EXPECT_THROW((void)check_hypotheses(ProblemSpec{}, Box{-1, 1}, 1), ContractViolation);
}
