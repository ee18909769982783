#pragma once

#include <array>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mbsde {

enum class FamilyId { constant, affine, trig_affine, scaled_sigmoid, quadratic, polynomial };

/// Closed registry of analytic scalar functions with exact derivatives up to
/// order 3. Serialized as `family-id(param=value, ...)`:
///
///   constant(c)               c
///   affine(a, b)              a + b x
///   trig-affine(a,b,c,w,s)    a + s x + b cos(w x) + c sin(w x)   (w defaults to 1)
///   scaled-sigmoid(a, b, c)   a + b / (1 + exp(-c x))
///   quadratic(a, b, c)        a + b x + c x^2
///   polynomial(c0, ..., c4)   c0 + c1 x + ... + c4 x^4
///
/// Omitted parameters default to 0 (w to 1).
class CoefficientFamily {
public:
    static constexpr int max_derivative_order = 3;

    CoefficientFamily() : CoefficientFamily(FamilyId::constant, {0.0}) {}

    static CoefficientFamily constant(double c);
    static CoefficientFamily affine(double a, double b);
    static CoefficientFamily trig_affine(double a, double b, double c = 0.0, double w = 1.0,
                                         double s = 0.0);
    static CoefficientFamily scaled_sigmoid(double a, double b, double c);
    static CoefficientFamily quadratic(double a, double b, double c);
    static CoefficientFamily polynomial(const std::array<double, 5>& coefficients);

    /// Parses the `family-id(param=value, ...)` form. Throws ConfigError.
    static CoefficientFamily parse(std::string_view text);
    [[nodiscard]] std::string to_string() const;

    [[nodiscard]] FamilyId id() const noexcept { return id_; }
    [[nodiscard]] const std::vector<double>& params() const noexcept { return params_; }

    [[nodiscard]] double derivative(int order, double x) const;
    [[nodiscard]] double operator()(double x) const { return derivative(0, x); }

    /// The family for -h (used by sign normalization).
    [[nodiscard]] CoefficientFamily negated() const;
    /// The family for x -> h(-x).
    [[nodiscard]] CoefficientFamily reflected() const;

    /// True when every derivative of order >= 1 vanishes identically.
    [[nodiscard]] bool is_constant() const noexcept;

private:
    CoefficientFamily(FamilyId id, std::vector<double> params)
        : id_(id), params_(std::move(params)) {}

    FamilyId id_;
    std::vector<double> params_;
};

/// Exact analytic derivative of the given order (0..3). Order out of range
/// raises ContractViolation.
[[nodiscard]] double eval_derivative(const CoefficientFamily& fam, int order, double x);

/// [h, g](x) = h g' - g h'.
[[nodiscard]] double lie_bracket(const CoefficientFamily& h, const CoefficientFamily& g, double x);

/// [σ, [σ, b]](x) = σ [σ,b]' - [σ,b] σ', with [σ,b]' = σ b'' - b σ''.
[[nodiscard]] double iterated_bracket(const CoefficientFamily& sigma, const CoefficientFamily& b,
                                      double x);

/// Driver of the backward equation, f*(x, y, z) = p(x) + q(y) + k x y + α z.
/// Second-order partials are exact; f_xy = k.
struct Driver {
    CoefficientFamily x_part = CoefficientFamily::constant(0.0);
    CoefficientFamily y_part = CoefficientFamily::constant(0.0);
    double xy_coupling = 0.0;
    double alpha = 0.0;

    [[nodiscard]] double f(double x, double y) const { return x_part(x) + y_part(y) + xy_coupling * x * y; }
    [[nodiscard]] double f_x(double x, double y) const { return x_part.derivative(1, x) + xy_coupling * y; }
    [[nodiscard]] double f_y(double x, double y) const { return y_part.derivative(1, y) + xy_coupling * x; }
    [[nodiscard]] double f_xx(double x, double) const { return x_part.derivative(2, x); }
    [[nodiscard]] double f_xy(double, double) const { return xy_coupling; }
    [[nodiscard]] double f_yy(double, double y) const { return y_part.derivative(2, y); }

    /// True for drivers of the form f(y) (no x and no z dependence).
    [[nodiscard]] bool is_y_only() const noexcept {
        return x_part.is_constant() && xy_coupling == 0.0 && alpha == 0.0;
    }
};

enum class TerminalKind { phi_of_WT, phi_of_XT };

[[nodiscard]] std::string_view to_string(TerminalKind kind);
[[nodiscard]] TerminalKind parse_terminal_kind(std::string_view text);

/// Forward-backward system: dX = b(X)dt + σ(X)dW, X_0 = x0;
/// Y_t = φ(W_T or X_T) + ∫_t^T f*(X, Y, Z) ds - ∫_t^T Z dW.
struct ProblemSpec {
    double x0 = 0.0;
    double horizon = 1.0;
    CoefficientFamily b = CoefficientFamily::constant(0.0);
    CoefficientFamily sigma = CoefficientFamily::constant(1.0);
    Driver driver;
    TerminalKind terminal = TerminalKind::phi_of_WT;
    CoefficientFamily phi = CoefficientFamily::affine(0.0, 1.0);

    /// Validates horizon > 0 and finite x0; throws ContractViolation.
    void validate() const;

    [[nodiscard]] double terminal_argument(double w_T, double x_T) const {
        return terminal == TerminalKind::phi_of_WT ? w_T : x_T;
    }
};

/// Closed interval; the hypothesis checker and Lamperti map only accept
/// bounded ones.
struct Box {
    double lo = -4.0;
    double hi = 4.0;

    [[nodiscard]] bool bounded() const noexcept {
        return lo > -std::numeric_limits<double>::infinity() &&
               hi < std::numeric_limits<double>::infinity() && lo < hi;
    }
    [[nodiscard]] bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

enum class HypothesisStatus { pass, fail, not_applicable };

[[nodiscard]] std::string_view to_string(HypothesisStatus status);

struct HypothesisEntry {
    std::string id;                   // "H1" .. "H8"
    HypothesisStatus status = HypothesisStatus::not_applicable;
    std::string inequality;           // the violated (or checked) inequality
    std::vector<double> witness;      // (x) or (x, y); empty unless failed
    double violation_value = 0.0;     // value of the checked quantity at the witness
    std::map<std::string, double> constants;
    std::string note;
};

struct HypothesisReport {
    Box box;
    int n_grid = 0;
    bool sign_normalized = false;
    std::vector<HypothesisEntry> entries;

    [[nodiscard]] const HypothesisEntry& at(std::string_view id) const;
    /// No applicable hypothesis failed.
    [[nodiscard]] bool all_pass() const;
    /// σ > 0 on the box (after sign normalization), i.e. the Lamperti
    /// machinery can run.
    [[nodiscard]] bool sigma_positive() const;
    [[nodiscard]] std::string to_text() const;
};

/// Evaluates H1..H8 on an n_grid-point grid over the box (box x box for the
/// driver partials). When σ < 0 on the whole box the system is first mapped
/// to (-σ, -W, -Z) and the report is flagged as sign-normalized. Unbounded
/// boxes are refused with DomainError.
[[nodiscard]] HypothesisReport check_hypotheses(const ProblemSpec& problem, const Box& box,
                                                int n_grid);

/// The problem under (σ, W, Z) -> (-σ, -W, -Z): σ is negated and, for a
/// terminal φ(W_T), φ is reflected so that ξ is unchanged.
[[nodiscard]] ProblemSpec sign_normalized(const ProblemSpec& problem);

}  // namespace mbsde
