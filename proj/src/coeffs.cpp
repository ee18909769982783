#include "mbsde/coeffs.hpp"

#include "mbsde/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

namespace mbsde {

namespace {

struct FamilyInfo {
    FamilyId id;
    std::string_view name;
    std::vector<std::string_view> param_names;
    std::vector<double> defaults;
};

const std::vector<FamilyInfo>& registry() {
    static const std::vector<FamilyInfo> info = {
        {FamilyId::constant, "constant", {"c"}, {0.0}},
        {FamilyId::affine, "affine", {"a", "b"}, {0.0, 0.0}},
        {FamilyId::trig_affine, "trig-affine", {"a", "b", "c", "w", "s"}, {0.0, 0.0, 0.0, 1.0, 0.0}},
        {FamilyId::scaled_sigmoid, "scaled-sigmoid", {"a", "b", "c"}, {0.0, 0.0, 1.0}},
        {FamilyId::quadratic, "quadratic", {"a", "b", "c"}, {0.0, 0.0, 0.0}},
        {FamilyId::polynomial, "polynomial", {"c0", "c1", "c2", "c3", "c4"}, {0, 0, 0, 0, 0}},
    };
    return info;
}

const FamilyInfo& info_for(FamilyId id) {
    for (const auto& i : registry())
        if (i.id == id) return i;
    throw ContractViolation("coeffs", "unknown family id");
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Logistic s(z) evaluated without overflow.
double logistic(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

CoefficientFamily CoefficientFamily::constant(double c) { return {FamilyId::constant, {c}}; }
CoefficientFamily CoefficientFamily::affine(double a, double b) { return {FamilyId::affine, {a, b}}; }
CoefficientFamily CoefficientFamily::trig_affine(double a, double b, double c, double w, double s) {
    return {FamilyId::trig_affine, {a, b, c, w, s}};
}
CoefficientFamily CoefficientFamily::scaled_sigmoid(double a, double b, double c) {
    return {FamilyId::scaled_sigmoid, {a, b, c}};
}
CoefficientFamily CoefficientFamily::quadratic(double a, double b, double c) {
    return {FamilyId::quadratic, {a, b, c}};
}
CoefficientFamily CoefficientFamily::polynomial(const std::array<double, 5>& c) {
    return {FamilyId::polynomial, {c.begin(), c.end()}};
}

CoefficientFamily CoefficientFamily::parse(std::string_view text) {
    const std::string s = trim(text);
    const auto open = s.find('(');
    const std::string name = trim(std::string_view(s).substr(0, open));
    const FamilyInfo* info = nullptr;
    for (const auto& i : registry())
        if (i.name == name) info = &i;
    if (info == nullptr) throw ConfigError("unknown coefficient family '" + name + "'");

    std::vector<double> params = info->defaults;
    if (open != std::string::npos) {
        const auto close = s.rfind(')');
        if (close == std::string::npos || close < open || trim(s.substr(close + 1)) != "")
            throw ConfigError("malformed family expression '" + s + "'");
        std::stringstream args(s.substr(open + 1, close - open - 1));
        std::string item;
        while (std::getline(args, item, ',')) {
            if (trim(item).empty()) continue;
            const auto eq = item.find('=');
            if (eq == std::string::npos)
                throw ConfigError("expected param=value in '" + s + "'");
            const std::string key = trim(item.substr(0, eq));
            const std::string value = trim(item.substr(eq + 1));
            const auto it = std::find(info->param_names.begin(), info->param_names.end(), key);
            if (it == info->param_names.end())
                throw ConfigError("family " + name + " has no parameter '" + key + "'");
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(value, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != value.size() || !std::isfinite(v))
                throw ConfigError("bad value '" + value + "' for " + name + "." + key);
            params[static_cast<std::size_t>(it - info->param_names.begin())] = v;
        }
    }
    return {info->id, std::move(params)};
}

std::string CoefficientFamily::to_string() const {
    const auto& info = info_for(id_);
    std::string out(info.name);
    out += '(';
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (i) out += ", ";
        out += std::string(info.param_names[i]) + "=" + format_double(params_[i]);
    }
    out += ')';
    return out;
}

double CoefficientFamily::derivative(int order, double x) const {
    if (order < 0 || order > max_derivative_order)
        throw ContractViolation("coeffs", "derivative order " + std::to_string(order) +
                                              " outside 0.." + std::to_string(max_derivative_order));
    const auto& p = params_;
    switch (id_) {
        case FamilyId::constant:
            return order == 0 ? p[0] : 0.0;
        case FamilyId::affine:
            return order == 0 ? p[0] + p[1] * x : order == 1 ? p[1] : 0.0;
        case FamilyId::quadratic:
            switch (order) {
                case 0: return p[0] + x * (p[1] + x * p[2]);
                case 1: return p[1] + 2.0 * p[2] * x;
                case 2: return 2.0 * p[2];
                default: return 0.0;
            }
        case FamilyId::polynomial: {
            // Horner on the order-th derivative coefficients.
            double acc = 0.0;
            for (int k = 4; k >= order; --k) {
                double falling = 1.0;
                for (int j = 0; j < order; ++j) falling *= k - j;
                acc = acc * x + p[static_cast<std::size_t>(k)] * falling;
            }
            return acc;
        }
        case FamilyId::trig_affine: {
            const double w = p[3];
            const double c = std::cos(w * x), s = std::sin(w * x);
            const double wk = std::pow(w, order);
            switch (order) {
                case 0: return p[0] + p[4] * x + p[1] * c + p[2] * s;
                case 1: return p[4] + wk * (-p[1] * s + p[2] * c);
                case 2: return wk * (-p[1] * c - p[2] * s);
                default: return wk * (p[1] * s - p[2] * c);
            }
        }
        case FamilyId::scaled_sigmoid: {
            const double c = p[2];
            const double s = logistic(c * x);
            const double q = s * (1.0 - s);
            switch (order) {
                case 0: return p[0] + p[1] * s;
                case 1: return p[1] * c * q;
                case 2: return p[1] * c * c * q * (1.0 - 2.0 * s);
                default: return p[1] * c * c * c * q * (1.0 - 6.0 * s + 6.0 * s * s);
            }
        }
    }
    return 0.0;
}

CoefficientFamily CoefficientFamily::negated() const {
    auto p = params_;
    switch (id_) {
        case FamilyId::trig_affine:
            for (int i : {0, 1, 2, 4}) p[static_cast<std::size_t>(i)] = -p[static_cast<std::size_t>(i)];
            break;
        case FamilyId::scaled_sigmoid:
            p[0] = -p[0];
            p[1] = -p[1];
            break;
        default:
            for (auto& v : p) v = -v;
    }
    return {id_, std::move(p)};
}

CoefficientFamily CoefficientFamily::reflected() const {
    auto p = params_;
    switch (id_) {
        case FamilyId::constant:
            break;
        case FamilyId::affine:
        case FamilyId::quadratic:
            p[1] = -p[1];
            break;
        case FamilyId::polynomial:
            p[1] = -p[1];
            p[3] = -p[3];
            break;
        case FamilyId::trig_affine:
            p[2] = -p[2];
            p[4] = -p[4];
            break;
        case FamilyId::scaled_sigmoid:
            p[2] = -p[2];
            break;
    }
    return {id_, std::move(p)};
}

bool CoefficientFamily::is_constant() const noexcept {
    const auto& p = params_;
    switch (id_) {
        case FamilyId::constant: return true;
        case FamilyId::affine: return p[1] == 0.0;
        case FamilyId::quadratic: return p[1] == 0.0 && p[2] == 0.0;
        case FamilyId::polynomial: return p[1] == 0.0 && p[2] == 0.0 && p[3] == 0.0 && p[4] == 0.0;
        case FamilyId::trig_affine: return p[4] == 0.0 && ((p[1] == 0.0 && p[2] == 0.0) || p[3] == 0.0);
        case FamilyId::scaled_sigmoid: return p[1] == 0.0 || p[2] == 0.0;
    }
    return false;
}

double eval_derivative(const CoefficientFamily& fam, int order, double x) {
    return fam.derivative(order, x);
}

double lie_bracket(const CoefficientFamily& h, const CoefficientFamily& g, double x) {
    return h(x) * g.derivative(1, x) - g(x) * h.derivative(1, x);
}

double iterated_bracket(const CoefficientFamily& sigma, const CoefficientFamily& b, double x) {
    const double s = sigma(x), s1 = sigma.derivative(1, x), s2 = sigma.derivative(2, x);
    const double bb = b(x), b1 = b.derivative(1, x), b2 = b.derivative(2, x);
    const double bracket = s * b1 - bb * s1;
    const double bracket_prime = s * b2 - bb * s2;
    return s * bracket_prime - bracket * s1;
}

std::string_view to_string(TerminalKind kind) {
    return kind == TerminalKind::phi_of_WT ? "phi-of-WT" : "phi-of-XT";
}

TerminalKind parse_terminal_kind(std::string_view text) {
    const std::string s = trim(text);
    if (s == "phi-of-WT") return TerminalKind::phi_of_WT;
    if (s == "phi-of-XT") return TerminalKind::phi_of_XT;
    throw ConfigError("unknown terminal kind '" + s + "' (expected phi-of-WT or phi-of-XT)");
}

void ProblemSpec::validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw ContractViolation("coeffs", "horizon T must be positive");
    if (!std::isfinite(x0)) throw ContractViolation("coeffs", "x0 must be finite");
    if (!std::isfinite(driver.alpha) || !std::isfinite(driver.xy_coupling))
        throw ContractViolation("coeffs", "driver constants must be finite");
}

ProblemSpec sign_normalized(const ProblemSpec& problem) {
    ProblemSpec out = problem;
    out.sigma = problem.sigma.negated();
    if (problem.terminal == TerminalKind::phi_of_WT) out.phi = problem.phi.reflected();
    // f*(x, y, z) = f + αz with z -> -z: the sign of α flips.
    out.driver.alpha = -problem.driver.alpha;
    return out;
}

// ---------------------------------------------------------------------------
// Hypothesis checker
// ---------------------------------------------------------------------------

std::string_view to_string(HypothesisStatus status) {
    switch (status) {
        case HypothesisStatus::pass: return "pass";
        case HypothesisStatus::fail: return "fail";
        case HypothesisStatus::not_applicable: return "not-applicable";
    }
    return "?";
}

const HypothesisEntry& HypothesisReport::at(std::string_view id) const {
    for (const auto& e : entries)
        if (e.id == id) return e;
    throw ContractViolation("coeffs", "no hypothesis entry " + std::string(id));
}

bool HypothesisReport::all_pass() const {
    return std::none_of(entries.begin(), entries.end(),
                        [](const auto& e) { return e.status == HypothesisStatus::fail; });
}

bool HypothesisReport::sigma_positive() const {
    const auto& h3 = at("H3");
    const auto it = h3.constants.find("sigma_min");
    return it != h3.constants.end() && it->second > 0.0;
}

std::string HypothesisReport::to_text() const {
    std::ostringstream os;
    os << "box [" << format_double(box.lo) << ", " << format_double(box.hi) << "], n_grid "
       << n_grid << (sign_normalized ? ", sign-normalized (sigma -> -sigma)" : "") << "\n";
    for (const auto& e : entries) {
        os << e.id << ": " << to_string(e.status);
        if (e.status == HypothesisStatus::fail) {
            os << "  violated " << e.inequality << " at (";
            for (std::size_t i = 0; i < e.witness.size(); ++i)
                os << (i ? ", " : "") << format_double(e.witness[i]);
            os << "), value " << format_double(e.violation_value);
        }
        for (const auto& [k, v] : e.constants) os << "  " << k << "=" << format_double(v);
        if (!e.note.empty()) os << "  [" << e.note << "]";
        os << "\n";
    }
    return os.str();
}

namespace {

struct Extremum {
    double value;
    std::vector<double> at;
};

class GridScanner {
public:
    GridScanner(const Box& box, int n) : nodes_(static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i)
            nodes_[static_cast<std::size_t>(i)] = box.lo + (box.hi - box.lo) * i / (n - 1);
    }

    Extremum min1(const std::function<double(double)>& fn) const {
        Extremum best{std::numeric_limits<double>::infinity(), {}};
        for (double x : nodes_) {
            const double v = fn(x);
            if (v < best.value) best = {v, {x}};
        }
        return best;
    }
    Extremum max1(const std::function<double(double)>& fn) const {
        auto e = min1([&](double x) { return -fn(x); });
        e.value = -e.value;
        return e;
    }
    Extremum min2(const std::function<double(double, double)>& fn) const {
        Extremum best{std::numeric_limits<double>::infinity(), {}};
        for (double x : nodes_)
            for (double y : nodes_) {
                const double v = fn(x, y);
                if (v < best.value) best = {v, {x, y}};
            }
        return best;
    }
    Extremum max2(const std::function<double(double, double)>& fn) const {
        auto e = min2([&](double x, double y) { return -fn(x, y); });
        e.value = -e.value;
        return e;
    }

private:
    std::vector<double> nodes_;
};

// One sign condition `quantity >= 0` (strict: `> 0`) over the grid.
struct SignCondition {
    std::string inequality;
    bool strict;
    Extremum minimum;
};

bool violated(const SignCondition& c) {
    return c.strict ? !(c.minimum.value > 0.0) : !(c.minimum.value >= 0.0);
}

void settle(HypothesisEntry& entry, const std::vector<SignCondition>& conditions) {
    entry.status = HypothesisStatus::pass;
    for (const auto& c : conditions) {
        if (violated(c)) {
            entry.status = HypothesisStatus::fail;
            entry.inequality = c.inequality;
            entry.witness = c.minimum.at;
            entry.violation_value = c.minimum.value;
            return;
        }
    }
    std::string all;
    for (const auto& c : conditions) all += (all.empty() ? "" : "; ") + c.inequality;
    entry.inequality = all;
}

}  // namespace

HypothesisReport check_hypotheses(const ProblemSpec& original, const Box& box, int n_grid) {
    if (!box.bounded())
        throw DomainError("coeffs",
                          "hypothesis checks are grid-based and certify compact boxes only; a "
                          "global (unbounded) domain cannot be checked");
    if (n_grid < 2) throw ContractViolation("coeffs", "n_grid must be at least 2");
    original.validate();

    const GridScanner grid(box, n_grid);
    HypothesisReport report;
    report.box = box;
    report.n_grid = n_grid;

    ProblemSpec problem = original;
    if (grid.max1([&](double x) { return original.sigma(x); }).value < 0.0) {
        problem = sign_normalized(original);
        report.sign_normalized = true;
    }
    const auto& phi = problem.phi;
    const auto& sigma = problem.sigma;
    const auto& b = problem.b;
    const auto& drv = problem.driver;
    const bool on_w = problem.terminal == TerminalKind::phi_of_WT;
    const std::string arg = on_w ? "w" : "x";

    auto d1 = [&](const CoefficientFamily& f) {
        return std::function<double(double)>([&f](double x) { return f.derivative(1, x); });
    };

    // H1: 0 < c <= D_θξ <= C.
    {
        HypothesisEntry h;
        h.id = "H1";
        const auto lo = grid.min1(d1(phi));
        const auto hi = grid.max1(d1(phi));
        settle(h, {{"phi'(" + arg + ") > 0", true, lo}});
        h.constants = {{"c", lo.value}, {"C", hi.value}};
        h.note = on_w ? "D_theta xi = phi'(W_T)"
                      : "D_theta xi = phi'(X_T) D_theta X_T; positivity also needs sigma > 0 (H3)";
        report.entries.push_back(std::move(h));
    }
    // H2: 0 <= f_x <= C, f in C_b^1.
    {
        HypothesisEntry h;
        h.id = "H2";
        const auto fx_min = grid.min2([&](double x, double y) { return drv.f_x(x, y); });
        const auto fx_max = grid.max2([&](double x, double y) { return drv.f_x(x, y); });
        const auto fy_abs = grid.max2([&](double x, double y) { return std::abs(drv.f_y(x, y)); });
        settle(h, {{"f_x(x, y) >= 0", false, fx_min}});
        h.constants = {{"C", fx_max.value}, {"f_x_min", fx_min.value}, {"f_y_sup", fy_abs.value}};
        report.entries.push_back(std::move(h));
    }
    // H3: 0 <= σ <= C and |[b, σ]| <= M σ.
    {
        HypothesisEntry h;
        h.id = "H3";
        const auto s_min = grid.min1([&](double x) { return sigma(x); });
        const auto s_max = grid.max1([&](double x) { return sigma(x); });
        settle(h, {{"sigma(x) >= 0", false, s_min}});
        double m_hat = 0.0, bracket_sup = 0.0;
        std::vector<double> degenerate;
        for (int i = 0; i < n_grid; ++i) {
            const double x = box.lo + (box.hi - box.lo) * i / (n_grid - 1);
            const double s = sigma(x);
            const double br = std::abs(lie_bracket(b, sigma, x));
            bracket_sup = std::max(bracket_sup, br);
            if (s > 0.0) {
                m_hat = std::max(m_hat, br / s);
            } else if (s == 0.0 && br > 0.0 && degenerate.empty()) {
                degenerate = {x};
            }
        }
        if (h.status == HypothesisStatus::pass && !degenerate.empty()) {
            h.status = HypothesisStatus::fail;
            h.inequality = "|[b,sigma](x)| <= M sigma(x) at sigma(x) = 0";
            h.witness = degenerate;
            h.violation_value = std::abs(lie_bracket(b, sigma, degenerate[0]));
        }
        h.constants = {{"sigma_min", s_min.value},
                       {"C", s_max.value},
                       {"M", m_hat},
                       {"bracket_sup", bracket_sup}};
        if (report.sign_normalized) h.note = "checked after sigma -> -sigma";
        report.entries.push_back(std::move(h));
    }
    // H4: D_θξ >= 0 and D²ξ > 0.
    {
        HypothesisEntry h;
        h.id = "H4";
        const auto p1 = grid.min1(d1(phi));
        const auto p2 = grid.min1([&](double x) { return phi.derivative(2, x); });
        settle(h, {{"phi'(" + arg + ") >= 0", false, p1}, {"phi''(" + arg + ") > 0", true, p2}});
        h.constants = {{"phi1_min", p1.value}, {"phi2_min", p2.value}};
        if (!on_w) h.note = "D2 xi = phi'' DX DX + phi' D2X; sufficient with H6";
        report.entries.push_back(std::move(h));
    }
    // H5: f_x, f_y, f_xy, f_xx, f_yy >= 0.
    {
        HypothesisEntry h;
        h.id = "H5";
        auto scan = [&](auto fn) { return grid.min2(fn); };
        settle(h, {
                      {"f_x(x, y) >= 0", false, scan([&](double x, double y) { return drv.f_x(x, y); })},
                      {"f_y(x, y) >= 0", false, scan([&](double x, double y) { return drv.f_y(x, y); })},
                      {"f_xy(x, y) >= 0", false, scan([&](double x, double y) { return drv.f_xy(x, y); })},
                      {"f_xx(x, y) >= 0", false, scan([&](double x, double y) { return drv.f_xx(x, y); })},
                      {"f_yy(x, y) >= 0", false, scan([&](double x, double y) { return drv.f_yy(x, y); })},
                  });
        report.entries.push_back(std::move(h));
    }
    // H6: σ, σ', -σ'', -σ''' >= 0 and [σ, [σ, b]] >= 0.
    {
        HypothesisEntry h;
        h.id = "H6";
        settle(h, {
                      {"sigma(x) >= 0", false, grid.min1([&](double x) { return sigma(x); })},
                      {"sigma'(x) >= 0", false, grid.min1([&](double x) { return sigma.derivative(1, x); })},
                      {"-sigma''(x) >= 0", false, grid.min1([&](double x) { return -sigma.derivative(2, x); })},
                      {"-sigma'''(x) >= 0", false, grid.min1([&](double x) { return -sigma.derivative(3, x); })},
                      {"[sigma,[sigma,b]](x) >= 0", false,
                       grid.min1([&](double x) { return iterated_bracket(sigma, b, x); })},
                  });
        report.entries.push_back(std::move(h));
    }
    // H7, H8 apply to Y_t = φ(W_T) + ∫ f(Y) ds - ∫ Z dW only.
    const bool simple_model = on_w && drv.is_y_only();
    {
        HypothesisEntry h;
        h.id = "H7";
        h.note =
            "phi'' >= c > 0 with phi in C_b^2 cannot hold on the whole real line (uniform "
            "convexity forces phi' to be unbounded); certified on the supplied compact box only";
        if (simple_model) {
            const auto p2 = grid.min1([&](double x) { return phi.derivative(2, x); });
            const auto p2max = grid.max1([&](double x) { return phi.derivative(2, x); });
            settle(h, {{"phi''(w) > 0", true, p2}});
            h.constants = {{"c", p2.value}, {"C", p2max.value}};
        }
        report.entries.push_back(std::move(h));
    }
    {
        HypothesisEntry h;
        h.id = "H8";
        if (simple_model) {
            const auto& q = drv.y_part;
            settle(h, {{"f'(y) >= 0", false, grid.min1(d1(q))},
                       {"f''(y) >= 0", false, grid.min1([&](double y) { return q.derivative(2, y); })}});
            h.constants = {{"f1_sup", grid.max1([&](double y) { return std::abs(q.derivative(1, y)); }).value},
                           {"f2_sup", grid.max1([&](double y) { return std::abs(q.derivative(2, y)); }).value}};
        } else {
            h.note = "applies to phi(W_T) terminals with a y-only driver";
        }
        report.entries.push_back(std::move(h));
    }
    return report;
}

}  // namespace mbsde
