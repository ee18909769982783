#include "mbsde/regression.hpp"

#include "mbsde/error.hpp"
#include "mbsde/parallel.hpp"

#include <cmath>

namespace mbsde {

namespace {

constexpr std::size_t kRowBlock = 4096;
constexpr double kRelativeVarianceFloor = 1e-24;

struct Moments {
    double mean = 0.0, sd = 0.0;
};

Moments moments(std::span<const double> v) {
    long double s = 0.0L;
    for (double a : v) s += a;
    const double mean = static_cast<double>(s / static_cast<long double>(v.size()));
    long double ss = 0.0L;
    for (double a : v) ss += (a - mean) * (a - mean);
    return {mean, std::sqrt(static_cast<double>(ss / static_cast<long double>(v.size())))};
}

bool has_spread(const Moments& m) {
    return m.sd * m.sd > kRelativeVarianceFloor * std::max(1.0, m.mean * m.mean);
}

// Terms ordered by total degree; within a degree by decreasing power of x.
template <class Out>
void fill_terms(BasisKind kind, int degree, bool use_x, bool use_w, double zx, double zw, Out out) {
    int col = 0;
    out(col++, 1.0);
    if (kind == BasisKind::polynomial_in_X || !use_w) {
        if (!use_x) return;
        double p = 1.0;
        for (int k = 1; k <= degree; ++k) out(col++, p *= zx);
        return;
    }
    if (!use_x) {
        double p = 1.0;
        for (int k = 1; k <= degree; ++k) out(col++, p *= zw);
        return;
    }
    for (int k = 1; k <= degree; ++k)
        for (int i = k; i >= 0; --i) out(col++, std::pow(zx, i) * std::pow(zw, k - i));
}

int term_count(BasisKind kind, int degree, bool use_x, bool use_w) {
    int n = 0;
    fill_terms(kind, degree, use_x, use_w, 0.0, 0.0, [&](int, double) { ++n; });
    return n;
}

}  // namespace

std::string_view to_string(BasisKind kind) {
    return kind == BasisKind::polynomial_in_X ? "polynomial-in-X" : "polynomial-in-XW";
}

BasisKind parse_basis_kind(std::string_view text) {
    if (text == "polynomial-in-X") return BasisKind::polynomial_in_X;
    if (text == "polynomial-in-XW" || text == "polynomial-in-(X,W)") return BasisKind::polynomial_in_XW;
    throw ConfigError("unknown basis kind '" + std::string(text) +
                      "' (expected polynomial-in-X or polynomial-in-XW)");
}

double FittedFunction::operator()(double x, double w) const {
    const double zx = (x - mx_) / sx_, zw = (w - mw_) / sw_;
    double v = 0.0;
    fill_terms(kind_, degree_, use_x_, use_w_, zx, zw, [&](int c, double t) { v += coef_[c] * t; });
    return v;
}

FittedFunction FittedFunction::constant(double c) {
    FittedFunction f;
    f.coef_ = Eigen::VectorXd::Constant(1, c);
    return f;
}

Regressor::Regressor(const RegressionBasis& basis, std::span<const double> x,
                     std::span<const double> w, std::span<const double> weights, int workers,
                     std::string label)
    : n_(x.size()),
      workers_(workers),
      label_(std::move(label)),
      ridge_(basis.ridge_for(x.size())),
      weights_(weights.begin(), weights.end()) {
    if (basis.degree < 0) throw ContractViolation("backward", "basis degree must be non-negative");
    if (ridge_ < 0.0) throw ContractViolation("backward", "ridge must be non-negative");
    if (n_ == 0) throw ContractViolation("backward", "regression on an empty sample at " + label_);
    if (w.size() != n_ || (!weights_.empty() && weights_.size() != n_))
        throw ContractViolation("backward", "regressor arrays differ in length");
    if (!weights_.empty()) {
        long double s = 0.0L;
        for (double v : weights_) {
            if (!(v >= 0.0)) throw ContractViolation("backward", "regression weights must be non-negative");
            s += v;
        }
        weight_mean_ = static_cast<double>(s / static_cast<long double>(n_));
        if (!(weight_mean_ > 0.0)) throw ContractViolation("backward", "regression weights are all zero");
    }

    const Moments mx = moments(x);
    proto_.kind_ = basis.kind;
    proto_.degree_ = basis.degree;
    proto_.use_x_ = has_spread(mx);
    if (proto_.use_x_) {
        proto_.mx_ = mx.mean;
        proto_.sx_ = mx.sd;
    }
    if (basis.kind == BasisKind::polynomial_in_XW) {
        const Moments mw = moments(w);
        proto_.use_w_ = has_spread(mw);
        if (proto_.use_w_) {
            proto_.mw_ = mw.mean;
            proto_.sw_ = mw.sd;
        }
        // X an affine function of W adds nothing.
        if (proto_.use_x_ && proto_.use_w_) {
            long double c = 0.0L;
            for (std::size_t i = 0; i < n_; ++i) c += (x[i] - mx.mean) * (w[i] - mw.mean);
            const double corr = static_cast<double>(c / static_cast<long double>(n_)) / (mx.sd * mw.sd);
            if (std::abs(corr) > 1.0 - 1e-10) proto_.use_w_ = false;
        }
    }

    const int p = term_count(proto_.kind_, proto_.degree_, proto_.use_x_, proto_.use_w_);
    proto_.coef_ = Eigen::VectorXd::Zero(p);
    design_.resize(static_cast<Eigen::Index>(n_), p);
    const std::size_t nb = block_count(n_, kRowBlock);
    std::vector<Eigen::MatrixXd> partial(nb);
    parallel_blocks(n_, kRowBlock, workers_, [&](std::size_t b, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const double zx = (x[i] - proto_.mx_) / proto_.sx_, zw = (w[i] - proto_.mw_) / proto_.sw_;
            fill_terms(proto_.kind_, proto_.degree_, proto_.use_x_, proto_.use_w_, zx, zw,
                       [&](int c, double t) { design_(static_cast<Eigen::Index>(i), c) = t; });
        }
        const auto rows = design_.middleRows(static_cast<Eigen::Index>(begin),
                                             static_cast<Eigen::Index>(end - begin));
        if (weights_.empty()) {
            partial[b] = rows.transpose() * rows;
        } else {
            const Eigen::Map<const Eigen::VectorXd> wt(weights_.data() + begin, rows.rows());
            partial[b] = rows.transpose() * wt.asDiagonal() * rows;
        }
    });
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    for (const auto& g : partial) gram += g;
    for (int c = 1; c < p; ++c) gram(c, c) += ridge_;

    gram_.compute(gram);
    const Eigen::VectorXd d = gram_.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (gram_.info() != Eigen::Success || !(d.minCoeff() > 1e-13 * dmax))
        throw SolverError("backward", "rank-deficient regression design at " + label_ +
                                          " (increase basis.ridge or lower basis.degree)");
}

FitResult Regressor::fit(std::span<const double> target) const {
    if (target.size() != n_) throw ContractViolation("backward", "regression target length mismatch");
    const auto p = design_.cols();
    const std::size_t nb = block_count(n_, kRowBlock);
    std::vector<Eigen::VectorXd> partial(nb);
    const Eigen::Map<const Eigen::VectorXd> y(target.data(), static_cast<Eigen::Index>(n_));
    parallel_blocks(n_, kRowBlock, workers_, [&](std::size_t b, std::size_t begin, std::size_t end) {
        const auto len = static_cast<Eigen::Index>(end - begin);
        const auto rows = design_.middleRows(static_cast<Eigen::Index>(begin), len);
        const auto yy = y.segment(static_cast<Eigen::Index>(begin), len);
        if (weights_.empty()) {
            partial[b] = rows.transpose() * yy;
        } else {
            const Eigen::Map<const Eigen::VectorXd> wt(weights_.data() + begin, len);
            partial[b] = rows.transpose() * wt.cwiseProduct(yy);
        }
    });
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (const auto& v : partial) rhs += v;

    FitResult r;
    r.function = proto_;
    r.function.coef_ = gram_.solve(rhs);
    r.fitted.resize(n_);
    std::vector<double> rss(nb, 0.0);
    parallel_blocks(n_, kRowBlock, workers_, [&](std::size_t b, std::size_t begin, std::size_t end) {
        const auto len = static_cast<Eigen::Index>(end - begin);
        Eigen::Map<Eigen::VectorXd> out(r.fitted.data() + begin, len);
        out = design_.middleRows(static_cast<Eigen::Index>(begin), len) * r.function.coef_;
        const Eigen::VectorXd res = y.segment(static_cast<Eigen::Index>(begin), len) - out;
        if (weights_.empty()) {
            rss[b] = res.squaredNorm();
        } else {
            const Eigen::Map<const Eigen::VectorXd> wt(weights_.data() + begin, len);
            rss[b] = res.cwiseProduct(res).dot(wt) / weight_mean_;
        }
    });
    double total = 0.0;
    for (double v : rss) total += v;
    const double n = static_cast<double>(n_), pp = static_cast<double>(p);
    r.se = std::sqrt(total / std::max(1.0, n - pp) * pp / n);
    return r;
}

}  // namespace mbsde
