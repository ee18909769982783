#include "mbsde/backward.hpp"

#include "mbsde/error.hpp"
#include "mbsde/parallel.hpp"

#include <cmath>
#include <string>

namespace mbsde {

namespace {

constexpr std::size_t kPathBlock = 1024;
constexpr int kFixedPointIterations = 5;
constexpr double kFixedPointTolerance = 1e-10;

std::string step_label(int i) { return "time step " + std::to_string(i); }

StateFunction wrap(FittedFunction f) {
    return [f = std::move(f)](double x, double w) { return f(x, w); };
}

StateFunction sum_of(StateFunction f, StateFunction g) {
    return [f = std::move(f), g = std::move(g)](double x, double w) { return f(x, w) + g(x, w); };
}

template <class F>
std::vector<double> gather(std::size_t n, F&& value) {
    std::vector<double> out(n);
    for (std::size_t p = 0; p < n; ++p) out[p] = value(p);
    return out;
}

}  // namespace

double GirsanovShift::density(double dw, double span) const {
    return alpha == 0.0 ? 1.0 : std::exp(alpha * dw - 0.5 * alpha * alpha * span);
}

ReducedProblem girsanov_reduce(const ProblemSpec& problem) {
    ReducedProblem r{problem, GirsanovShift{problem.driver.alpha}};
    r.problem.driver.alpha = 0.0;
    return r;
}

TerminalDerivatives terminal_derivatives(const ProblemSpec& problem, double x_T, double w_T) {
    const double arg = problem.terminal_argument(w_T, x_T);
    TerminalDerivatives d;
    d.value = problem.phi(arg);
    const double d1 = problem.phi.derivative(1, arg), d2 = problem.phi.derivative(2, arg);
    if (problem.terminal == TerminalKind::phi_of_WT) {
        d.d_w = d1;
        d.d_ww = d2;
    } else {
        d.d_x = d1;
        d.d_xx = d2;
    }
    return d;
}

// ---------------------------------------------------------------------------
// Solution
// ---------------------------------------------------------------------------

std::span<const double> BackwardSolution::y_path(std::size_t p) const {
    return {y_.data() + offset(p, 0), static_cast<std::size_t>(grid_.nodes())};
}

double BackwardSolution::implicit_step(double e, double x) const {
    const Driver& f = problem_.driver;
    const double dt = grid_.dt();
    double y = e;
    for (int k = 0; k < kFixedPointIterations; ++k) {
        const double next = e + f.f(x, y) * dt;
        const bool done = std::abs(next - y) < kFixedPointTolerance;
        y = next;
        if (done) break;
    }
    return y;
}

double BackwardSolution::evaluate_y(int i, double x, double w) const {
    if (i < 0 || i > grid_.n_steps) throw ContractViolation("backward", "time index out of range");
    if (i == grid_.n_steps) return terminal_derivatives(problem_, x, w).value;
    return implicit_step(cont_[static_cast<std::size_t>(i)](x, w), x);
}

double BackwardSolution::evaluate_z(int i, double x, double w) const {
    if (i < 0 || i > grid_.n_steps) throw ContractViolation("backward", "time index out of range");
    if (i == grid_.n_steps) {
        const auto d = terminal_derivatives(problem_, x, w);
        return d.d_w + d.d_x * problem_.sigma(x);
    }
    return zfit_[static_cast<std::size_t>(i)](x, w);
}

double BackwardSolution::weight_to_terminal(const PathEnsemble& ens, std::size_t p, int i) const {
    const int n = grid_.n_steps;
    return shift_.density(ens.w(p, n) - ens.w(p, i), grid_.horizon - grid_.time(i));
}

BackwardSolution solve_bsde(const PathEnsemble& ens, const ProblemSpec& problem,
                            const RegressionBasis& basis, int workers) {
    problem.validate();
    const TimeGrid& grid = ens.grid();
    if (std::abs(grid.horizon - problem.horizon) > 1e-12 * problem.horizon)
        throw ContractViolation("backward", "ensemble grid horizon differs from the problem horizon");
    const auto reduced = girsanov_reduce(problem);

    BackwardSolution sol;
    sol.grid_ = grid;
    sol.n_paths_ = ens.n_paths();
    sol.problem_ = reduced.problem;
    sol.shift_ = reduced.shift;
    sol.basis_ = basis;
    sol.ridge_ = basis.ridge_for(ens.n_paths());
    const int n = grid.n_steps;
    const std::size_t N = ens.n_paths();
    const double dt = grid.dt();
    sol.y_.assign(N * static_cast<std::size_t>(grid.nodes()), 0.0);
    sol.z_.assign(sol.y_.size(), 0.0);
    sol.cont_.resize(static_cast<std::size_t>(n));
    sol.zfit_.resize(static_cast<std::size_t>(n));
    sol.z_se_.assign(static_cast<std::size_t>(grid.nodes()), 0.0);

    for (std::size_t p = 0; p < N; ++p) {
        const auto d = terminal_derivatives(sol.problem_, ens.x(p, n), ens.w(p, n));
        sol.y_[sol.offset(p, n)] = d.value;
        sol.z_[sol.offset(p, n)] = d.d_w + d.d_x * sol.problem_.sigma(ens.x(p, n));
    }

    std::vector<double> target(N), weights;
    for (int i = n - 1; i >= 0; --i) {
        const auto x = gather(N, [&](std::size_t p) { return ens.x(p, i); });
        const auto w = gather(N, [&](std::size_t p) { return ens.w(p, i); });
        if (!sol.shift_.is_identity())
            weights = gather(N, [&](std::size_t p) { return sol.shift_.density(ens.increment(p, i), dt); });
        const Regressor reg(basis, x, w, weights, workers, step_label(i));

        for (std::size_t p = 0; p < N; ++p) target[p] = sol.y_[sol.offset(p, i + 1)];
        auto cont = reg.fit(target);
        for (std::size_t p = 0; p < N; ++p)
            target[p] = (sol.y_[sol.offset(p, i + 1)] - cont.fitted[p]) *
                        sol.shift_.shifted_increment(ens.increment(p, i), dt) / dt;
        auto zfit = reg.fit(target);

        parallel_blocks(N, kPathBlock, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
            for (std::size_t p = begin; p < end; ++p) {
                sol.y_[sol.offset(p, i)] = sol.implicit_step(cont.fitted[p], x[p]);
                sol.z_[sol.offset(p, i)] = zfit.fitted[p];
            }
        });
        sol.cont_[static_cast<std::size_t>(i)] = std::move(cont.function);
        sol.zfit_[static_cast<std::size_t>(i)] = std::move(zfit.function);
        sol.z_se_[static_cast<std::size_t>(i)] = zfit.se;
    }
    return sol;
}

// ---------------------------------------------------------------------------
// Tableau
// ---------------------------------------------------------------------------

BackwardTableau::BackwardTableau(const ForwardTableau& forward, const BackwardSolution& solution,
                                 int workers)
    : fwd_(&forward),
      sol_(&solution),
      workers_(workers),
      nodes_(static_cast<std::size_t>(solution.grid().nodes())) {
    const PathEnsemble& ens = forward.ensemble();
    if (ens.n_paths() != solution.n_paths() || ens.grid().n_steps != solution.grid().n_steps)
        throw ContractViolation("backward", "forward tableau and solution come from different ensembles");
    const ProblemSpec& pb = solution.problem();
    const Driver& f = pb.driver;
    const auto& sigma = pb.sigma;
    const int n = solution.grid().n_steps;
    const std::size_t N = ens.n_paths();
    const double half_dt = 0.5 * solution.grid().dt();

    // Realized payoffs of A and B for every node, overwritten by their fits below.
    a_.assign(N * nodes_, 0.0);
    b_.assign(N * nodes_, 0.0);
    parallel_blocks(N, kPathBlock, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<double> fy(nodes_), h(nodes_);
        for (std::size_t p = begin; p < end; ++p) {
            const auto x = ens.x_path(p);
            const auto y = solution.y_path(p);
            const auto k = forward.log_du(p);
            double prev_fy = f.f_y(x[0], y[0]);
            double prev_h = f.f_x(x[0], y[0]) * sigma(x[0]);
            fy[0] = 0.0;
            h[0] = 0.0;
            for (std::size_t i = 1; i < nodes_; ++i) {
                const double cur_fy = f.f_y(x[i], y[i]);
                fy[i] = fy[i - 1] + half_dt * (prev_fy + cur_fy);
                prev_fy = cur_fy;
                const double cur_h = std::exp(fy[i] + k[i]) * f.f_x(x[i], y[i]) * sigma(x[i]);
                h[i] = h[i - 1] + half_dt * (prev_h + cur_h);
                prev_h = cur_h;
            }
            const auto un = static_cast<std::size_t>(n);
            const auto d = terminal_derivatives(pb, x[un], ens.w(p, n));
            const double xi_x = d.d_x * sigma(x[un]);
            for (std::size_t i = 0; i < nodes_; ++i) {
                const double g = std::exp(fy[un] - fy[i]);
                a_[p * nodes_ + i] = g * d.d_w;
                b_[p * nodes_ + i] = g * xi_x * std::exp(k[un] - k[i]) + std::exp(-fy[i] - k[i]) * (h[un] - h[i]);
            }
        }
    });

    a_fit_.resize(nodes_);
    b_fit_.resize(nodes_);
    a_se_.assign(nodes_, 0.0);
    b_se_.assign(nodes_, 0.0);
    ab_se_.assign(nodes_, 0.0);
    a_fit_[static_cast<std::size_t>(n)] = [pb](double x, double w) { return terminal_derivatives(pb, x, w).d_w; };
    b_fit_[static_cast<std::size_t>(n)] = [pb](double x, double w) {
        return terminal_derivatives(pb, x, w).d_x * pb.sigma(x);
    };
    std::vector<double> sum(N);
    for (int s = 0; s < n; ++s) {
        const auto us = static_cast<std::size_t>(s);
        const auto x = gather(N, [&](std::size_t p) { return ens.x(p, s); });
        const auto w = gather(N, [&](std::size_t p) { return ens.w(p, s); });
        const auto weights = weights_to_terminal(s);
        const Regressor reg(solution.basis(), x, w, weights, workers, step_label(s));
        auto pa = gather(N, [&](std::size_t p) { return a_[p * nodes_ + us]; });
        auto pb_col = gather(N, [&](std::size_t p) { return b_[p * nodes_ + us]; });
        for (std::size_t p = 0; p < N; ++p) sum[p] = pa[p] + pb_col[p];
        auto fa = reg.fit(pa);
        auto fb = reg.fit(pb_col);
        ab_se_[us] = reg.fit(sum).se;
        for (std::size_t p = 0; p < N; ++p) {
            a_[p * nodes_ + us] = fa.fitted[p];
            b_[p * nodes_ + us] = fb.fitted[p];
        }
        a_fit_[us] = wrap(std::move(fa.function));
        b_fit_[us] = wrap(std::move(fb.function));
        a_se_[us] = fa.se;
        b_se_[us] = fb.se;
    }
}

std::vector<double> BackwardTableau::weights_to_terminal(int s) const {
    if (sol_->shift().is_identity()) return {};
    const PathEnsemble& ens = fwd_->ensemble();
    return gather(ens.n_paths(), [&](std::size_t p) { return sol_->weight_to_terminal(ens, p, s); });
}

void BackwardTableau::check_order(int theta, int t) const {
    if (theta < 0 || theta > t || t > sol_->grid().n_steps)
        throw OrderingError("backward", "need 0 <= theta <= t <= n, got theta=" + std::to_string(theta) +
                                            ", t=" + std::to_string(t));
}

double BackwardTableau::malliavin_first_Y(std::size_t path, int theta, int t) const {
    check_order(theta, t);
    const auto ut = static_cast<std::size_t>(t);
    return a_[path * nodes_ + ut] + fwd_->malliavin_first_U(path, theta, t) * b_[path * nodes_ + ut];
}

double BackwardTableau::clark_ocone_Z(std::size_t path, int t) const {
    check_order(0, t);
    const auto ut = static_cast<std::size_t>(t);
    return a_[path * nodes_ + ut] + b_[path * nodes_ + ut];
}

double BackwardTableau::first_Y_se(int t, double du) const {
    const auto ut = static_cast<std::size_t>(t);
    return std::hypot(a_se_.at(ut), du * b_se_.at(ut));
}

double BackwardTableau::clark_ocone_se(int t) const { return ab_se_.at(static_cast<std::size_t>(t)); }

AffineParts BackwardTableau::first_Y_parts(int t) const {
    check_order(0, t);
    const auto ut = static_cast<std::size_t>(t);
    return {a_fit_[ut], b_fit_[ut], a_se_[ut], b_se_[ut]};
}

const BackwardTableau::Anchor& BackwardTableau::anchor(int s) const {
    std::lock_guard lock(anchor_mutex_);
    auto it = anchors_.find(s);
    if (it == anchors_.end())
        it = anchors_.emplace(s, std::make_unique<Anchor>(build_anchor(s))).first;
    return *it->second;
}

BackwardTableau::Anchor BackwardTableau::build_anchor(int s) const {
    const PathEnsemble& ens = fwd_->ensemble();
    const ProblemSpec& pb = sol_->problem();
    const Driver& f = pb.driver;
    const auto& sigma = pb.sigma;
    const int n = sol_->grid().n_steps;
    const auto un = static_cast<std::size_t>(n), us = static_cast<std::size_t>(s);
    const std::size_t N = ens.n_paths();
    const double half_dt = 0.5 * sol_->grid().dt();

    Anchor anc;
    for (auto& v : anc.values) v.assign(N, 0.0);
    parallel_blocks(N, kPathBlock, workers_, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::array<double, 4> src{}, prev{}, acc{};
        for (std::size_t p = begin; p < end; ++p) {
            const auto x = ens.x_path(p);
            const auto y = sol_->y_path(p);
            const auto k = fwd_->log_du(p);
            const auto j = fwd_->second_order_integral(p);
            // e^{∫_0^r f_y}, accumulated from the anchor on.
            double fy = 0.0, prev_fy = f.f_y(x[us], y[us]);
            auto sources = [&](std::size_t r, double efy) {
                const double d = std::exp(k[r] - k[us]);
                const double sx = sigma(x[r]);
                const double dx = sx * d;
                const double d2x = sigma.derivative(1, x[r]) * sx * d * d +
                                   sx * std::exp(k[r] - 2.0 * k[us]) * (j[r] - j[us]);
                const double A = a_[p * nodes_ + r], B = b_[p * nodes_ + r];
                const double fxx = f.f_xx(x[r], y[r]), fxy = f.f_xy(x[r], y[r]),
                             fyy = f.f_yy(x[r], y[r]), fx = f.f_x(x[r], y[r]);
                src[0] = efy * fyy * A * A;
                src[1] = efy * (fxy * dx * A + fyy * A * d * B);
                src[2] = efy * (fxx * dx * dx + 2.0 * fxy * dx * d * B + fyy * d * d * B * B + fx * d2x);
                src[3] = efy * fx * dx;
            };
            acc.fill(0.0);
            sources(us, 1.0);
            prev = src;
            for (std::size_t r = us + 1; r <= un; ++r) {
                const double cur_fy = f.f_y(x[r], y[r]);
                fy += half_dt * (prev_fy + cur_fy);
                prev_fy = cur_fy;
                sources(r, std::exp(fy));
                for (int m = 0; m < 4; ++m) acc[m] += half_dt * (prev[m] + src[m]);
                prev = src;
            }
            // Terminal second derivative, split by monomial.
            const auto d = terminal_derivatives(pb, x[un], ens.w(p, n));
            const double dT = std::exp(k[un] - k[us]);
            const double sxT = sigma(x[un]);
            const double dxT = sxT * dT;
            const double d2xT = sigma.derivative(1, x[un]) * sxT * dT * dT +
                                sxT * std::exp(k[un] - 2.0 * k[us]) * (j[un] - j[us]);
            const double g = std::exp(fy);
            anc.values[0][p] = g * d.d_ww + acc[0];
            anc.values[1][p] = acc[1];
            anc.values[2][p] = g * (d.d_xx * dxT * dxT + d.d_x * d2xT) + acc[2];
            anc.values[3][p] = g * d.d_x * dxT + acc[3];
        }
    });

    if (s == n) {
        anc.functions[0] = [pb](double x, double w) { return terminal_derivatives(pb, x, w).d_ww; };
        anc.functions[1] = [](double, double) { return 0.0; };
        anc.functions[2] = [pb](double x, double w) {
            const auto d = terminal_derivatives(pb, x, w);
            const double sx = pb.sigma(x);
            return d.d_xx * sx * sx + d.d_x * pb.sigma.derivative(1, x) * sx;
        };
        anc.functions[3] = [pb](double x, double w) {
            return terminal_derivatives(pb, x, w).d_x * pb.sigma(x);
        };
        return anc;
    }
    const auto x = gather(N, [&](std::size_t p) { return ens.x(p, s); });
    const auto w = gather(N, [&](std::size_t p) { return ens.w(p, s); });
    const Regressor reg(sol_->basis(), x, w, weights_to_terminal(s), workers_, step_label(s));
    for (int m = 0; m < 4; ++m) {
        auto fit = reg.fit(anc.values[static_cast<std::size_t>(m)]);
        anc.values[static_cast<std::size_t>(m)] = std::move(fit.fitted);
        anc.functions[static_cast<std::size_t>(m)] = wrap(std::move(fit.function));
        anc.se[static_cast<std::size_t>(m)] = fit.se;
    }
    return anc;
}

double BackwardTableau::malliavin_second_Y(std::size_t path, int theta, int t, int s) const {
    if (theta > t) std::swap(theta, t);
    check_order(theta, t);
    check_order(t, s);
    const Anchor& anc = anchor(s);
    const double a = fwd_->malliavin_first_U(path, theta, s);
    const double b = fwd_->malliavin_first_U(path, t, s);
    const double m = fwd_->malliavin_second_U(path, theta, t, s);
    return anc.values[0][path] + (a + b) * anc.values[1][path] + a * b * anc.values[2][path] +
           m * anc.values[3][path];
}

double BackwardTableau::malliavin_first_Z(std::size_t path, int theta, int t) const {
    return malliavin_second_Y(path, theta, t, t);
}

AffineParts BackwardTableau::first_Z_parts(int t) const {
    check_order(0, t);
    const Anchor& anc = anchor(t);
    // At s = t: b = 1 and m = 0.
    return {sum_of(anc.functions[0], anc.functions[1]), sum_of(anc.functions[1], anc.functions[2]),
            std::hypot(anc.se[0], anc.se[1]), std::hypot(anc.se[1], anc.se[2])};
}

double BackwardTableau::first_Z_se(int t, double du) const {
    const auto parts = first_Z_parts(t);
    return std::hypot(parts.se0, du * parts.se1);
}

}  // namespace mbsde
