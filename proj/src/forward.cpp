#include "mbsde/forward.hpp"

#include "mbsde/error.hpp"
#include "mbsde/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <mutex>
#include <ostream>
#include <random>
#include <string>

namespace mbsde {

static_assert(std::endian::native == std::endian::little,
              "ensemble dump assumes a little-endian host");

int TimeGrid::index_of(double t) const {
    if (!(t >= 0.0 && t <= horizon))
        throw ContractViolation("forward", "time " + std::to_string(t) + " outside [0, T]");
    return std::clamp(static_cast<int>(std::lround(t / dt())), 0, n_steps);
}

PathEnsemble::PathEnsemble(TimeGrid grid, double x0, std::uint64_t seed, std::size_t n_paths)
    : grid_(grid), x0_(x0), seed_(seed) {
    const auto size = n_paths * static_cast<std::size_t>(grid_.nodes());
    path_index_.resize(n_paths);
    w_.resize(size);
    u_.resize(size);
    x_.resize(size);
}

bool simulate_path(const LampertiMap& map, double x0, double dt, std::span<const double> w,
                   std::span<double> u, std::span<double> x) {
    const auto& image = map.image();
    x[0] = x0;
    u[0] = map.transform(x0);
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        u[i + 1] = u[i] + map.beta(x[i]) * dt + (w[i + 1] - w[i]);
        if (!(u[i + 1] > image.lo && u[i + 1] < image.hi)) return false;
        x[i + 1] = map.inverse_transform(u[i + 1]);
    }
    return true;
}

namespace {

constexpr std::size_t kPathBlock = 1024;

// Keeps the paths flagged as valid, preserving order.
void compact(std::vector<double>& w, std::vector<double>& u,
             std::vector<double>& x, std::vector<std::uint64_t>& index,
             const std::vector<char>& ok, std::size_t nodes) {
    std::size_t dst = 0;
    for (std::size_t p = 0; p < ok.size(); ++p) {
        if (!ok[p]) continue;
        if (dst != p) {
            std::copy_n(w.begin() + static_cast<long>(p * nodes), nodes, w.begin() + static_cast<long>(dst * nodes));
            std::copy_n(u.begin() + static_cast<long>(p * nodes), nodes, u.begin() + static_cast<long>(dst * nodes));
            std::copy_n(x.begin() + static_cast<long>(p * nodes), nodes, x.begin() + static_cast<long>(dst * nodes));
            index[dst] = index[p];
        }
        ++dst;
    }
    w.resize(dst * nodes);
    u.resize(dst * nodes);
    x.resize(dst * nodes);
    index.resize(dst);
}

}  // namespace

PathEnsemble simulate_forward(const ProblemSpec& problem, const LampertiMap& map,
                              const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed,
                              int workers, bool antithetic) {
    problem.validate();
    if (n_paths < 1) throw ContractViolation("forward", "n_paths must be at least 1");
    if (grid.n_steps < 1) throw ContractViolation("forward", "n_steps must be at least 1");
    if (std::abs(grid.horizon - problem.horizon) > 1e-12 * problem.horizon)
        throw ContractViolation("forward", "grid horizon differs from the problem horizon");

    PathEnsemble ens(grid, problem.x0, seed, n_paths);
    const auto nodes = static_cast<std::size_t>(grid.nodes());
    const double sqrt_dt = std::sqrt(grid.dt());
    std::vector<char> ok(n_paths, 1);

    parallel_blocks(n_paths, kPathBlock, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            const bool mirrored = antithetic && p % 2 == 1;
            std::mt19937_64 rng(stream_seed(seed, mirrored ? p - 1 : p));
            std::normal_distribution<double> normal;
            const double sign = mirrored ? -1.0 : 1.0;
            double* w = ens.w_.data() + p * nodes;
            w[0] = 0.0;
            for (std::size_t i = 1; i < nodes; ++i) w[i] = w[i - 1] + sign * sqrt_dt * normal(rng);
            ens.path_index_[p] = p;
            ok[p] = simulate_path(map, problem.x0, grid.dt(), {w, nodes},
                                  {ens.u_.data() + p * nodes, nodes},
                                  {ens.x_.data() + p * nodes, nodes});
        }
    });

    const auto flagged = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 0));
    if (static_cast<double>(flagged) > 0.01 * static_cast<double>(n_paths))
        throw SolverError("forward", std::to_string(flagged) + " of " + std::to_string(n_paths) +
                                         " paths left the certified box [" +
                                         std::to_string(map.validity_box().lo) + ", " +
                                         std::to_string(map.validity_box().hi) + "] (limit 1%)");
    if (flagged > 0) compact(ens.w_, ens.u_, ens.x_, ens.path_index_, ok, nodes);
    ens.n_flagged_ = flagged;
    return ens;
}

PathEnsemble ensemble_from_increments(const ProblemSpec& problem, const LampertiMap& map,
                                      const TimeGrid& grid,
                                      const std::vector<std::vector<double>>& increments) {
    PathEnsemble ens(grid, problem.x0, 0, increments.size());
    const auto nodes = static_cast<std::size_t>(grid.nodes());
    for (std::size_t p = 0; p < increments.size(); ++p) {
        if (increments[p].size() != static_cast<std::size_t>(grid.n_steps))
            throw ContractViolation("forward", "increment vector length must equal n_steps");
        double* w = ens.w_.data() + p * nodes;
        w[0] = 0.0;
        for (std::size_t i = 1; i < nodes; ++i) w[i] = w[i - 1] + increments[p][i - 1];
        ens.path_index_[p] = p;
        if (!simulate_path(map, problem.x0, grid.dt(), {w, nodes}, {ens.u_.data() + p * nodes, nodes},
                           {ens.x_.data() + p * nodes, nodes}))
            throw DomainError("forward", "frozen path " + std::to_string(p) + " left the validity box");
    }
    return ens;
}

// ---------------------------------------------------------------------------
// Binary dump
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'B', 'S', 'D', 'E', 'E', 'N', 'S'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw Error("forward", "truncated ensemble dump");
    return v;
}

}  // namespace

void PathEnsemble::write(std::ostream& out) const {
    out.write(kMagic, sizeof kMagic);
    put(out, kVersion);
    put(out, static_cast<std::uint32_t>(grid_.n_steps));
    put(out, grid_.horizon);
    put(out, x0_);
    put(out, seed_);
    put(out, static_cast<std::uint64_t>(n_paths()));
    put(out, static_cast<std::uint64_t>(n_flagged_));
    const auto nodes = static_cast<std::size_t>(grid_.nodes());
    for (std::size_t p = 0; p < n_paths(); ++p) {
        put(out, path_index_[p]);
        out.write(reinterpret_cast<const char*>(w_.data() + p * nodes), static_cast<long>(nodes * sizeof(double)));
        out.write(reinterpret_cast<const char*>(u_.data() + p * nodes), static_cast<long>(nodes * sizeof(double)));
        out.write(reinterpret_cast<const char*>(x_.data() + p * nodes), static_cast<long>(nodes * sizeof(double)));
    }
    if (!out) throw Error("forward", "failed to write ensemble dump");
}

PathEnsemble PathEnsemble::read(std::istream& in) {
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw Error("forward", "not an ensemble dump (bad magic)");
    if (get<std::uint32_t>(in) != kVersion) throw Error("forward", "unsupported ensemble dump version");
    TimeGrid grid;
    grid.n_steps = static_cast<int>(get<std::uint32_t>(in));
    grid.horizon = get<double>(in);
    const double x0 = get<double>(in);
    const auto seed = get<std::uint64_t>(in);
    const auto n = get<std::uint64_t>(in);
    const auto flagged = get<std::uint64_t>(in);
    PathEnsemble ens(grid, x0, seed, n);
    ens.n_flagged_ = flagged;
    const auto nodes = static_cast<std::size_t>(grid.nodes());
    for (std::size_t p = 0; p < n; ++p) {
        ens.path_index_[p] = get<std::uint64_t>(in);
        for (auto* v : {&ens.w_, &ens.u_, &ens.x_})
            if (!in.read(reinterpret_cast<char*>(v->data() + p * nodes), static_cast<long>(nodes * sizeof(double))))
                throw Error("forward", "truncated ensemble dump");
    }
    return ens;
}

// ---------------------------------------------------------------------------
// Tableau
// ---------------------------------------------------------------------------

ForwardTableau::ForwardTableau(const PathEnsemble& ensemble, const LampertiMap& map, int workers)
    : ens_(&ensemble),
      map_(&map),
      workers_(workers),
      nodes_(static_cast<std::size_t>(ensemble.grid().nodes())),
      k_(ensemble.n_paths() * nodes_) {
    parallel_blocks(ensemble.n_paths(), kPathBlock, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            running_log_du(map, ensemble.x_path(p), ensemble.grid().dt(), {k_.data() + p * nodes_, nodes_});
        }
    });
}

void running_log_du(const LampertiMap& map, std::span<const double> x, double dt, std::span<double> k) {
    const double half_dt = 0.5 * dt;
    double prev = map.beta_prime_sigma(x[0]);
    k[0] = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
        const double cur = map.beta_prime_sigma(x[i]);
        k[i] = k[i - 1] + half_dt * (prev + cur);
        prev = cur;
    }
}

std::span<const double> ForwardTableau::log_du(std::size_t path) const {
    return {k_.data() + path * nodes_, nodes_};
}

void ForwardTableau::ensure_second_order() const {
    static std::mutex build_mutex;
    std::lock_guard lock(build_mutex);
    if (!j_.empty()) return;
    std::vector<double> j(ens_->n_paths() * nodes_);
    const double half_dt = 0.5 * ens_->grid().dt();
    parallel_blocks(ens_->n_paths(), kPathBlock, workers_, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            const auto x = ens_->x_path(p);
            const auto k = log_du(p);
            double* out = j.data() + p * nodes_;
            double prev = map_->beta_comp_second(x[0]) * std::exp(k[0]);
            out[0] = 0.0;
            for (std::size_t i = 1; i < nodes_; ++i) {
                const double cur = map_->beta_comp_second(x[i]) * std::exp(k[i]);
                out[i] = out[i - 1] + half_dt * (prev + cur);
                prev = cur;
            }
        }
    });
    j_ = std::move(j);
}

std::span<const double> ForwardTableau::second_order_integral(std::size_t path) const {
    ensure_second_order();
    return {j_.data() + path * nodes_, nodes_};
}

void ForwardTableau::check_first(int theta, int t) const {
    const int n = ens_->grid().n_steps;
    if (theta < 0 || t > n || theta > t)
        throw OrderingError("forward", "need 0 <= theta <= t <= n, got theta=" + std::to_string(theta) +
                                           ", t=" + std::to_string(t));
}

double ForwardTableau::malliavin_first_U(std::size_t path, int theta, int t) const {
    check_first(theta, t);
    const auto k = log_du(path);
    return std::exp(k[static_cast<std::size_t>(t)] - k[static_cast<std::size_t>(theta)]);
}

double ForwardTableau::malliavin_first_X(std::size_t path, int theta, int t) const {
    return map_->sigma()(ens_->x(path, t)) * malliavin_first_U(path, theta, t);
}

double ForwardTableau::malliavin_second_U(std::size_t path, int theta, int t, int s) const {
    if (theta > t) std::swap(theta, t);
    check_first(theta, t);
    check_first(t, s);
    const auto k = log_du(path);
    const auto j = second_order_integral(path);
    const auto ut = static_cast<std::size_t>(t), us = static_cast<std::size_t>(s);
    return std::exp(k[us] - k[ut] - k[static_cast<std::size_t>(theta)]) * (j[us] - j[ut]);
}

double ForwardTableau::malliavin_second_X(std::size_t path, int theta, int t, int s) const {
    if (theta > t) std::swap(theta, t);
    const double xs = ens_->x(path, s);
    const auto& sigma = map_->sigma();
    return sigma.derivative(1, xs) * sigma(xs) * malliavin_first_U(path, theta, s) *
               malliavin_first_U(path, t, s) +
           sigma(xs) * malliavin_second_U(path, theta, t, s);
}

}  // namespace mbsde
