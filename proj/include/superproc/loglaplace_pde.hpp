#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <superproc/branching.hpp>
#include <superproc/fft.hpp>
#include <superproc/rng.hpp>
#include <superproc/stable_kernel.hpp>

namespace superproc {

// Periodic grid function on [center - W, center + W). Node j sits at
// center - W + j * (2W / n); the right endpoint is identified with the left.
struct GridFunction {
    double center = 0.0;
    double half_width = 1.0;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double spacing() const {
        return 2.0 * half_width / static_cast<double>(values.size());
    }
    double x(std::size_t j) const {
        return center - half_width + static_cast<double>(j) * spacing();
    }

    double integral() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s * spacing();
    }

    // Linear interpolation between nodes; the wrap segment at the right edge
    // closes periodically, anything outside the box reads as zero. Pairings
    // with measures and particle clouds use this, so data is expected to be
    // supported well inside the domain.
    double interpolate(double pos) const {
        const double lo = center - half_width;
        const double span = 2.0 * half_width;
        if (pos < lo || pos >= lo + span) return 0.0;
        const double off = (pos - lo) / spacing();
        const auto j = static_cast<std::size_t>(off);
        const double frac = off - static_cast<double>(j);
        const std::size_t jn = j + 1 == values.size() ? 0 : j + 1;
        return values[j] * (1.0 - frac) + values[jn] * frac;
    }
};

inline GridFunction make_grid(double center, double half_width, std::size_t n) {
    if (!(half_width > 0.0))
        throw std::invalid_argument("grid half width must be positive");
    if (n < 2 || (n & (n - 1)) != 0)
        throw std::invalid_argument("grid size must be a power of two");
    GridFunction f;
    f.center = center;
    f.half_width = half_width;
    f.values.assign(n, 0.0);
    return f;
}

struct PDEConfig {
    double dt = 1e-3; // upper bound; the solver uses t / ceil(t / dt)
    double t = 1.0;
    bool dealias = true;
    // negative excursions smaller than this are clipped, larger ones abort
    double clamp_tolerance = 1e-10;
};

namespace detail {

inline void check_grid_data(const GridFunction& f, const char* what) {
    if (f.values.size() < 2 || (f.values.size() & (f.values.size() - 1)) != 0)
        throw std::invalid_argument(std::string(what) +
                                    ": grid size must be a power of two");
    if (!(f.half_width > 0.0))
        throw std::invalid_argument(std::string(what) +
                                    ": grid half width must be positive");
    for (double v : f.values)
        if (!(v >= 0.0) || !std::isfinite(v))
            throw std::invalid_argument(std::string(what) +
                                        ": values must be finite and nonnegative");
}

// Multipliers exp(-s |xi_k|^alpha) on the discrete frequencies xi_k = pi m / W,
// m = -n/2+1 .. n/2, of the length-2W periodic domain.
inline std::vector<double> semigroup_multipliers(std::size_t n, double half_width,
                                                 double alpha, double s,
                                                 bool dealias) {
    constexpr double pi = 3.141592653589793238462643383279502884;
    std::vector<double> mult(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto m = k <= n / 2 ? static_cast<double>(k)
                                  : static_cast<double>(k) - static_cast<double>(n);
        const double xi = pi * std::abs(m) / half_width;
        mult[k] = std::exp(-s * std::pow(xi, alpha));
        if (dealias && std::abs(m) > static_cast<double>(n) / 3.0) mult[k] = 0.0;
    }
    return mult;
}

inline void spectral_apply(std::vector<double>& values,
                           const std::vector<double>& mult) {
    const std::size_t n = values.size();
    std::vector<std::complex<double>> hat(n);
    for (std::size_t j = 0; j < n; ++j) hat[j] = values[j];
    fft_inplace(hat, false);
    for (std::size_t k = 0; k < n; ++k) hat[k] *= mult[k];
    fft_inplace(hat, true);
    for (std::size_t j = 0; j < n; ++j) values[j] = hat[j].real();
}

} // namespace detail

// Free motion semigroup: spectral multiplication by exp(-s |xi|^alpha). The
// zero mode is untouched, so the integral of f is preserved exactly.
inline GridFunction apply_semigroup(const GridFunction& f,
                                    const StableMotionParams& motion, double s) {
    detail::check_grid_data(f, "apply_semigroup");
    detail::check_alpha(motion.alpha);
    if (motion.dimension != 1)
        throw std::invalid_argument("spectral solver is one-dimensional");
    if (!(s >= 0.0)) throw std::invalid_argument("time must be nonnegative");
    GridFunction g = f;
    if (s == 0.0) return g;
    const auto mult = detail::semigroup_multipliers(f.size(), f.half_width,
                                                    motion.alpha, s, false);
    detail::spectral_apply(g.values, mult);
    // round-off from the transform pair can leave values a few ulps below zero
    for (double& v : g.values)
        if (v < 0.0 && v > -1e-12) v = 0.0;
    return g;
}

// Smallest half width W such that the motion kernel at time t started from
// anywhere within data_extent of the center keeps its mass inside the box, up
// to 1e-8 for the Gaussian case and 1e-4 for heavy-tailed alpha.
inline double default_half_width(const StableMotionParams& motion, double t,
                                 double data_extent) {
    detail::check_alpha(motion.alpha);
    if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
    if (!(data_extent >= 0.0))
        throw std::invalid_argument("data extent must be nonnegative");
    const double target = motion.alpha == 2.0 ? 1e-8 : 1e-4;
    double hi = std::pow(t, 1.0 / motion.alpha);
    while (stable_tail_mass(motion.alpha, t, hi) > target) hi *= 2.0;
    double lo = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (stable_tail_mass(motion.alpha, t, mid) > target)
            lo = mid;
        else
            hi = mid;
    }
    return data_extent + hi;
}

// v(t, .) for v_t = Delta_alpha v + a v - b v^{1+beta}, v(0, .) = phi, by
// Strang splitting: a half step of the reaction flow, a full spectral step,
// another half step. The reaction substep uses the exact Bernoulli solution
// pointwise, so it is unconditionally positivity preserving and the splitting
// is exact on spatially constant data.
inline GridFunction solve_log_laplace(const GridFunction& phi,
                                      const ModelParams& model,
                                      const PDEConfig& config) {
    detail::check_grid_data(phi, "solve_log_laplace");
    detail::check_alpha(model.motion.alpha);
    if (model.motion.dimension != 1)
        throw std::invalid_argument("spectral solver is one-dimensional");
    if (!(model.branching.b > 0.0) ||
        !(model.branching.beta > 0.0 && model.branching.beta < 1.0))
        throw std::invalid_argument("invalid branching parameters");
    if (!(config.dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (!(config.t >= 0.0))
        throw std::invalid_argument("terminal time must be nonnegative");
    if (!(config.clamp_tolerance >= 0.0))
        throw std::invalid_argument("clamp tolerance must be nonnegative");

    GridFunction v = phi;
    if (config.t == 0.0) return v;

    const auto steps =
        static_cast<std::size_t>(std::ceil(config.t / config.dt - 1e-12));
    const double h = config.t / static_cast<double>(steps);
    const auto mult = detail::semigroup_multipliers(
        phi.size(), phi.half_width, model.motion.alpha, h, config.dealias);

    auto reaction_half = [&](std::vector<double>& vals) {
        for (double& u : vals) {
            if (u < 1e-300) {
                u = 0.0;
                continue;
            }
            u = constant_data_log_laplace_v(model.branching, u, 0.5 * h);
        }
    };

    for (std::size_t step = 0; step < steps; ++step) {
        reaction_half(v.values);
        detail::spectral_apply(v.values, mult);
        double worst = 0.0;
        for (double& u : v.values) {
            if (std::isnan(u))
                throw std::runtime_error(
                    "log-Laplace solver produced NaN at step " +
                    std::to_string(step + 1) + " of " + std::to_string(steps));
            if (u < 0.0) {
                worst = std::min(worst, u);
                u = 0.0;
            }
        }
        if (worst < -config.clamp_tolerance)
            throw std::runtime_error(
                "log-Laplace solver went negative (min " +
                std::to_string(worst) + ") at step " + std::to_string(step + 1) +
                " of " + std::to_string(steps) +
                "; refine the grid or loosen the clamp tolerance");
        reaction_half(v.values);
    }
    return v;
}

namespace detail {

// <mu, v> for the supported initial-measure kinds; box masses integrate the
// interpolant with a fine midpoint rule, which is exact up to the O(h^2)
// interpolation error already present in v itself.
inline double pair_with_measure(const InitialMeasure& mu, const GridFunction& v) {
    switch (mu.kind) {
        case InitialMeasure::Kind::point:
            return mu.total_mass * v.interpolate(mu.location[0]);
        case InitialMeasure::Kind::box: {
            const double lo = mu.box_lo[0], hi = mu.box_hi[0];
            const std::size_t cells = 4 * v.size();
            const double w = (hi - lo) / static_cast<double>(cells);
            double acc = 0.0;
            for (std::size_t i = 0; i < cells; ++i)
                acc += v.interpolate(lo + (static_cast<double>(i) + 0.5) * w);
            return mu.total_mass * acc / static_cast<double>(cells);
        }
        case InitialMeasure::Kind::atoms: {
            double acc = 0.0;
            for (const auto& [loc, weight] : mu.atom_list)
                acc += weight * v.interpolate(loc[0]);
            return acc;
        }
    }
    throw std::logic_error("unreachable");
}

} // namespace detail

struct DualityCheck {
    double mc_value = 0.0;
    double mc_sigma = 0.0;
    double pde_value = 0.0;
    double residual = 0.0;
    // set when the Monte Carlo error bar exceeds the requested bound, in which
    // case the residual says nothing about the discretizations
    bool inconclusive = false;
};

// Compares the replica average of exp(-<X_t, phi>) with exp(-<mu, v_t>) where
// v solves the dual equation. The two sides agree in the scaling limit, so the
// residual bundles the particle-approximation and PDE discretization errors.
inline DualityCheck duality_residual(const SimulationConfig& config,
                                     const GridFunction& phi,
                                     const PDEConfig& pde,
                                     double sigma_bound = 0.02) {
    detail::validate_config(config);
    detail::check_grid_data(phi, "duality_residual");
    if (config.model.motion.dimension != 1)
        throw std::invalid_argument("spectral solver is one-dimensional");
    if (std::abs(pde.t - config.horizon) >
        1e-12 * std::max(1.0, config.horizon))
        throw std::invalid_argument(
            "PDE terminal time must equal the simulation horizon");
    if (config.replica_count < 2)
        throw std::invalid_argument("need at least two replicas");

    const double eps = config.particle_mass;
    double sum = 0.0, sumsq = 0.0;
    for (int rep = 0; rep < config.replica_count; ++rep) {
        Rng rng = seed_stream(config.seed, static_cast<std::uint64_t>(rep));
        ParticleSystem sys = init(config, rng);
        evolve(sys, config.model, config.horizon, rng);
        double pairing = 0.0;
        for (std::size_t i = 0; i < sys.alive; ++i)
            pairing += phi.interpolate(sys.position[i]);
        const double val = std::exp(-eps * pairing);
        sum += val;
        sumsq += val * val;
    }
    const auto n = static_cast<double>(config.replica_count);
    DualityCheck out;
    out.mc_value = sum / n;
    const double var =
        std::max(0.0, (sumsq - sum * sum / n) / ((n - 1.0) * n));
    out.mc_sigma = std::sqrt(var);

    const GridFunction v = solve_log_laplace(phi, config.model, pde);
    out.pde_value = std::exp(-detail::pair_with_measure(config.initial, v));
    out.residual = std::abs(out.mc_value - out.pde_value);
    out.inconclusive = out.mc_sigma > sigma_bound;
    return out;
}

} // namespace superproc
