#pragma once

// Random variate generation for the driving processes: symmetric stable
// increments (Chambers-Mallows-Stuck), one-sided stable subordinators
// (Kanter's representation), and the spectrally positive stable process
// normalized so that E exp(-lambda L_t) = exp(t lambda^kappa), together
// with a path sampler that keeps records of its large jumps.

#include <superproc/rng.hpp>
#include <superproc/stable_kernel.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace superproc {

// Kanter's exact sampler for S >= 0 with E exp(-lambda S) = exp(-lambda^index).
inline double sample_positive_stable(double index, Rng& rng) {
    if (!(index > 0.0 && index < 1.0))
        throw std::invalid_argument("positive stable index must lie in (0,1)");
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double w = rng.exponential();
    const double la = detail::kanter_log_a(index, theta);
    return std::exp((1.0 - index) / index * (la - std::log(w)));
}

inline double sample_positive_stable(const SubordinatorParams& p, Rng& rng) {
    return sample_positive_stable(p.index, rng);
}

namespace detail {

// Chambers-Mallows-Stuck variate, maximally skewed to the right, unit scale
// in the parametrization whose Laplace transform for kappa in (1,2) is
// exp(lambda^kappa / |cos(pi kappa / 2)|).
inline double cms_skewed_unit(double kappa, Rng& rng) {
    const double tanp = std::tan(0.5 * std::numbers::pi * kappa);
    const double b = std::atan(tanp) / kappa;
    const double sf = std::pow(1.0 + tanp * tanp, 0.5 / kappa);
    const double u = rng.uniform(-0.5 * std::numbers::pi, 0.5 * std::numbers::pi);
    const double w = rng.exponential();
    const double cu = std::cos(u);
    return sf * std::sin(kappa * (u + b)) / std::pow(cu, 1.0 / kappa) *
           std::pow(std::cos(u - kappa * (u + b)) / w, (1.0 - kappa) / kappa);
}

inline void check_kappa(double kappa) {
    if (!(kappa > 1.0 && kappa < 2.0))
        throw std::invalid_argument("branching stability index must lie in (1,2)");
}

} // namespace detail

// One increment of the symmetric stable motion over time t, so that
// E cos(xi Y) = exp(-t |xi|^alpha).
inline double sample_symmetric_stable(const StableMotionParams& p, double t,
                                      Rng& rng) {
    detail::check_alpha(p.alpha);
    if (p.dimension != 1)
        throw std::invalid_argument("scalar sampler requires dimension 1");
    if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
    const double a = p.alpha;
    const double u = rng.uniform(-0.5 * std::numbers::pi, 0.5 * std::numbers::pi);
    double x;
    if (a == 2.0) {
        x = 2.0 * std::sin(u) * std::sqrt(rng.exponential());
    } else if (a == 1.0) {
        x = std::tan(u);
    } else {
        const double w = rng.exponential();
        x = std::sin(a * u) / std::pow(std::cos(u), 1.0 / a) *
            std::pow(std::cos(u - a * u) / w, (1.0 - a) / a);
    }
    return std::pow(t, 1.0 / a) * x;
}

// Planar isotropic increment via Brownian subordination: a positive stable
// time change of index alpha/2 applied to a two dimensional Brownian motion
// whose coordinates carry variance 2s, matching exp(-t |xi|^alpha).
inline std::array<double, 2> sample_symmetric_stable_2d(
    const StableMotionParams& p, double t, Rng& rng) {
    detail::check_alpha(p.alpha);
    if (p.dimension != 2)
        throw std::invalid_argument("planar sampler requires dimension 2");
    if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
    double s;
    if (p.alpha == 2.0) {
        s = t;
    } else {
        s = std::pow(t, 2.0 / p.alpha) * sample_positive_stable(0.5 * p.alpha, rng);
    }
    const double sd = std::sqrt(2.0 * s);
    return {sd * rng.normal(), sd * rng.normal()};
}

// 1/Gamma(-kappa), the constant in front of r^{-1-kappa} dr in the Levy
// measure of the normalized spectrally positive process. Positive on (1,2).
inline double levy_tail_coefficient(double kappa) {
    detail::check_kappa(kappa);
    return 1.0 / std::tgamma(-kappa);
}

// Terminal value L_t with E exp(-lambda L_t) = exp(t lambda^kappa).
inline double sample_spectrally_positive(const SpectrallyPositiveParams& p,
                                         double t, Rng& rng) {
    detail::check_kappa(p.kappa);
    if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
    const double scale =
        std::pow(t * std::abs(std::cos(0.5 * std::numbers::pi * p.kappa)),
                 1.0 / p.kappa);
    return scale * detail::cms_skewed_unit(p.kappa, rng);
}

// Cutoff for which the third absolute moment contributed by the suppressed
// jumps stays below 1e-3 of the natural scale t^{1/kappa} cubed.
inline double default_path_cutoff(double kappa, double t) {
    detail::check_kappa(kappa);
    if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
    const double ck = levy_tail_coefficient(kappa);
    return std::pow(1e-3 * (3.0 - kappa) * std::pow(t, 3.0 / kappa) / (ck * t),
                    1.0 / (3.0 - kappa));
}

struct StablePath {
    double horizon = 0.0;                         // total time span
    double cutoff = 0.0;                          // jump resolution used
    std::vector<double> value;                    // n_steps+1 grid values, value[0]=0
    std::vector<std::pair<double, double>> jumps; // (time, size), size >= cutoff

    double dt() const { return horizon / (value.size() - 1); }
};

// Grid path of the spectrally positive process. Jumps of size >= cutoff are
// placed exactly and recorded; the remainder enters as its compensating
// drift plus a Gaussian with the matching truncated variance.
inline StablePath sample_spectrally_positive_path(
    const SpectrallyPositiveParams& p, double t, int n_steps, Rng& rng,
    double cutoff = 0.0, double max_expected_jumps = 2e7) {
    detail::check_kappa(p.kappa);
    if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
    if (n_steps < 1) throw std::invalid_argument("need at least one step");
    const double k = p.kappa;
    const double ck = levy_tail_coefficient(k);
    const double eps = cutoff > 0.0 ? cutoff : default_path_cutoff(k, t);

    const double rate = ck * std::pow(eps, -k) / k; // arrivals per unit time
    if (rate * t > max_expected_jumps)
        throw std::runtime_error(
            "expected jump count " + std::to_string(rate * t) +
            " exceeds the path sampler budget; raise the cutoff");

    const double drift = -ck * std::pow(eps, 1.0 - k) / (k - 1.0);
    const double res_sd =
        std::sqrt(ck * std::pow(eps, 2.0 - k) / (2.0 - k) * (t / n_steps));

    StablePath path;
    path.horizon = t;
    path.cutoff = eps;
    path.value.assign(static_cast<std::size_t>(n_steps) + 1, 0.0);

    std::vector<double> bucket(static_cast<std::size_t>(n_steps), 0.0);
    double s = rng.exponential() / rate;
    while (s < t) {
        const double r = eps * std::pow(rng.uniform_pos(), -1.0 / k);
        path.jumps.emplace_back(s, r);
        auto idx = std::min<std::size_t>(
            static_cast<std::size_t>(s / t * n_steps), bucket.size() - 1);
        bucket[idx] += r;
        s += rng.exponential() / rate;
    }

    const double h = t / n_steps;
    for (int i = 0; i < n_steps; ++i) {
        path.value[i + 1] = path.value[i] + drift * h + res_sd * rng.normal() +
                            bucket[static_cast<std::size_t>(i)];
    }
    return path;
}

} // namespace superproc
