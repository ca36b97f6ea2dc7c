#pragma once

// Monte Carlo verdicts for the analytic estimates on the spectrally positive
// stable process and for its appearance inside the superprocess via a random
// time change. Each check reports an empirical value with its standard error
// next to the quantity it must not exceed (or must match), plus a step-size
// sensitivity so a verdict is never quoted without its discretization error.

#include <superproc/branching.hpp>
#include <superproc/rng.hpp>
#include <superproc/stable_sampler.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace superproc {

struct BoundCheckResult {
    std::string name;
    std::string parameters;
    double empirical = 0.0;
    double sigma = 0.0;
    double bound = 0.0;
    double bias_estimate = 0.0; // fine-grid minus half-resolution estimate
    bool vacuous = false;       // the bound cannot fail for structural reasons
    bool inconclusive = false;  // discretization error swamps the bound

    // one-sided by design; derived on demand so it cannot go stale
    bool satisfied() const { return empirical <= bound + 3.0 * sigma; }
};

// Two-sided companion for exact identities (Laplace transforms). sigma is the
// Monte Carlo standard error of `empirical`.
struct IdentityCheckResult {
    std::string name;
    std::string parameters;
    double empirical = 0.0;
    double sigma = 0.0;
    double target = 0.0;
    double bias_estimate = 0.0;
    bool inconclusive = false;

    double residual() const { return empirical - target; }
    bool within(double n_sigma = 3.0) const {
        return std::abs(empirical - target) <= n_sigma * sigma;
    }
};

namespace detail {

inline void check_bound_kappa(double kappa) {
    if (!(kappa > 1.0) || kappa > 2.0)
        throw std::invalid_argument("index must lie in (1, 2]");
}

inline std::string describe(
    std::initializer_list<std::pair<const char*, double>> kv) {
    std::ostringstream os;
    bool first = true;
    for (const auto& [key, value] : kv) {
        if (!first) os << ' ';
        first = false;
        os << key << '=' << value;
    }
    return os.str();
}

} // namespace detail

// Exponential rate in the lower-tail estimate: the Legendre transform of
// lambda^kappa evaluated along the optimal tilt, (kappa-1)/kappa^{kappa/(kappa-1)}.
inline double small_value_rate(double kappa) {
    detail::check_bound_kappa(kappa);
    const double q = kappa / (kappa - 1.0);
    return (kappa - 1.0) / std::pow(kappa, q);
}

// P(inf_{u<=t} L_u < -x) <= exp(-c_kappa x^{kappa/(kappa-1)} / t^{1/(kappa-1)})
inline double small_value_bound(double kappa, double t, double x) {
    detail::check_bound_kappa(kappa);
    if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
    if (!(x >= 0.0)) throw std::invalid_argument("level must be nonnegative");
    if (x == 0.0) return 1.0;
    const double q = kappa / (kappa - 1.0);
    return std::exp(-small_value_rate(kappa) * std::pow(x, q) /
                    std::pow(t, 1.0 / (kappa - 1.0)));
}

struct PathCheckOptions {
    std::size_t replicas = 10000;
    std::size_t steps = 512;  // even, so a half-resolution view can be read off
    double jump_cutoff = 0.0; // 0 picks the sampler's default for (kappa, t)
    std::uint64_t seed = 0x5eedb0d5;
};

namespace detail {

inline void check_path_options(const PathCheckOptions& opt) {
    if (opt.replicas < 100)
        throw std::invalid_argument("need at least 100 replicas");
    if (opt.steps < 4 || opt.steps % 2 != 0)
        throw std::invalid_argument("step count must be even and at least 4");
}

} // namespace detail

// Empirical frequency of the running infimum dropping below -x, against the
// Chernoff bound above. The same simulated paths are read at full and at half
// time resolution; since the coarse grid is a subset, the difference is a
// one-signed estimate of how much infimum the grid still misses.
inline std::vector<BoundCheckResult> verify_small_values(
    double kappa, double t, const std::vector<double>& x_list,
    const PathCheckOptions& opt = {}) {
    detail::check_bound_kappa(kappa);
    detail::check_path_options(opt);
    for (double x : x_list)
        if (!(x > 0.0))
            throw std::invalid_argument("levels must be positive");

    const SpectrallyPositiveParams p{kappa};
    std::vector<std::size_t> hits_fine(x_list.size(), 0);
    std::vector<std::size_t> hits_coarse(x_list.size(), 0);

    for (std::size_t rep = 0; rep < opt.replicas; ++rep) {
        Rng rng = seed_stream(opt.seed, rep);
        const StablePath path = sample_spectrally_positive_path(
            p, t, static_cast<int>(opt.steps), rng, opt.jump_cutoff);
        double min_fine = 0.0, min_coarse = 0.0;
        for (std::size_t j = 0; j < path.value.size(); ++j) {
            min_fine = std::min(min_fine, path.value[j]);
            if (j % 2 == 0) min_coarse = std::min(min_coarse, path.value[j]);
        }
        for (std::size_t k = 0; k < x_list.size(); ++k) {
            if (min_fine <= -x_list[k]) ++hits_fine[k];
            if (min_coarse <= -x_list[k]) ++hits_coarse[k];
        }
    }

    const double n = static_cast<double>(opt.replicas);
    std::vector<BoundCheckResult> out;
    out.reserve(x_list.size());
    for (std::size_t k = 0; k < x_list.size(); ++k) {
        BoundCheckResult r;
        r.name = "small-values bound";
        r.parameters =
            detail::describe({{"kappa", kappa}, {"t", t}, {"x", x_list[k]}});
        r.empirical = static_cast<double>(hits_fine[k]) / n;
        r.sigma = std::sqrt(r.empirical * (1.0 - r.empirical) / n);
        r.bound = small_value_bound(kappa, t, x_list[k]);
        r.bias_estimate =
            static_cast<double>(hits_fine[k] - hits_coarse[k]) / n;
        r.vacuous = hits_fine[k] == 0;
        r.inconclusive = r.bias_estimate > 0.1 * r.bound;
        out.push_back(std::move(r));
    }
    return out;
}

struct TruncatedSupReport {
    std::vector<BoundCheckResult> bounds; // one per level in x_list
    // log p(x_{i+1}) / log p(x_i); for a doubling grid the exponent x/y
    // predicts a value of at least 2
    std::vector<double> slope_ratios;
    double fitted_constant = 0.0; // calibrated at the smallest level
};

// The jump-truncated supremum estimate has an unspecified constant, so the
// check is structural: the log-probabilities must grow at least linearly in
// x/y. The enforced bound at the larger levels is the exponential envelope
// extrapolated from the smallest level, p(x) <= p(x0)^{x/x0}; the polynomial
// factor (x0/x)^{x/y} in the analytic bound is a far-tail sharpening that no
// measurable frequency can witness, so it is deliberately left out of the
// pass criterion. The constant implied by the anchor is still fitted and
// reported for reference, labelled as such.
inline TruncatedSupReport verify_truncated_sup(
    double kappa, double t, const std::vector<double>& x_list, double y,
    const PathCheckOptions& opt = {}) {
    detail::check_bound_kappa(kappa);
    detail::check_path_options(opt);
    if (!(y > 0.0)) throw std::invalid_argument("truncation level must be positive");
    if (x_list.empty()) throw std::invalid_argument("need at least one level");
    for (std::size_t i = 0; i < x_list.size(); ++i) {
        if (!(x_list[i] > 0.0))
            throw std::invalid_argument("levels must be positive");
        if (i > 0 && x_list[i] <= x_list[i - 1])
            throw std::invalid_argument("levels must increase");
    }
    const double cutoff = opt.jump_cutoff > 0.0 ? opt.jump_cutoff
                                                : default_path_cutoff(kappa, t);
    if (cutoff >= y)
        throw std::invalid_argument(
            "jump cutoff must stay below the truncation level");

    const SpectrallyPositiveParams p{kappa};
    const std::size_t n = opt.steps;
    std::vector<std::size_t> hits_fine(x_list.size(), 0);
    std::vector<std::size_t> hits_coarse(x_list.size(), 0);

    for (std::size_t rep = 0; rep < opt.replicas; ++rep) {
        Rng rng = seed_stream(opt.seed, rep);
        const StablePath path = sample_spectrally_positive_path(
            p, t, static_cast<int>(n), rng, cutoff);
        // grid index of the first jump beyond y; values up to and including
        // that index predate the jump
        std::size_t cap_fine = n;
        std::size_t cap_coarse = n / 2;
        for (const auto& [time, size] : path.jumps) {
            if (size > y) {
                const double frac = time / t;
                cap_fine = std::min<std::size_t>(
                    n - 1, static_cast<std::size_t>(frac * n));
                cap_coarse = std::min<std::size_t>(
                    n / 2 - 1, static_cast<std::size_t>(frac * (n / 2)));
                break;
            }
        }
        double sup_fine = 0.0, sup_coarse = 0.0;
        for (std::size_t j = 0; j <= cap_fine; ++j)
            sup_fine = std::max(sup_fine, path.value[j]);
        for (std::size_t m = 0; m <= cap_coarse; ++m)
            sup_coarse = std::max(sup_coarse, path.value[2 * m]);
        for (std::size_t k = 0; k < x_list.size(); ++k) {
            if (sup_fine >= x_list[k]) ++hits_fine[k];
            if (sup_coarse >= x_list[k]) ++hits_coarse[k];
        }
    }

    const double nr = static_cast<double>(opt.replicas);
    const double p0 = static_cast<double>(hits_fine[0]) / nr;
    TruncatedSupReport report;
    // anchor: C solves p0 = (C t / (x0 y^{kappa-1}))^{x0/y}
    report.fitted_constant =
        x_list[0] * std::pow(y, kappa - 1.0) / t * std::pow(p0, y / x_list[0]);

    const double sigma0 = std::sqrt(p0 * (1.0 - p0) / nr);
    for (std::size_t k = 0; k < x_list.size(); ++k) {
        BoundCheckResult r;
        r.name = k == 0 ? "truncated-sup anchor (constant fitted here)"
                        : "truncated-sup envelope from the anchor";
        r.parameters = detail::describe(
            {{"kappa", kappa}, {"t", t}, {"x", x_list[k]}, {"y", y}});
        r.empirical = static_cast<double>(hits_fine[k]) / nr;
        const double emp_var = r.empirical * (1.0 - r.empirical) / nr;
        const double expo = x_list[k] / x_list[0];
        r.bound = std::pow(p0, expo);
        // the anchor is itself an estimate; propagate its noise into the
        // comparison so a tight envelope is not mistaken for a violation
        const double env_sd =
            p0 > 0.0 ? expo * std::pow(p0, expo - 1.0) * sigma0 : 0.0;
        r.sigma = std::sqrt(emp_var + (k > 0 ? env_sd * env_sd : 0.0));
        r.bias_estimate =
            static_cast<double>(hits_fine[k] - hits_coarse[k]) / nr;
        r.vacuous =
            hits_fine[k] == 0 || r.bound >= 1.0 || x_list[k] <= y;
        report.bounds.push_back(std::move(r));
    }
    for (std::size_t k = 0; k + 1 < x_list.size(); ++k) {
        const double pa = report.bounds[k].empirical;
        const double pb = report.bounds[k + 1].empirical;
        double ratio = std::numeric_limits<double>::quiet_NaN();
        if (pa > 0.0 && pa < 1.0)
            ratio = pb > 0.0 ? std::log(pb) / std::log(pa)
                             : std::numeric_limits<double>::infinity();
        report.slope_ratios.push_back(ratio);
    }
    return report;
}

struct MartingaleReport {
    std::vector<IdentityCheckResult> direct;     // E e^{-lambda L_t} vs e^{t lambda^kappa}
    std::vector<IdentityCheckResult> integrated; // minus 1 minus lambda^kappa * trapezoid
};

// Terminal Laplace transform and its integrated (martingale-problem) form.
// One set of unit-time draws serves every (lambda, t) pair through the
// self-similarity L_s ~ s^{1/kappa} L_1; sharing draws across the s-grid makes
// the integrated combination cancel most of the common Monte Carlo noise.
inline MartingaleReport verify_martingale_problem(
    double kappa, const std::vector<double>& lambdas,
    const std::vector<double>& times, std::size_t replicas,
    std::size_t quad_points = 64, std::uint64_t seed = 0xa27e5) {
    detail::check_bound_kappa(kappa);
    if (replicas < 2) throw std::invalid_argument("need at least two replicas");
    if (quad_points < 2) throw std::invalid_argument("need at least two cells");

    const SpectrallyPositiveParams p{kappa};
    Rng rng = seed_stream(seed, 0);
    std::vector<double> draw(replicas);
    for (double& v : draw) v = sample_spectrally_positive(p, 1.0, rng);

    const double nr = static_cast<double>(replicas);
    const std::size_t m = quad_points;
    MartingaleReport report;

    for (double lambda : lambdas) {
        if (!(lambda >= 0.0))
            throw std::invalid_argument("lambda must be nonnegative");
        for (double t : times) {
            if (!(t > 0.0)) throw std::invalid_argument("time must be positive");
            const std::string where = detail::describe(
                {{"kappa", kappa}, {"lambda", lambda}, {"t", t}});
            const double lk = std::pow(lambda, kappa);

            // per-draw scale factors lambda * s_j^{1/kappa} on the s-grid,
            // last entry is s = t itself
            std::vector<double> scale(m + 1);
            std::vector<double> weight(m + 1);
            for (std::size_t j = 0; j <= m; ++j) {
                const double s = t * static_cast<double>(j) / static_cast<double>(m);
                scale[j] = lambda * std::pow(s, 1.0 / kappa);
                weight[j] = (j == 0 || j == m) ? 0.5 * t / m : t / m;
            }

            double d_acc = 0.0, d_acc2 = 0.0, g_acc = 0.0, g_acc2 = 0.0;
            for (std::size_t i = 0; i < replicas; ++i) {
                double trap = 0.0;
                for (std::size_t j = 0; j < m; ++j)
                    trap += weight[j] * std::exp(-scale[j] * draw[i]);
                const double terminal = std::exp(-scale[m] * draw[i]);
                trap += weight[m] * terminal;
                const double g = terminal - 1.0 - lk * trap;
                d_acc += terminal;
                d_acc2 += terminal * terminal;
                g_acc += g;
                g_acc2 += g * g;
            }

            IdentityCheckResult direct;
            direct.name = "terminal Laplace transform";
            direct.parameters = where;
            direct.empirical = d_acc / nr;
            direct.sigma = std::sqrt(
                std::max(0.0, d_acc2 / nr - direct.empirical * direct.empirical) /
                nr);
            direct.target = std::exp(t * lk);
            // size the noise from the exact second moment; when it dwarfs the
            // target no replica count we run at can resolve the identity
            const double second_exp = t * std::pow(2.0 * lambda, kappa);
            if (second_exp > 700.0) {
                direct.inconclusive = true;
            } else {
                const double pred_var =
                    std::exp(second_exp) - std::exp(2.0 * t * lk);
                direct.inconclusive =
                    std::sqrt(std::max(pred_var, 0.0)) >
                    0.2 * direct.target * std::sqrt(nr);
            }

            IdentityCheckResult integ;
            integ.name = "integrated martingale form";
            integ.parameters = where;
            integ.empirical = g_acc / nr;
            integ.sigma = std::sqrt(
                std::max(0.0, g_acc2 / nr - integ.empirical * integ.empirical) /
                nr);
            integ.target = 0.0;
            integ.inconclusive = direct.inconclusive;

            report.direct.push_back(std::move(direct));
            report.integrated.push_back(std::move(integ));
        }
    }
    return report;
}

struct TimeChangeOptions {
    std::vector<double> lambdas = {0.25};
    std::size_t time_grid = 64; // even; checkpoints where the clock is read
    double u_quantile = 0.20;   // stable-clock level, as a quantile of T(horizon)
};

struct TimeChangeReport {
    double u = 0.0;                // stable time at which the law is checked
    double mean_total_time = 0.0;  // average T(horizon)
    std::vector<double> total_times;
    std::vector<IdentityCheckResult> laplace; // one per lambda
    bool inconclusive = false;     // clock too small to test anything
};

// Weighted burst sums along the superprocess, compensated and then evaluated
// at the inverse of the clock T(t) = int <X_s, psi^{1+beta}> ds, must look
// like a spectrally positive stable process of index 1+beta run at speed one.
// Replicas whose clock never reaches u are completed with an independent
// stable increment, which is exactly how the limit process is constructed.
inline TimeChangeReport verify_time_change(
    const SimulationConfig& config,
    const std::function<double(double, double)>& psi,
    const TimeChangeOptions& opt = {}) {
    if (!psi) throw std::invalid_argument("need a test function");
    if (opt.time_grid < 4 || opt.time_grid % 2 != 0)
        throw std::invalid_argument("time grid must be even and at least 4");
    if (!(opt.u_quantile > 0.0) || !(opt.u_quantile < 1.0))
        throw std::invalid_argument("quantile must lie in (0, 1)");
    if (config.replica_count < 10)
        throw std::invalid_argument("need at least 10 replicas");
    if (config.initial.dimension() != 1)
        throw std::invalid_argument("time-change check is one-dimensional");

    SimulationConfig run = config;
    run.jump_threshold = 0.0; // every burst enters the compensated sum

    const BranchingParams& br = run.model.branching;
    const double eps = run.particle_mass;
    const double kappa = 1.0 + br.beta;
    const double comp_rate = br.b * std::pow(eps, -br.beta);
    const std::size_t m = opt.time_grid;
    const std::size_t reps = static_cast<std::size_t>(run.replica_count);
    const double horizon = run.horizon;

    // pass 1: clocks only
    std::vector<std::vector<double>> clock(reps);
    for (std::size_t rep = 0; rep < reps; ++rep) {
        Rng rng = seed_stream(run.seed, rep);
        ParticleSystem sys = init(run, rng);
        std::vector<double> tg(m + 1, 0.0);
        double prev_g = 0.0;
        {
            double g0 = 0.0;
            for (std::size_t i = 0; i < sys.alive; ++i)
                g0 += std::pow(psi(0.0, sys.position[i]), kappa);
            prev_g = eps * g0;
        }
        for (std::size_t j = 1; j <= m; ++j) {
            const double s = horizon * static_cast<double>(j) / static_cast<double>(m);
            evolve(sys, run.model, s, rng);
            double g = 0.0;
            for (std::size_t i = 0; i < sys.alive; ++i)
                g += std::pow(psi(s, sys.position[i]), kappa);
            g *= eps;
            tg[j] = tg[j - 1] + 0.5 * (prev_g + g) * horizon / static_cast<double>(m);
            prev_g = g;
        }
        clock[rep] = std::move(tg);
    }

    TimeChangeReport report;
    report.total_times.resize(reps);
    for (std::size_t rep = 0; rep < reps; ++rep) {
        report.total_times[rep] = clock[rep][m];
        report.mean_total_time += clock[rep][m] / static_cast<double>(reps);
    }
    std::vector<double> sorted = report.total_times;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t qidx = std::min<std::size_t>(
        reps - 1, static_cast<std::size_t>(opt.u_quantile *
                                           static_cast<double>(reps)));
    report.u = sorted[qidx];

    if (report.u < 1e-12) {
        report.inconclusive = true;
        for (double lambda : opt.lambdas) {
            IdentityCheckResult chk;
            chk.name = "time-changed Laplace transform";
            chk.parameters =
                detail::describe({{"lambda", lambda}, {"u", report.u}});
            chk.empirical = 1.0;
            chk.target = 1.0;
            chk.inconclusive = true;
            report.laplace.push_back(std::move(chk));
        }
        return report;
    }
    const double u = report.u;

    // inverse clock per replica, linear between checkpoints; infinity marks a
    // replica that needs grafting
    const auto invert = [&](const std::vector<double>& tg) {
        if (tg[m] < u) return std::numeric_limits<double>::infinity();
        std::size_t j = 1;
        while (tg[j] < u) ++j;
        const double lo = horizon * static_cast<double>(j - 1) / static_cast<double>(m);
        const double dt = horizon / static_cast<double>(m);
        return lo + dt * (u - tg[j - 1]) / (tg[j] - tg[j - 1]);
    };

    // pass 2: replay the same streams, now accumulating the compensated burst
    // sum up to the inversion time at full and at half checkpoint resolution
    const SpectrallyPositiveParams stable{kappa};
    std::vector<double> z_fine(reps), z_coarse(reps);
    for (std::size_t rep = 0; rep < reps; ++rep) {
        const std::vector<double>& tg = clock[rep];
        // coarse clock re-integrated from the even checkpoints while replaying
        std::vector<double> tg_half(m / 2 + 1, 0.0);

        Rng rng = seed_stream(run.seed, rep);
        ParticleSystem sys = init(run, rng);
        const double dt = horizon / static_cast<double>(m);

        std::vector<double> g_vals(m + 1, 0.0), i_vals(m + 1, 0.0);
        {
            double g0 = 0.0, i0 = 0.0;
            for (std::size_t i = 0; i < sys.alive; ++i) {
                const double v = psi(0.0, sys.position[i]);
                g0 += std::pow(v, kappa);
                i0 += v;
            }
            g_vals[0] = eps * g0;
            i_vals[0] = eps * i0;
        }
        std::vector<std::pair<double, double>> bursts; // (time, r * psi)
        for (std::size_t j = 1; j <= m; ++j) {
            const double s = horizon * static_cast<double>(j) / static_cast<double>(m);
            const auto records = evolve(sys, run.model, s, rng);
            for (const auto& rec : records)
                bursts.emplace_back(rec.time,
                                    rec.mass * psi(rec.time, rec.location[0]));
            double g = 0.0, iv = 0.0;
            for (std::size_t i = 0; i < sys.alive; ++i) {
                const double v = psi(s, sys.position[i]);
                g += std::pow(v, kappa);
                iv += v;
            }
            g_vals[j] = eps * g;
            i_vals[j] = eps * iv;
        }

        // compensator integrals on both grids
        std::vector<double> comp(m + 1, 0.0);
        for (std::size_t j = 1; j <= m; ++j)
            comp[j] = comp[j - 1] +
                      comp_rate * 0.5 * (i_vals[j - 1] + i_vals[j]) * dt;
        std::vector<double> comp_half(m / 2 + 1, 0.0);
        for (std::size_t j = 1; j <= m / 2; ++j) {
            comp_half[j] =
                comp_half[j - 1] + comp_rate * 0.5 *
                                       (i_vals[2 * (j - 1)] + i_vals[2 * j]) *
                                       2.0 * dt;
            tg_half[j] = tg_half[j - 1] +
                         0.5 * (g_vals[2 * (j - 1)] + g_vals[2 * j]) * 2.0 * dt;
        }

        const auto z_at = [&](double s_star, const std::vector<double>& cg,
                              std::size_t cells) {
            const double step = horizon / static_cast<double>(cells);
            double sum = 0.0;
            for (const auto& [bt, bv] : bursts)
                if (bt <= s_star) sum += bv;
            const std::size_t j = std::min<std::size_t>(
                cells, static_cast<std::size_t>(std::ceil(s_star / step - 1e-12)));
            const std::size_t lo = j > 0 ? j - 1 : 0;
            const double frac =
                j > 0 ? (s_star - step * static_cast<double>(lo)) / step : 0.0;
            const double c = cg[lo] + (cg[j] - cg[lo]) * frac;
            return sum - c;
        };

        const auto invert_half = [&](const std::vector<double>& th) {
            if (th[m / 2] < u) return std::numeric_limits<double>::infinity();
            std::size_t j = 1;
            while (th[j] < u) ++j;
            const double step = horizon / static_cast<double>(m / 2);
            return step * (static_cast<double>(j - 1) +
                           (u - th[j - 1]) / (th[j] - th[j - 1]));
        };

        const double tau_fine = invert(tg);
        const double tau_half = invert_half(tg_half);

        // one unit draw serves both resolutions so the graft is coupled
        Rng graft_rng = seed_stream(run.seed ^ 0x9e3779b97f4a7c15ULL, rep);
        const double unit = sample_spectrally_positive(stable, 1.0, graft_rng);

        if (std::isinf(tau_fine)) {
            const double remain = std::max(u - tg[m], 0.0);
            z_fine[rep] = z_at(horizon, comp, m) +
                          std::pow(remain, 1.0 / kappa) * unit;
        } else {
            z_fine[rep] = z_at(tau_fine, comp, m);
        }
        if (std::isinf(tau_half)) {
            const double remain = std::max(u - tg_half[m / 2], 0.0);
            z_coarse[rep] = z_at(horizon, comp_half, m / 2) +
                            std::pow(remain, 1.0 / kappa) * unit;
        } else {
            z_coarse[rep] = z_at(tau_half, comp_half, m / 2);
        }
    }

    for (double lambda : opt.lambdas) {
        if (!(lambda >= 0.0))
            throw std::invalid_argument("lambda must be nonnegative");
        double acc = 0.0, acc2 = 0.0, acc_coarse = 0.0;
        for (std::size_t rep = 0; rep < reps; ++rep) {
            const double v = std::exp(-lambda * z_fine[rep]);
            acc += v;
            acc2 += v * v;
            acc_coarse += std::exp(-lambda * z_coarse[rep]);
        }
        IdentityCheckResult chk;
        chk.name = "time-changed Laplace transform";
        chk.parameters = detail::describe({{"lambda", lambda}, {"u", u}});
        chk.empirical = acc / static_cast<double>(reps);
        chk.sigma = std::sqrt(
            std::max(0.0,
                     acc2 / static_cast<double>(reps) - chk.empirical * chk.empirical) /
            static_cast<double>(reps));
        chk.target = std::exp(u * std::pow(lambda, kappa));
        chk.bias_estimate =
            std::abs(chk.empirical - acc_coarse / static_cast<double>(reps));
        report.laplace.push_back(std::move(chk));
    }
    return report;
}

} // namespace superproc
