#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <superproc/branching.hpp>
#include <superproc/rng.hpp>

namespace superproc {

struct RegimeReport {
    bool continuous = false;
    // critical Holder index of the density; NaN outside the continuous regime
    double eta_c = std::numeric_limits<double>::quiet_NaN();
    // index of the optimal modulus, switching form at beta = (alpha-1)/2
    double eta_c_prime = 0.0;
    // conjectured optimal index at a fixed spatial point; metadata only
    double eta_bar_c = 0.0;
};

// Exact arithmetic dichotomy: a density regular enough to talk about exists
// only for one-dimensional motion with alpha > 1 + beta; everywhere else the
// density (when it exists at fixed times) is locally unbounded.
inline RegimeReport classify_regime(const ModelParams& model) {
    detail::check_alpha(model.motion.alpha);
    if (model.motion.dimension != 1 && model.motion.dimension != 2)
        throw std::invalid_argument("dimension must be 1 or 2");
    const double alpha = model.motion.alpha;
    const double beta = model.branching.beta;
    if (!(beta > 0.0 && beta < 1.0))
        throw std::invalid_argument("beta must lie in (0,1)");
    if (!density_regime(model))
        throw std::invalid_argument(
            "outside the density regime: requires d < alpha/beta");

    RegimeReport report;
    report.continuous = model.motion.dimension == 1 && alpha > 1.0 + beta;
    if (report.continuous) report.eta_c = alpha / (1.0 + beta) - 1.0;
    report.eta_c_prime = beta >= 0.5 * (alpha - 1.0)
                             ? alpha / (1.0 + beta) - 1.0
                             : beta / (1.0 + beta);
    report.eta_bar_c = std::min((1.0 + alpha) / (1.0 + beta) - 1.0, 1.0);
    return report;
}

struct OscillationTable {
    std::vector<int> levels;
    std::vector<double> oscillations;
    double window_lo = 0.0;
    double window_hi = 0.0;
};

namespace detail {

// piecewise-constant read of a 1d histogram field; the right grid edge is
// folded into the last bin so dyadic endpoints on the boundary stay usable
inline double field_value_1d(const DensityField& field, double x) {
    const double origin = field.grid.origin[0];
    const double h = field.grid.bin_width;
    const auto bins = static_cast<std::size_t>(field.grid.bins[0]);
    const double off = (x - origin) / h;
    if (off < 0.0 || off > static_cast<double>(bins) * (1.0 + 1e-12))
        throw std::invalid_argument("evaluation point outside the field grid");
    const auto j = std::min(static_cast<std::size_t>(off), bins - 1);
    return field.values[j];
}

} // namespace detail

// Largest increment of the field over dyadic cells [k 2^-n, (k+1) 2^-n] whose
// closure lies in the window, for each level in [n_min, n_max].
inline OscillationTable dyadic_oscillations(const DensityField& field,
                                            double window_lo, double window_hi,
                                            int n_min, int n_max) {
    if (field.grid.bins.size() != 1)
        throw std::invalid_argument("oscillation tables require a 1d field");
    if (!(window_lo < window_hi))
        throw std::invalid_argument("window must be a nonempty interval");
    if (n_min > n_max) throw std::invalid_argument("empty level range");
    const double origin = field.grid.origin[0];
    const double extent =
        origin + field.grid.bin_width * static_cast<double>(field.grid.bins[0]);
    if (window_lo < origin - 1e-12 || window_hi > extent + 1e-12)
        throw std::invalid_argument("window must lie inside the field grid");
    if (field.grid.bin_width > std::pow(2.0, -n_max) * (1.0 + 1e-12))
        throw std::invalid_argument(
            "finest level exceeds the grid resolution");

    OscillationTable table;
    table.window_lo = window_lo;
    table.window_hi = window_hi;
    for (int n = n_min; n <= n_max; ++n) {
        const double cell = std::pow(2.0, -n);
        const auto k0 = static_cast<long long>(std::ceil(window_lo / cell - 1e-9));
        const auto k1 = static_cast<long long>(std::floor(window_hi / cell + 1e-9)) - 1;
        if (k1 < k0)
            throw std::invalid_argument("window holds no dyadic cell at level " +
                                        std::to_string(n));
        double osc = 0.0;
        for (long long k = k0; k <= k1; ++k) {
            const double left = detail::field_value_1d(field, static_cast<double>(k) * cell);
            const double right =
                detail::field_value_1d(field, static_cast<double>(k + 1) * cell);
            osc = std::max(osc, std::abs(right - left));
        }
        table.levels.push_back(n);
        table.oscillations.push_back(osc);
    }
    return table;
}

struct HolderEstimate {
    double exponent = 0.0;
    double std_error = 0.0;
    int n_min = 0;
    int n_max = 0;
    double window_lo = 0.0;
    double window_hi = 0.0;
};

namespace detail {

struct WlsFit {
    double slope = 0.0;
    double slope_var = 0.0; // from the supplied weights treated as 1/variance
    double residual_var = 0.0;
    double sxx_centered = 0.0;
    std::size_t points = 0;
};

inline WlsFit weighted_line_fit(const std::vector<double>& x,
                                const std::vector<double>& y,
                                const std::vector<double>& w) {
    double sw = 0.0, swx = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sw += w[i];
        swx += w[i] * x[i];
        swy += w[i] * y[i];
    }
    const double xbar = swx / sw, ybar = swy / sw;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += w[i] * (x[i] - xbar) * (x[i] - xbar);
        sxy += w[i] * (x[i] - xbar) * (y[i] - ybar);
    }
    WlsFit fit;
    fit.points = x.size();
    fit.sxx_centered = sxx;
    fit.slope = sxy / sxx;
    fit.slope_var = 1.0 / sxx;
    double rss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - ybar - fit.slope * (x[i] - xbar);
        rss += w[i] * r * r;
    }
    fit.residual_var = x.size() > 2 ? rss / static_cast<double>(x.size() - 2) : 0.0;
    return fit;
}

} // namespace detail

// Least squares of log2 oscillation against the level; the negated slope
// estimates the Holder exponent. Constant fields (all oscillations zero) get
// an infinite sentinel rather than an error.
inline HolderEstimate fit_exponent(const OscillationTable& table) {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < table.levels.size(); ++i)
        if (table.oscillations[i] > 0.0) {
            x.push_back(static_cast<double>(table.levels[i]));
            y.push_back(std::log2(table.oscillations[i]));
        }

    HolderEstimate est;
    est.window_lo = table.window_lo;
    est.window_hi = table.window_hi;
    if (x.empty()) {
        est.exponent = std::numeric_limits<double>::infinity();
        if (!table.levels.empty()) {
            est.n_min = table.levels.front();
            est.n_max = table.levels.back();
        }
        return est;
    }
    if (x.size() < 3)
        throw std::invalid_argument(
            "exponent fit needs at least three levels with positive oscillation");

    std::vector<double> w(x.size(), 1.0);
    const auto fit = detail::weighted_line_fit(x, y, w);
    est.exponent = -fit.slope;
    est.std_error = std::sqrt(fit.residual_var / fit.sxx_centered);
    est.n_min = static_cast<int>(x.front());
    est.n_max = static_cast<int>(x.back());
    return est;
}

// Replica-aggregated fit: per level, the mean log2 oscillation across tables
// with weight the inverse variance of that mean. Coarse levels average few
// independent increments, so this downweights them automatically.
inline HolderEstimate fit_exponent_replicated(
    const std::vector<OscillationTable>& tables) {
    if (tables.empty()) throw std::invalid_argument("no oscillation tables");
    if (tables.size() == 1) return fit_exponent(tables.front());
    const auto& first = tables.front();
    for (const auto& t : tables)
        if (t.levels != first.levels)
            throw std::invalid_argument("tables disagree on levels");

    const auto reps = static_cast<double>(tables.size());
    std::vector<double> x, y, w;
    for (std::size_t i = 0; i < first.levels.size(); ++i) {
        bool usable = true;
        double mean = 0.0;
        for (const auto& t : tables) {
            if (!(t.oscillations[i] > 0.0)) {
                usable = false;
                break;
            }
            mean += std::log2(t.oscillations[i]);
        }
        if (!usable) continue;
        mean /= reps;
        double var = 0.0;
        for (const auto& t : tables) {
            const double d = std::log2(t.oscillations[i]) - mean;
            var += d * d;
        }
        var /= (reps - 1.0);
        x.push_back(static_cast<double>(first.levels[i]));
        y.push_back(mean);
        w.push_back(1.0 / std::max(var / reps, 1e-12));
    }
    if (x.size() < 3)
        throw std::invalid_argument(
            "exponent fit needs at least three levels with positive oscillation");

    const auto fit = detail::weighted_line_fit(x, y, w);
    HolderEstimate est;
    est.exponent = -fit.slope;
    est.std_error = std::sqrt(fit.slope_var);
    est.n_min = static_cast<int>(x.front());
    est.n_max = static_cast<int>(x.back());
    est.window_lo = first.window_lo;
    est.window_hi = first.window_hi;
    return est;
}

// Fit-range guard for simulated fields: levels are meaningful only while the
// dyadic cell is at least four histogram bins wide and holds, on average, at
// least thirty particles; anything finer measures sampling noise.
inline std::pair<int, int> admissible_level_range(double window_mass,
                                                  double particle_mass,
                                                  double bin_width,
                                                  double window_length) {
    if (!(window_mass > 0.0) || !(particle_mass > 0.0) || !(bin_width > 0.0) ||
        !(window_length > 0.0))
        throw std::invalid_argument("admissible_level_range needs positive inputs");
    const double particles = window_mass / particle_mass;
    const int n_resolution =
        static_cast<int>(std::floor(std::log2(1.0 / (4.0 * bin_width)) + 1e-9));
    const int n_occupancy = static_cast<int>(
        std::floor(std::log2(particles / (30.0 * window_length)) + 1e-9));
    const int n_max = std::min(n_resolution, n_occupancy);
    const int n_min = std::max(
        2, static_cast<int>(std::ceil(std::log2(4.0 / window_length) - 1e-9)));
    if (n_max - n_min < 2)
        throw std::invalid_argument(
            "window, resolution and occupancy admit fewer than three fit levels");
    return {n_min, n_max};
}

struct RefinementLevel {
    double bin_width = 0.0;
    double mean_max = 0.0; // max bin value averaged over surviving replicas
};

struct UnboundednessReport {
    std::vector<RefinementLevel> levels;
    std::vector<double> growth_ratios; // consecutive mean-max ratios
    int replicas_total = 0;
    int replicas_used = 0; // replicas with mass in the window at the horizon
    // share of used replicas whose own final three ratios all clear rho_min
    double diverging_fraction = 0.0;
    std::string verdict; // "diverging", "stable" or "inconclusive"
};

// Re-bins each simulated replica at successively halved bin widths and looks
// at the growth of the largest bin value. A continuous density stabilizes;
// in the locally unbounded regime the maximum keeps growing. The threshold
// rho_min is a heuristic: divergence is proven without a rate, so the verdict
// is qualitative by design.
inline UnboundednessReport unboundedness_diagnostic(const SimulationConfig& config,
                                                    double window_lo,
                                                    double window_hi,
                                                    int base_bins, int n_levels,
                                                    double rho_min = 1.3) {
    if (config.model.motion.dimension != 1)
        throw std::invalid_argument("refinement diagnostic requires 1d motion");
    if (!(window_lo < window_hi))
        throw std::invalid_argument("window must be a nonempty interval");
    if (base_bins < 1) throw std::invalid_argument("need at least one base bin");
    if (n_levels < 4)
        throw std::invalid_argument(
            "need at least four refinement levels for a verdict");
    if (!(rho_min > 1.0))
        throw std::invalid_argument("growth threshold must exceed one");
    // the t = 0 field (the initial measure itself) is a valid target even
    // though evolution demands a positive horizon
    SimulationConfig checked = config;
    if (checked.horizon == 0.0) checked.horizon = 1.0;
    detail::validate_config(checked);

    UnboundednessReport report;
    report.replicas_total = config.replica_count;
    std::vector<double> sum_max(static_cast<std::size_t>(n_levels), 0.0);
    int used = 0, diverging = 0;

    std::vector<double> level_max(static_cast<std::size_t>(n_levels));
    for (int rep = 0; rep < config.replica_count; ++rep) {
        Rng rng = seed_stream(config.seed, static_cast<std::uint64_t>(rep));
        ParticleSystem sys = init(checked, rng);
        if (config.horizon > 0.0) evolve(sys, config.model, config.horizon, rng);

        bool charged = false;
        for (std::size_t i = 0; i < sys.alive && !charged; ++i)
            charged = sys.position[i] >= window_lo && sys.position[i] < window_hi;
        if (!charged) continue;
        ++used;

        for (int lev = 0; lev < n_levels; ++lev) {
            DensityGrid grid;
            grid.origin = {window_lo};
            grid.bins = {base_bins << lev};
            grid.bin_width = (window_hi - window_lo) /
                             static_cast<double>(base_bins << lev);
            const auto field = density_histogram(sys, grid);
            double mx = 0.0;
            for (double v : field.values) mx = std::max(mx, v);
            level_max[static_cast<std::size_t>(lev)] = mx;
            sum_max[static_cast<std::size_t>(lev)] += mx;
        }
        bool steep = true;
        for (int lev = n_levels - 3; lev < n_levels; ++lev)
            steep = steep && level_max[static_cast<std::size_t>(lev)] >=
                                 rho_min * level_max[static_cast<std::size_t>(lev - 1)];
        if (steep) ++diverging;
    }

    report.replicas_used = used;
    for (int lev = 0; lev < n_levels; ++lev) {
        RefinementLevel entry;
        entry.bin_width =
            (window_hi - window_lo) / static_cast<double>(base_bins << lev);
        entry.mean_max =
            used > 0 ? sum_max[static_cast<std::size_t>(lev)] / used : 0.0;
        report.levels.push_back(entry);
    }
    if (used == 0) {
        report.verdict = "inconclusive";
        return report;
    }
    for (int lev = 1; lev < n_levels; ++lev)
        report.growth_ratios.push_back(report.levels[static_cast<std::size_t>(lev)].mean_max /
                                       report.levels[static_cast<std::size_t>(lev - 1)].mean_max);
    bool steep = true;
    for (std::size_t i = report.growth_ratios.size() - 3;
         i < report.growth_ratios.size(); ++i)
        steep = steep && report.growth_ratios[i] >= rho_min;
    report.verdict = steep ? "diverging" : "stable";
    report.diverging_fraction = static_cast<double>(diverging) / used;
    return report;
}

// Threshold c making the expected number of branching bursts above
// c (t-s)^{1/(1+beta)-gamma} at most eps_target: the dyadic first-moment
// bound sums to a geometric series whose balance inverts in closed form.
inline double big_jump_threshold(const BranchingParams& branching, double mu_mass,
                                 double t, double gamma, double eps_target) {
    const double beta = branching.beta;
    if (!(beta > 0.0 && beta < 1.0))
        throw std::invalid_argument("beta must lie in (0,1)");
    if (!(gamma > 0.0 && gamma < 1.0 / (1.0 + beta)))
        throw std::invalid_argument("gamma must lie in (0, 1/(1+beta))");
    if (!(mu_mass > 0.0) || !(t > 0.0))
        throw std::invalid_argument("mass and horizon must be positive");
    if (!(eps_target > 0.0 && eps_target < 1.0))
        throw std::invalid_argument("target probability must lie in (0,1)");

    const double mass_bound = mu_mass * std::exp(std::abs(branching.a) * t);
    const double gb = gamma * (1.0 + beta);
    const double series = std::pow(2.0, -gb) / (1.0 - std::pow(2.0, -gb));
    const double c_pow = branching.rho() / (1.0 + beta) * mass_bound *
                         std::pow(t, gb) * series / eps_target;
    return std::pow(c_pow, 1.0 / (1.0 + beta));
}

struct BigJumpScan {
    std::size_t record_count = 0;
    double max_ratio = 0.0;        // of r / (t-s)^{1/(1+beta)-gamma}
    std::size_t exceed_count = 0;  // records with that ratio above c
    // comparison against (t-s)^theta log^theta(1/(t-s)), which is only
    // meaningful for records close to the horizon (t-s < 1/e)
    double max_modulus_ratio = 0.0;
    std::size_t modulus_count = 0;
};

inline BigJumpScan big_jump_scan(const std::vector<JumpRecord>& records,
                                 const BranchingParams& branching, double t,
                                 double gamma, double c) {
    const double beta = branching.beta;
    if (!(beta > 0.0 && beta < 1.0))
        throw std::invalid_argument("beta must lie in (0,1)");
    if (!(gamma > 0.0 && gamma < 1.0 / (1.0 + beta)))
        throw std::invalid_argument("gamma must lie in (0, 1/(1+beta))");
    if (!(t > 0.0)) throw std::invalid_argument("horizon must be positive");
    if (!(c > 0.0)) throw std::invalid_argument("threshold must be positive");

    const double lambda = 1.0 / (1.0 + beta) - gamma;
    const double theta = 1.0 / (1.0 + beta);
    BigJumpScan scan;
    scan.record_count = records.size();
    for (const auto& r : records) {
        const double gap = t - r.time;
        if (!(gap > 0.0))
            throw std::invalid_argument("jump record at or beyond the horizon");
        const double ratio = r.mass / std::pow(gap, lambda);
        scan.max_ratio = std::max(scan.max_ratio, ratio);
        if (ratio > c) ++scan.exceed_count;
        if (gap < 0.36787944117144233) {
            const double modulus =
                std::pow(gap, theta) * std::pow(std::log(1.0 / gap), theta);
            scan.max_modulus_ratio =
                std::max(scan.max_modulus_ratio, r.mass / modulus);
            ++scan.modulus_count;
        }
    }
    return scan;
}

} // namespace superproc
