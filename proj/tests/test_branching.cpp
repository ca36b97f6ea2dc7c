#include <catch2/catch_amalgamated.hpp>

#include <superproc/branching.hpp>
#include <superproc/rng.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

using namespace superproc;

namespace {

SimulationConfig base_config() {
    SimulationConfig cfg;
    cfg.model.motion = {2.0, 1};
    cfg.model.branching = {0.0, 1.0, 0.5};
    cfg.initial = InitialMeasure::point_mass({0.0}, 1.0);
    cfg.horizon = 1.0;
    cfg.particle_mass = 1e-3;
    cfg.seed = 2024;
    cfg.replica_count = 2;
    return cfg;
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

} // namespace

TEST_CASE("branching parameters recompute rho") {
    BranchingParams p{0.0, 1.0, 0.5};
    REQUIRE(p.rho() == Catch::Approx(0.75 / std::sqrt(std::numbers::pi)).epsilon(1e-13));
    BranchingParams q{0.0, 2.0, 0.2};
    // 2 * 1.2 * 0.2 / Gamma(0.8)
    REQUIRE(q.rho() == Catch::Approx(0.4122897692).epsilon(1e-9));
}

TEST_CASE("offspring law matches the generating function") {
    const auto& dist = offspring_distribution(0.5);

    SECTION("low-order probabilities") {
        REQUIRE(dist.pmf(0) == Catch::Approx(2.0 / 3.0).epsilon(1e-14));
        REQUIRE(dist.pmf(1) == 0.0);
        REQUIRE(dist.pmf(2) == Catch::Approx(0.25).epsilon(1e-14));
        REQUIRE(dist.pmf(3) == Catch::Approx(1.0 / 24.0).epsilon(1e-13));
    }

    SECTION("closed form at larger k") {
        // p_k = beta * Gamma(k-1-beta) / (Gamma(1-beta) k!)
        for (int k : {10, 57, 300}) {
            double expect = 0.5 * std::exp(std::lgamma(k - 1.5) -
                                           std::lgamma(0.5) -
                                           std::lgamma(k + 1.0));
            REQUIRE(dist.pmf(k) == Catch::Approx(expect).epsilon(1e-10));
        }
    }

    SECTION("empirical frequencies") {
        Rng rng = seed_stream(301, 0);
        const int n = 1000000;
        int c0 = 0, c1 = 0, c2 = 0;
        long long over100 = 0;
        for (int i = 0; i < n; ++i) {
            auto k = dist.draw(rng);
            if (k == 0) ++c0;
            if (k == 1) ++c1;
            if (k == 2) ++c2;
            if (k > 100) ++over100;
        }
        REQUIRE(c1 == 0);
        double s0 = std::sqrt(2.0 / 3.0 * (1.0 / 3.0) / n);
        REQUIRE(std::abs(static_cast<double>(c0) / n - 2.0 / 3.0) < 3.0 * s0);
        double s2 = std::sqrt(0.25 * 0.75 / n);
        REQUIRE(std::abs(static_cast<double>(c2) / n - 0.25) < 3.0 * s2);
        double t100 = dist.tail(100);
        REQUIRE(std::abs(over100 - n * t100) < 3.0 * std::sqrt(n * t100));
    }

    SECTION("tail mass stays normalized") {
        REQUIRE(dist.tail(0) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
        REQUIRE(dist.tail(2) == Catch::Approx(1.0 / 3.0 - 0.25).epsilon(1e-10));
        REQUIRE(dist.tail(1000000) > 0.0);
        REQUIRE(dist.tail(1000000) < 1e-9);
    }
}

TEST_CASE("init places the configured particles") {
    SECTION("point mass") {
        auto cfg = base_config();
        Rng rng = seed_stream(cfg.seed, 0);
        auto sys = init(cfg, rng);
        REQUIRE(sys.alive == 1000);
        REQUIRE(sys.total_mass() == Catch::Approx(1.0).margin(1e-12));
        for (double x : sys.position) REQUIRE(x == 0.0);
        REQUIRE(sys.jump_threshold == Catch::Approx(0.01)); // default 10 eps
    }

    SECTION("uniform box within the DKW band") {
        auto cfg = base_config();
        cfg.initial = InitialMeasure::uniform_box({0.0}, {1.0}, 1.0);
        cfg.particle_mass = 0.01;
        Rng rng = seed_stream(cfg.seed, 0);
        auto sys = init(cfg, rng);
        REQUIRE(sys.alive == 100);
        auto xs = sys.position;
        std::sort(xs.begin(), xs.end());
        double dn = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            dn = std::max(dn, std::abs(xs[i] - static_cast<double>(i) / xs.size()));
            dn = std::max(dn,
                          std::abs(static_cast<double>(i + 1) / xs.size() - xs[i]));
        }
        // DKW at confidence 1e-3
        REQUIRE(dn < std::sqrt(std::log(2.0 / 1e-3) / (2.0 * 100)));
    }

    SECTION("discrete atoms") {
        auto cfg = base_config();
        cfg.initial = InitialMeasure::discrete({{{-1.0}, 0.3}, {{2.0}, 0.9}});
        cfg.particle_mass = 0.01;
        Rng rng = seed_stream(7, 0);
        auto sys = init(cfg, rng);
        REQUIRE(sys.alive == 120);
        int at2 = 0;
        for (double x : sys.position) {
            REQUIRE((x == -1.0 || x == 2.0));
            if (x == 2.0) ++at2;
        }
        // mass ratio 0.75, n=120
        REQUIRE(std::abs(at2 / 120.0 - 0.75) < 3.0 * std::sqrt(0.75 * 0.25 / 120.0));
    }

    SECTION("validation") {
        auto cfg = base_config();
        cfg.initial.total_mass = 0.0;
        Rng rng(1);
        REQUIRE_THROWS_AS(init(cfg, rng), std::invalid_argument);
        cfg = base_config();
        cfg.particle_mass = 2.0; // exceeds total mass
        REQUIRE_THROWS_AS(init(cfg, rng), std::invalid_argument);
        cfg = base_config();
        cfg.horizon = 0.0;
        REQUIRE_THROWS_AS(init(cfg, rng), std::invalid_argument);
        cfg = base_config();
        cfg.model.branching.beta = 1.0;
        REQUIRE_THROWS_AS(init(cfg, rng), std::invalid_argument);
    }
}

TEST_CASE("event clocks run at the prescribed rates") {
    auto cfg = base_config();
    cfg.initial.total_mass = 0.05; // 500 particles
    cfg.particle_mass = 1e-4;
    cfg.horizon = 0.02;
    cfg.model.branching.a = -2.0;
    Rng rng = seed_stream(77, 0);
    auto sys = init(cfg, rng, false);
    evolve(sys, cfg.model, cfg.horizon, rng);

    // lambda_eps = 1.5 * (1e-4)^{-1/2} = 150
    double rate = static_cast<double>(sys.branch_events) / sys.particle_time;
    double sig = std::sqrt(static_cast<double>(sys.branch_events)) / sys.particle_time;
    REQUIRE(std::abs(rate - 150.0) < 3.0 * sig);

    double drate = static_cast<double>(sys.drift_events) / sys.particle_time;
    double dsig = std::sqrt(static_cast<double>(sys.drift_events)) / sys.particle_time;
    REQUIRE(std::abs(drate - 2.0) < 3.0 * dsig);
}

TEST_CASE("terminal mean mass tracks the drift exponential") {
    auto run = [](double a, double b, std::uint64_t seed) {
        auto cfg = base_config();
        cfg.model.branching.a = a;
        cfg.model.branching.b = b;
        cfg.seed = seed;
        const int reps = 300;
        double s = 0.0, s2 = 0.0;
        for (int r = 0; r < reps; ++r) {
            Rng rng = seed_stream(cfg.seed, r);
            auto sys = init(cfg, rng, false);
            evolve(sys, cfg.model, cfg.horizon, rng);
            double m = sys.total_mass();
            s += m;
            s2 += m * m;
        }
        double mean = s / reps;
        double sig = std::sqrt(std::max(s2 / reps - mean * mean, 0.0) / reps);
        return std::pair{mean, sig};
    };

    // critical branching preserves expected mass
    auto [m0, s0] = run(0.0, 1.0, 401);
    REQUIRE(std::abs(m0 - 1.0) < 3.0 * s0);

    // drift clock alone: mass is a thinned/grown particle count with clean
    // binomial statistics, so the e^{at} mean is pinned very sharply
    auto [mp, sp] = run(0.4, 1e-9, 402);
    REQUIRE(std::abs(mp - std::exp(0.4)) < 3.0 * sp);
    auto [mn, sn] = run(-0.7, 1e-9, 403);
    REQUIRE(std::abs(mn - std::exp(-0.7)) < 3.0 * sn);
}

TEST_CASE("constant-data log-Laplace closed form") {
    BranchingParams crit{0.0, 1.0, 0.5};
    const double inf = std::numeric_limits<double>::infinity();

    REQUIRE(exact_total_mass_laplace(crit, 1.0, 1.0, 1.0) ==
            Catch::Approx(std::exp(-4.0 / 9.0)).epsilon(1e-12));
    REQUIRE(exact_total_mass_laplace(crit, 1.0, 1.0, inf) ==
            Catch::Approx(std::exp(-4.0)).epsilon(1e-12));
    REQUIRE(exact_total_mass_laplace(crit, 2.0, 0.0, 0.7) ==
            Catch::Approx(std::exp(-1.4)).epsilon(1e-12));
    REQUIRE(exact_total_mass_laplace(crit, 1.0, 1.0, 0.0) == 1.0);

    SECTION("general drift against a Runge-Kutta integration") {
        BranchingParams p{0.8, 2.0, 0.3};
        const double lam = 1.5, t = 0.7, m = 2.0;
        // v' = a v - b v^{1+beta}, v(0) = lambda
        double v = lam;
        const int n = 200000;
        const double h = t / n;
        auto f = [&](double u) { return p.a * u - p.b * std::pow(u, 1.3); };
        for (int i = 0; i < n; ++i) {
            double k1 = f(v);
            double k2 = f(v + 0.5 * h * k1);
            double k3 = f(v + 0.5 * h * k2);
            double k4 = f(v + h * k3);
            v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        REQUIRE(exact_total_mass_laplace(p, m, t, lam) ==
                Catch::Approx(std::exp(-m * v)).epsilon(1e-9));
        // continuity in the drift parameter at a = 0
        BranchingParams p0{0.0, 2.0, 0.3}, pe{1e-9, 2.0, 0.3};
        REQUIRE(std::abs(exact_total_mass_laplace(p0, m, t, lam) -
                         exact_total_mass_laplace(pe, m, t, lam)) < 1e-8);
    }
}

TEST_CASE("Monte Carlo total-mass Laplace functional") {
    auto cfg = base_config();
    cfg.replica_count = 600;
    cfg.seed = 515;

    SECTION("matches the closed form at lambda=1") {
        auto est = total_mass_laplace(cfg, 1.0);
        REQUIRE(est.replicas == 600);
        REQUIRE(est.std_error > 0.0);
        // particle-mass bias at eps=1e-3 is well under a percent
        REQUIRE(std::abs(est.mean - std::exp(-4.0 / 9.0)) <
                3.0 * est.std_error + 0.01);
    }

    SECTION("extinction probability at lambda=inf") {
        auto est = total_mass_laplace(cfg, std::numeric_limits<double>::infinity());
        REQUIRE(std::abs(est.mean - std::exp(-4.0)) < 3.0 * est.std_error + 0.01);
    }

    SECTION("drifted mechanisms against the closed form") {
        for (double a : {0.8, -0.8}) {
            auto drifted = cfg;
            drifted.model.branching.a = a;
            drifted.seed = 517 + static_cast<std::uint64_t>(a > 0);
            auto est = total_mass_laplace(drifted, 1.0);
            double exact =
                exact_total_mass_laplace(drifted.model.branching, 1.0, 1.0, 1.0);
            INFO("a=" << a);
            REQUIRE(std::abs(est.mean - exact) < 3.0 * est.std_error + 0.01);
        }
    }

    SECTION("degenerate cases") {
        REQUIRE(total_mass_laplace(cfg, 0.0).mean == 1.0);
        auto tiny = cfg;
        tiny.horizon = 1e-12;
        tiny.replica_count = 2;
        auto est = total_mass_laplace(tiny, 2.0);
        REQUIRE(est.mean == Catch::Approx(std::exp(-2.0)).epsilon(1e-9));
    }

    SECTION("replica count validation") {
        auto bad = cfg;
        bad.replica_count = 1;
        REQUIRE_THROWS_AS(total_mass_laplace(bad, 1.0), std::invalid_argument);
        bad.replica_count = 0;
        REQUIRE_THROWS_AS(total_mass_laplace(bad, 1.0), std::invalid_argument);
    }
}

TEST_CASE("Laplace residual shrinks as particles refine") {
    auto residual = [](double eps, int reps, std::uint64_t seed) {
        auto cfg = base_config();
        cfg.particle_mass = eps;
        cfg.replica_count = reps;
        cfg.seed = seed;
        auto est = total_mass_laplace(cfg, 1.0);
        return std::abs(est.mean - std::exp(-4.0 / 9.0));
    };
    double r1 = residual(1e-1, 4000, 621);
    double r3 = residual(1e-3, 4000, 623);
    REQUIRE(r3 < r1);
}

TEST_CASE("density histogram bookkeeping") {
    auto cfg = base_config();

    SECTION("point concentration lands in one bin") {
        Rng rng = seed_stream(cfg.seed, 0);
        auto sys = init(cfg, rng);
        DensityGrid grid{{-0.05}, 0.1, {3}};
        auto field = density_histogram(sys, grid);
        REQUIRE(field.values.size() == 3);
        REQUIRE(field.values[0] == Catch::Approx(10.0 * field.total_mass));
        REQUIRE(field.values[1] == 0.0);
        REQUIRE(field.values[2] == 0.0);
        REQUIRE(field.total_mass == Catch::Approx(1.0).margin(1e-12));
        double sum = 0.0;
        for (double v : field.values) sum += v;
        REQUIRE(sum * grid.bin_width ==
                Catch::Approx(field.total_mass).epsilon(1e-12));
        REQUIRE_FALSE(field.coverage_warning);
    }

    SECTION("empty system yields a zero field") {
        ParticleSystem sys;
        sys.dimension = 1;
        sys.particle_mass = 1e-3;
        auto field = density_histogram(sys, DensityGrid{{0.0}, 0.5, {4}});
        REQUIRE(field.total_mass == 0.0);
        for (double v : field.values) REQUIRE(v == 0.0);
    }

    SECTION("mass outside the grid raises the coverage warning") {
        Rng rng = seed_stream(cfg.seed, 0);
        auto sys = init(cfg, rng);
        auto field = density_histogram(sys, DensityGrid{{5.0}, 0.1, {3}});
        REQUIRE(field.coverage_warning);
        REQUIRE(field.total_mass == 0.0);
    }
}

TEST_CASE("pure motion histogram follows the heat kernel") {
    auto cfg = base_config();
    cfg.model.branching.b = 1e-12; // motion only: branching clock essentially off
    Rng rng = seed_stream(808, 0);
    auto sys = init(cfg, rng);
    evolve(sys, cfg.model, 1.0, rng);
    REQUIRE(sys.alive == 1000);

    DensityGrid grid{{-4.0}, 0.5, {16}};
    auto field = density_histogram(sys, grid);
    REQUIRE_FALSE(field.coverage_warning);
    for (int j = 0; j < 16; ++j) {
        double lo = grid.origin[0] + j * grid.bin_width;
        double hi = lo + grid.bin_width;
        // variance of the alpha=2 increment over t=1 is 2
        double pbin = norm_cdf(hi / std::sqrt(2.0)) - norm_cdf(lo / std::sqrt(2.0));
        double sig_mass = cfg.particle_mass * std::sqrt(1000.0 * pbin * (1.0 - pbin));
        double mass_j = field.values[static_cast<std::size_t>(j)] * grid.bin_width;
        REQUIRE(std::abs(mass_j - pbin) < 3.5 * sig_mass + 1e-9);
    }
}

TEST_CASE("burst records carry quantized masses at valid times") {
    auto cfg = base_config();
    cfg.particle_mass = 2e-3;
    cfg.seed = 909;
    int with_records = 0;
    for (int r = 0; r < 50; ++r) {
        Rng rng = seed_stream(cfg.seed, r);
        auto sys = init(cfg, rng);
        auto records = evolve(sys, cfg.model, cfg.horizon, rng);
        if (!records.empty()) ++with_records;
        double prev = 0.0;
        for (const auto& rec : records) {
            REQUIRE(rec.mass >= sys.jump_threshold - 1e-15);
            double k = rec.mass / cfg.particle_mass;
            REQUIRE(std::abs(k - std::round(k)) < 1e-9);
            REQUIRE(rec.time >= prev);
            REQUIRE(rec.time < cfg.horizon);
            REQUIRE(rec.location.size() == 1);
            REQUIRE(std::isfinite(rec.location[0]));
            prev = rec.time;
        }
    }
    REQUIRE(with_records > 40);
}

TEST_CASE("recorded jump intensity agrees with the compensator tail") {
    auto cfg = base_config();
    cfg.particle_mass = 0.05;
    cfg.replica_count = 1000;
    cfg.seed = 1111;
    cfg.jump_threshold = 0.5; // 10 eps, below the probe threshold

    std::vector<JumpRecord> all;
    for (int r = 0; r < cfg.replica_count; ++r) {
        Rng rng = seed_stream(cfg.seed, r);
        auto sys = init(cfg, rng, false);
        auto recs = evolve(sys, cfg.model, cfg.horizon, rng);
        all.insert(all.end(), recs.begin(), recs.end());
    }

    auto check = empirical_jump_intensity(all, cfg, 1.0); // r_min = 20 eps
    REQUIRE(check.defined);
    REQUIRE_FALSE(check.granularity_warning);
    // rho/(1+beta) r_min^{-1.5} |mu| t per replica = 0.28209...
    REQUIRE(check.theoretical_mean ==
            Catch::Approx(1000.0 * 0.75 / std::sqrt(std::numbers::pi) / 1.5)
                .epsilon(1e-12));
    REQUIRE(std::abs(check.z_score) < 3.0);

    auto empty = empirical_jump_intensity({}, cfg, 1.0);
    REQUIRE_FALSE(empty.defined);

    auto coarse = empirical_jump_intensity(all, cfg, 0.2);
    REQUIRE(coarse.granularity_warning);
}

TEST_CASE("evolution is reproducible per stream") {
    auto cfg = base_config();
    cfg.particle_mass = 5e-3;
    auto run = [&](int rep) {
        Rng rng = seed_stream(cfg.seed, rep);
        auto sys = init(cfg, rng);
        auto recs = evolve(sys, cfg.model, cfg.horizon, rng);
        return std::pair{sys.position, recs.size()};
    };
    auto [pa, na] = run(3);
    auto [pb, nb] = run(3);
    REQUIRE(pa == pb);
    REQUIRE(na == nb);
    auto [pc, nc] = run(4);
    REQUIRE(pa != pc);
}

TEST_CASE("event budget guards runaway growth") {
    auto cfg = base_config();
    Rng rng = seed_stream(13, 0);
    auto sys = init(cfg, rng);
    EvolveOptions opt;
    opt.max_events = 10;
    REQUIRE_THROWS_AS(evolve(sys, cfg.model, cfg.horizon, rng, opt), BudgetExceeded);
}

TEST_CASE("mass cap halts evolution early") {
    auto cfg = base_config();
    cfg.model.branching.a = 3.0; // strongly supercritical
    Rng rng = seed_stream(14, 0);
    auto sys = init(cfg, rng, false);
    EvolveOptions opt;
    opt.mass_cap = 2.0;
    evolve(sys, cfg.model, cfg.horizon, rng, opt);
    REQUIRE(sys.total_mass() >= 2.0);
    REQUIRE(sys.current_time < cfg.horizon);
}

TEST_CASE("density regime predicate") {
    ModelParams m;
    m.motion = {2.0, 1};
    m.branching = {0.0, 1.0, 0.5};
    REQUIRE(density_regime(m));
    m.motion = {1.0, 2};
    REQUIRE_FALSE(density_regime(m)); // d = 2 >= alpha/beta = 2
    m.motion = {1.5, 2};
    m.branching.beta = 0.6;
    REQUIRE(density_regime(m)); // alpha/beta = 2.5 > 2
}
