// Command-line front end for the experiment runner. Every subcommand takes
// an optional JSON config plus a handful of convenience flags that map onto
// config fields; --set key=value reaches anything the flags do not cover.
// Exit codes: 0 success, 2 bad config, 3 event budget exceeded, 5 checksum
// mismatch from `report`, 1 anything else.

#include <superproc/runner.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    long long replicas = 0;
    std::vector<std::string> sets;
    CLI::App* app = nullptr;
};

void add_common(CLI::App* sub, CommonArgs& c) {
    c.app = sub;
    sub->add_option("--config", c.config_path,
                    "JSON config file; a stored manifest.json also works");
    sub->add_option("--out", c.out_dir,
                    "output directory (default experiments/<subcommand>)");
    sub->add_option("--seed", c.seed, "master seed");
    sub->add_option("--replicas", c.replicas, "replica count");
    sub->add_option("--set", c.sets,
                    "override a config field, e.g. --set model.alpha=1.5");
}

json load_config(const CommonArgs& c) {
    if (c.config_path.empty()) return json::object();
    std::ifstream in(c.config_path, std::ios::binary);
    if (!in.good())
        throw superproc::ConfigError("", "cannot read " + c.config_path);
    json parsed = json::parse(in, nullptr, false, true);
    if (parsed.is_discarded())
        throw superproc::ConfigError("", c.config_path +
                                             " is not valid JSON");
    return parsed;
}

// Flags beat the file; --set beats both.
void apply_common(json& config, const CommonArgs& c) {
    if (c.app->count("--seed")) config["seed"] = c.seed;
    if (c.app->count("--replicas")) config["replicas"] = c.replicas;
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw superproc::ConfigError(
                "", "--set expects key=value, got '" + kv + "'");
        superproc::set_by_path(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
}

int execute(const std::string& subcommand, json config, const CommonArgs& c) {
    const std::string out =
        c.out_dir.empty() ? "experiments/" + (subcommand.empty()
                                                  ? std::string("rerun")
                                                  : subcommand)
                          : c.out_dir;
    const auto result = superproc::run_experiment(subcommand, config, out);
    std::cout << result.stdout_text;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Simulation and verification lab for superprocesses with stable "
        "motion and stable branching"};
    app.require_subcommand(1);

    CommonArgs common;

    auto* kernel = app.add_subcommand(
        "kernel", "evaluate the fixed-time motion density");
    CommonArgs kernel_common;
    add_common(kernel, kernel_common);
    double k_alpha = 0.0, k_t = 0.0;
    long long k_dim = 0;
    std::vector<double> k_x;
    kernel->add_option("--alpha", k_alpha, "stability index of the motion");
    kernel->add_option("--d", k_dim, "spatial dimension");
    kernel->add_option("--t", k_t, "evaluation time");
    kernel->add_option("--x", k_x, "evaluation points (repeatable)");

    auto* classify = app.add_subcommand(
        "classify", "report the regularity regime of a model");
    CommonArgs classify_common;
    add_common(classify, classify_common);
    double c_alpha = 0.0, c_beta = 0.0;
    long long c_dim = 0;
    classify->add_option("--alpha", c_alpha, "stability index of the motion");
    classify->add_option("--beta", c_beta, "branching stability parameter");
    classify->add_option("--d", c_dim, "spatial dimension");

    auto* simulate = app.add_subcommand(
        "simulate", "run particle replicas and summarize them");
    CommonArgs simulate_common;
    add_common(simulate, simulate_common);
    double s_alpha = 0.0, s_beta = 0.0, s_a = 0.0, s_b = 0.0, s_t = 0.0,
           s_eps = 0.0;
    long long s_dim = 0, s_budget = 0, s_threads = 0;
    bool s_bursts = false;
    simulate->add_option("--alpha", s_alpha, "stability index of the motion");
    simulate->add_option("--beta", s_beta, "branching stability parameter");
    simulate->add_option("--a", s_a, "linear drift of the mechanism");
    simulate->add_option("--b", s_b, "branching intensity");
    simulate->add_option("--d", s_dim, "spatial dimension");
    simulate->add_option("--t", s_t, "time horizon");
    simulate->add_option("--epsilon", s_eps, "particle mass");
    simulate->add_option("--budget", s_budget, "event budget per replica");
    simulate->add_option("--threads", s_threads, "worker threads");
    simulate->add_flag("--record-bursts", s_bursts,
                       "write recorded branching bursts to bursts.csv");

    auto* sample = app.add_subcommand(
        "sample", "draw from one of the stable laws");
    CommonArgs sample_common;
    add_common(sample, sample_common);
    std::string sl_law;
    double sl_kappa = 0.0, sl_alpha = 0.0, sl_t = 0.0;
    sample->add_option("--law", sl_law,
                       "spectrally-positive or symmetric");
    sample->add_option("--kappa", sl_kappa,
                       "index for the spectrally positive law");
    sample->add_option("--alpha", sl_alpha, "index for the symmetric law");
    sample->add_option("--t", sl_t, "time scale of the draw");

    auto* density = app.add_subcommand(
        "density", "average replica histograms on a grid");
    CommonArgs density_common;
    add_common(density, density_common);
    double d_alpha = 0.0, d_beta = 0.0, d_t = 0.0, d_eps = 0.0, d_lo = 0.0,
           d_hi = 0.0;
    long long d_bins = 0, d_threads = 0;
    density->add_option("--alpha", d_alpha, "stability index of the motion");
    density->add_option("--beta", d_beta, "branching stability parameter");
    density->add_option("--t", d_t, "time horizon");
    density->add_option("--epsilon", d_eps, "particle mass");
    density->add_option("--lo", d_lo, "left edge of the grid");
    density->add_option("--hi", d_hi, "right edge of the grid");
    density->add_option("--bins", d_bins, "number of grid cells");
    density->add_option("--threads", d_threads, "worker threads");

    auto* holder = app.add_subcommand(
        "holder", "estimate the density regularity in a window");
    CommonArgs holder_common;
    add_common(holder, holder_common);
    double h_alpha = 0.0, h_beta = 0.0, h_t = 0.0, h_eps = 0.0, h_wlo = 0.0,
           h_whi = 0.0;
    std::string h_mode;
    long long h_levels = 0, h_base = 0, h_grid = 0, h_threads = 0;
    holder->add_option("--alpha", h_alpha, "stability index of the motion");
    holder->add_option("--beta", h_beta, "branching stability parameter");
    holder->add_option("--t", h_t, "time horizon");
    holder->add_option("--epsilon", h_eps, "particle mass");
    holder->add_option("--window-lo", h_wlo, "left end of the window");
    holder->add_option("--window-hi", h_whi, "right end of the window");
    holder->add_option("--mode", h_mode, "auto, fit or diverge");
    holder->add_option("--levels", h_levels, "refinement levels");
    holder->add_option("--base-bins", h_base, "bins at the coarsest level");
    holder->add_option("--grid-exp", h_grid,
                       "histogram resolution as a power of two");
    holder->add_option("--threads", h_threads, "worker threads");

    auto* duality = app.add_subcommand(
        "duality", "compare Monte Carlo with the dual equation");
    CommonArgs duality_common;
    add_common(duality, duality_common);
    double du_alpha = 0.0, du_beta = 0.0, du_t = 0.0, du_lambda = 0.0;
    std::vector<double> du_eps;
    duality->add_option("--alpha", du_alpha, "stability index of the motion");
    duality->add_option("--beta", du_beta, "branching stability parameter");
    duality->add_option("--t", du_t, "time horizon");
    duality->add_option("--lambda", du_lambda, "test function multiplier");
    duality->add_option("--epsilon", du_eps,
                        "particle masses to walk through (repeatable)");

    auto* bounds = app.add_subcommand(
        "verify-bounds", "Monte Carlo checks of the analytic estimates");
    CommonArgs bounds_common;
    add_common(bounds, bounds_common);
    double b_kappa = 0.0, b_t = 0.0, b_y = 0.0;
    std::vector<double> b_x, b_lambdas;
    std::vector<std::string> b_checks;
    bounds->add_option("--checks", b_checks,
                       "small-values, truncated-sup, martingale, time-change");
    bounds->add_option("--kappa", b_kappa, "stable index under test");
    bounds->add_option("--t", b_t, "path horizon");
    bounds->add_option("--x", b_x, "threshold levels (repeatable)");
    bounds->add_option("--y", b_y, "jump truncation level");
    bounds->add_option("--lambda", b_lambdas,
                       "Laplace arguments (repeatable)");

    auto* rerun = app.add_subcommand(
        "rerun", "re-execute a stored manifest byte for byte");
    CommonArgs rerun_common;
    add_common(rerun, rerun_common);

    auto* report = app.add_subcommand(
        "report", "verify an experiment directory against its manifest");
    std::string report_dir;
    report->add_option("dir", report_dir, "experiment directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (report->parsed()) {
            const auto [text, ok] = superproc::report_experiment(report_dir);
            std::cout << text;
            return ok ? 0 : 5;
        }

        if (kernel->parsed()) {
            json cfg = load_config(kernel_common);
            if (kernel->count("--alpha")) cfg["model"]["alpha"] = k_alpha;
            if (kernel->count("--d")) cfg["model"]["dimension"] = k_dim;
            if (kernel->count("--t")) cfg["kernel"]["t"] = k_t;
            if (kernel->count("--x")) cfg["kernel"]["x"] = k_x;
            apply_common(cfg, kernel_common);
            return execute("kernel", std::move(cfg), kernel_common);
        }

        if (classify->parsed()) {
            json cfg = load_config(classify_common);
            if (classify->count("--alpha")) cfg["model"]["alpha"] = c_alpha;
            if (classify->count("--beta")) cfg["model"]["beta"] = c_beta;
            if (classify->count("--d")) cfg["model"]["dimension"] = c_dim;
            apply_common(cfg, classify_common);
            return execute("classify", std::move(cfg), classify_common);
        }

        if (simulate->parsed()) {
            json cfg = load_config(simulate_common);
            if (simulate->count("--alpha")) cfg["model"]["alpha"] = s_alpha;
            if (simulate->count("--beta")) cfg["model"]["beta"] = s_beta;
            if (simulate->count("--a")) cfg["model"]["a"] = s_a;
            if (simulate->count("--b")) cfg["model"]["b"] = s_b;
            if (simulate->count("--d")) cfg["model"]["dimension"] = s_dim;
            if (simulate->count("--t")) cfg["horizon"] = s_t;
            if (simulate->count("--epsilon")) cfg["particle_mass"] = s_eps;
            if (simulate->count("--budget")) cfg["budget_events"] = s_budget;
            if (simulate->count("--threads")) cfg["threads"] = s_threads;
            if (s_bursts) cfg["simulate"]["record_bursts"] = true;
            apply_common(cfg, simulate_common);
            return execute("simulate", std::move(cfg), simulate_common);
        }

        if (sample->parsed()) {
            json cfg = load_config(sample_common);
            if (sample->count("--law")) cfg["sample"]["law"] = sl_law;
            if (sample->count("--kappa")) cfg["sample"]["kappa"] = sl_kappa;
            if (sample->count("--alpha")) cfg["sample"]["alpha"] = sl_alpha;
            if (sample->count("--t")) cfg["sample"]["t"] = sl_t;
            apply_common(cfg, sample_common);
            return execute("sample", std::move(cfg), sample_common);
        }

        if (density->parsed()) {
            json cfg = load_config(density_common);
            if (density->count("--alpha")) cfg["model"]["alpha"] = d_alpha;
            if (density->count("--beta")) cfg["model"]["beta"] = d_beta;
            if (density->count("--t")) cfg["horizon"] = d_t;
            if (density->count("--epsilon")) cfg["particle_mass"] = d_eps;
            if (density->count("--lo")) cfg["density"]["lo"] = d_lo;
            if (density->count("--hi")) cfg["density"]["hi"] = d_hi;
            if (density->count("--bins")) cfg["density"]["bins"] = d_bins;
            if (density->count("--threads")) cfg["threads"] = d_threads;
            apply_common(cfg, density_common);
            return execute("density", std::move(cfg), density_common);
        }

        if (holder->parsed()) {
            json cfg = load_config(holder_common);
            if (holder->count("--alpha")) cfg["model"]["alpha"] = h_alpha;
            if (holder->count("--beta")) cfg["model"]["beta"] = h_beta;
            if (holder->count("--t")) cfg["horizon"] = h_t;
            if (holder->count("--epsilon")) cfg["particle_mass"] = h_eps;
            if (holder->count("--window-lo"))
                cfg["holder"]["window_lo"] = h_wlo;
            if (holder->count("--window-hi"))
                cfg["holder"]["window_hi"] = h_whi;
            if (holder->count("--mode")) cfg["holder"]["mode"] = h_mode;
            if (holder->count("--levels")) cfg["holder"]["levels"] = h_levels;
            if (holder->count("--base-bins"))
                cfg["holder"]["base_bins"] = h_base;
            if (holder->count("--grid-exp"))
                cfg["holder"]["grid_exp"] = h_grid;
            if (holder->count("--threads")) cfg["threads"] = h_threads;
            apply_common(cfg, holder_common);
            return execute("holder", std::move(cfg), holder_common);
        }

        if (duality->parsed()) {
            json cfg = load_config(duality_common);
            if (duality->count("--alpha")) cfg["model"]["alpha"] = du_alpha;
            if (duality->count("--beta")) cfg["model"]["beta"] = du_beta;
            if (duality->count("--t")) cfg["horizon"] = du_t;
            if (duality->count("--lambda"))
                cfg["duality"]["lambda"] = du_lambda;
            if (duality->count("--epsilon"))
                cfg["duality"]["epsilons"] = du_eps;
            apply_common(cfg, duality_common);
            return execute("duality", std::move(cfg), duality_common);
        }

        if (bounds->parsed()) {
            json cfg = load_config(bounds_common);
            if (bounds->count("--checks")) cfg["bounds"]["checks"] = b_checks;
            if (bounds->count("--kappa")) cfg["bounds"]["kappa"] = b_kappa;
            if (bounds->count("--t")) cfg["bounds"]["t"] = b_t;
            if (bounds->count("--x")) cfg["bounds"]["x"] = b_x;
            if (bounds->count("--y")) cfg["bounds"]["y"] = b_y;
            if (bounds->count("--lambda"))
                cfg["bounds"]["lambdas"] = b_lambdas;
            apply_common(cfg, bounds_common);
            return execute("verify-bounds", std::move(cfg), bounds_common);
        }

        // rerun: the manifest's stored subcommand decides what runs
        json cfg = load_config(rerun_common);
        if (rerun_common.config_path.empty())
            throw superproc::ConfigError("", "rerun needs --config manifest.json");
        apply_common(cfg, rerun_common);
        return execute("", std::move(cfg), rerun_common);
    } catch (const superproc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const superproc::BudgetExceeded& e) {
        std::cerr << "budget exceeded: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
