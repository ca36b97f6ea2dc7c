#pragma once

// Experiment driver behind the command-line front end. A run takes a JSON
// config document, validates it against the schema for one subcommand,
// fills in defaults so the stored copy is fully resolved, executes, and
// writes every data file atomically next to a manifest. Re-running a
// manifest reproduces the outputs byte for byte: nothing nondeterministic
// is allowed anywhere except the timestamps quarantined in the manifest.

#include <superproc/bounds.hpp>
#include <superproc/branching.hpp>
#include <superproc/holder.hpp>
#include <superproc/loglaplace_pde.hpp>
#include <superproc/rng.hpp>
#include <superproc/stable_kernel.hpp>
#include <superproc/stable_sampler.hpp>

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

namespace superproc {

inline constexpr const char* kVersion = "1.0.0";

// Raised for anything wrong with the config document itself. The message
// always starts with the dotted path of the offending field so scripts can
// point the user at the right line.
class ConfigError : public std::runtime_error {
  public:
    ConfigError(std::string path, const std::string& message)
        : std::runtime_error(path.empty() ? message : path + ": " + message),
          field_path(std::move(path)) {}

    std::string field_path;
};

// Shortest decimal string that round-trips an IEEE double.
inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// FNV-1a, 64 bit, hex encoded. Not cryptographic; it only has to notice
// corrupted or regenerated-with-different-inputs files.
inline std::string checksum_hex(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

struct OutputStamp {
    std::uint64_t bytes = 0;
    std::string checksum;
};

struct ExperimentManifest {
    std::string id;
    std::string version = kVersion;
    std::string subcommand;
    std::string status = "running";
    std::uint64_t master_seed = 0;
    nlohmann::json config;
    std::string started;
    std::string finished;
    std::map<std::string, OutputStamp> outputs;

    nlohmann::json to_json() const {
        nlohmann::json outs = nlohmann::json::object();
        for (const auto& [name, stamp] : outputs)
            outs[name] = {{"bytes", stamp.bytes}, {"fnv1a64", stamp.checksum}};
        return {{"id", id},
                {"version", version},
                {"subcommand", subcommand},
                {"status", status},
                {"master_seed", master_seed},
                {"started", started},
                {"finished", finished},
                {"config", config},
                {"outputs", outs}};
    }
};

struct RunResult {
    ExperimentManifest manifest;
    std::string stdout_text;
    std::filesystem::path out_dir;
};

namespace detail {

inline std::string iso8601_utc_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Write-to-temp plus rename so a crash never leaves a half-written file
// under the final name.
inline void atomic_write(const std::filesystem::path& target,
                         const std::string& bytes) {
    const auto tmp =
        target.parent_path() / (target.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out.good())
            throw std::runtime_error("cannot open " + tmp.string());
        out.write(bytes.data(),
                  static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out.good())
            throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, target);
}

// Typed view of one JSON object. Reads validate the type and, for the
// defaulted variants, write the default back so the manifest ends up with
// the fully resolved document.
class Section {
  public:
    Section(nlohmann::json& node, std::string path)
        : node_(&node), path_(std::move(path)) {
        if (node.is_null()) node = nlohmann::json::object();
        if (!node.is_object()) throw ConfigError(path_, "expected an object");
    }

    std::string at(const char* key) const {
        return path_.empty() ? std::string(key) : path_ + "." + key;
    }

    bool has(const char* key) const { return node_->contains(key); }

    Section sub(const char* key) { return Section((*node_)[key], at(key)); }

    nlohmann::json& raw() { return *node_; }

    double real(const char* key) {
        if (!node_->contains(key))
            throw ConfigError(at(key), "missing required field");
        return read_real(key);
    }

    double real(const char* key, double def) {
        if (!node_->contains(key)) {
            (*node_)[key] = def;
            return def;
        }
        return read_real(key);
    }

    std::int64_t integer(const char* key, std::int64_t def) {
        if (!node_->contains(key)) {
            (*node_)[key] = def;
            return def;
        }
        const auto& v = (*node_)[key];
        if (!v.is_number_integer())
            throw ConfigError(at(key), "expected an integer");
        return v.get<std::int64_t>();
    }

    std::uint64_t unsigned64(const char* key, std::uint64_t def) {
        if (!node_->contains(key)) {
            (*node_)[key] = def;
            return def;
        }
        const auto& v = (*node_)[key];
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
            return static_cast<std::uint64_t>(v.get<std::int64_t>());
        throw ConfigError(at(key), "expected a nonnegative integer");
    }

    bool flag(const char* key, bool def) {
        if (!node_->contains(key)) {
            (*node_)[key] = def;
            return def;
        }
        const auto& v = (*node_)[key];
        if (!v.is_boolean())
            throw ConfigError(at(key), "expected true or false");
        return v.get<bool>();
    }

    std::string text(const char* key) {
        if (!node_->contains(key))
            throw ConfigError(at(key), "missing required field");
        return read_text(key);
    }

    std::string text(const char* key, const std::string& def) {
        if (!node_->contains(key)) {
            (*node_)[key] = def;
            return def;
        }
        return read_text(key);
    }

    std::vector<double> reals(const char* key) {
        if (!node_->contains(key))
            throw ConfigError(at(key), "missing required field");
        return read_reals(key);
    }

    std::vector<double> reals(const char* key, std::vector<double> def) {
        if (!node_->contains(key)) {
            (*node_)[key] = def;
            return def;
        }
        return read_reals(key);
    }

    std::vector<std::string> texts(const char* key,
                                   std::vector<std::string> def) {
        if (!node_->contains(key)) {
            (*node_)[key] = def;
            return def;
        }
        const auto& v = (*node_)[key];
        if (!v.is_array() || v.empty())
            throw ConfigError(at(key), "expected a nonempty array of strings");
        std::vector<std::string> out;
        for (const auto& e : v) {
            if (!e.is_string())
                throw ConfigError(at(key),
                                  "expected a nonempty array of strings");
            out.push_back(e.get<std::string>());
        }
        return out;
    }

  private:
    double read_real(const char* key) {
        const auto& v = (*node_)[key];
        if (!v.is_number()) throw ConfigError(at(key), "expected a number");
        return v.get<double>();
    }

    std::string read_text(const char* key) {
        const auto& v = (*node_)[key];
        if (!v.is_string()) throw ConfigError(at(key), "expected a string");
        return v.get<std::string>();
    }

    std::vector<double> read_reals(const char* key) {
        const auto& v = (*node_)[key];
        if (!v.is_array() || v.empty())
            throw ConfigError(at(key), "expected a nonempty array of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number())
                throw ConfigError(at(key),
                                  "expected a nonempty array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

    nlohmann::json* node_;
    std::string path_;
};

// Replica loop shared by the runner-owned subcommands. Work is handed out
// through an atomic counter; every result lands in a caller-owned slot
// indexed by replica, so the merge order, and with it the output bytes,
// do not depend on the thread count.
inline void for_each_replica(int replicas, int threads,
                             const std::function<void(int)>& body) {
    if (threads <= 1 || replicas <= 1) {
        for (int r = 0; r < replicas; ++r) body(r);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= replicas) return;
            try {
                body(r);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int n = std::min(threads, replicas);
    pool.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

struct Execution {
    std::string stdout_text;
    // file name to file content; written by the caller after the run
    std::vector<std::pair<std::string, std::string>> outputs;
};

struct Plan {
    std::uint64_t master_seed = 0;
    std::function<Execution()> run;
};

inline StableMotionParams resolve_motion(Section& root) {
    auto model = root.sub("model");
    StableMotionParams motion;
    motion.alpha = model.real("alpha");
    if (!(motion.alpha > 0.0 && motion.alpha <= 2.0))
        throw ConfigError(model.at("alpha"), "must lie in (0, 2]");
    motion.dimension = static_cast<int>(model.integer("dimension", 1));
    if (motion.dimension != 1 && motion.dimension != 2)
        throw ConfigError(model.at("dimension"), "must be 1 or 2");
    return motion;
}

inline ModelParams resolve_model(Section& root) {
    ModelParams m;
    m.motion = resolve_motion(root);
    auto model = root.sub("model");
    m.branching.a = model.real("a", 0.0);
    m.branching.b = model.real("b", 1.0);
    if (!(m.branching.b > 0.0))
        throw ConfigError(model.at("b"), "must be positive");
    m.branching.beta = model.real("beta");
    if (!(m.branching.beta > 0.0 && m.branching.beta < 1.0))
        throw ConfigError(model.at("beta"), "must lie in (0, 1)");
    return m;
}

inline InitialMeasure resolve_initial(Section& root, int dimension) {
    auto init = root.sub("initial");
    const std::string kind = init.text("kind", "point");
    const auto d = static_cast<std::size_t>(dimension);

    if (kind == "point") {
        auto loc = init.reals("location", std::vector<double>(d, 0.0));
        if (loc.size() != d)
            throw ConfigError(init.at("location"),
                              "expected " + std::to_string(dimension) +
                                  " coordinates");
        const double mass = init.real("mass", 1.0);
        if (!(mass > 0.0))
            throw ConfigError(init.at("mass"), "must be positive");
        return InitialMeasure::point_mass(std::move(loc), mass);
    }

    if (kind == "box") {
        auto lo = init.reals("lo");
        auto hi = init.reals("hi");
        if (lo.size() != d || hi.size() != d)
            throw ConfigError(init.at("lo"),
                              "corner arrays need " +
                                  std::to_string(dimension) + " coordinates");
        for (std::size_t i = 0; i < d; ++i)
            if (!(lo[i] < hi[i]))
                throw ConfigError(init.at("hi"),
                                  "each upper corner must exceed the lower");
        const double mass = init.real("mass", 1.0);
        if (!(mass > 0.0))
            throw ConfigError(init.at("mass"), "must be positive");
        return InitialMeasure::uniform_box(std::move(lo), std::move(hi), mass);
    }

    if (kind == "atoms") {
        if (!init.has("atoms") || !init.raw()["atoms"].is_array() ||
            init.raw()["atoms"].empty())
            throw ConfigError(init.at("atoms"), "expected a nonempty array");
        std::vector<std::pair<std::vector<double>, double>> atoms;
        for (const auto& e : init.raw()["atoms"]) {
            if (!e.is_object() || !e.contains("location") ||
                !e.contains("mass") || !e["location"].is_array() ||
                e["location"].size() != d || !e["mass"].is_number() ||
                !(e["mass"].get<double>() > 0.0))
                throw ConfigError(
                    init.at("atoms"),
                    "each atom needs a location of " +
                        std::to_string(dimension) +
                        " coordinates and a positive mass");
            std::vector<double> loc;
            for (const auto& c : e["location"]) {
                if (!c.is_number())
                    throw ConfigError(init.at("atoms"),
                                      "atom coordinates must be numbers");
                loc.push_back(c.get<double>());
            }
            atoms.emplace_back(std::move(loc), e["mass"].get<double>());
        }
        return InitialMeasure::discrete(std::move(atoms));
    }

    throw ConfigError(init.at("kind"), "must be point, box or atoms");
}

inline SimulationConfig resolve_sim_config(Section& root) {
    SimulationConfig cfg;
    cfg.model = resolve_model(root);
    cfg.initial = resolve_initial(root, cfg.model.motion.dimension);
    cfg.horizon = root.real("horizon", 1.0);
    if (!(cfg.horizon > 0.0))
        throw ConfigError(root.at("horizon"), "must be positive");
    cfg.particle_mass = root.real("particle_mass", 1e-3);
    if (!(cfg.particle_mass > 0.0))
        throw ConfigError(root.at("particle_mass"), "must be positive");
    cfg.seed = root.unsigned64("seed", 0);
    cfg.replica_count = static_cast<int>(root.integer("replicas", 1));
    if (cfg.replica_count < 1)
        throw ConfigError(root.at("replicas"), "must be at least 1");
    if (root.has("jump_threshold")) {
        const double thr = root.real("jump_threshold");
        if (!(thr > 0.0))
            throw ConfigError(root.at("jump_threshold"), "must be positive");
        cfg.jump_threshold = thr;
    }
    return cfg;
}

inline int resolve_threads(Section& root) {
    const auto threads = static_cast<int>(root.integer("threads", 1));
    if (threads < 1) throw ConfigError(root.at("threads"), "must be at least 1");
    return threads;
}

inline EvolveOptions resolve_evolve_options(Section& root) {
    EvolveOptions opt;
    if (root.has("budget_events")) {
        const auto budget = root.unsigned64("budget_events", 0);
        if (budget < 1)
            throw ConfigError(root.at("budget_events"), "must be at least 1");
        opt.max_events = budget;
    }
    return opt;
}

inline double initial_extent(const InitialMeasure& m) {
    double e = 0.0;
    auto see = [&e](const std::vector<double>& v) {
        for (double c : v) e = std::max(e, std::abs(c));
    };
    see(m.location);
    see(m.box_lo);
    see(m.box_hi);
    for (const auto& [loc, w] : m.atom_list) see(loc);
    return e;
}

inline void append_summary_line(std::string& out, const char* check,
                                const std::string& parameters,
                                const std::string& status) {
    out += check;
    out += ' ';
    out += parameters;
    out += ": ";
    out += status;
    out += '\n';
}

inline Plan make_plan(const std::string& subcommand, nlohmann::json& config) {
    Section root(config, "");
    Plan plan;
    plan.master_seed = root.unsigned64("seed", 0);
    const std::uint64_t seed = plan.master_seed;

    if (subcommand == "kernel") {
        const StableMotionParams motion = resolve_motion(root);
        auto kern = root.sub("kernel");
        const double t = kern.real("t", 1.0);
        if (!(t > 0.0)) throw ConfigError(kern.at("t"), "must be positive");
        const std::vector<double> xs = kern.reals("x");

        plan.run = [motion, t, xs] {
            Execution ex;
            std::string csv = "x,density\n";
            for (double x : xs) {
                const double p = stable_pdf(motion, t, x);
                char line[40];
                std::snprintf(line, sizeof line, "%.7g\n", p);
                ex.stdout_text += line;
                csv += format_real(x) + "," + format_real(p) + "\n";
            }
            ex.outputs.emplace_back("kernel.csv", std::move(csv));
            return ex;
        };
        return plan;
    }

    if (subcommand == "classify") {
        const ModelParams model = resolve_model(root);
        plan.run = [model] {
            Execution ex;
            const RegimeReport report = classify_regime(model);
            if (report.continuous) {
                char line[64];
                std::snprintf(line, sizeof line, "continuous, eta_c=%.6f\n",
                              report.eta_c);
                ex.stdout_text = line;
            } else {
                ex.stdout_text = "locally unbounded\n";
            }
            return ex;
        };
        return plan;
    }

    if (subcommand == "simulate") {
        const SimulationConfig cfg = resolve_sim_config(root);
        const int threads = resolve_threads(root);
        const EvolveOptions opt = resolve_evolve_options(root);
        auto sim = root.sub("simulate");
        const bool record_bursts = sim.flag("record_bursts", false);

        plan.run = [cfg, threads, opt, record_bursts] {
            struct Row {
                double final_mass = 0.0;
                bool extinct = false;
                std::uint64_t branch_events = 0;
                std::vector<JumpRecord> records;
            };
            std::vector<Row> rows(static_cast<std::size_t>(cfg.replica_count));
            for_each_replica(cfg.replica_count, threads, [&](int r) {
                Rng rng = seed_stream(cfg.seed, static_cast<std::uint64_t>(r));
                auto sys = init(cfg, rng, /*track_positions=*/false);
                auto records = evolve(sys, cfg.model, cfg.horizon, rng, opt);
                auto& row = rows[static_cast<std::size_t>(r)];
                row.final_mass = sys.total_mass();
                row.extinct = sys.alive == 0;
                row.branch_events = sys.branch_events;
                row.records = std::move(records);
            });

            Execution ex;
            std::string csv =
                "replica,final_mass,extinct,branch_events,bursts_recorded,"
                "max_burst\n";
            double mass_sum = 0.0;
            int extinct_count = 0;
            std::string bursts = "replica,time,mass\n";
            for (std::size_t r = 0; r < rows.size(); ++r) {
                const auto& row = rows[r];
                double max_burst = 0.0;
                for (const auto& rec : row.records)
                    max_burst = std::max(max_burst, rec.mass);
                csv += std::to_string(r) + "," + format_real(row.final_mass) +
                       "," + (row.extinct ? "1" : "0") + "," +
                       std::to_string(row.branch_events) + "," +
                       std::to_string(row.records.size()) + "," +
                       format_real(max_burst) + "\n";
                mass_sum += row.final_mass;
                extinct_count += row.extinct ? 1 : 0;
                if (record_bursts)
                    for (const auto& rec : row.records)
                        bursts += std::to_string(r) + "," +
                                  format_real(rec.time) + "," +
                                  format_real(rec.mass) + "\n";
            }
            char line[128];
            std::snprintf(line, sizeof line,
                          "replicas=%d mean_final_mass=%.6g extinct=%d\n",
                          cfg.replica_count,
                          mass_sum / static_cast<double>(cfg.replica_count),
                          extinct_count);
            ex.stdout_text = line;
            ex.outputs.emplace_back("simulate.csv", std::move(csv));
            if (record_bursts)
                ex.outputs.emplace_back("bursts.csv", std::move(bursts));
            return ex;
        };
        return plan;
    }

    if (subcommand == "sample") {
        const auto replicas = root.integer("replicas", 1);
        if (replicas < 1)
            throw ConfigError(root.at("replicas"), "must be at least 1");
        const int threads = resolve_threads(root);
        auto sample = root.sub("sample");
        const std::string law = sample.text("law", "spectrally-positive");
        const double t = sample.real("t", 1.0);
        if (!(t > 0.0)) throw ConfigError(sample.at("t"), "must be positive");

        std::function<double(Rng&)> draw;
        if (law == "spectrally-positive") {
            const double kappa = sample.real("kappa", 1.5);
            if (!(kappa > 1.0 && kappa < 2.0))
                throw ConfigError(sample.at("kappa"), "must lie in (1, 2)");
            const SpectrallyPositiveParams p{kappa};
            draw = [p, t](Rng& rng) {
                return sample_spectrally_positive(p, t, rng);
            };
        } else if (law == "symmetric") {
            const double alpha = sample.real("alpha", 2.0);
            if (!(alpha > 0.0 && alpha <= 2.0))
                throw ConfigError(sample.at("alpha"), "must lie in (0, 2]");
            const StableMotionParams p{alpha, 1};
            draw = [p, t](Rng& rng) {
                return sample_symmetric_stable(p, t, rng);
            };
        } else {
            throw ConfigError(sample.at("law"),
                              "must be spectrally-positive or symmetric");
        }

        plan.run = [seed, replicas, threads, draw] {
            std::vector<double> values(static_cast<std::size_t>(replicas));
            for_each_replica(static_cast<int>(replicas), threads, [&](int r) {
                Rng rng = seed_stream(seed, static_cast<std::uint64_t>(r));
                values[static_cast<std::size_t>(r)] = draw(rng);
            });
            Execution ex;
            std::string csv = "draw\n";
            for (double v : values) csv += format_real(v) + "\n";
            ex.outputs.emplace_back("sample.csv", std::move(csv));
            char line[64];
            std::snprintf(line, sizeof line, "wrote %lld draws\n",
                          static_cast<long long>(replicas));
            ex.stdout_text = line;
            return ex;
        };
        return plan;
    }

    if (subcommand == "density") {
        const SimulationConfig cfg = resolve_sim_config(root);
        if (cfg.model.motion.dimension != 1)
            throw ConfigError("model.dimension",
                              "density output is one-dimensional");
        const int threads = resolve_threads(root);
        const EvolveOptions opt = resolve_evolve_options(root);
        auto dens = root.sub("density");
        const double lo = dens.real("lo");
        const double hi = dens.real("hi");
        if (!(lo < hi))
            throw ConfigError(dens.at("hi"), "must exceed density.lo");
        const auto bins = dens.integer("bins", 256);
        if (bins < 2 || bins > 1000000)
            throw ConfigError(dens.at("bins"), "must lie in [2, 1000000]");
        // per-replica fields are kept until the ordered merge, so cap the
        // footprint rather than silently allocating gigabytes
        if (static_cast<double>(bins) * cfg.replica_count > 4e6)
            throw ConfigError(dens.at("bins"),
                              "replicas*bins exceeds the in-memory budget");

        plan.run = [cfg, threads, opt, lo, hi, bins] {
            const double bw = (hi - lo) / static_cast<double>(bins);
            const DensityGrid grid{{lo}, bw, {static_cast<int>(bins)}};
            std::vector<std::vector<double>> fields(
                static_cast<std::size_t>(cfg.replica_count));
            for_each_replica(cfg.replica_count, threads, [&](int r) {
                Rng rng = seed_stream(cfg.seed, static_cast<std::uint64_t>(r));
                auto sys = init(cfg, rng, /*track_positions=*/true);
                evolve(sys, cfg.model, cfg.horizon, rng, opt);
                fields[static_cast<std::size_t>(r)] =
                    std::move(density_histogram(sys, grid).values);
            });

            std::vector<double> mean(static_cast<std::size_t>(bins), 0.0);
            for (const auto& f : fields)
                for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += f[j];
            for (double& v : mean) v /= static_cast<double>(cfg.replica_count);

            Execution ex;
            std::string csv = "x,mean_density\n";
            double captured = 0.0;
            for (std::size_t j = 0; j < mean.size(); ++j) {
                const double x = lo + (static_cast<double>(j) + 0.5) * bw;
                csv += format_real(x) + "," + format_real(mean[j]) + "\n";
                captured += mean[j] * bw;
            }
            char line[64];
            std::snprintf(line, sizeof line, "mean mass on grid: %.6g\n",
                          captured);
            ex.stdout_text = line;
            ex.outputs.emplace_back("density.csv", std::move(csv));
            return ex;
        };
        return plan;
    }

    if (subcommand == "holder") {
        const SimulationConfig cfg = resolve_sim_config(root);
        if (cfg.model.motion.dimension != 1)
            throw ConfigError("model.dimension",
                              "regularity diagnostics are one-dimensional");
        const int threads = resolve_threads(root);
        const EvolveOptions opt = resolve_evolve_options(root);
        auto holder = root.sub("holder");
        const std::string mode = holder.text("mode", "auto");
        if (mode != "auto" && mode != "fit" && mode != "diverge")
            throw ConfigError(holder.at("mode"),
                              "must be auto, fit or diverge");
        const double wlo = holder.real("window_lo");
        const double whi = holder.real("window_hi");
        if (!(wlo < whi))
            throw ConfigError(holder.at("window_hi"),
                              "must exceed holder.window_lo");
        const auto base_bins = static_cast<int>(holder.integer("base_bins", 4));
        if (base_bins < 1)
            throw ConfigError(holder.at("base_bins"), "must be at least 1");
        const auto levels = static_cast<int>(holder.integer("levels", 6));
        if (levels < 4)
            throw ConfigError(holder.at("levels"), "must be at least 4");
        const double rho_min = holder.real("rho_min", 1.3);
        if (!(rho_min > 1.0))
            throw ConfigError(holder.at("rho_min"), "must exceed 1");

        bool fit_mode;
        if (mode == "auto") {
            try {
                fit_mode = classify_regime(cfg.model).continuous;
            } catch (const std::invalid_argument& e) {
                throw ConfigError("model", e.what());
            }
        } else {
            fit_mode = mode == "fit";
        }

        // Histogram resolution for the exponent fit. The automatic choice
        // only has to be fine enough that occupancy, not the grid, limits
        // the usable levels; the honest level range is re-derived from the
        // realized window masses after the simulation.
        int grid_exp = static_cast<int>(holder.integer("grid_exp", 0));
        const double window_len = whi - wlo;
        if (fit_mode) {
            if (grid_exp == 0) {
                const double particles =
                    cfg.initial.total_mass / cfg.particle_mass;
                const double occ =
                    std::floor(std::log2(std::max(
                        particles / (30.0 * window_len), 2.0)));
                grid_exp = std::clamp(static_cast<int>(occ) + 3, 6, 14);
            } else if (grid_exp < 3 || grid_exp > 20) {
                throw ConfigError(holder.at("grid_exp"),
                                  "must lie in [3, 20] (0 selects automatically)");
            }
            const int table_lo = std::max(
                2, static_cast<int>(
                       std::ceil(std::log2(4.0 / window_len) - 1e-9)));
            const int table_hi = grid_exp - 2;
            if (table_hi < table_lo + 2)
                throw ConfigError(holder.at("grid_exp"),
                                  "window and resolution admit fewer than "
                                  "three dyadic levels");
        }

        plan.run = [cfg, threads, opt, wlo, whi, base_bins, levels, rho_min,
                    fit_mode, grid_exp, window_len] {
            Execution ex;
            if (!fit_mode) {
                const UnboundednessReport report = unboundedness_diagnostic(
                    cfg, wlo, whi, base_bins, levels, rho_min);
                char line[128];
                std::snprintf(line, sizeof line,
                              "verdict=%s fraction=%.4f used=%d/%d\n",
                              report.verdict.c_str(),
                              report.diverging_fraction, report.replicas_used,
                              report.replicas_total);
                ex.stdout_text = line;
                std::string csv = "level,bin_width,mean_max,growth_ratio\n";
                for (std::size_t i = 0; i < report.levels.size(); ++i)
                    csv += std::to_string(i) + "," +
                           format_real(report.levels[i].bin_width) + "," +
                           format_real(report.levels[i].mean_max) + "," +
                           (i == 0 ? std::string("nan")
                                   : format_real(report.growth_ratios[i - 1])) +
                           "\n";
                ex.outputs.emplace_back("holder.csv", std::move(csv));
                return ex;
            }

            const double h = std::pow(2.0, -grid_exp);
            const double grid_lo = std::floor(wlo / h) * h;
            const double grid_hi = std::ceil(whi / h) * h;
            const int nbins =
                static_cast<int>(std::lround((grid_hi - grid_lo) / h));
            const DensityGrid grid{{grid_lo}, h, {nbins}};
            const int table_lo = std::max(
                2, static_cast<int>(
                       std::ceil(std::log2(4.0 / window_len) - 1e-9)));
            const int table_hi = grid_exp - 2;

            std::vector<OscillationTable> tables(
                static_cast<std::size_t>(cfg.replica_count));
            std::vector<double> window_mass(
                static_cast<std::size_t>(cfg.replica_count), 0.0);
            for_each_replica(cfg.replica_count, threads, [&](int r) {
                Rng rng = seed_stream(cfg.seed, static_cast<std::uint64_t>(r));
                auto sys = init(cfg, rng, /*track_positions=*/true);
                evolve(sys, cfg.model, cfg.horizon, rng, opt);
                const DensityField field = density_histogram(sys, grid);
                double mass = 0.0;
                for (int j = 0; j < nbins; ++j) {
                    const double x =
                        grid_lo + (static_cast<double>(j) + 0.5) * h;
                    if (x >= wlo && x <= whi) mass += field.values[j] * h;
                }
                window_mass[static_cast<std::size_t>(r)] = mass;
                if (mass > 0.0)
                    tables[static_cast<std::size_t>(r)] = dyadic_oscillations(
                        field, wlo, whi, table_lo, table_hi);
            });

            double mean_mass = 0.0;
            int used = 0;
            for (double m : window_mass)
                if (m > 0.0) {
                    mean_mass += m;
                    ++used;
                }
            if (used == 0)
                throw std::runtime_error(
                    "no replica kept mass in the window; shorten the horizon "
                    "or widen the window");
            mean_mass /= used;

            const auto [n_min, n_max] = admissible_level_range(
                mean_mass, cfg.particle_mass, h, window_len);
            const int cut_lo = std::max(n_min, table_lo);
            const int cut_hi = std::min(n_max, table_hi);

            std::vector<OscillationTable> sliced;
            std::string csv = "replica,level,oscillation\n";
            for (std::size_t r = 0; r < tables.size(); ++r) {
                if (!(window_mass[r] > 0.0)) continue;
                OscillationTable s;
                s.window_lo = wlo;
                s.window_hi = whi;
                for (std::size_t i = 0; i < tables[r].levels.size(); ++i) {
                    const int n = tables[r].levels[i];
                    if (n < cut_lo || n > cut_hi) continue;
                    s.levels.push_back(n);
                    s.oscillations.push_back(tables[r].oscillations[i]);
                    csv += std::to_string(r) + "," + std::to_string(n) + "," +
                           format_real(tables[r].oscillations[i]) + "\n";
                }
                sliced.push_back(std::move(s));
            }

            const HolderEstimate est = fit_exponent_replicated(sliced);
            char line[160];
            std::snprintf(line, sizeof line,
                          "exponent=%.4f std_error=%.4f levels=[%d,%d] "
                          "replicas_used=%d/%d\n",
                          est.exponent, est.std_error, est.n_min, est.n_max,
                          used, cfg.replica_count);
            ex.stdout_text = line;
            ex.outputs.emplace_back("holder.csv", std::move(csv));
            return ex;
        };
        return plan;
    }

    if (subcommand == "duality") {
        SimulationConfig cfg = resolve_sim_config(root);
        if (cfg.model.motion.dimension != 1)
            throw ConfigError("model.dimension",
                              "the spectral solver is one-dimensional");
        if (cfg.replica_count < 2)
            throw ConfigError("replicas", "must be at least 2");
        auto dual = root.sub("duality");
        const double lambda = dual.real("lambda", 1.0);
        if (!(lambda >= 0.0))
            throw ConfigError(dual.at("lambda"), "must be nonnegative");
        const double sigma_bound = dual.real("sigma_bound", 0.02);
        if (!(sigma_bound > 0.0))
            throw ConfigError(dual.at("sigma_bound"), "must be positive");
        const std::vector<double> epsilons =
            dual.reals("epsilons", {cfg.particle_mass});
        for (double e : epsilons)
            if (!(e > 0.0))
                throw ConfigError(dual.at("epsilons"),
                                  "entries must be positive");

        auto phi_section = dual.sub("phi");
        const std::string phi_kind = phi_section.text("kind", "constant");
        const double amplitude = phi_section.real("amplitude", 1.0);
        if (!(amplitude > 0.0))
            throw ConfigError(phi_section.at("amplitude"), "must be positive");
        double phi_center = 0.0, phi_width = 0.0;
        if (phi_kind == "gaussian") {
            phi_center = phi_section.real("center", 0.0);
            phi_width = phi_section.real("width", 0.25);
            if (!(phi_width > 0.0))
                throw ConfigError(phi_section.at("width"), "must be positive");
        } else if (phi_kind != "constant") {
            throw ConfigError(phi_section.at("kind"),
                              "must be constant or gaussian");
        }

        auto pde_section = dual.sub("pde");
        const auto points = pde_section.integer("points", 1024);
        if (points < 2 || (points & (points - 1)) != 0)
            throw ConfigError(pde_section.at("points"),
                              "must be a power of two, at least 2");
        PDEConfig pde;
        pde.dt = pde_section.real("dt", 1e-3);
        if (!(pde.dt > 0.0))
            throw ConfigError(pde_section.at("dt"), "must be positive");
        pde.t = cfg.horizon;
        const double half_width = pde_section.real("half_width", 0.0);
        if (half_width < 0.0)
            throw ConfigError(pde_section.at("half_width"),
                              "must be nonnegative (0 selects automatically)");

        plan.run = [cfg, lambda, sigma_bound, epsilons, phi_kind, amplitude,
                    phi_center, phi_width, points, pde, half_width] {
            double extent = initial_extent(cfg.initial);
            if (phi_kind == "gaussian")
                extent = std::max(extent,
                                  std::abs(phi_center) + 6.0 * phi_width);
            const double hw =
                half_width > 0.0
                    ? half_width
                    : default_half_width(cfg.model.motion, cfg.horizon,
                                         extent);
            GridFunction phi =
                make_grid(0.0, hw, static_cast<std::size_t>(points));
            for (std::size_t j = 0; j < phi.size(); ++j) {
                const double x = phi.x(j);
                double v = amplitude;
                if (phi_kind == "gaussian") {
                    const double z = (x - phi_center) / phi_width;
                    v *= std::exp(-0.5 * z * z);
                }
                phi.values[j] = lambda * v;
            }

            Execution ex;
            std::string csv = "epsilon,mc_value,mc_sigma,pde_value,residual\n";
            for (double eps : epsilons) {
                SimulationConfig rung = cfg;
                rung.particle_mass = eps;
                const DualityCheck check =
                    duality_residual(rung, phi, pde, sigma_bound);
                csv += format_real(eps) + "," + format_real(check.mc_value) +
                       "," + format_real(check.mc_sigma) + "," +
                       format_real(check.pde_value) + "," +
                       format_real(check.residual) + "\n";
                char line[160];
                std::snprintf(line, sizeof line,
                              "epsilon=%g mc=%.6g pde=%.6g residual=%.6g%s\n",
                              eps, check.mc_value, check.pde_value,
                              check.residual,
                              check.inconclusive ? " (inconclusive)" : "");
                ex.stdout_text += line;
            }
            ex.outputs.emplace_back("duality.csv", std::move(csv));
            return ex;
        };
        return plan;
    }

    if (subcommand == "verify-bounds") {
        auto bounds = root.sub("bounds");
        const std::vector<std::string> checks = bounds.texts(
            "checks", {"small-values", "truncated-sup", "martingale"});
        bool wants_paths = false, wants_martingale = false,
             wants_time_change = false;
        for (const auto& c : checks) {
            if (c == "small-values" || c == "truncated-sup")
                wants_paths = true;
            else if (c == "martingale")
                wants_martingale = true;
            else if (c == "time-change")
                wants_time_change = true;
            else
                throw ConfigError(bounds.at("checks"),
                                  "unknown check '" + c + "'");
        }

        const double kappa = bounds.real("kappa", 1.5);
        if (wants_paths ? !(kappa > 1.0 && kappa < 2.0)
                        : !(kappa > 1.0 && kappa <= 2.0))
            throw ConfigError(bounds.at("kappa"),
                              wants_paths ? "must lie in (1, 2) for path checks"
                                          : "must lie in (1, 2]");
        const double t = bounds.real("t", 1.0);
        if (!(t > 0.0)) throw ConfigError(bounds.at("t"), "must be positive");
        const std::vector<double> xs = bounds.reals("x", {1.0});
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (!(xs[i] > 0.0))
                throw ConfigError(bounds.at("x"), "entries must be positive");
            if (i > 0 && !(xs[i] > xs[i - 1]))
                throw ConfigError(bounds.at("x"),
                                  "must be strictly increasing");
        }
        const double y = bounds.real("y", 0.5);
        if (!(y > 0.0)) throw ConfigError(bounds.at("y"), "must be positive");
        const std::vector<double> lambdas = bounds.reals("lambdas", {0.25});
        for (double l : lambdas)
            if (!(l >= 0.0))
                throw ConfigError(bounds.at("lambdas"),
                                  "entries must be nonnegative");
        const std::vector<double> times = bounds.reals("times", {t});
        for (double s : times)
            if (!(s > 0.0))
                throw ConfigError(bounds.at("times"),
                                  "entries must be positive");
        const auto steps = bounds.integer("steps", 512);
        if (steps < 4 || steps % 2 != 0)
            throw ConfigError(bounds.at("steps"),
                              "must be an even count of at least 4");
        const auto quad_points = bounds.integer("quad_points", 64);
        if (quad_points < 2)
            throw ConfigError(bounds.at("quad_points"), "must be at least 2");
        const double cutoff = bounds.real("jump_cutoff", 0.0);
        if (cutoff < 0.0)
            throw ConfigError(bounds.at("jump_cutoff"),
                              "must be nonnegative");

        const auto replicas = root.integer("replicas", 10000);
        if (wants_paths && replicas < 100)
            throw ConfigError(root.at("replicas"),
                              "path checks need at least 100");
        if (replicas < 2)
            throw ConfigError(root.at("replicas"), "must be at least 2");

        PathCheckOptions path_opt;
        path_opt.replicas = static_cast<std::size_t>(replicas);
        path_opt.steps = static_cast<std::size_t>(steps);
        path_opt.jump_cutoff = cutoff;
        path_opt.seed = seed;

        // The superprocess time-change check needs a full simulation setup
        // on top of the pure path statistics.
        SimulationConfig sim;
        TimeChangeOptions tc_opt;
        std::function<double(double, double)> psi;
        if (wants_time_change) {
            sim = resolve_sim_config(root);
            if (sim.replica_count < 10)
                throw ConfigError(root.at("replicas"),
                                  "the time-change check needs at least 10");
            tc_opt.lambdas = lambdas;
            tc_opt.time_grid =
                static_cast<std::size_t>(bounds.integer("time_grid", 64));
            if (tc_opt.time_grid < 4 || tc_opt.time_grid % 2 != 0)
                throw ConfigError(bounds.at("time_grid"),
                                  "must be an even count of at least 4");
            tc_opt.u_quantile = bounds.real("u_quantile", 0.2);
            if (!(tc_opt.u_quantile > 0.0 && tc_opt.u_quantile < 1.0))
                throw ConfigError(bounds.at("u_quantile"),
                                  "must lie in (0, 1)");
            auto psi_section = bounds.sub("psi");
            const std::string psi_kind = psi_section.text("kind", "constant");
            const double amp = psi_section.real("amplitude", 1.0);
            if (!(amp > 0.0))
                throw ConfigError(psi_section.at("amplitude"),
                                  "must be positive");
            if (psi_kind == "constant") {
                psi = [amp](double, double) { return amp; };
            } else if (psi_kind == "gaussian") {
                const double center = psi_section.real("center", 0.0);
                const double width = psi_section.real("width", 0.25);
                if (!(width > 0.0))
                    throw ConfigError(psi_section.at("width"),
                                      "must be positive");
                psi = [amp, center, width](double, double x) {
                    const double z = (x - center) / width;
                    return amp * std::exp(-0.5 * z * z);
                };
            } else {
                throw ConfigError(psi_section.at("kind"),
                                  "must be constant or gaussian");
            }
        }

        plan.run = [checks, kappa, t, xs, y, lambdas, times, quad_points,
                    path_opt, replicas, seed, sim, tc_opt, psi] {
            Execution ex;
            std::string csv =
                "check,parameters,empirical,sigma,reference,bias,flags,"
                "satisfied\n";
            auto flags_of = [](bool vacuous, bool inconclusive) {
                if (vacuous && inconclusive) return "vacuous+inconclusive";
                if (vacuous) return "vacuous";
                if (inconclusive) return "inconclusive";
                return "";
            };
            auto bound_row = [&](const char* check,
                                 const BoundCheckResult& r) {
                csv += std::string(check) + "," + r.parameters + "," +
                       format_real(r.empirical) + "," + format_real(r.sigma) +
                       "," + format_real(r.bound) + "," +
                       format_real(r.bias_estimate) + "," +
                       flags_of(r.vacuous, r.inconclusive) + "," +
                       (r.satisfied() ? "1" : "0") + "\n";
                const char* status = r.vacuous ? "vacuous"
                                    : r.inconclusive
                                        ? "inconclusive"
                                        : (r.satisfied() ? "ok" : "VIOLATED");
                append_summary_line(ex.stdout_text, check, r.parameters,
                                    status);
            };
            auto identity_row = [&](const char* check,
                                    const IdentityCheckResult& r) {
                csv += std::string(check) + "," + r.parameters + "," +
                       format_real(r.empirical) + "," + format_real(r.sigma) +
                       "," + format_real(r.target) + "," +
                       format_real(r.bias_estimate) + "," +
                       flags_of(false, r.inconclusive) + "," +
                       (r.within() ? "1" : "0") + "\n";
                const char* status =
                    r.inconclusive ? "inconclusive"
                                   : (r.within() ? "ok" : "VIOLATED");
                append_summary_line(ex.stdout_text, check, r.parameters,
                                    status);
            };

            for (const auto& check : checks) {
                if (check == "small-values") {
                    for (const auto& r :
                         verify_small_values(kappa, t, xs, path_opt))
                        bound_row("small-values", r);
                } else if (check == "truncated-sup") {
                    const TruncatedSupReport report =
                        verify_truncated_sup(kappa, t, xs, y, path_opt);
                    for (const auto& r : report.bounds)
                        bound_row("truncated-sup", r);
                    char line[96];
                    std::snprintf(line, sizeof line,
                                  "truncated-sup fitted constant %.6g\n",
                                  report.fitted_constant);
                    ex.stdout_text += line;
                } else if (check == "martingale") {
                    const MartingaleReport report = verify_martingale_problem(
                        kappa, lambdas, times,
                        static_cast<std::size_t>(replicas),
                        static_cast<std::size_t>(quad_points), seed);
                    for (const auto& r : report.direct)
                        identity_row("martingale-direct", r);
                    for (const auto& r : report.integrated)
                        identity_row("martingale-integrated", r);
                } else { // time-change
                    const TimeChangeReport report =
                        verify_time_change(sim, psi, tc_opt);
                    for (const auto& r : report.laplace)
                        identity_row("time-change", r);
                    char line[96];
                    std::snprintf(line, sizeof line,
                                  "time-change u=%.6g mean_clock=%.6g\n",
                                  report.u, report.mean_total_time);
                    ex.stdout_text += line;
                }
            }
            ex.outputs.emplace_back("bounds.csv", std::move(csv));
            return ex;
        };
        return plan;
    }

    throw ConfigError("subcommand", "unknown subcommand '" + subcommand + "'");
}

} // namespace detail

// Dotted-path override used by the CLI's --set flag. The value string is
// parsed as JSON when possible, so numbers, booleans and arrays come out
// typed; anything unparseable stays a plain string.
inline void set_by_path(nlohmann::json& config, const std::string& dotted,
                        const std::string& value) {
    if (dotted.empty()) throw ConfigError("", "empty override path");
    nlohmann::json* node = &config;
    std::size_t pos = 0;
    for (;;) {
        const auto dot = dotted.find('.', pos);
        const std::string key =
            dotted.substr(pos, dot == std::string::npos ? std::string::npos
                                                        : dot - pos);
        if (key.empty())
            throw ConfigError(dotted, "override path has an empty segment");
        if (dot == std::string::npos) {
            nlohmann::json parsed =
                nlohmann::json::parse(value, nullptr, false);
            (*node)[key] =
                parsed.is_discarded() ? nlohmann::json(value) : parsed;
            return;
        }
        node = &(*node)[key];
        if (!node->is_object()) *node = nlohmann::json::object();
        pos = dot + 1;
    }
}

// Validate, execute, and persist one experiment. The resolved config (with
// all defaults materialized) is stored in the manifest, and the manifest
// itself doubles as a config document: feeding it back reruns the same
// experiment and reproduces the same bytes.
inline RunResult run_experiment(std::string subcommand, nlohmann::json config,
                                const std::filesystem::path& out_dir) {
    if (config.is_object() && config.contains("config") &&
        config.contains("subcommand")) {
        if (!config["subcommand"].is_string())
            throw ConfigError("subcommand", "expected a string");
        const auto stored = config["subcommand"].get<std::string>();
        if (!subcommand.empty() && subcommand != stored)
            throw ConfigError("subcommand",
                              "does not match the manifest being rerun");
        subcommand = stored;
        config = config["config"];
    }
    if (subcommand.empty())
        throw ConfigError("subcommand", "missing subcommand");

    auto plan = detail::make_plan(subcommand, config);

    ExperimentManifest manifest;
    manifest.subcommand = subcommand;
    manifest.master_seed = plan.master_seed;
    manifest.config = config;
    manifest.id = subcommand + "-" + checksum_hex(config.dump()).substr(0, 12);
    manifest.started = detail::iso8601_utc_now();

    std::filesystem::create_directories(out_dir);
    auto persist = [&manifest, &out_dir] {
        detail::atomic_write(out_dir / "manifest.json",
                             manifest.to_json().dump(2) + "\n");
    };
    persist();

    RunResult result;
    result.out_dir = out_dir;
    try {
        detail::Execution ex = plan.run();
        for (auto& [name, bytes] : ex.outputs) {
            OutputStamp stamp;
            stamp.bytes = bytes.size();
            stamp.checksum = checksum_hex(bytes);
            detail::atomic_write(out_dir / name, bytes);
            manifest.outputs.emplace(name, std::move(stamp));
        }
        result.stdout_text = std::move(ex.stdout_text);
        manifest.status = "complete";
    } catch (const BudgetExceeded&) {
        manifest.status = "budget-exceeded";
        manifest.finished = detail::iso8601_utc_now();
        persist();
        throw;
    } catch (...) {
        manifest.status = "failed";
        manifest.finished = detail::iso8601_utc_now();
        persist();
        throw;
    }
    manifest.finished = detail::iso8601_utc_now();
    persist();
    result.manifest = std::move(manifest);
    return result;
}

// Re-reads an experiment directory and checks every stored file against the
// checksums in its manifest. Returns the human-readable report and whether
// everything matched.
inline std::pair<std::string, bool> report_experiment(
    const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in.good())
        throw std::runtime_error("no manifest at " + manifest_path.string());
    nlohmann::json m = nlohmann::json::parse(in, nullptr, true, true);

    std::ostringstream out;
    bool ok = true;
    out << "experiment " << m.value("id", "?") << " status "
        << m.value("status", "?") << "\n";
    if (m.contains("outputs"))
        for (const auto& [name, stamp] : m["outputs"].items()) {
            const auto path = dir / name;
            std::ifstream f(path, std::ios::binary);
            if (!f.good()) {
                out << name << ": missing\n";
                ok = false;
                continue;
            }
            const std::string bytes(
                (std::istreambuf_iterator<char>(f)),
                std::istreambuf_iterator<char>());
            const std::string actual = checksum_hex(bytes);
            const std::string expected = stamp.value("fnv1a64", "");
            const auto expected_bytes =
                stamp.value("bytes", std::uint64_t{0});
            if (actual != expected || bytes.size() != expected_bytes) {
                out << name << ": MISMATCH (stored " << expected << "/"
                    << expected_bytes << " bytes, found " << actual << "/"
                    << bytes.size() << " bytes)\n";
                ok = false;
            } else {
                out << name << ": ok\n";
            }
        }
    return {out.str(), ok};
}

} // namespace superproc
