#pragma once

// Experiment configuration, artifact plumbing and the benchmark protocol:
// the A-D roster with R repetitions per method and a random batch of
// non-hazardous distributions.

#include "boxrot/baseline.hpp"
#include "boxrot/calibration.hpp"
#include "boxrot/controller.hpp"
#include "boxrot/estimator.hpp"
#include "boxrot/massmodel.hpp"
#include "boxrot/sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace boxrot {

// ---------------------------------------------------------------------------
// Configuration

struct SimSection {
    double belt_length = BeltConfig{}.belt_length;
    double belt_width = BeltConfig{}.belt_width;
    double gap_min = BeltConfig{}.gap_min;
    double gap_max = BeltConfig{}.gap_max;
    double initial_gap = BeltConfig{}.initial_gap;
    double surface_speed_limit = BeltConfig{}.surface_speed_limit;
    double position_step_limit = BeltConfig{}.position_step_limit;
    double mu_k = BeltConfig{}.mu_k;
    double gravity = BeltConfig{}.gravity;
    double control_period = BeltConfig{}.control_period;
    int substeps = BeltConfig{}.substeps;
    double slip_floor = BeltConfig{}.slip_floor;

    BeltConfig belts() const {
        BeltConfig b;
        b.belt_length = belt_length;
        b.belt_width = belt_width;
        b.gap_min = gap_min;
        b.gap_max = gap_max;
        b.initial_gap = initial_gap;
        b.surface_speed_limit = surface_speed_limit;
        b.position_step_limit = position_step_limit;
        b.mu_k = mu_k;
        b.gravity = gravity;
        b.control_period = control_period;
        b.substeps = substeps;
        b.slip_floor = slip_floor;
        b.validate();
        return b;
    }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SimSection, belt_length, belt_width, gap_min, gap_max, initial_gap,
                                                surface_speed_limit, position_step_limit, mu_k, gravity,
                                                control_period, substeps, slip_floor)

struct MassSection {
    std::array<int, 3> grid = {kDefaultGrid.nl, kDefaultGrid.nw, kDefaultGrid.nh};
    std::array<double, 3> box = {kDefaultBox.length, kDefaultBox.width, kDefaultBox.height};
    std::array<double, 2> mass_range = {MassRange{}.lo, MassRange{}.hi};

    GridDims grid_dims() const { return {grid[0], grid[1], grid[2]}; }
    BoxDims box_dims() const { return {box[0], box[1], box[2]}; }
    MassRange masses() const { return {mass_range[0], mass_range[1]}; }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MassSection, grid, box, mass_range)

struct CalibrationSection {
    int transitions = CalibrationConfig{}.transitions;
    int episode_actions = CalibrationConfig{}.episode_actions;
    int bin_count = CalibrationConfig{}.bin_count;
    int null_steps = CalibrationConfig{}.null_steps;
    double box_mass = CalibrationConfig{}.box_mass;
    std::uint64_t seed = CalibrationConfig{}.seed;

    CalibrationConfig config() const {
        CalibrationConfig c;
        c.transitions = transitions;
        c.episode_actions = episode_actions;
        c.bin_count = bin_count;
        c.null_steps = null_steps;
        c.box_mass = box_mass;
        c.seed = seed;
        return c;
    }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CalibrationSection, transitions, episode_actions, bin_count,
                                                null_steps, box_mass, seed)

struct EstimatorSection {
    int n_boxes = DatasetConfig{}.n_boxes;
    std::uint64_t dataset_seed = DatasetConfig{}.seed;
    double edge_fraction = DatasetConfig{}.edge_fraction;
    int epochs = TrainingConfig{}.epochs;
    int batch_size = TrainingConfig{}.batch_size;
    double learning_rate = TrainingConfig{}.learning_rate;
    double lambda_mass = TrainingConfig{}.lambda_mass;
    double validation_fraction = TrainingConfig{}.validation_fraction;
    std::vector<int> hidden = TrainingConfig{}.hidden;
    std::uint64_t seed = TrainingConfig{}.seed;

    TrainingConfig training() const {
        TrainingConfig t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.learning_rate = learning_rate;
        t.lambda_mass = lambda_mass;
        t.validation_fraction = validation_fraction;
        t.hidden = hidden;
        t.seed = seed;
        return t;
    }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EstimatorSection, n_boxes, dataset_seed, edge_fraction, epochs,
                                                batch_size, learning_rate, lambda_mass, validation_fraction, hidden,
                                                seed)

struct BaselineSection {
    int random_transitions = RandomPolicyConfig{}.transitions;
    int episode_length = RandomPolicyConfig{}.episode_length;
    std::uint64_t data_seed = RandomPolicyConfig{}.seed;
    int prior_episodes = 20;  ///< physics-prior episodes on A whose successes join the data
    int epochs = BlackboxTrainingConfig{}.epochs;
    int batch_size = BlackboxTrainingConfig{}.batch_size;
    double learning_rate = BlackboxTrainingConfig{}.learning_rate;
    std::vector<int> hidden = BlackboxTrainingConfig{}.hidden;
    std::uint64_t seed = BlackboxTrainingConfig{}.seed;
    int adapt_every = BaselineConfig{}.adapt_every;
    int adapt_batch = BaselineConfig{}.adapt_batch;

    BlackboxTrainingConfig training() const {
        BlackboxTrainingConfig t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.learning_rate = learning_rate;
        t.hidden = hidden;
        t.seed = seed;
        return t;
    }
    BaselineConfig online() const { return {adapt_every, adapt_batch, adapt_every > 0}; }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BaselineSection, random_transitions, episode_length, data_seed,
                                                prior_episodes, epochs, batch_size, learning_rate, hidden, seed,
                                                adapt_every, adapt_batch)

struct ControllerSection {
    int candidates = ControllerConfig{}.candidates;
    int max_steps = ControllerConfig{}.max_steps;
    double balance_threshold = ControllerConfig{}.balance_threshold;
    double angle_tolerance = ControllerConfig{}.angle_tolerance;
    double epsilon = ControllerConfig{}.epsilon;

    ControllerConfig config(std::uint64_t seed) const {
        ControllerConfig c;
        c.candidates = candidates;
        c.max_steps = max_steps;
        c.balance_threshold = balance_threshold;
        c.angle_tolerance = angle_tolerance;
        c.epsilon = epsilon;
        c.seed = seed;
        return c;
    }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ControllerSection, candidates, max_steps, balance_threshold,
                                                angle_tolerance, epsilon)

struct BenchSection {
    int repetitions = 5;
    int random_batch = 20;
    std::uint64_t random_seed = 2024;
    std::uint64_t roster_seed = 3;  ///< seed of distribution A's Gaussian
    std::vector<std::string> methods = {"physics", "blackbox"};
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BenchSection, repetitions, random_batch, random_seed, roster_seed,
                                                methods)

struct ExperimentConfig {
    std::uint64_t seed = 1;  ///< base of the per-episode seeds
    int workers = 1;
    SimSection sim;
    MassSection massmodel;
    CalibrationSection calibration;
    EstimatorSection estimator;
    BaselineSection baseline;
    ControllerSection controller;
    BenchSection bench;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, seed, workers, sim, massmodel, calibration, estimator,
                                                baseline, controller, bench)

namespace detail {

/// Keys of `given` that the resolved config does not know about.
inline void unknown_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& prefix,
                         std::vector<std::string>& out) {
    if (!given.is_object()) return;
    for (auto it = given.begin(); it != given.end(); ++it) {
        if (!known.contains(it.key())) {
            out.push_back(prefix + it.key());
            continue;
        }
        if (it.value().is_object()) unknown_keys(it.value(), known.at(it.key()), prefix + it.key() + ".", out);
    }
}

}  // namespace detail

/// Missing keys take their defaults; unknown keys are an error.
inline ExperimentConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorKind::Format, "config must be a JSON object");
    ExperimentConfig cfg;
    try {
        cfg = j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, std::string("config: ") + e.what());
    }
    std::vector<std::string> bad;
    detail::unknown_keys(j, nlohmann::json(cfg), "", bad);
    if (!bad.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : bad) msg += " " + k;
        throw Error(ErrorKind::Format, msg);
    }
    cfg.sim.belts();
    require(cfg.workers >= 1, "workers must be positive");
    require(cfg.bench.repetitions >= 1 && cfg.bench.random_batch >= 0, "bad bench sizes");
    for (const auto& m : cfg.bench.methods)
        require(m == "physics" || m == "blackbox", "unknown method '" + m + "'");
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::Io, "cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

inline std::string dump_config(const ExperimentConfig& cfg) { return nlohmann::json(cfg).dump(2); }

/// Hash of the fully resolved config, so defaults and explicit values agree.
/// The worker count is left out: it never changes results.
inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
    nlohmann::json j = cfg;
    j.erase("workers");
    return fnv1a(j.dump());
}

inline std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

/// Hash of the config sections the estimator dataset depends on.
inline std::uint64_t dataset_hash(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["sim"] = cfg.sim;
    j["massmodel"] = cfg.massmodel;
    j["n_boxes"] = cfg.estimator.n_boxes;
    j["dataset_seed"] = cfg.estimator.dataset_seed;
    j["edge_fraction"] = cfg.estimator.edge_fraction;
    return fnv1a(j.dump());
}

// ---------------------------------------------------------------------------
// Artifacts

struct ArtifactPaths {
    std::filesystem::path dir;

    std::filesystem::path force_map() const { return dir / "forcemap.csv"; }
    std::filesystem::path dataset() const { return dir / "estimator_dataset.bxds"; }
    std::filesystem::path estimator() const { return dir / "estimator.bxnn"; }
    std::filesystem::path estimator_report() const { return dir / "estimator_report.jsonl"; }
    std::filesystem::path baseline() const { return dir / "baseline.bxnn"; }
    std::filesystem::path baseline_report() const { return dir / "baseline_report.jsonl"; }
};

inline void require_artifact(const std::filesystem::path& p, const std::string& what) {
    if (!std::filesystem::exists(p))
        throw Error(ErrorKind::Io, "missing artifact: " + what + " (" + p.string() + ")");
}

inline std::vector<std::string> provenance(const ExperimentConfig& cfg, const std::string& what) {
    return {what, "config_hash=" + hex(config_hash(cfg)), "seed=" + std::to_string(cfg.seed)};
}

// ---------------------------------------------------------------------------
// Distribution roster

struct NamedDistribution {
    std::string name;
    MassDistribution dist;
    std::string note;
};

/// A: a random Gaussian box. B: A's Gaussian nudged by 2 cm along x and
/// -1 cm along y, 10% heavier. C: a Gaussian in the opposite quadrant with a
/// different shape and mass. D: the whole payload (4 kg) in the left-belt
/// quarter slab.
inline std::vector<NamedDistribution> make_roster(const ExperimentConfig& cfg) {
    const GridDims grid = cfg.massmodel.grid_dims();
    const BoxDims box = cfg.massmodel.box_dims();
    std::mt19937_64 rng(cfg.bench.roster_seed);
    const GaussianParams a = sample_gaussian_params(rng, box);
    const double a_mass = 2.5;

    GaussianParams b = a;
    b.mean += Vec3(0.02, -0.01, 0.0);

    GaussianParams c;
    c.mean = Vec3(-std::copysign(0.06, a.mean.x()), -std::copysign(0.04, a.mean.y()), 0.0);
    const Vec3 sd(0.35 * box.length, 0.2 * box.width, 0.7 * box.height);
    Mat3 corr = Mat3::Identity();
    corr(0, 1) = corr(1, 0) = std::copysign(0.5, a.covariance(0, 1)) * -1.0;
    c.covariance = sd.asDiagonal() * corr * sd.asDiagonal();

    return {
        {"A", gaussian_distribution(a, a_mass, grid, box), "random Gaussian, 2.5 kg"},
        {"B", gaussian_distribution(b, 1.1 * a_mass, grid, box), "A shifted (+2 cm, -1 cm), 2.75 kg"},
        {"C", gaussian_distribution(c, 4.5, grid, box), "opposite quadrant, elongated, 4.5 kg"},
        {"D", slab_distribution(HazardVolume::U3, 4.0, grid, box), "left-belt quarter slab, 4.0 kg"},
    };
}

/// The first `n` non-hazardous boxes of the default sampler's stream.
inline std::vector<NamedDistribution> random_batch(const ExperimentConfig& cfg, int n) {
    std::vector<NamedDistribution> out;
    for (std::uint64_t i = 0; static_cast<int>(out.size()) < n; ++i) {
        const std::uint64_t s = mix_seed(cfg.bench.random_seed, i);
        MassDistribution d =
            sample_gaussian_distribution(s, cfg.massmodel.grid_dims(), cfg.massmodel.box_dims(), cfg.massmodel.masses());
        if (classify_hazard(d).hazardous) continue;
        out.push_back({"R" + std::to_string(out.size()), std::move(d), "sampler seed " + std::to_string(s)});
    }
    return out;
}

inline const NamedDistribution& find_distribution(const std::vector<NamedDistribution>& roster,
                                                  const std::string& name) {
    for (const auto& d : roster)
        if (d.name == name) return d;
    throw Error(ErrorKind::InvalidArgument, "unknown distribution '" + name + "'");
}

/// A-D, "uniform" (2 kg) or "R<k>" for the k-th random-batch box.
inline MassDistribution resolve_distribution(const ExperimentConfig& cfg, const std::string& name) {
    if (name == "uniform")
        return MassDistribution::uniform(cfg.massmodel.grid_dims(), cfg.massmodel.box_dims(), 2.0);
    if (name.size() > 1 && name[0] == 'R' && std::all_of(name.begin() + 1, name.end(), ::isdigit)) {
        const int k = std::stoi(name.substr(1));
        return random_batch(cfg, k + 1).back().dist;
    }
    return find_distribution(make_roster(cfg), name).dist;
}

// ---------------------------------------------------------------------------
// Stages

struct Stages {
    ExperimentConfig cfg;
    ArtifactPaths paths;

    BeltConfig belts() const { return cfg.sim.belts(); }

    CalibrationRun calibrate() const {
        CalibrationRun run = run_calibration(cfg.calibration.config(), belts(), cfg.massmodel.grid_dims(),
                                             cfg.massmodel.box_dims());
        std::filesystem::create_directories(paths.dir);
        save_force_map(paths.force_map().string(), run.map, provenance(cfg, "force map"));
        return run;
    }

    /// Reuses the dataset on disk when its hash matches the config.
    std::pair<EstimatorDataset, bool> dataset() const {
        const std::uint64_t h = dataset_hash(cfg);
        if (std::filesystem::exists(paths.dataset())) {
            EstimatorDataset ds = load_dataset(paths.dataset().string());
            if (ds.config_hash == h) return {std::move(ds), true};
        }
        DatasetConfig dc;
        dc.n_boxes = cfg.estimator.n_boxes;
        dc.seed = cfg.estimator.dataset_seed;
        dc.mass_range = cfg.massmodel.masses();
        dc.edge_fraction = cfg.estimator.edge_fraction;
        dc.workers = cfg.workers;
        EstimatorDataset ds = generate_dataset(dc, belts(), cfg.massmodel.grid_dims(), cfg.massmodel.box_dims());
        ds.config_hash = h;
        std::filesystem::create_directories(paths.dir);
        save_dataset(paths.dataset().string(), ds);
        return {std::move(ds), false};
    }

    std::pair<EstimatorModel, TrainingReport> train_estimator(const EpochCallback& on_epoch = {}) const {
        auto [ds, cached] = dataset();
        (void)cached;
        auto result = train(ds, cfg.estimator.training(), on_epoch);
        save_estimator(paths.estimator().string(), result.first);
        std::ofstream os(paths.estimator_report());
        os << nlohmann::json{{"config_hash", hex(config_hash(cfg))}, {"boxes", ds.items.size()},
                             {"transitions", result.second.transitions}, {"parameters", result.second.parameters},
                             {"train_items", result.second.train_items}, {"val_items", result.second.val_items},
                             {"resampled", ds.resampled}}
                  .dump()
           << '\n';
        for (const EpochStats& e : result.second.epochs)
            os << nlohmann::json{{"epoch", e.epoch},         {"train_loss", e.train_loss}, {"train_bce", e.train_bce},
                                 {"train_mse", e.train_mse}, {"val_loss", e.val_loss},
                                 {"val_median_iou", e.val_median_iou}}
                      .dump()
               << '\n';
        os << nlohmann::json{{"final_val_median_iou", result.second.final_val_median_iou},
                             {"wall_seconds", result.second.wall_seconds}}
                  .dump()
           << '\n';
        return result;
    }

    ControlForceMap force_map() const {
        require_artifact(paths.force_map(), "force map (run calibrate)");
        return load_force_map(paths.force_map().string());
    }
    EstimatorModel estimator() const {
        require_artifact(paths.estimator(), "estimator model (run train-estimator)");
        return load_estimator(paths.estimator().string());
    }
    BlackboxModel blackbox() const {
        require_artifact(paths.baseline(), "baseline model (run train-baseline)");
        return load_blackbox(paths.baseline().string());
    }

    /// Random-policy data on A plus the transitions of successful
    /// physics-prior episodes on A.
    std::pair<BlackboxModel, BlackboxReport> train_baseline(const ControlForceMap& map,
                                                            const EstimatorModel& est) const {
        const auto roster = make_roster(cfg);
        const MassDistribution& a = find_distribution(roster, "A").dist;
        RandomPolicyConfig rp;
        rp.transitions = cfg.baseline.random_transitions;
        rp.episode_length = cfg.baseline.episode_length;
        rp.seed = cfg.baseline.data_seed;
        std::vector<StateTransition> data = collect_random_transitions(a, belts(), rp);
        const std::size_t random_count = data.size();
        int prior_successes = 0;
        for (int e = 0; e < cfg.baseline.prior_episodes; ++e) {
            const EpisodeResult r = run_episode(a, {&est, nullptr}, map, belts(),
                                                cfg.controller.config(mix_seed(cfg.baseline.data_seed, 100 + e)));
            if (r.outcome != Outcome::Success) continue;
            ++prior_successes;
            const auto extra = episode_transitions(a, belts(), r);
            data.insert(data.end(), extra.begin(), extra.end());
        }
        auto result = train_blackbox(data, cfg.baseline.training());
        std::filesystem::create_directories(paths.dir);
        save_blackbox(paths.baseline().string(), result.first);
        std::ofstream os(paths.baseline_report());
        os << nlohmann::json{{"config_hash", hex(config_hash(cfg))},
                             {"transitions", data.size()},
                             {"random_transitions", random_count},
                             {"prior_episode_successes", prior_successes},
                             {"parameters", result.second.parameters},
                             {"initial_val_loss", result.second.initial_val_loss},
                             {"learning_rate", cfg.baseline.learning_rate}}
                  .dump()
           << '\n';
        for (std::size_t e = 0; e < result.second.train_loss.size(); ++e)
            os << nlohmann::json{{"epoch", e + 1},
                                 {"train_loss", result.second.train_loss[e]},
                                 {"val_loss", result.second.val_loss[e]}}
                      .dump()
               << '\n';
        return result;
    }
};

// ---------------------------------------------------------------------------
// Benchmark

struct EpisodeRow {
    std::string method;
    std::string distribution;
    int repetition = 0;
    std::uint64_t seed = 0;
    EpisodeResult result;
};

struct CellSummary {
    std::string method;
    std::string distribution;
    int episodes = 0;
    int successes = 0;
    int aborts = 0;
    double success_ratio = 0.0;
    double average_steps = 0.0;  ///< over successful episodes; 0 when none
    double max_balance_error = 0.0;
    double wall_seconds = 0.0;
    double adaptation_seconds = 0.0;
};

struct BenchReport {
    std::vector<EpisodeRow> rows;
    std::vector<CellSummary> cells;  ///< roster cells, then one "random" cell per method
};

inline CellSummary summarize(const std::string& method, const std::string& dist, std::span<const EpisodeRow> rows) {
    CellSummary c{method, dist};
    double steps = 0;
    for (const EpisodeRow& r : rows) {
        ++c.episodes;
        if (r.result.outcome == Outcome::Success) {
            ++c.successes;
            steps += r.result.steps;
        }
        if (r.result.outcome == Outcome::AbortedHazard) ++c.aborts;
        c.max_balance_error = std::max(c.max_balance_error, r.result.max_balance_error);
        c.wall_seconds += r.result.wall_seconds;
        c.adaptation_seconds += r.result.adaptation_seconds;
    }
    c.success_ratio = c.episodes ? static_cast<double>(c.successes) / c.episodes : 0.0;
    c.average_steps = c.successes ? steps / c.successes : 0.0;
    return c;
}

/// Runs jobs [0, n) on up to `workers` threads; job i writes only slot i.
inline void parallel_for(int n, int workers, const std::function<void(int)>& job) {
    workers = std::clamp(workers, 1, std::max(1, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex m;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(m);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

struct BenchInputs {
    const ControlForceMap* map = nullptr;
    const EstimatorModel* estimator = nullptr;
    const BlackboxModel* blackbox = nullptr;
};

inline EpisodeResult run_method(const std::string& method, const MassDistribution& dist, const BenchInputs& in,
                                const ExperimentConfig& cfg, std::uint64_t seed) {
    const BeltConfig belts = cfg.sim.belts();
    const ControllerConfig cc = cfg.controller.config(seed);
    if (method == "physics") {
        require(in.map && in.estimator, "physics method needs a force map and an estimator");
        return run_episode(dist, {in.estimator, nullptr}, *in.map, belts, cc);
    }
    if (method == "blackbox") {
        require(in.blackbox != nullptr, "blackbox method needs a trained model");
        return run_episode_blackbox(dist, *in.blackbox, belts, cc, cfg.baseline.online());
    }
    throw Error(ErrorKind::InvalidArgument, "unknown method '" + method + "'");
}

inline std::uint64_t episode_seed(const ExperimentConfig& cfg, const std::string& method, const std::string& dist,
                                  int rep) {
    return mix_seed(cfg.seed, fnv1a(method + "/" + dist + "/" + std::to_string(rep)));
}

/// Roster cells for every method, then the random batch for the physics
/// method only; every distribution gets `repetitions` episodes.
inline BenchReport run_bench(const ExperimentConfig& cfg, const BenchInputs& in) {
    struct Job {
        std::string method;
        const NamedDistribution* dist;
        int rep;
    };
    const auto roster = make_roster(cfg);
    const auto batch = random_batch(cfg, cfg.bench.random_batch);
    std::vector<Job> jobs;
    for (const auto& m : cfg.bench.methods)
        for (const auto& d : roster)
            for (int r = 0; r < cfg.bench.repetitions; ++r) jobs.push_back({m, &d, r});
    const bool physics = std::find(cfg.bench.methods.begin(), cfg.bench.methods.end(), "physics") != cfg.bench.methods.end();
    if (physics)
        for (const auto& d : batch)
            for (int r = 0; r < cfg.bench.repetitions; ++r) jobs.push_back({"physics", &d, r});

    BenchReport rep;
    rep.rows.resize(jobs.size());
    parallel_for(static_cast<int>(jobs.size()), cfg.workers, [&](int i) {
        const Job& j = jobs[i];
        const std::uint64_t seed = episode_seed(cfg, j.method, j.dist->name, j.rep);
        rep.rows[i] = {j.method, j.dist->name, j.rep, seed, run_method(j.method, j.dist->dist, in, cfg, seed)};
    });

    auto rows_of = [&](const std::string& m, const std::function<bool(const std::string&)>& pick) {
        std::vector<EpisodeRow> out;
        for (const auto& r : rep.rows)
            if (r.method == m && pick(r.distribution)) out.push_back(r);
        return out;
    };
    for (const auto& m : cfg.bench.methods)
        for (const auto& d : roster) {
            const auto rows = rows_of(m, [&](const std::string& n) { return n == d.name; });
            rep.cells.push_back(summarize(m, d.name, rows));
        }
    if (physics && !batch.empty()) {
        const auto rows = rows_of("physics", [](const std::string& n) { return n.rfind('R', 0) == 0; });
        rep.cells.push_back(summarize("physics", "random", rows));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Report files

// Timing lives in its own file so the result files of two runs with the same
// config hash are byte-identical.

inline void write_episodes_csv(std::ostream& os, const BenchReport& rep, const std::vector<std::string>& header) {
    for (const auto& line : header) os << "# " << line << '\n';
    os << "method,distribution,repetition,seed,outcome,steps,max_balance_err,final_theta,adaptations,reason\n";
    os << std::setprecision(10);
    for (const EpisodeRow& r : rep.rows)
        os << r.method << ',' << r.distribution << ',' << r.repetition << ',' << r.seed << ','
           << outcome_name(r.result.outcome) << ',' << r.result.steps << ',' << r.result.max_balance_error << ','
           << r.result.final_theta << ',' << r.result.adaptations << ",\"" << r.result.reason << "\"\n";
}

inline void write_timing_csv(std::ostream& os, const BenchReport& rep, const std::vector<std::string>& header) {
    for (const auto& line : header) os << "# " << line << '\n';
    os << "method,distribution,repetition,wall_s,adaptation_s\n";
    os << std::setprecision(6);
    for (const EpisodeRow& r : rep.rows)
        os << r.method << ',' << r.distribution << ',' << r.repetition << ',' << r.result.wall_seconds << ','
           << r.result.adaptation_seconds << '\n';
}

inline void write_table_csv(std::ostream& os, const BenchReport& rep, const std::vector<std::string>& header) {
    for (const auto& line : header) os << "# " << line << '\n';
    os << "method,distribution,episodes,successes,success_ratio,aborts,average_steps,max_balance_err\n";
    os << std::setprecision(10);
    for (const CellSummary& c : rep.cells)
        os << c.method << ',' << c.distribution << ',' << c.episodes << ',' << c.successes << ',' << c.success_ratio
           << ',' << c.aborts << ',' << c.average_steps << ',' << c.max_balance_error << '\n';
}

inline void write_table_text(std::ostream& os, const BenchReport& rep) {
    os << std::left << std::setw(10) << "method" << std::setw(8) << "dist" << std::right << std::setw(6) << "runs"
       << std::setw(9) << "success" << std::setw(8) << "aborts" << std::setw(11) << "avg_steps" << std::setw(13)
       << "max_balance" << std::setw(10) << "wall_s" << '\n';
    for (const CellSummary& c : rep.cells) {
        std::ostringstream ratio;
        ratio << std::fixed << std::setprecision(1) << 100.0 * c.success_ratio << '%';
        os << std::left << std::setw(10) << c.method << std::setw(8) << c.distribution << std::right << std::setw(6)
           << c.episodes << std::setw(9) << ratio.str() << std::setw(8) << c.aborts << std::setw(11) << std::fixed
           << std::setprecision(1) << c.average_steps << std::setw(13) << std::setprecision(4) << c.max_balance_error
           << std::setw(10) << std::setprecision(2) << c.wall_seconds << '\n';
    }
}

struct BandRow {
    int step = 0;
    int active = 0;  ///< episodes still running at this step
    double median = 0.0;
    double stddev = 0.0;
    double max = 0.0;
};

/// Per-step balance error statistics over the episodes of `rows`.
inline std::vector<BandRow> balance_band(std::span<const EpisodeRow> rows) {
    std::size_t longest = 0;
    for (const auto& r : rows) longest = std::max(longest, r.result.trace.size());
    std::vector<BandRow> out;
    std::vector<double> v;
    for (std::size_t k = 0; k < longest; ++k) {
        v.clear();
        for (const auto& r : rows)
            if (k < r.result.trace.size()) v.push_back(r.result.trace[k].balance_error);
        BandRow b;
        b.step = static_cast<int>(k) + 1;
        b.active = static_cast<int>(v.size());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double ss = 0;
        for (double x : v) ss += (x - mean) * (x - mean);
        b.stddev = std::sqrt(ss / v.size());
        b.max = *std::max_element(v.begin(), v.end());
        b.median = detail::median(v);
        out.push_back(b);
    }
    return out;
}

inline void write_band_csv(std::ostream& os, std::span<const BandRow> band, const std::vector<std::string>& header) {
    for (const auto& line : header) os << "# " << line << '\n';
    os << "step,active,median,lower,upper,max\n";
    os << std::setprecision(10);
    for (const BandRow& b : band)
        os << b.step << ',' << b.active << ',' << b.median << ',' << std::max(0.0, b.median - b.stddev) << ','
           << b.median + b.stddev << ',' << b.max << '\n';
}

}  // namespace boxrot
