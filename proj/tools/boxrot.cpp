// boxrot command line: calibration, estimator and baseline training, single
// episodes and the benchmark.

#include "boxrot/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace boxrot;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::optional<int> workers;
};

Stages make_stages(const Globals& g) {
    ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
    if (g.seed) cfg.seed = *g.seed;
    if (g.workers) {
        require(*g.workers >= 1, "--workers must be positive");
        cfg.workers = *g.workers;
    }
    fs::create_directories(g.out);
    return {cfg, {g.out}};
}

void print_bins(const ControlForceMap& map) {
    for (Channel c : kChannels) {
        const ChannelMap& ch = map.channel(c);
        std::printf("%s  range %.3f  populated %d/%zu\n", channel_name(c), ch.range(), ch.populated_bins(),
                    ch.bins().size());
        std::printf("  %10s %10s %10s %8s\n", "center", "force_N", "std_N", "count");
        for (const ForceBin& b : ch.bins())
            std::printf("  %10.4f %10.4f %10.4f %8d\n", b.center, b.mean, b.std, b.count);
    }
}

int cmd_calibrate(const Globals& g) {
    const Stages st = make_stages(g);
    const CalibrationRun run = st.calibrate();
    print_bins(run.map);
    std::printf("episodes %d, simulated steps %d, dropped %d\nwrote %s\n", run.episodes, run.simulated_steps,
                run.dropped, st.paths.force_map().c_str());
    return 0;
}

int cmd_gen_data(const Globals& g) {
    const Stages st = make_stages(g);
    const auto [ds, cached] = st.dataset();
    std::printf("%s %zu boxes, %zu transitions, %d resampled\n%s\n", cached ? "reused" : "generated",
                ds.items.size(), ds.transitions(), ds.resampled, st.paths.dataset().c_str());
    return 0;
}

int cmd_train_estimator(const Globals& g) {
    const Stages st = make_stages(g);
    const auto [em, report] = st.train_estimator([](const EpochStats& e) {
        std::printf("epoch %4d  train %.5f (bce %.5f, mse %.5f)  val %.5f  iou %.3f\n", e.epoch, e.train_loss,
                    e.train_bce, e.train_mse, e.val_loss, e.val_median_iou);
        std::fflush(stdout);
    });
    std::printf("transitions %zu, parameters %lld, held-out median IoU %.3f, %.1f s\nwrote %s\n", report.transitions,
                static_cast<long long>(report.parameters), report.final_val_median_iou, report.wall_seconds,
                st.paths.estimator().c_str());
    return 0;
}

int cmd_train_baseline(const Globals& g) {
    const Stages st = make_stages(g);
    const ControlForceMap map = st.force_map();
    const EstimatorModel est = st.estimator();
    const auto [bb, report] = st.train_baseline(map, est);
    for (std::size_t e = 0; e < report.train_loss.size(); ++e)
        std::printf("epoch %3zu  train %.5f  val %.5f\n", e + 1, report.train_loss[e], report.val_loss[e]);
    std::printf("transitions %zu, parameters %lld, initial val %.5f, %.1f s\nwrote %s\n", report.transitions,
                static_cast<long long>(report.parameters), report.initial_val_loss, report.wall_seconds,
                st.paths.baseline().c_str());
    return 0;
}

int cmd_run_episode(const Globals& g, const std::string& method, const std::string& dist_name) {
    const Stages st = make_stages(g);
    const MassDistribution dist = resolve_distribution(st.cfg, dist_name);
    std::optional<ControlForceMap> map;
    std::optional<EstimatorModel> est;
    std::optional<BlackboxModel> bb;
    BenchInputs in;
    if (method == "physics") {
        map = st.force_map();
        est = st.estimator();
        in.map = &*map;
        in.estimator = &*est;
    } else {
        bb = st.blackbox();
        in.blackbox = &*bb;
    }
    const EpisodeResult r = run_method(method, dist, in, st.cfg, st.cfg.seed);
    const fs::path trace = st.paths.dir / ("episode_" + method + "_" + dist_name + "_" + std::to_string(st.cfg.seed) + ".csv");
    std::ofstream os(trace);
    if (!os) throw Error(ErrorKind::Io, "cannot open " + trace.string());
    auto header = provenance(st.cfg, "episode " + method + " " + dist_name);
    write_episode_csv(os, r, header);
    std::printf("%s on %s: %s after %d steps, max balance %.4f m, final theta %.4f rad%s%s\nwrote %s\n",
                method.c_str(), dist_name.c_str(), outcome_name(r.outcome), r.steps, r.max_balance_error,
                r.final_theta, r.reason.empty() ? "" : ", ", r.reason.c_str(), trace.c_str());
    return 0;
}

void write_file(const fs::path& p, const std::function<void(std::ostream&)>& body) {
    std::ofstream os(p);
    if (!os) throw Error(ErrorKind::Io, "cannot open " + p.string());
    body(os);
}

int cmd_bench(const Globals& g) {
    const Stages st = make_stages(g);
    const auto& methods = st.cfg.bench.methods;
    const bool physics = std::find(methods.begin(), methods.end(), "physics") != methods.end();
    const bool blackbox = std::find(methods.begin(), methods.end(), "blackbox") != methods.end();
    std::optional<ControlForceMap> map;
    std::optional<EstimatorModel> est;
    std::optional<BlackboxModel> bb;
    BenchInputs in;
    if (physics) {
        map = st.force_map();
        est = st.estimator();
        in.map = &*map;
        in.estimator = &*est;
    }
    if (blackbox) {
        bb = st.blackbox();
        in.blackbox = &*bb;
    }
    const BenchReport rep = run_bench(st.cfg, in);
    const auto header = provenance(st.cfg, "bench");
    write_file(st.paths.dir / "bench_episodes.csv", [&](std::ostream& os) { write_episodes_csv(os, rep, header); });
    write_file(st.paths.dir / "bench_table.csv", [&](std::ostream& os) { write_table_csv(os, rep, header); });
    write_file(st.paths.dir / "bench_timing.csv", [&](std::ostream& os) { write_timing_csv(os, rep, header); });
    write_file(st.paths.dir / "bench_table.txt", [&](std::ostream& os) { write_table_text(os, rep); });
    std::vector<EpisodeRow> random_rows;
    for (const auto& r : rep.rows)
        if (r.method == "physics" && r.distribution.rfind('R', 0) == 0) random_rows.push_back(r);
    if (!random_rows.empty())
        write_file(st.paths.dir / "balance_band.csv",
                   [&](std::ostream& os) { write_band_csv(os, balance_band(random_rows), header); });
    write_table_text(std::cout, rep);
    std::printf("random-batch reference success ratio: 83.33%%\nwrote %s\n", st.paths.dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rotate a box of unknown mass distribution on two conveyor belts"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "episode seed base");
    app.add_option("--out", g.out, "artifact directory")->capture_default_str();
    app.add_option("--workers", g.workers, "worker threads");

    std::string method = "physics", dist = "A";
    auto* calibrate = app.add_subcommand("calibrate", "estimate the control force map");
    auto* gen = app.add_subcommand("gen-data", "generate the estimator dataset");
    auto* train_est = app.add_subcommand("train-estimator", "train the mass distribution estimator");
    auto* train_bb = app.add_subcommand("train-baseline", "train the black-box baseline");
    auto* episode = app.add_subcommand("run-episode", "run one episode and export its trace");
    episode->add_option("--method", method)->check(CLI::IsMember({"physics", "blackbox"}))->capture_default_str();
    episode->add_option("--distribution", dist, "A, B, C, D, uniform or R<k>")->capture_default_str();
    auto* bench = app.add_subcommand("bench", "run the benchmark roster and random batch");
    for (auto* sub : {calibrate, gen, train_est, train_bb, episode, bench}) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);
    try {
        if (calibrate->parsed()) return cmd_calibrate(g);
        if (gen->parsed()) return cmd_gen_data(g);
        if (train_est->parsed()) return cmd_train_estimator(g);
        if (train_bb->parsed()) return cmd_train_baseline(g);
        if (episode->parsed()) return cmd_run_episode(g, method, dist);
        if (bench->parsed()) return cmd_bench(g);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
