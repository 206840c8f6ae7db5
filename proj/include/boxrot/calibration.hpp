#pragma once

// Offline calibration of the control-to-force map from short episodes with a
// uniform box, driven by disjoint (single-channel) random commands.

#include "boxrot/forcemap.hpp"
#include "boxrot/massmodel.hpp"
#include "boxrot/predictor.hpp"
#include "boxrot/sim.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace boxrot {

struct CommandRanges {
    double velocity = 0.3;   ///< m/s
    double position = 0.02;  ///< m

    double of(Channel c) const { return (c == Channel::V1 || c == Channel::V2) ? velocity : position; }
};

inline Action single_channel_action(Channel c, double command) {
    switch (c) {
    case Channel::V1: return Action::velocity(command, 0.0);
    case Channel::V2: return Action::velocity(0.0, command);
    case Channel::P1: return Action::left_position(command);
    case Channel::P2: return Action::right_position(command);
    }
    return Action::null();
}

/// Actions with exactly one nonzero component. Channel and magnitude are
/// uniform; the sign is a fair coin.
inline std::vector<Action> sample_disjoint_actions(int n, std::uint64_t seed, CommandRanges ranges = {}) {
    require(n >= 1, "need at least one action");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> channel(0, 3);
    std::uniform_real_distribution<double> magnitude(0.0, 1.0);
    std::bernoulli_distribution negative(0.5);
    std::vector<Action> out;
    out.reserve(n);
    while (static_cast<int>(out.size()) < n) {
        const Channel c = kChannels[channel(rng)];
        const double m = magnitude(rng) * ranges.of(c);
        if (m == 0.0) continue;
        out.push_back(single_channel_action(c, negative(rng) ? -m : m));
    }
    return out;
}

/// Single active channel of an action, or nullopt for the null action.
inline std::optional<std::pair<Channel, double>> active_channel(const Action& a) {
    const auto v = a.as_array();
    int active = -1;
    for (int c = 0; c < 4; ++c) {
        if (v[c] == 0.0) continue;
        if (active >= 0) throw Error(ErrorKind::InvalidArgument, "more than one active channel");
        active = c;
    }
    if (active < 0) return std::nullopt;
    return std::pair{kChannels[active], v[active]};
}

struct ForceSample {
    Channel channel = Channel::V1;
    double command = 0.0;
    double force = 0.0;
};

/// F(a) = M * ddot(r_c) - F_f^1 - F_f^2 for one transition. `window` holds the
/// observations one period before the action, at its application and one
/// period after. Zero commands yield no sample.
inline std::optional<ForceSample> estimate_force_for_transition(std::span<const Observation, 3> window,
                                                                const Action& action, const MassDistribution& dist,
                                                                double mu_k, double g,
                                                                FrictionScaling scaling = FrictionScaling::UnitDirection,
                                                                bool voxel_rotation = false) {
    const auto active = active_channel(action);
    if (!active) return std::nullopt;
    const double dt = window_period(window);
    const Vec2 com = planar_com(dist);
    auto com_at = [&](const Observation& o) { return Vec2(o.geom_pose.position() + rotate(com, o.geom_pose.theta)); };

    KinematicEstimate kin;
    kin.r_c = com_at(window[1]);
    kin.r_c_dot = (kin.r_c - com_at(window[0])) / dt;
    kin.omega = (window[1].geom_pose.theta - window[0].geom_pose.theta) / dt;
    kin.theta_geom = window[1].geom_pose.theta;
    kin.r_geom = window[1].geom_pose.position();
    snap_rest(kin);

    const Vec2 delta = com_at(window[2]) - kin.r_c - kin.r_c_dot * dt;
    const Vec2 accel = 2.0 * delta / (dt * dt);
    const Vec2 moved = com_at(window[2]) - kin.r_c;
    const double turned = voxel_rotation ? window[2].geom_pose.theta - window[1].geom_pose.theta : 0.0;
    const SupportVolumes vols = support_volumes(window[1].s1_voxels, window[1].s2_voxels, dist);
    const FrictionCorrection fc = friction_correction(moved, turned, kin, vols, dist, com, mu_k, g, scaling);
    const Vec2 force = dist.total_mass() * accel - fc.force;

    const auto [channel, command] = *active;
    const bool along_x = channel == Channel::V1 || channel == Channel::V2;
    return ForceSample{channel, command, along_x ? force.x() : force.y()};
}

/// Buckets samples per channel into `bin_count` uniform bins over
/// [-range, range] and records per-bin statistics.
inline ControlForceMap build_mapping(std::span<const ForceSample> samples, int bin_count, CommandRanges ranges = {},
                                    double reference_mass = 0.0, std::array<double, 2> reference_load = {0.0, 0.0}) {
    require(bin_count >= 1, "bin_count must be positive");
    std::array<ChannelMap, 4> channels;
    for (Channel c : kChannels) {
        const double range = ranges.of(c);
        const double width = 2 * range / bin_count;
        std::vector<std::vector<const ForceSample*>> members(bin_count);
        int total = 0;
        for (const ForceSample& s : samples) {
            if (s.channel != c || s.command == 0.0) continue;
            int b = static_cast<int>(std::floor((s.command + range) / width));
            b = std::clamp(b, 0, bin_count - 1);
            members[b].push_back(&s);
            ++total;
        }
        if (total == 0) throw Error(ErrorKind::InvalidArgument, std::string("no samples for channel ") + channel_name(c));
        std::vector<ForceBin> bins(bin_count);
        for (int b = 0; b < bin_count; ++b) {
            ForceBin& bin = bins[b];
            bin.center = -range + (b + 0.5) * width;
            bin.count = static_cast<int>(members[b].size());
            if (bin.count == 0) {
                bin.command_mean = bin.center;
                continue;
            }
            double sc = 0, sf = 0;
            for (const ForceSample* s : members[b]) {
                sc += s->command;
                sf += s->force;
            }
            bin.command_mean = sc / bin.count;
            bin.mean = sf / bin.count;
            double ss = 0;
            for (const ForceSample* s : members[b]) ss += (s->force - bin.mean) * (s->force - bin.mean);
            bin.std = bin.count > 1 ? std::sqrt(ss / (bin.count - 1)) : 0.0;
        }
        channels[static_cast<int>(c)] = ChannelMap(range, std::move(bins));
    }
    return ControlForceMap(std::move(channels), reference_mass, reference_load);
}

// ---------------------------------------------------------------------------
// Calibration episodes

struct CalibrationConfig {
    int transitions = 1600;      ///< active (non-null) transitions to collect
    int episode_actions = 4;     ///< active actions per episode before a reset
    int bin_count = 9;
    int null_steps = 2;          ///< null actions between consecutive active actions
    double box_mass = 2.0;       ///< uniform calibration box payload
    std::uint64_t seed = 1;
    CommandRanges ranges;
    FrictionScaling scaling = FrictionScaling::UnitDirection;
    bool voxel_rotation = false;
};

struct CalibrationRun {
    ControlForceMap map;
    std::vector<ForceSample> samples;
    int episodes = 0;
    int simulated_steps = 0;
    int dropped = 0;  ///< transitions discarded after support loss
};

/// Every active action is followed by a null action so each window sees the
/// effect of exactly one command.
inline CalibrationRun run_calibration(const CalibrationConfig& cc, const BeltConfig& cfg,
                                      GridDims grid = kDefaultGrid, BoxDims box = kDefaultBox) {
    const MassDistribution dist = MassDistribution::uniform(grid, box, cc.box_mass);
    const std::vector<Action> actions = sample_disjoint_actions(cc.transitions, cc.seed, cc.ranges);
    CalibrationRun run;
    TaskLimits unlimited;
    unlimited.max_steps = std::numeric_limits<int>::max();

    std::size_t next = 0;
    while (next < actions.size()) {
        StepResult cur = reset(dist, {}, cfg);
        ++run.episodes;
        // Two settled observations give the pre-action history.
        Observation prev = cur.observation;
        StepResult settle = step(cur.state, Action::null(), dist, cfg, unlimited);
        ++run.simulated_steps;
        cur = settle;
        bool lost = false;
        for (int k = 0; k < cc.episode_actions && next < actions.size() && !lost; ++k) {
            const Action& a = actions[next++];
            StepResult after = step(cur.state, a, dist, cfg, unlimited);
            ++run.simulated_steps;
            if (after.events.support_lost) {
                ++run.dropped;
                lost = true;
                break;
            }
            const std::array<Observation, 3> window = {prev, cur.observation, after.observation};
            if (auto s = estimate_force_for_transition(std::span<const Observation, 3>(window), a, dist, cfg.mu_k,
                                                       cfg.gravity, cc.scaling, cc.voxel_rotation))
                run.samples.push_back(*s);
            prev = after.observation;
            cur = after;
            for (int z = 0; z < cc.null_steps && !lost; ++z) {
                StepResult rest = step(cur.state, Action::null(), dist, cfg, unlimited);
                ++run.simulated_steps;
                lost = rest.events.support_lost;
                prev = cur.observation;
                cur = rest;
            }
        }
    }
    const Observation rest = reset(dist, {}, cfg).observation;
    const SupportVolumes vols = support_volumes(rest.s1_voxels, rest.s2_voxels, dist);
    run.map = build_mapping(run.samples, cc.bin_count, cc.ranges, dist.total_mass(),
                            {volume_mass(vols.v1, dist), volume_mass(vols.v2, dist)});
    return run;
}

}  // namespace boxrot
