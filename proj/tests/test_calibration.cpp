#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace boxrot;

namespace {
std::vector<ForceSample> spread_samples(Channel c, double range, int n, double gain) {
    std::vector<ForceSample> out;
    for (int i = 0; i < n; ++i) {
        const double cmd = -range + 2 * range * (i + 0.5) / n;
        out.push_back({c, cmd, gain * cmd});
    }
    return out;
}

std::vector<ForceSample> all_channels(int n) {
    std::vector<ForceSample> s;
    const CommandRanges r;
    for (Channel c : kChannels) {
        auto part = spread_samples(c, r.of(c), n, 10.0);
        s.insert(s.end(), part.begin(), part.end());
    }
    return s;
}
}  // namespace

TEST(ForceMap, IdenticalSamplesReproduceTheirForce) {
    std::vector<ForceSample> s = all_channels(9);
    std::erase_if(s, [](const ForceSample& f) { return f.channel == Channel::V1; });
    for (int i = 0; i < 30; ++i) s.push_back({Channel::V1, 0.2, 7.5});
    const ControlForceMap map = build_mapping(s, 9);
    EXPECT_NEAR(map.lookup(Channel::V1, 0.2), 7.5, 1e-12);
}

TEST(ForceMap, ZeroCommandIsPinned) {
    const ControlForceMap map = build_mapping(all_channels(90), 9);
    for (Channel c : kChannels) EXPECT_EQ(map.lookup(c, 0.0), 0.0);
}

TEST(ForceMap, LookupIsOdd) {
    std::vector<ForceSample> s = all_channels(90);
    for (auto& f : s) f.force += 0.3 * f.command * f.command;  // asymmetric raw data
    const ControlForceMap map = build_mapping(s, 9);
    for (Channel c : kChannels)
        for (double frac : {0.05, 0.3, 0.71, 1.0, 1.5}) {
            const double cmd = frac * CommandRanges{}.of(c);
            EXPECT_NEAR(map.lookup(c, -cmd), -map.lookup(c, cmd), 1e-12);
        }
}

TEST(ForceMap, LinearDataIsReproducedBetweenNodes) {
    const ControlForceMap map = build_mapping(all_channels(900), 9);
    EXPECT_NEAR(map.lookup(Channel::P2, 0.011), 0.11, 1e-3);
    EXPECT_NEAR(map.lookup(Channel::V1, -0.17), -1.7, 1e-2);
}

TEST(ForceMap, SampleOnlyAffectsItsBin) {
    std::vector<ForceSample> s = all_channels(90);
    const ControlForceMap before = build_mapping(s, 9);
    s.push_back({Channel::V2, 0.29, 100.0});
    const ControlForceMap after = build_mapping(s, 9);
    const auto& b0 = before.channel(Channel::V2).bins();
    const auto& b1 = after.channel(Channel::V2).bins();
    for (std::size_t b = 0; b + 1 < b0.size(); ++b) {
        EXPECT_EQ(b0[b].mean, b1[b].mean);
        EXPECT_EQ(b0[b].count, b1[b].count);
    }
    EXPECT_EQ(b1.back().count, b0.back().count + 1);
}

TEST(ForceMap, MissingChannelRejected) {
    EXPECT_THROW(build_mapping(spread_samples(Channel::V1, 0.3, 20, 1.0), 9), Error);
}

TEST(ForceMap, CsvRoundTrip) {
    const ControlForceMap map = build_mapping(all_channels(45), 9, {}, 2.25, {0.6, 0.7});
    std::stringstream ss;
    write_force_map_csv(ss, map, {"unit test"});
    const ControlForceMap back = read_force_map_csv(ss);
    EXPECT_DOUBLE_EQ(back.reference_mass(), 2.25);
    EXPECT_DOUBLE_EQ(back.reference_load()[1], 0.7);
    for (Channel c : kChannels)
        for (double cmd : {-0.015, 0.004, 0.2}) EXPECT_DOUBLE_EQ(back.lookup(c, cmd), map.lookup(c, cmd));
}

TEST(ForceMap, CsvWrongVersionRejected) {
    std::stringstream ss("# boxrot-forcemap v1\nchannel,range\n");
    EXPECT_THROW(read_force_map_csv(ss), Error);
}

TEST(Calibration, DisjointActionsHaveOneChannel) {
    for (const Action& a : sample_disjoint_actions(500, 3)) {
        ASSERT_TRUE(a.valid());
        const auto ch = active_channel(a);
        ASSERT_TRUE(ch.has_value());
        EXPECT_LE(std::abs(ch->second), CommandRanges{}.of(ch->first));
    }
    Action mixed = Action::velocity(0.1, 0.1);
    EXPECT_THROW(active_channel(mixed), Error);
}

TEST(Calibration, FourHundredTransitionsPopulateFiveBins) {
    CalibrationConfig cc;
    cc.transitions = 400;
    const CalibrationRun run = run_calibration(cc, BeltConfig{});
    for (Channel c : kChannels) EXPECT_GE(run.map.channel(c).populated_bins(), 5) << channel_name(c);
}

TEST(Calibration, RecoversInjectedLinearGain) {
    const CalibrationRun run = run_calibration(oracle::linear_gain_calibration(), oracle::linear_gain_belts());
    const oracle::GainCheck g = oracle::check_linear_gain(run.map);
    EXPECT_GE(g.bins_checked, 24);
    EXPECT_LE(g.worst_relative_error, oracle::kGainTolerance) << channel_name(g.worst_channel);
}

TEST(Calibration, DefaultMapPushesWithTheCommand) {
    const CalibrationRun run = run_calibration(CalibrationConfig{}, BeltConfig{});
    EXPECT_GT(run.map.reference_mass(), 2.0);
    EXPECT_EQ(run.dropped, 0);
    for (Channel c : kChannels) {
        const double r = CommandRanges{}.of(c);
        EXPECT_GT(run.map.lookup(c, 0.5 * r), 0.0) << channel_name(c);
        // Belts drive the box by friction alone.
        EXPECT_LE(run.map.lookup(c, r), 1.1 * BeltConfig{}.mu_k * BeltConfig{}.gravity * run.map.reference_mass())
            << channel_name(c);
    }
}
