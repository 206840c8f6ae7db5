#include "boxrot/sim.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace boxrot;

namespace {
const MassDistribution& uniform_box() {
    static const MassDistribution d = MassDistribution::uniform(kDefaultGrid, kDefaultBox, 2.0);
    return d;
}
}  // namespace

TEST(Action, RestrictionInvariant) {
    EXPECT_TRUE(Action::null().valid());
    EXPECT_TRUE(Action::velocity(0.1, -0.2).valid());
    EXPECT_TRUE(Action::left_position(0.01).valid());
    EXPECT_TRUE(Action::right_position(-0.01).valid());
    EXPECT_EQ(Action::velocity(0, 0).tag, Restriction::Null);
    Action mixed = Action::velocity(0.1, 0.1);
    mixed.p1 = 0.01;
    EXPECT_FALSE(mixed.valid());
    const BeltConfig cfg;
    const StepResult r = reset(uniform_box(), {}, cfg);
    EXPECT_THROW(step(r.state, mixed, uniform_box(), cfg), Error);
}

TEST(Sim, ResetRestsOnBothBelts) {
    const BeltConfig cfg;
    const StepResult r = reset(uniform_box(), {}, cfg);
    EXPECT_FALSE(r.observation.s1_voxels.empty());
    EXPECT_FALSE(r.observation.s2_voxels.empty());
    EXPECT_DOUBLE_EQ(r.state.belt_y[1] - r.state.belt_y[0] - cfg.belt_width, cfg.initial_gap);
}

TEST(Sim, ResetOffBeltsThrows) {
    const BeltConfig cfg;
    EXPECT_THROW(reset(uniform_box(), {0.0, 1.0, 0.0}, cfg), Error);
}

TEST(Sim, NullActionKeepsBoxAtRest) {
    const BeltConfig cfg;
    StepResult r = reset(uniform_box(), {}, cfg);
    const Pose2 start = r.state.pose;
    for (int k = 0; k < 10; ++k) r = step(r.state, Action::null(), uniform_box(), cfg);
    EXPECT_NEAR(r.state.pose.x, start.x, 1e-12);
    EXPECT_NEAR(r.state.pose.y, start.y, 1e-12);
    EXPECT_NEAR(r.state.pose.theta, start.theta, 1e-12);
}

TEST(Sim, EqualBeltSpeedsTranslateWithoutRotation) {
    const BeltConfig cfg;
    StepResult r = reset(uniform_box(), {}, cfg);
    for (int k = 0; k < 5; ++k) r = step(r.state, Action::velocity(0.2, 0.2), uniform_box(), cfg);
    EXPECT_GT(r.state.pose.x, 0.01);
    EXPECT_NEAR(r.state.pose.theta, 0.0, 1e-9);
}

TEST(Sim, OpposedBeltSpeedsRotate) {
    const BeltConfig cfg;
    StepResult r = reset(uniform_box(), {}, cfg);
    for (int k = 0; k < 5; ++k) r = step(r.state, Action::velocity(0.2, -0.2), uniform_box(), cfg);
    // Left belt forward, right belt back turns the box counterclockwise.
    EXPECT_GT(r.state.pose.theta, 1e-3);
}

TEST(Sim, ClampKeepsGapInRange) {
    const BeltConfig cfg;
    const std::array<double, 2> belts = {cfg.initial_belt_y(0), cfg.initial_belt_y(1)};
    const Action a = clamp_action(Action::left_position(0.5), belts, cfg);
    EXPECT_LE(a.p1, cfg.position_step_limit);
    const auto after = belts_after(Action::left_position(0.5), belts, cfg);
    EXPECT_GE(after[1] - after[0] - cfg.belt_width, cfg.gap_min - 1e-12);
    const Action v = clamp_action(Action::velocity(3.0, -3.0), belts, cfg);
    EXPECT_DOUBLE_EQ(v.v1, cfg.surface_speed_limit);
    EXPECT_DOUBLE_EQ(v.v2, -cfg.surface_speed_limit);
}

TEST(Sim, DeterministicSteps) {
    const BeltConfig cfg;
    const auto dist = sample_gaussian_distribution(4);
    StepResult a = reset(dist, {}, cfg), b = reset(dist, {}, cfg);
    for (int k = 0; k < 20; ++k) {
        const Action act = k % 2 ? Action::velocity(0.1, -0.3) : Action::right_position(0.005);
        a = step(a.state, act, dist, cfg);
        b = step(b.state, act, dist, cfg);
    }
    EXPECT_EQ(a.state.pose.x, b.state.pose.x);
    EXPECT_EQ(a.state.pose.theta, b.state.pose.theta);
}

TEST(Exploration, FixedLengthOnUniformBox) {
    const BeltConfig cfg;
    const StepResult r = reset(uniform_box(), {}, cfg);
    const ExplorationResult ex = run_exploratory_sequence(r.state, uniform_box(), cfg);
    EXPECT_FALSE(ex.trajectory.truncated);
    EXPECT_EQ(static_cast<int>(ex.trajectory.size()), kExplorationSteps);
    std::stringstream ss;
    write_trajectory_csv(ss, ex.trajectory);
    int lines = 0;
    for (std::string l; std::getline(ss, l);) ++lines;
    EXPECT_EQ(lines, kExplorationSteps + 1);
}
