#include "oracles.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

using namespace boxrot;

TEST(ActionSet, NinetyFiveDistinctValidActions) {
    const std::vector<Action> set = discrete_action_set();
    EXPECT_EQ(set.size(), 95u);
    int nulls = 0;
    std::set<std::array<double, 4>> seen;
    for (const Action& a : set) {
        EXPECT_TRUE(a.valid());
        nulls += a.tag == Restriction::Null;
        seen.insert(a.as_array());
    }
    EXPECT_EQ(nulls, 1);
    EXPECT_EQ(seen.size(), set.size());
}

TEST(Candidates, UniformWithoutReplacement) {
    std::mt19937_64 rng(5);
    std::vector<int> hits(95, 0);
    for (int r = 0; r < 2000; ++r) {
        const auto idx = sample_candidate_indices(95, 50, rng);
        EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 50u);
        for (std::size_t i : idx) ++hits[i];
    }
    for (int h : hits) EXPECT_NEAR(h / 2000.0, 50.0 / 95.0, 0.06);
    EXPECT_THROW(sample_candidate_indices(95, 96, rng), Error);
}

TEST(Pareto, MatchesBruteForceOracle) {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 500; ++t) {
        const auto s = oracle::random_rewards(rng, 100);
        EXPECT_EQ(pareto_front(std::span<const RewardPair>(s)), oracle::brute_force_front(s)) << "set " << t;
    }
}

TEST(Pareto, IdenticalPairsAllKept) {
    const std::vector<RewardPair> s(4, RewardPair{1.0, 2.0});
    EXPECT_EQ(pareto_front(std::span<const RewardPair>(s)).size(), 4u);
    const std::vector<RewardPair> none;
    EXPECT_THROW(pareto_front(std::span<const RewardPair>(none)), Error);
}

TEST(Scoring, RewardsPeakAtTarget) {
    ControllerConfig cfg;
    PosePrediction p;
    p.theta_hat = cfg.target_angle;
    p.r_hat = {0.0, 0.01};
    const RewardPair r = score_action(p, {-0.01, 0.03}, cfg);
    EXPECT_NEAR(r.r1, 1.0 / cfg.epsilon, 1e-6);
    EXPECT_NEAR(r.r2, 1.0 / cfg.epsilon, 1e-6);
    p.theta_hat = 0.0;
    EXPECT_LT(score_action(p, {-0.01, 0.03}, cfg).r1, 1.0);
}

TEST(Selection, UniformOverFront) {
    const std::vector<int> front = {0, 1, 2, 3};
    std::mt19937_64 rng(1);
    std::vector<int> hits(4, 0);
    for (int i = 0; i < 4000; ++i) ++hits[select_action(std::span<const int>(front), rng)];
    for (int h : hits) EXPECT_NEAR(h, 1000, 120);
}

class EpisodeFixture : public ::testing::Test {
protected:
    static void SetUpTestSuite() { calib_ = new CalibrationRun(run_calibration(CalibrationConfig{}, BeltConfig{})); }
    static void TearDownTestSuite() { delete calib_; }
    static CalibrationRun* calib_;
};
CalibrationRun* EpisodeFixture::calib_ = nullptr;

TEST_F(EpisodeFixture, ZeroStepBudgetFails) {
    const auto box = MassDistribution::uniform(kDefaultGrid, kDefaultBox, 2.0);
    ControllerConfig cfg;
    cfg.max_steps = 0;
    const EpisodeResult r = run_episode(box, {nullptr, &box}, calib_->map, BeltConfig{}, cfg);
    EXPECT_EQ(r.outcome, Outcome::Failure);
    EXPECT_EQ(r.steps, 0);
}

TEST_F(EpisodeFixture, KnownHazardAborts) {
    const auto slab = slab_distribution(HazardVolume::U3, 4.0);
    const EpisodeResult r = run_episode(slab, {nullptr, &slab}, calib_->map, BeltConfig{}, ControllerConfig{});
    EXPECT_EQ(r.outcome, Outcome::AbortedHazard);
}

TEST_F(EpisodeFixture, UniformBoxRotatesAndTraceIsConsistent) {
    const auto box = MassDistribution::uniform(kDefaultGrid, kDefaultBox, 2.0);
    ControllerConfig cfg;
    cfg.seed = 42;
    const EpisodeResult a = run_episode(box, {nullptr, &box}, calib_->map, BeltConfig{}, cfg);
    const EpisodeResult b = run_episode(box, {nullptr, &box}, calib_->map, BeltConfig{}, cfg);
    EXPECT_EQ(a.outcome, Outcome::Success) << a.reason;
    EXPECT_EQ(a.steps, b.steps);
    EXPECT_EQ(a.final_theta, b.final_theta);
    ASSERT_EQ(static_cast<int>(a.trace.size()), a.steps);
    EXPECT_NEAR(a.final_theta, kHalfPi, cfg.angle_tolerance);
    for (const StepRecord& s : a.trace) EXPECT_LE(s.balance_error, cfg.balance_threshold);
    std::stringstream ss;
    write_episode_csv(ss, a);
    int rows = 0;
    for (std::string line; std::getline(ss, line);)
        if (!line.empty() && line[0] != '#') ++rows;
    EXPECT_EQ(rows, a.steps + 1);
}
