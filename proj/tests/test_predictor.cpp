#include "boxrot/calibration.hpp"
#include "boxrot/predictor.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace boxrot;

TEST(FrictionDirection, OrthogonalToVelocityAndUnit) {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const Vec2 delta(n(rng), n(rng)), r_dot(n(rng), n(rng));
        const Vec2 eta = friction_direction(delta, r_dot);
        EXPECT_LT(std::abs(eta.dot(r_dot)), 1e-9);
        if (eta.squaredNorm() > 0) EXPECT_NEAR(eta.norm(), 1.0, 1e-12);
    }
}

TEST(FrictionDirection, ParallelInputsGiveZero) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const Vec2 delta(n(rng), n(rng));
        const double s = n(rng);
        EXPECT_EQ(friction_direction(delta, s * delta), Vec2::Zero());
    }
    EXPECT_EQ(friction_direction(Vec2::Zero(), Vec2(1, 0)), Vec2::Zero());
}

TEST(FrictionDirection, RestingBodyOpposesDisplacement) {
    const Vec2 eta = friction_direction(Vec2(0.3, -0.4), Vec2::Zero());
    EXPECT_NEAR(eta.x(), -0.6, 1e-12);
    EXPECT_NEAR(eta.y(), 0.8, 1e-12);
}

TEST(Torque, SymmetricContactEqualForcesCancel) {
    const BeltConfig cfg;
    const auto dist = MassDistribution::uniform(kDefaultGrid, kDefaultBox, 2.0);
    const Observation o = reset(dist, {}, cfg).observation;
    ASSERT_EQ(o.s1_voxels.size(), o.s2_voxels.size());
    const ForceDecomposition f{1.7, 1.7, 0.0, 0.0};
    EXPECT_LT(std::abs(torque(f, o.s1_voxels, o.s2_voxels, dist, planar_com(dist), 0.0)), 1e-9);
    const ForceDecomposition opposed{1.7, -1.7, 0.0, 0.0};
    EXPECT_GT(std::abs(torque(opposed, o.s1_voxels, o.s2_voxels, dist, planar_com(dist), 0.0)), 1e-3);
}

TEST(Torque, ForceOnEmptySetThrows) {
    const auto dist = MassDistribution::uniform(kDefaultGrid, kDefaultBox, 2.0);
    const std::vector<int> s1 = {0}, none;
    EXPECT_THROW(torque({1, 1, 0, 0}, s1, none, dist, planar_com(dist), 0.0), Error);
}

TEST(SupportVolumes, ColumnsAboveContacts) {
    const auto dist = MassDistribution::uniform(kDefaultGrid, kDefaultBox, 2.0);
    const std::vector<int> s1 = {0, 1}, s2 = {5};
    const SupportVolumes v = support_volumes(s1, s2, dist);
    EXPECT_EQ(v.v1.size(), 2u * kDefaultGrid.nh);
    EXPECT_EQ(v.v2.size(), 1u * kDefaultGrid.nh);
    EXPECT_NEAR(volume_mass(v.v2, dist), dist.total_mass() / (kDefaultGrid.nl * kDefaultGrid.nw), 1e-12);
}

TEST(Kinematics, QuadraticTailRecoversDerivatives) {
    const double dt = 0.05;
    std::vector<double> y;
    for (int i = 0; i < 4; ++i) {
        const double t = (i - 3) * dt;
        y.push_back(1.0 + 2.0 * t + 1.5 * t * t);
    }
    const auto [d1, d2] = detail::quadratic_tail_derivatives(y, dt);
    EXPECT_NEAR(d1, 2.0, 1e-9);
    EXPECT_NEAR(d2, 3.0, 1e-9);
}

class PredictorFixture : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        calib_ = new CalibrationRun(run_calibration(CalibrationConfig{}, BeltConfig{}));
    }
    static void TearDownTestSuite() { delete calib_; }
    static CalibrationRun* calib_;
};
CalibrationRun* PredictorFixture::calib_ = nullptr;

TEST_F(PredictorFixture, NullActionAtRestPredictsNoMotion) {
    const BeltConfig cfg;
    const auto dist = MassDistribution::uniform(kDefaultGrid, kDefaultBox, 2.0);
    StepResult r = reset(dist, {}, cfg);
    std::vector<Observation> w = {r.observation};
    for (int k = 0; k < 3; ++k) {
        r = step(r.state, Action::null(), dist, cfg);
        w.push_back(r.observation);
    }
    const PosePrediction p = predict_next_pose(w, Action::null(), dist, calib_->map, cfg);
    EXPECT_NEAR(p.theta_hat, 0.0, 1e-12);
    EXPECT_LT((p.r_hat - r.observation.geom_pose.position()).norm(), 1e-12);
}

TEST_F(PredictorFixture, OpposedBeltsPredictRotationSign) {
    const BeltConfig cfg;
    const auto dist = MassDistribution::uniform(kDefaultGrid, kDefaultBox, 2.0);
    StepResult r = reset(dist, {}, cfg);
    std::vector<Observation> w = {r.observation};
    for (int k = 0; k < 3; ++k) {
        r = step(r.state, Action::null(), dist, cfg);
        w.push_back(r.observation);
    }
    const Action a = Action::velocity(0.2, -0.2);
    const PosePrediction p = predict_next_pose(w, a, dist, calib_->map, cfg);
    const StepResult truth = step(r.state, a, dist, cfg);
    EXPECT_GT(p.theta_hat, 0.0);
    EXPECT_GT(truth.state.pose.theta, 0.0);
}

TEST_F(PredictorFixture, MassScalingMatchesReferenceBox) {
    // The calibration box itself sees unscaled forces.
    EXPECT_NEAR(calib_->map.reference_mass(), MassDistribution::uniform(kDefaultGrid, kDefaultBox, 2.0).total_mass(),
                1e-12);
}
