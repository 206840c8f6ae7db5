#include "boxrot/massmodel.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace boxrot;

TEST(MassModel, UniformBoxInertiaMatchesClosedForm) {
    const BoxDims box{0.40, 0.30, 0.15};
    // The floor alone outweighs 2 kg at this resolution; I_zz is linear in mass.
    const auto dist = MassDistribution::uniform({40, 30, 15}, box, 0.0);
    const double m = dist.total_mass();
    const Mat3 inertia = inertia_tensor(dist, center_of_mass(dist));
    const double expected = m * (0.40 * 0.40 + 0.30 * 0.30) / 12.0;
    EXPECT_NEAR(inertia(2, 2), expected, 0.02 * expected);
    EXPECT_NEAR(2.0 / m * inertia(2, 2), 0.041667, 0.02 * 0.041667);
}

TEST(MassModel, UniformCenterOfMassIsGeometricCenter) {
    const auto dist = MassDistribution::uniform(kDefaultGrid, kDefaultBox, 3.0);
    EXPECT_LT(center_of_mass(dist).norm(), 1e-12);
}

TEST(MassModel, InertiaTensorIsSymmetricPositiveDefinite) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto dist = sample_gaussian_distribution(seed);
        const Mat3 inertia = inertia_tensor(dist, center_of_mass(dist));
        EXPECT_LT((inertia - inertia.transpose()).norm(), 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3> eig(inertia);
        EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
    }
}

TEST(MassModel, SingleVoxelMassShiftsCenterOfMass) {
    std::vector<std::uint8_t> occ(kDefaultGrid.count(), 0);
    const int q = kDefaultGrid.index(9, 7, 3);
    occ[q] = 1;
    const auto dist = MassDistribution::from_occupancy(kDefaultGrid, kDefaultBox, occ, 5.0);
    const Vec3 c = center_of_mass(dist);
    const Vec3 expected = dist.voxel_center(q) * 5.0 / dist.total_mass();
    EXPECT_LT((c - expected).norm(), 1e-12);
}

TEST(MassModel, RejectsMassBelowFloor) {
    std::vector<double> m(kDefaultGrid.count(), kMassFloor);
    m[3] = 0.0;
    EXPECT_THROW(MassDistribution(kDefaultGrid, kDefaultBox, m), Error);
}

TEST(Hazard, EverySlabDistributionIsHazardous) {
    for (HazardVolume u : {HazardVolume::U1, HazardVolume::U2, HazardVolume::U3, HazardVolume::U4}) {
        const HazardReport r = classify_hazard(slab_distribution(u, 4.0));
        EXPECT_TRUE(r.hazardous);
        ASSERT_TRUE(r.triggering_volume.has_value());
        EXPECT_EQ(*r.triggering_volume, u);
        EXPECT_NEAR(r.mass_fraction_in_volume, 1.0, 1e-12);
    }
}

TEST(Hazard, UniformAndCentralAreSafe) {
    EXPECT_FALSE(classify_hazard(MassDistribution::uniform(kDefaultGrid, kDefaultBox, 2.0)).hazardous);
    GaussianParams g{Vec3::Zero(), Mat3(Vec3(0.01, 0.01, 0.01).asDiagonal())};
    const auto central = gaussian_distribution(g, 3.0);
    EXPECT_FALSE(classify_hazard(central).hazardous);
}

TEST(Hazard, EmptyPayloadIsSafe) {
    EXPECT_FALSE(classify_hazard(MassDistribution::uniform(kDefaultGrid, kDefaultBox, 0.0)).hazardous);
}

TEST(Hazard, EdgeSamplerAlwaysHazardous) {
    for (HazardVolume u : {HazardVolume::U1, HazardVolume::U2, HazardVolume::U3, HazardVolume::U4})
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto d = sample_gaussian_distribution(seed, kDefaultGrid, kDefaultBox, {}, GaussianSampler::edge(u));
            EXPECT_TRUE(classify_hazard(d).hazardous);
        }
}

TEST(Sampler, DeterministicPerSeedAndWithinMassRange) {
    const MassRange range{0.5, 6.0};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto a = sample_gaussian_distribution(seed, kDefaultGrid, kDefaultBox, range);
        const auto b = sample_gaussian_distribution(seed, kDefaultGrid, kDefaultBox, range);
        EXPECT_TRUE(a == b);
        EXPECT_GE(a.payload_mass(), range.lo - 1e-9);
        EXPECT_LE(a.payload_mass(), range.hi + 1e-9);
    }
}

TEST(Occupancy, IouEdgeCases) {
    std::vector<std::uint8_t> all(kDefaultGrid.count(), 1), none(kDefaultGrid.count(), 0), half(kDefaultGrid.count(), 0);
    for (int q = 0; q < kDefaultGrid.count() / 2; ++q) half[q] = 1;
    const auto A = OccupancyGrid::from_mask(kDefaultGrid, all);
    const auto N = OccupancyGrid::from_mask(kDefaultGrid, none);
    const auto H = OccupancyGrid::from_mask(kDefaultGrid, half);
    EXPECT_DOUBLE_EQ(iou(A, A), 1.0);
    EXPECT_DOUBLE_EQ(iou(N, N), 1.0);
    EXPECT_DOUBLE_EQ(iou(A, N), 0.0);
    EXPECT_DOUBLE_EQ(iou(H, A), 0.5);
}

TEST(Serialization, DistributionRoundTrip) {
    const auto d = sample_gaussian_distribution(17);
    std::stringstream ss;
    write_distribution(ss, d);
    EXPECT_TRUE(read_distribution(ss) == d);
}

TEST(Serialization, CorruptMagicRejected) {
    std::stringstream ss("XXXX garbage");
    EXPECT_THROW(read_distribution(ss), Error);
}
