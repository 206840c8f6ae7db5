#pragma once

// Voxelized box mass distributions and the inertial quantities derived from them.
//
// Box frame convention: origin at the geometric center of the box, x along the
// box length, y along its width, z up. Voxel (i, j, k) has its center at
// ((i + 1/2) dx - l/2, (j + 1/2) dy - w/2, (k + 1/2) dz - h/2). Flat voxel
// index is i + N_l * (j + N_w * k), i.e. x varies fastest.

#include "boxrot/common.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace boxrot {

struct GridDims {
    int nl = 10;
    int nw = 8;
    int nh = 4;

    int count() const { return nl * nw * nh; }
    int index(int i, int j, int k) const { return i + nl * (j + nw * k); }
    std::array<int, 3> coords(int index) const {
        return {index % nl, (index / nl) % nw, index / (nl * nw)};
    }
    bool operator==(const GridDims&) const = default;
};

struct BoxDims {
    double length = 0.40;
    double width = 0.30;
    double height = 0.15;

    bool operator==(const BoxDims&) const = default;
};

inline constexpr GridDims kDefaultGrid{10, 8, 4};
inline constexpr BoxDims kDefaultBox{0.40, 0.30, 0.15};

/// Per-voxel mass added everywhere so no contact voxel is massless.
inline constexpr double kMassFloor = 0.001;
/// Fraction of the payload mass inside a quarter slab that makes a box hazardous.
inline constexpr double kHazardFraction = 0.95;
/// Voxels whose Gaussian density reaches this fraction of the grid maximum are occupied.
inline constexpr double kDensityThreshold = 0.5;

struct MassRange {
    double lo = 0.5;
    double hi = 6.0;
};

class MassDistribution {
public:
    MassDistribution(GridDims grid, BoxDims box, std::vector<double> voxel_mass)
        : grid_(grid), box_(box), voxel_mass_(std::move(voxel_mass)) {
        require(grid_.nl >= 1 && grid_.nw >= 1 && grid_.nh >= 1, "grid dims must be positive");
        require(box_.length > 0 && box_.width > 0 && box_.height > 0, "box dims must be positive");
        require(static_cast<int>(voxel_mass_.size()) == grid_.count(),
                "voxel mass count does not match grid dims");
        for (double m : voxel_mass_)
            require(std::isfinite(m) && m >= kMassFloor, "voxel mass below mass floor");
        total_mass_ = 0.0;
        for (double m : voxel_mass_) total_mass_ += m;
    }

    /// Total payload mass spread equally over occupied voxels, then the floor added everywhere.
    static MassDistribution from_occupancy(GridDims grid, BoxDims box, std::span<const std::uint8_t> occupied,
                                           double payload_mass) {
        require(static_cast<int>(occupied.size()) == grid.count(), "occupancy size mismatch");
        require(payload_mass >= 0.0, "payload mass must be nonnegative");
        const auto n_occ = std::count_if(occupied.begin(), occupied.end(), [](auto v) { return v != 0; });
        std::vector<double> mass(occupied.size(), kMassFloor);
        if (n_occ > 0) {
            const double share = payload_mass / static_cast<double>(n_occ);
            for (std::size_t q = 0; q < occupied.size(); ++q)
                if (occupied[q]) mass[q] += share;
        }
        return MassDistribution(grid, box, std::move(mass));
    }

    static MassDistribution uniform(GridDims grid, BoxDims box, double payload_mass) {
        std::vector<std::uint8_t> all(grid.count(), 1);
        return from_occupancy(grid, box, all, payload_mass);
    }

    const GridDims& grid() const { return grid_; }
    const BoxDims& box() const { return box_; }
    std::span<const double> voxel_mass() const { return voxel_mass_; }
    double mass(int q) const { return voxel_mass_[q]; }
    double total_mass() const { return total_mass_; }
    int count() const { return grid_.count(); }

    Vec3 voxel_size() const {
        return {box_.length / grid_.nl, box_.width / grid_.nw, box_.height / grid_.nh};
    }

    /// Voxel center in the box frame (origin at the geometric center).
    Vec3 voxel_center(int q) const {
        const auto [i, j, k] = grid_.coords(q);
        const Vec3 d = voxel_size();
        return {(i + 0.5) * d.x() - box_.length / 2, (j + 0.5) * d.y() - box_.width / 2,
                (k + 0.5) * d.z() - box_.height / 2};
    }

    /// Mass above the uniform floor, i.e. the payload part of a voxel.
    double payload(int q) const { return std::max(0.0, voxel_mass_[q] - kMassFloor); }

    double payload_mass() const {
        double s = 0.0;
        for (int q = 0; q < count(); ++q) s += payload(q);
        return s;
    }

    /// Occupancy recovered from the payload part (voxels carrying more than the floor).
    std::vector<std::uint8_t> occupancy() const {
        std::vector<std::uint8_t> occ(voxel_mass_.size());
        for (int q = 0; q < count(); ++q) occ[q] = payload(q) > 1e-12 ? 1 : 0;
        return occ;
    }

    bool operator==(const MassDistribution& o) const {
        return grid_ == o.grid_ && box_ == o.box_ && voxel_mass_ == o.voxel_mass_;
    }

private:
    GridDims grid_;
    BoxDims box_;
    std::vector<double> voxel_mass_;
    double total_mass_ = 0.0;
};

struct OccupancyGrid {
    GridDims grid;
    std::vector<double> values;

    OccupancyGrid(GridDims g, std::vector<double> v) : grid(g), values(std::move(v)) {
        require(static_cast<int>(values.size()) == grid.count(), "occupancy size mismatch");
        for (double& x : values) x = std::clamp(x, 0.0, 1.0);
    }

    static OccupancyGrid from_mask(GridDims g, std::span<const std::uint8_t> mask) {
        return OccupancyGrid(g, std::vector<double>(mask.begin(), mask.end()));
    }
};

enum class HazardVolume { U1 = 1, U2 = 2, U3 = 3, U4 = 4 };

struct HazardReport {
    bool hazardous = false;
    std::optional<HazardVolume> triggering_volume;
    double mass_fraction_in_volume = 0.0;
    std::array<double, 4> fractions{};
};

// ---------------------------------------------------------------------------
// Inertial quantities

inline Vec3 center_of_mass(const MassDistribution& dist) {
    const double m_total = dist.total_mass();
    if (!(m_total > 0.0)) throw Error(ErrorKind::EmptyDistribution, "");
    Vec3 acc = Vec3::Zero();
    for (int q = 0; q < dist.count(); ++q) acc += dist.mass(q) * dist.voxel_center(q);
    return acc / m_total;
}

/// Particle-system inertia tensor about `about` (box frame), voxel centers as particles.
inline Mat3 inertia_tensor(const MassDistribution& dist, const Vec3& about) {
    if (!(dist.total_mass() > 0.0)) throw Error(ErrorKind::EmptyDistribution, "");
    Mat3 inertia = Mat3::Zero();
    for (int q = 0; q < dist.count(); ++q) {
        const Vec3 r = dist.voxel_center(q) - about;
        inertia += dist.mass(q) * (r.squaredNorm() * Mat3::Identity() - r * r.transpose());
    }
    return inertia;
}

// ---------------------------------------------------------------------------
// Hazard classification

/// Payload fractions inside U1..U4. Slabs are closed intervals in the corner
/// frame [0, l] x [0, w]; a voxel belongs to a slab when its center does.
inline HazardReport classify_hazard(const MassDistribution& dist, double hazard_fraction = kHazardFraction) {
    const BoxDims& box = dist.box();
    const double tol = 1e-12;
    std::array<double, 4> inside{};
    double payload_total = 0.0;
    for (int q = 0; q < dist.count(); ++q) {
        const double m = dist.payload(q);
        if (m <= 0.0) continue;
        payload_total += m;
        const Vec3 c = dist.voxel_center(q);
        const double x = c.x() + box.length / 2;
        const double y = c.y() + box.width / 2;
        if (x <= box.length / 4 + tol) inside[0] += m;
        if (x >= 3 * box.length / 4 - tol) inside[1] += m;
        if (y <= box.width / 4 + tol) inside[2] += m;
        if (y >= 3 * box.width / 4 - tol) inside[3] += m;
    }
    HazardReport report;
    if (payload_total <= 0.0) return report;
    for (int u = 0; u < 4; ++u) report.fractions[u] = inside[u] / payload_total;
    const auto best = std::max_element(report.fractions.begin(), report.fractions.end());
    report.mass_fraction_in_volume = *best;
    if (*best >= hazard_fraction) {
        report.hazardous = true;
        report.triggering_volume = static_cast<HazardVolume>(1 + (best - report.fractions.begin()));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Occupancy comparison

inline double iou(const OccupancyGrid& predicted, const OccupancyGrid& truth, double threshold = 0.5) {
    require(predicted.grid == truth.grid, "iou: grid dims differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t q = 0; q < predicted.values.size(); ++q) {
        const bool a = predicted.values[q] >= threshold;
        const bool b = truth.values[q] >= threshold;
        inter += (a && b);
        uni += (a || b);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Random Gaussian distributions

/// Binary occupancy of a 3d Gaussian density evaluated at voxel centers,
/// thresholded at kDensityThreshold of the largest voxel density. `mean` is in
/// the box frame.
inline std::vector<std::uint8_t> gaussian_occupancy(GridDims grid, BoxDims box, const Vec3& mean,
                                                    const Mat3& covariance) {
    Eigen::LLT<Mat3> llt(covariance);
    require(llt.info() == Eigen::Success, "covariance must be positive definite");
    const MassDistribution probe = MassDistribution::uniform(grid, box, 0.0);
    std::vector<double> log_density(grid.count());
    for (int q = 0; q < grid.count(); ++q) {
        const Vec3 d = probe.voxel_center(q) - mean;
        log_density[q] = -0.5 * d.dot(llt.solve(d));
    }
    const double peak = *std::max_element(log_density.begin(), log_density.end());
    const double cut = peak + std::log(kDensityThreshold);
    std::vector<std::uint8_t> occ(grid.count());
    for (int q = 0; q < grid.count(); ++q) occ[q] = log_density[q] >= cut - 1e-12 ? 1 : 0;
    return occ;
}

struct GaussianParams {
    Vec3 mean;
    Mat3 covariance;
};

/// Voxels whose centers lie in quarter slab `u` (same membership rule as classify_hazard).
inline std::vector<std::uint8_t> slab_mask(HazardVolume u, GridDims grid = kDefaultGrid, BoxDims box = kDefaultBox) {
    const MassDistribution probe = MassDistribution::uniform(grid, box, 0.0);
    std::vector<std::uint8_t> occ(grid.count(), 0);
    const double tol = 1e-12;
    for (int q = 0; q < grid.count(); ++q) {
        const Vec3 c = probe.voxel_center(q);
        const double x = c.x() + box.length / 2;
        const double y = c.y() + box.width / 2;
        switch (u) {
        case HazardVolume::U1: occ[q] = x <= box.length / 4 + tol; break;
        case HazardVolume::U2: occ[q] = x >= 3 * box.length / 4 - tol; break;
        case HazardVolume::U3: occ[q] = y <= box.width / 4 + tol; break;
        case HazardVolume::U4: occ[q] = y >= 3 * box.width / 4 - tol; break;
        }
    }
    return occ;
}

/// Ranges the random Gaussian is drawn from. Means are fractions of each box
/// axis in the corner frame ([0, 1] spans the box); standard deviations are
/// fractions of the box dimensions. Correlations come from a random Gram
/// matrix, which gives a dense SPD covariance.
struct GaussianSampler {
    std::array<double, 2> mean_x{0.25, 0.75};
    std::array<double, 2> mean_y{0.25, 0.75};
    std::array<double, 2> mean_z{0.25, 0.75};
    std::array<double, 2> spread_xy{0.2, 0.6};
    std::array<double, 2> spread_z{0.5, 1.0};
    std::optional<HazardVolume> clip;  ///< keep only occupied voxels inside this slab

    /// Mean inside quarter slab `u` and occupancy clipped to it: always hazardous.
    static GaussianSampler edge(HazardVolume u) {
        GaussianSampler s;
        s.mean_x = {0.0, 1.0};
        s.mean_y = {0.0, 1.0};
        switch (u) {
        case HazardVolume::U1: s.mean_x = {0.0, 0.25}; break;
        case HazardVolume::U2: s.mean_x = {0.75, 1.0}; break;
        case HazardVolume::U3: s.mean_y = {0.0, 0.25}; break;
        case HazardVolume::U4: s.mean_y = {0.75, 1.0}; break;
        }
        s.spread_xy = {0.1, 0.5};
        s.clip = u;
        return s;
    }
};

inline GaussianParams sample_gaussian_params(std::mt19937_64& rng, BoxDims box, const GaussianSampler& s = {}) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](const std::array<double, 2>& r) { return r[0] + (r[1] - r[0]) * unit(rng); };
    const Vec3 dims(box.length, box.width, box.height);
    const std::array<const std::array<double, 2>*, 3> mean_range = {&s.mean_x, &s.mean_y, &s.mean_z};
    for (;;) {
        Vec3 mean;
        for (int a = 0; a < 3; ++a) mean[a] = (draw(*mean_range[a]) - 0.5) * dims[a];
        Mat3 g;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) g(r, c) = normal(rng);
        Mat3 gram = g * g.transpose() + 0.3 * Mat3::Identity();
        const Vec3 inv_sd = gram.diagonal().cwiseSqrt().cwiseInverse();
        const Mat3 corr = inv_sd.asDiagonal() * gram * inv_sd.asDiagonal();
        Vec3 sd;
        for (int a = 0; a < 3; ++a) sd[a] = draw(a == 2 ? s.spread_z : s.spread_xy) * dims[a];
        const Mat3 cov = sd.asDiagonal() * corr * sd.asDiagonal();
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        if (eig.info() != Eigen::Success) continue;
        if (eig.eigenvalues().minCoeff() <= 1e-10 * eig.eigenvalues().maxCoeff()) continue;
        return {mean, cov};
    }
}

inline MassDistribution gaussian_distribution(const GaussianParams& g, double payload, GridDims grid = kDefaultGrid,
                                              BoxDims box = kDefaultBox) {
    return MassDistribution::from_occupancy(grid, box, gaussian_occupancy(grid, box, g.mean, g.covariance), payload);
}

inline MassDistribution sample_gaussian_distribution(std::uint64_t seed, GridDims grid = kDefaultGrid,
                                                     BoxDims box = kDefaultBox, MassRange mass_range = {},
                                                     const GaussianSampler& sampler = {}) {
    require(mass_range.lo > 0.0 && mass_range.hi >= mass_range.lo, "mass range must be positive");
    require(grid.nl >= 2 && grid.nw >= 2 && grid.nh >= 2, "grid dims must each be >= 2");
    std::mt19937_64 rng(seed);
    for (;;) {
        const GaussianParams g = sample_gaussian_params(rng, box, sampler);
        std::uniform_real_distribution<double> mass(mass_range.lo, mass_range.hi);
        const double payload = mass(rng);
        auto occ = gaussian_occupancy(grid, box, g.mean, g.covariance);
        if (sampler.clip) {
            const auto keep = slab_mask(*sampler.clip, grid, box);
            bool any = false;
            for (std::size_t q = 0; q < occ.size(); ++q) any |= (occ[q] &= keep[q]) != 0;
            if (!any) continue;
        }
        return MassDistribution::from_occupancy(grid, box, occ, payload);
    }
}

/// Payload spread evenly over the voxels of one quarter slab.
inline MassDistribution slab_distribution(HazardVolume u, double payload, GridDims grid = kDefaultGrid,
                                          BoxDims box = kDefaultBox) {
    return MassDistribution::from_occupancy(grid, box, slab_mask(u, grid, box), payload);
}

// ---------------------------------------------------------------------------
// Serialization
//
// Layout (little-endian):
//   char[4]  magic "BXMD"
//   u32      version (1)
//   i32[3]   N_l, N_w, N_h
//   f64[3]   l_box, w_box, h_box
//   f64[N]   voxel masses, flat index order (x fastest)

inline constexpr std::uint32_t kDistributionFormatVersion = 1;

inline void write_distribution(std::ostream& os, const MassDistribution& dist) {
    io::write_magic(os, "BXMD");
    io::write_pod(os, kDistributionFormatVersion);
    io::write_pod<std::int32_t>(os, dist.grid().nl);
    io::write_pod<std::int32_t>(os, dist.grid().nw);
    io::write_pod<std::int32_t>(os, dist.grid().nh);
    io::write_pod(os, dist.box().length);
    io::write_pod(os, dist.box().width);
    io::write_pod(os, dist.box().height);
    for (double m : dist.voxel_mass()) io::write_pod(os, m);
}

inline MassDistribution read_distribution(std::istream& is) {
    io::expect_magic(is, "BXMD");
    const auto version = io::read_pod<std::uint32_t>(is);
    if (version != kDistributionFormatVersion)
        throw Error(ErrorKind::Format, "unsupported distribution version " + std::to_string(version));
    GridDims grid{io::read_pod<std::int32_t>(is), io::read_pod<std::int32_t>(is), io::read_pod<std::int32_t>(is)};
    if (grid.nl <= 0 || grid.nw <= 0 || grid.nh <= 0 || grid.count() > (1 << 24))
        throw Error(ErrorKind::Format, "bad grid dims");
    BoxDims box{io::read_pod<double>(is), io::read_pod<double>(is), io::read_pod<double>(is)};
    std::vector<double> mass(grid.count());
    for (double& m : mass) m = io::read_pod<double>(is);
    return MassDistribution(grid, box, std::move(mass));
}

inline void save_distribution(const std::string& path, const MassDistribution& dist) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
    write_distribution(os, dist);
}

inline MassDistribution load_distribution(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::Io, "cannot open " + path);
    return read_distribution(is);
}

}  // namespace boxrot
