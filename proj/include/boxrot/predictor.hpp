#pragma once

// Gray-box one-step pose predictor built from the rigid-body equations of
// motion, an estimated mass distribution and a calibrated control-to-force map.

#include "boxrot/common.hpp"
#include "boxrot/forcemap.hpp"
#include "boxrot/massmodel.hpp"
#include "boxrot/sim.hpp"

#include <span>
#include <vector>

namespace boxrot {

/// Sliding-window motion estimate of the center of mass.
struct KinematicEstimate {
    Vec2 r_c = Vec2::Zero();
    Vec2 r_c_dot = Vec2::Zero();
    Vec2 r_c_ddot_free = Vec2::Zero();
    double omega = 0.0;
    double theta_geom = 0.0;
    Vec2 r_geom = Vec2::Zero();
};

struct PosePrediction {
    Vec2 r_hat = Vec2::Zero();  ///< geometric center
    double theta_hat = 0.0;
    Vec2 r_hat_frictionless = Vec2::Zero();  ///< geometric center, before friction correction
    Vec2 friction_force = Vec2::Zero();
    Vec2 beta = Vec2::Zero();
    double torque = 0.0;
    double omega_dot = 0.0;
};

enum class FrictionScaling {
    UnitDirection,     ///< |eta| = 1 whenever nonzero
    DisplacementRatio, ///< |eta| = orthogonal share of the displacement, in [0, 1]
};

/// Speeds below these count as rest; regularized friction leaves a creep of
/// about the slip floor that must not steer the friction direction.
inline constexpr double kRestSpeed = 1e-5;  // m/s
inline constexpr double kRestOmega = 1e-4;  // rad/s

/// How the action-induced friction enters the torque balance.
enum class TorqueFriction {
    None,
    SharedDisplacement,  ///< moments of the translational frictions only
    VoxelDisplacement,   ///< each voxel's friction opposes its own translation plus rotation
    Opposing,            ///< translational moments plus a rotational term opposing the turn
};

/// Belt friction grows with normal load, so forces calibrated on one box are
/// rescaled for another.
enum class ForceScaling {
    None,
    TotalMass,    ///< estimated mass over the calibration box's mass
    SupportLoad,  ///< per belt, estimated support-volume mass over the calibration box's
};

struct PredictorOptions {
    int window = 4;
    FrictionScaling friction_scaling = FrictionScaling::UnitDirection;
    TorqueFriction torque_friction = TorqueFriction::SharedDisplacement;
    /// Friction may at most cancel the action-induced displacement, never reverse it.
    bool static_clamp = true;
    ForceScaling force_scaling = ForceScaling::TotalMass;
    /// Split each belt's force over its contact voxels by column mass instead of evenly.
    bool load_weighted_split = false;
};

// ---------------------------------------------------------------------------
// Kinematics

namespace detail {

/// Least-squares quadratic through samples at t_i = (i - (n-1)) * dt.
/// Returns (first derivative, second derivative) at the last sample.
inline std::pair<double, double> quadratic_tail_derivatives(std::span<const double> y, double dt) {
    const int n = static_cast<int>(y.size());
    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i) {
        const double t = (i - (n - 1)) * dt;
        a(i, 0) = 1.0;
        a(i, 1) = t;
        a(i, 2) = t * t;
        b(i) = y[i];
    }
    const Eigen::Vector3d coef = a.colPivHouseholderQr().solve(b);
    return {coef(1), 2.0 * coef(2)};
}

}  // namespace detail

inline double window_period(std::span<const Observation> window) {
    require(window.size() >= 2, "window needs at least two observations");
    const double dt = window[1].t - window[0].t;
    if (!(dt > 0)) throw Error(ErrorKind::NonUniformTimestamps, "timestamps must increase");
    for (std::size_t i = 2; i < window.size(); ++i)
        if (std::abs((window[i].t - window[i - 1].t) - dt) > 1e-9 * std::max(1.0, dt))
            throw Error(ErrorKind::NonUniformTimestamps, "observation spacing varies");
    return dt;
}

/// COM offset (box frame, planar) of an estimated distribution.
inline Vec2 planar_com(const MassDistribution& dist) { return center_of_mass(dist).head<2>(); }

inline void snap_rest(KinematicEstimate& k) {
    if (k.r_c_dot.norm() < kRestSpeed) k.r_c_dot.setZero();
    if (std::abs(k.omega) < kRestOmega) k.omega = 0.0;
}

inline KinematicEstimate estimate_kinematics(std::span<const Observation> window, const Vec2& com_offset) {
    require(window.size() >= 3, "kinematics need at least three observations");
    const double dt = window_period(window);
    const std::size_t n = window.size();
    std::vector<double> xs(n), ys(n), ths(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Pose2& p = window[i].geom_pose;
        const Vec2 rc = p.position() + rotate(com_offset, p.theta);
        xs[i] = rc.x();
        ys[i] = rc.y();
        ths[i] = p.theta;
    }
    KinematicEstimate k;
    const auto [vx, ax] = detail::quadratic_tail_derivatives(xs, dt);
    const auto [vy, ay] = detail::quadratic_tail_derivatives(ys, dt);
    const auto [w, wdot] = detail::quadratic_tail_derivatives(ths, dt);
    (void)wdot;
    k.r_c = {xs.back(), ys.back()};
    k.r_c_dot = {vx, vy};
    k.r_c_ddot_free = {ax, ay};
    k.omega = w;
    snap_rest(k);
    k.theta_geom = window.back().geom_pose.theta;
    k.r_geom = window.back().geom_pose.position();
    return k;
}

inline KinematicEstimate estimate_kinematics(std::span<const Observation> window, const MassDistribution& dist_hat) {
    return estimate_kinematics(window, planar_com(dist_hat));
}

// ---------------------------------------------------------------------------
// Torque

/// World-frame arm of voxel q relative to the COM.
inline Vec2 voxel_arm(const MassDistribution& dist, int q, const Vec2& com_offset, double theta) {
    return rotate(dist.voxel_center(q).head<2>() - com_offset, theta);
}

/// Mass of the columns standing on the given contact voxels.
inline double column_mass(const MassDistribution& dist, int contact_voxel) {
    const GridDims& g = dist.grid();
    const int layer = g.nl * g.nw;
    double m = 0.0;
    for (int k = 0; k < g.nh; ++k) m += dist.mass(contact_voxel % layer + k * layer);
    return m;
}

/// Moment of the belt forces about the COM, each belt's force split evenly
/// over its contact voxels or, with `load_weighted`, by column mass.
inline double torque(const ForceDecomposition& forces, std::span<const int> s1, std::span<const int> s2,
                     const MassDistribution& dist_hat, const Vec2& com_offset, double theta,
                     bool load_weighted = false) {
    const Vec2 f1 = forces.on_s1();
    const Vec2 f2 = forces.on_s2();
    if ((f1.squaredNorm() > 0 && s1.empty()) || (f2.squaredNorm() > 0 && s2.empty()))
        throw Error(ErrorKind::UnsupportedForce, "force attributed to an empty contact set");
    double tau = 0.0;
    auto add = [&](std::span<const int> s, const Vec2& f) {
        if (s.empty()) return;
        double total = 0.0;
        if (load_weighted)
            for (int q : s) total += column_mass(dist_hat, q);
        for (int q : s) {
            const double share = load_weighted && total > 0 ? column_mass(dist_hat, q) / total : 1.0 / s.size();
            tau += cross2(voxel_arm(dist_hat, q, com_offset, theta), share * f);
        }
    };
    add(s1, f1);
    add(s2, f2);
    return tau;
}

inline double torque(const ForceDecomposition& forces, std::span<const int> s1, std::span<const int> s2,
                     const MassDistribution& dist_hat, const KinematicEstimate& kin) {
    return torque(forces, s1, s2, dist_hat, planar_com(dist_hat), kin.theta_geom);
}

// ---------------------------------------------------------------------------
// Support volumes

struct SupportVolumes {
    std::vector<int> v1;
    std::vector<int> v2;
};

/// Each contact voxel plus every voxel stacked above it.
inline SupportVolumes support_volumes(std::span<const int> s1, std::span<const int> s2, const MassDistribution& dist) {
    const GridDims& g = dist.grid();
    const int layer = g.nl * g.nw;
    auto columns = [&](std::span<const int> s) {
        std::vector<int> v;
        v.reserve(s.size() * g.nh);
        for (int q : s) {
            const int base = q % layer;
            for (int k = 0; k < g.nh; ++k) v.push_back(base + k * layer);
        }
        return v;
    };
    return {columns(s1), columns(s2)};
}

inline double volume_mass(std::span<const int> volume, const MassDistribution& dist) {
    double m = 0.0;
    for (int q : volume) m += dist.mass(q);
    return m;
}

// ---------------------------------------------------------------------------
// Friction correction

inline Vec2 project(const Vec2& u, const Vec2& v) {
    const double vv = v.squaredNorm();
    if (vv == 0.0) return Vec2::Zero();
    return (v.dot(u) / vv) * v;
}

/// Direction of the action-induced friction on a voxel moving at r_dot when the
/// body is displaced by delta: -delta minus its projection on -r_dot. Scaled so
/// that the magnitude is 1 (UnitDirection) or the orthogonal share of delta
/// (DisplacementRatio); a zero vector stays zero.
inline Vec2 friction_direction(const Vec2& delta, const Vec2& r_dot,
                               FrictionScaling scaling = FrictionScaling::UnitDirection) {
    const double d = delta.norm();
    if (d == 0.0) return Vec2::Zero();
    Vec2 eta = -delta - project(-delta, -r_dot);
    // Relative tolerance: parallel inputs leave only rounding noise.
    if (eta.norm() <= 1e-12 * d) return Vec2::Zero();
    if (r_dot.squaredNorm() > 0) eta -= project(eta, r_dot);
    if (scaling == FrictionScaling::UnitDirection) return eta / eta.norm();
    return eta / d;
}

struct FrictionCorrection {
    Vec2 force = Vec2::Zero();  ///< F_f
    Vec2 beta = Vec2::Zero();   ///< F_f / M
    double torque = 0.0;        ///< moment of the per-voxel frictions about the COM
};

/// Friction with one common velocity for every voxel of V1 and V2.
inline FrictionCorrection friction_correction(const Vec2& delta_r_hat, const Vec2& r_dot, const SupportVolumes& v,
                                              const MassDistribution& dist_hat, double mu_k, double g,
                                              FrictionScaling scaling = FrictionScaling::UnitDirection) {
    require(delta_r_hat.allFinite(), "displacement must be finite");
    if (!(dist_hat.total_mass() > 0)) throw Error(ErrorKind::EmptyDistribution, "");
    const Vec2 eta = friction_direction(delta_r_hat, r_dot, scaling);
    double mass = 0.0;
    for (const auto* vol : {&v.v1, &v.v2})
        for (int q : *vol) mass += dist_hat.mass(q);
    FrictionCorrection out;
    out.force = eta * mu_k * g * mass;
    out.beta = out.force / dist_hat.total_mass();
    return out;
}

/// Friction with per-voxel velocities r_dot_c + omega x r'_Q from the kinematics.
/// Each voxel is displaced by delta_r_hat plus the rotation increment
/// delta_theta about the COM, so the frictions also oppose turning.
inline FrictionCorrection friction_correction(const Vec2& delta_r_hat, double delta_theta, const KinematicEstimate& kin,
                                              const SupportVolumes& v, const MassDistribution& dist_hat,
                                              const Vec2& com_offset, double mu_k, double g,
                                              FrictionScaling scaling = FrictionScaling::UnitDirection) {
    require(delta_r_hat.allFinite() && std::isfinite(delta_theta), "displacement must be finite");
    if (!(dist_hat.total_mass() > 0)) throw Error(ErrorKind::EmptyDistribution, "");
    FrictionCorrection out;
    for (const auto* vol : {&v.v1, &v.v2}) {
        for (int q : *vol) {
            const Vec2 arm = voxel_arm(dist_hat, q, com_offset, kin.theta_geom);
            const Vec2 r_dot_q = kin.r_c_dot + spin(kin.omega, arm);
            const Vec2 delta_q = delta_r_hat + spin(delta_theta, arm);
            const Vec2 f = friction_direction(delta_q, r_dot_q, scaling) * mu_k * g * dist_hat.mass(q);
            out.force += f;
            out.torque += cross2(arm, f);
        }
    }
    out.beta = out.force / dist_hat.total_mass();
    return out;
}

inline FrictionCorrection friction_correction(const Vec2& delta_r_hat, const KinematicEstimate& kin,
                                              const SupportVolumes& v, const MassDistribution& dist_hat,
                                              const Vec2& com_offset, double mu_k, double g,
                                              FrictionScaling scaling = FrictionScaling::UnitDirection) {
    return friction_correction(delta_r_hat, 0.0, kin, v, dist_hat, com_offset, mu_k, g, scaling);
}

// ---------------------------------------------------------------------------
// One-step prediction

/// Quantities derived once from an estimated distribution and reused for
/// every candidate action.
class GrayBoxModel {
public:
    GrayBoxModel(MassDistribution dist_hat, ControlForceMap map, BeltConfig cfg, PredictorOptions opts = {})
        : dist_(std::move(dist_hat)), map_(std::move(map)), cfg_(cfg), opts_(opts) {
        com_offset_ = planar_com(dist_);
        inertia_zz_ = inertia_tensor(dist_, center_of_mass(dist_))(2, 2);
    }

    const MassDistribution& distribution() const { return dist_; }
    const ControlForceMap& force_map() const { return map_; }
    const PredictorOptions& options() const { return opts_; }
    const Vec2& com_offset() const { return com_offset_; }
    double inertia_zz() const { return inertia_zz_; }

    KinematicEstimate kinematics(std::span<const Observation> window) const {
        const std::size_t k = std::min<std::size_t>(window.size(), static_cast<std::size_t>(opts_.window));
        return estimate_kinematics(window.subspan(window.size() - k), com_offset_);
    }

    PosePrediction predict(std::span<const Observation> window, const Action& action) const {
        return predict(window.back(), kinematics(window), action);
    }

    PosePrediction predict(const Observation& latest, const KinematicEstimate& kin, const Action& action) const {
        const double dt = cfg_.control_period;
        const double mass = dist_.total_mass();
        if (!(inertia_zz_ > 1e-12 * mass)) throw Error(ErrorKind::DegenerateInertia, "I_zz vanishes");

        const Action clamped = clamp_action(action, latest.belt_y, cfg_);
        const SupportVolumes vols = support_volumes(latest.s1_voxels, latest.s2_voxels, dist_);
        ForceDecomposition forces = map_.decompose(clamped);
        std::array<double, 2> k = {1.0, 1.0};
        if (opts_.force_scaling == ForceScaling::TotalMass && map_.reference_mass() > 0)
            k.fill(mass / map_.reference_mass());
        if (opts_.force_scaling == ForceScaling::SupportLoad && map_.reference_load()[0] > 0 &&
            map_.reference_load()[1] > 0)
            k = {volume_mass(vols.v1, dist_) / map_.reference_load()[0],
                 volume_mass(vols.v2, dist_) / map_.reference_load()[1]};
        forces = {k[0] * forces.f1, k[1] * forces.f2, k[0] * forces.f3, k[1] * forces.f4};
        const Vec2 accel = kin.r_c_ddot_free + forces.total() / mass;

        const Vec2 drift = kin.r_c_dot * dt;
        const Vec2 r_frictionless = kin.r_c + drift + 0.5 * accel * dt * dt;
        const Vec2 delta = r_frictionless - kin.r_c;
        const double tau_action = torque(forces, latest.s1_voxels, latest.s2_voxels, dist_, com_offset_, kin.theta_geom,
                                         opts_.load_weighted_split);
        const double spin_frictionless = kin.omega * dt + 0.5 * tau_action / inertia_zz_ * dt * dt;

        const bool voxel = opts_.torque_friction == TorqueFriction::VoxelDisplacement;
        FrictionCorrection fc = friction_correction(delta, voxel ? spin_frictionless : 0.0, kin, vols, dist_,
                                                    com_offset_, cfg_.mu_k, cfg_.gravity, opts_.friction_scaling);
        if (opts_.torque_friction == TorqueFriction::None) fc.torque = 0.0;
        if (opts_.torque_friction == TorqueFriction::Opposing) {
            const double turn = 0.5 * tau_action / inertia_zz_ * dt * dt;
            fc.torque += friction_correction(Vec2::Zero(), turn, kin, vols, dist_, com_offset_, cfg_.mu_k,
                                             cfg_.gravity, opts_.friction_scaling).torque;
        }
        if (opts_.static_clamp) {
            const double d = delta.norm();
            const double pushback = d > 0 ? -0.5 * dt * dt * fc.beta.dot(delta / d) : 0.0;
            if (pushback > d) {
                fc.force *= d / pushback;
                fc.beta *= d / pushback;
            }
            const double turn_back = -0.5 * dt * dt * fc.torque / inertia_zz_;
            if (spin_frictionless != 0.0 && turn_back * spin_frictionless < 0 &&
                std::abs(turn_back) > std::abs(spin_frictionless))
                fc.torque *= std::abs(spin_frictionless / turn_back);
        }

        const Vec2 r_c_hat = kin.r_c + drift + 0.5 * (accel + fc.beta) * dt * dt;
        const double tau = tau_action + fc.torque;
        const double omega_dot = tau / inertia_zz_;
        const double theta_hat = kin.theta_geom + kin.omega * dt + 0.5 * omega_dot * dt * dt;

        PosePrediction p;
        p.theta_hat = theta_hat;
        p.r_hat = r_c_hat - rotate(com_offset_, theta_hat);
        p.r_hat_frictionless = r_frictionless - rotate(com_offset_, theta_hat);
        p.friction_force = fc.force;
        p.beta = fc.beta;
        p.torque = tau;
        p.omega_dot = omega_dot;
        return p;
    }

private:
    MassDistribution dist_;
    ControlForceMap map_;
    BeltConfig cfg_;
    PredictorOptions opts_;
    Vec2 com_offset_;
    double inertia_zz_ = 0.0;
};

inline PosePrediction predict_next_pose(std::span<const Observation> window, const Action& action,
                                        const MassDistribution& dist_hat, const ControlForceMap& map,
                                        const BeltConfig& cfg, PredictorOptions opts = {}) {
    return GrayBoxModel(dist_hat, map, cfg, opts).predict(window, action);
}

}  // namespace boxrot
