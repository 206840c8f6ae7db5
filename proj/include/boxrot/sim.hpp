#pragma once

// Planar ground-truth simulator of a box resting on two conveyor belts.
//
// World frame: belts run along x, separated along y; belt 1 (left) has the
// smaller y. Each belt is a rectangle of belt_length x belt_width centered at
// (0, P_y^i). The box state is the planar pose of its geometric center.
//
// Every voxel column whose bottom voxel center lies over a belt carries its
// own weight on that belt and receives Coulomb friction of magnitude
// mu_k * g * dM opposing its slip relative to the belt surface. Friction is
// integrated with a backward-Euler step over the 3 planar velocity unknowns,
// so it dissipates and never overshoots the sticking point.

#include "boxrot/common.hpp"
#include "boxrot/massmodel.hpp"

#include <array>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace boxrot {

enum class Actuation {
    BeltFriction,  ///< belts move, the box is dragged by friction (default)
    LinearGain,    ///< belts stay still; each command applies a force k * command to its contact set
};

struct BeltConfig {
    double belt_length = 10.0;  ///< long enough that x drift never ends an episode
    double belt_width = 0.12;
    double gap_min = 0.02;  ///< inner-edge distance range
    double gap_max = 0.24;
    double initial_gap = 0.08;
    double surface_speed_limit = 0.5;
    double position_step_limit = 0.02;
    double mu_k = 0.4;
    double gravity = 9.8;
    double control_period = 0.05;
    int substeps = 10;
    double slip_floor = 1e-6;

    Actuation actuation = Actuation::BeltFriction;
    double velocity_gain = 0.0;  ///< N per (m/s), LinearGain only
    double position_gain = 0.0;  ///< N per m, LinearGain only

    void validate() const {
        require(belt_length > 0 && belt_width > 0, "belt dims must be positive");
        require(gap_min > 0 && gap_max > gap_min, "gap range must be positive and ordered");
        require(initial_gap >= gap_min && initial_gap <= gap_max, "initial gap outside gap range");
        require(surface_speed_limit > 0 && position_step_limit > 0, "limits must be positive");
        require(mu_k > 0 && mu_k <= 2, "mu_k must lie in (0, 2]");
        require(gravity > 0, "gravity must be positive");
        require(control_period > 0 && substeps >= 1, "bad control period");
        require(slip_floor > 0, "slip floor must be positive");
    }

    double substep() const { return control_period / substeps; }
    double initial_belt_y(int belt) const {
        const double offset = initial_gap / 2 + belt_width / 2;
        return belt == 0 ? -offset : offset;
    }
};

struct TaskLimits {
    double target_angle = kHalfPi;
    double angle_tolerance = 0.05;
    int max_steps = 1000;
};

struct SimState {
    Pose2 pose;  ///< geometric center
    Vec2 lin_vel = Vec2::Zero();
    double ang_vel = 0.0;
    std::array<double, 2> belt_y{};
    std::array<double, 2> belt_surface_vel{};
    double time = 0.0;
    int step = 0;

    double belt_midline() const { return 0.5 * (belt_y[0] + belt_y[1]); }
};

enum class Restriction { VelocityPair, LeftPosition, RightPosition, Null };

/// 4d belt command. Velocity and position commands never mix in one action.
struct Action {
    double v1 = 0.0;
    double v2 = 0.0;
    double p1 = 0.0;
    double p2 = 0.0;
    Restriction tag = Restriction::Null;

    static Action null() { return {}; }
    static Action velocity(double v1, double v2) {
        if (v1 == 0.0 && v2 == 0.0) return null();
        return {v1, v2, 0.0, 0.0, Restriction::VelocityPair};
    }
    static Action left_position(double p) {
        if (p == 0.0) return null();
        return {0.0, 0.0, p, 0.0, Restriction::LeftPosition};
    }
    static Action right_position(double p) {
        if (p == 0.0) return null();
        return {0.0, 0.0, 0.0, p, Restriction::RightPosition};
    }

    bool valid() const {
        switch (tag) {
        case Restriction::Null: return v1 == 0 && v2 == 0 && p1 == 0 && p2 == 0;
        case Restriction::VelocityPair: return p1 == 0 && p2 == 0 && (v1 != 0 || v2 != 0);
        case Restriction::LeftPosition: return v1 == 0 && v2 == 0 && p2 == 0 && p1 != 0;
        case Restriction::RightPosition: return v1 == 0 && v2 == 0 && p1 == 0 && p2 != 0;
        }
        return false;
    }

    std::array<double, 4> as_array() const { return {v1, v2, p1, p2}; }
    bool operator==(const Action&) const = default;
};

struct Observation {
    double t = 0.0;
    Pose2 geom_pose;
    std::vector<int> s1_voxels;
    std::vector<int> s2_voxels;
    std::array<double, 2> belt_y{};

    /// (x, y, theta, P_y^1, P_y^2)
    std::array<double, 5> state_vector() const {
        return {geom_pose.x, geom_pose.y, geom_pose.theta, belt_y[0], belt_y[1]};
    }
    double belt_midline() const { return 0.5 * (belt_y[0] + belt_y[1]); }
};

struct EventFlags {
    bool support_lost = false;
    bool rotation_reached = false;
    bool step_limit = false;
};

struct Transition {
    Observation before;
    Action action;
    Observation after;
};

struct Trajectory {
    std::vector<Transition> transitions;
    bool truncated = false;

    std::size_t size() const { return transitions.size(); }
};

struct StepResult {
    SimState state;
    Observation observation;
    EventFlags events;
};

// ---------------------------------------------------------------------------
// Geometry

namespace detail {

inline bool over_belt(const Vec2& p, double belt_y, const BeltConfig& cfg) {
    return std::abs(p.x()) <= cfg.belt_length / 2 && std::abs(p.y() - belt_y) <= cfg.belt_width / 2;
}

inline Vec2 world_xy(const Pose2& pose, const Vec3& box_point) {
    return pose.position() + rotate(box_point.head<2>(), pose.theta);
}

}  // namespace detail

struct ContactSets {
    std::vector<int> s1;
    std::vector<int> s2;
};

/// Bottom-layer voxels whose centers project inside each belt rectangle.
inline ContactSets contact_sets(const Pose2& pose, std::span<const double, 2> belt_y, const MassDistribution& dist,
                                const BeltConfig& cfg) {
    ContactSets out;
    const GridDims& g = dist.grid();
    for (int j = 0; j < g.nw; ++j) {
        for (int i = 0; i < g.nl; ++i) {
            const int q = g.index(i, j, 0);
            const Vec2 p = detail::world_xy(pose, dist.voxel_center(q));
            if (detail::over_belt(p, belt_y[0], cfg))
                out.s1.push_back(q);
            else if (detail::over_belt(p, belt_y[1], cfg))
                out.s2.push_back(q);
        }
    }
    return out;
}

inline ContactSets contact_sets(const SimState& state, const MassDistribution& dist, const BeltConfig& cfg) {
    return contact_sets(state.pose, std::span<const double, 2>(state.belt_y), dist, cfg);
}

inline Observation observe(const SimState& state, const MassDistribution& dist, const BeltConfig& cfg) {
    ContactSets c = contact_sets(state, dist, cfg);
    return {state.time, state.pose, std::move(c.s1), std::move(c.s2), state.belt_y};
}

/// Planar inertial summary of a distribution used by the integrator.
struct PlanarBody {
    double mass = 0.0;
    double inertia_zz = 0.0;
    Vec2 com = Vec2::Zero();  ///< box frame
    std::vector<double> column_mass;  ///< indexed by bottom voxel i + N_l * j
};

inline PlanarBody planar_body(const MassDistribution& dist) {
    PlanarBody body;
    body.mass = dist.total_mass();
    const Vec3 com = center_of_mass(dist);
    body.com = com.head<2>();
    body.inertia_zz = inertia_tensor(dist, com)(2, 2);
    const GridDims& g = dist.grid();
    body.column_mass.assign(g.nl * g.nw, 0.0);
    for (int q = 0; q < g.count(); ++q) body.column_mass[q % (g.nl * g.nw)] += dist.mass(q);
    return body;
}

// ---------------------------------------------------------------------------
// Reset

inline StepResult reset(const MassDistribution& dist, const Pose2& init_pose, const BeltConfig& cfg,
                        std::uint64_t /*seed*/ = 0) {
    cfg.validate();
    SimState state;
    state.pose = init_pose;
    state.belt_y = {cfg.initial_belt_y(0), cfg.initial_belt_y(1)};
    Observation obs = observe(state, dist, cfg);
    if (obs.s1_voxels.empty() || obs.s2_voxels.empty())
        throw Error(ErrorKind::UnsupportedInitialPose, "box must rest on both belts");
    return {state, std::move(obs), {}};
}

// ---------------------------------------------------------------------------
// Step

namespace detail {

struct ContactColumn {
    Vec2 arm;        ///< world-frame offset from the COM
    Vec2 belt_vel;   ///< surface velocity of the belt under it
    double load;     ///< mu_k * g * column mass
};

/// Backward-Euler friction update of (v_c, omega). Returns the new velocities.
/// Friction forces are evaluated at the returned velocities, so each column's
/// force magnitude never exceeds mu_k * g * dM.
inline Eigen::Vector3d implicit_friction_update(const Eigen::Vector3d& z0, const Eigen::Vector3d& external,
                                                const std::vector<ContactColumn>& cols, double mass,
                                                double inertia, double h, double floor) {
    const Eigen::Vector3d m_diag(mass, mass, inertia);

    auto generalized = [&](const Eigen::Vector3d& z, Eigen::Matrix3d* jac) {
        Eigen::Vector3d gen = external;
        if (jac) *jac = m_diag.asDiagonal();
        for (const ContactColumn& c : cols) {
            const Vec2 s = Vec2(z.x(), z.y()) + spin(z.z(), c.arm) - c.belt_vel;
            const double n = s.norm();
            const double denom = std::max(n, floor);
            const Vec2 f = -c.load * s / denom;
            gen.x() += f.x();
            gen.y() += f.y();
            gen.z() += cross2(c.arm, f);
            if (jac) {
                Eigen::Matrix2d df = -(c.load / denom) * Eigen::Matrix2d::Identity();
                if (n > floor) df += (c.load / (n * n * n)) * (s * s.transpose());
                Eigen::Matrix<double, 2, 3> b;
                b << 1, 0, -c.arm.y(), 0, 1, c.arm.x();
                *jac -= h * b.transpose() * df * b;
            }
        }
        return gen;
    };
    auto residual = [&](const Eigen::Vector3d& z, Eigen::Matrix3d* jac) {
        return Eigen::Vector3d(m_diag.cwiseProduct(z - z0) - h * generalized(z, jac));
    };

    Eigen::Vector3d z = z0;
    Eigen::Matrix3d jac;
    Eigen::Vector3d r = residual(z, &jac);
    for (int it = 0; it < 40; ++it) {
        const double r_norm = r.norm();
        if (r_norm <= 1e-14 * (1.0 + mass)) break;
        const Eigen::Vector3d dz = jac.ldlt().solve(-r);
        double t = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls) {
            const Eigen::Vector3d trial = z + t * dz;
            Eigen::Matrix3d trial_jac;
            const Eigen::Vector3d trial_r = residual(trial, &trial_jac);
            if (trial_r.norm() < r_norm) {
                z = trial;
                r = trial_r;
                jac = trial_jac;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted || (t * dz).lpNorm<Eigen::Infinity>() < 1e-15) break;
    }
    return z0 + h * generalized(z, nullptr).cwiseQuotient(m_diag);
}

}  // namespace detail

/// Applies the action limits: speed clamp, position step clamp and gap range.
inline Action clamp_action(const Action& action, const std::array<double, 2>& belt_y, const BeltConfig& cfg) {
    Action a = action;
    a.v1 = std::clamp(a.v1, -cfg.surface_speed_limit, cfg.surface_speed_limit);
    a.v2 = std::clamp(a.v2, -cfg.surface_speed_limit, cfg.surface_speed_limit);
    a.p1 = std::clamp(a.p1, -cfg.position_step_limit, cfg.position_step_limit);
    a.p2 = std::clamp(a.p2, -cfg.position_step_limit, cfg.position_step_limit);
    const double gap = belt_y[1] - belt_y[0] - cfg.belt_width;
    // gap after = gap - p1 + p2
    a.p1 = std::clamp(a.p1, gap + a.p2 - cfg.gap_max, gap + a.p2 - cfg.gap_min);
    a.p2 = std::clamp(a.p2, cfg.gap_min - gap + a.p1, cfg.gap_max - gap + a.p1);
    return a;
}

/// Belt positions after applying an action (with limits).
inline std::array<double, 2> belts_after(const Action& action, const std::array<double, 2>& belt_y,
                                         const BeltConfig& cfg) {
    const Action a = clamp_action(action, belt_y, cfg);
    return {belt_y[0] + a.p1, belt_y[1] + a.p2};
}

inline bool support_lost(const SimState& state, const Observation& obs, const MassDistribution& dist,
                         const PlanarBody& body) {
    if (obs.s1_voxels.empty() && obs.s2_voxels.empty()) return true;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto* set : {&obs.s1_voxels, &obs.s2_voxels}) {
        for (int q : *set) {
            const double y = detail::world_xy(state.pose, dist.voxel_center(q)).y();
            lo = std::min(lo, y);
            hi = std::max(hi, y);
        }
    }
    const double com_y = state.pose.y + rotate(body.com, state.pose.theta).y();
    return com_y < lo - 1e-12 || com_y > hi + 1e-12;
}

inline StepResult step(const SimState& state, const Action& action, const MassDistribution& dist,
                       const BeltConfig& cfg, const TaskLimits& task = {}) {
    require(action.valid(), "action violates the restriction invariant");
    const Action a = clamp_action(action, state.belt_y, cfg);
    const PlanarBody body = planar_body(dist);
    const double h = cfg.substep();
    const GridDims& g = dist.grid();
    const bool belts_drive = cfg.actuation == Actuation::BeltFriction;

    SimState next = state;
    const std::array<double, 2> belt_lateral = belts_drive
        ? std::array<double, 2>{a.p1 / cfg.control_period, a.p2 / cfg.control_period}
        : std::array<double, 2>{0.0, 0.0};
    next.belt_surface_vel = belts_drive ? std::array<double, 2>{a.v1, a.v2} : std::array<double, 2>{0.0, 0.0};
    const std::array<Vec2, 2> applied = {Vec2(cfg.velocity_gain * a.v1, cfg.position_gain * a.p1),
                                         Vec2(cfg.velocity_gain * a.v2, cfg.position_gain * a.p2)};

    Vec2 com_offset = rotate(body.com, next.pose.theta);
    Vec2 r_c = next.pose.position() + com_offset;
    Eigen::Vector3d z(next.lin_vel.x() + spin(next.ang_vel, com_offset).x(),
                      next.lin_vel.y() + spin(next.ang_vel, com_offset).y(), next.ang_vel);
    double theta = next.pose.theta;

    std::vector<detail::ContactColumn> cols;
    cols.reserve(g.nl * g.nw);
    for (int sub = 0; sub < cfg.substeps; ++sub) {
        cols.clear();
        std::array<std::vector<Vec2>, 2> arms;
        const Pose2 pose{r_c.x() - com_offset.x(), r_c.y() - com_offset.y(), theta};
        for (int col = 0; col < g.nl * g.nw; ++col) {
            const Vec3 center = dist.voxel_center(col);
            const Vec2 p = detail::world_xy(pose, center);
            for (int b = 0; b < 2; ++b) {
                if (!detail::over_belt(p, next.belt_y[b], cfg)) continue;
                const Vec2 arm = p - r_c;
                const Vec2 belt_vel = belts_drive ? Vec2(next.belt_surface_vel[b], belt_lateral[b]) : Vec2::Zero();
                cols.push_back({arm, belt_vel, cfg.mu_k * cfg.gravity * body.column_mass[col]});
                arms[b].push_back(arm);
                break;
            }
        }
        Eigen::Vector3d external = Eigen::Vector3d::Zero();
        if (!belts_drive) {
            for (int b = 0; b < 2; ++b) {
                if (arms[b].empty()) continue;
                const Vec2 per = applied[b] / static_cast<double>(arms[b].size());
                for (const Vec2& arm : arms[b]) {
                    external.x() += per.x();
                    external.y() += per.y();
                    external.z() += cross2(arm, per);
                }
            }
        }
        const Eigen::Vector3d z_old = z;
        z = detail::implicit_friction_update(z, external, cols, body.mass, body.inertia_zz, h, cfg.slip_floor);
        // Trapezoidal positions: exact under constant acceleration.
        const Eigen::Vector3d z_mid = 0.5 * (z_old + z);
        r_c += h * Vec2(z_mid.x(), z_mid.y());
        theta += h * z_mid.z();
        next.belt_y[0] += h * belt_lateral[0];
        next.belt_y[1] += h * belt_lateral[1];
        com_offset = rotate(body.com, theta);
    }
    if (!z.allFinite() || !r_c.allFinite() || !std::isfinite(theta))
        throw Error(ErrorKind::SimulationDiverged, "non-finite state after integration");

    // Snap belt positions to the exact commanded deltas.
    next.belt_y = {state.belt_y[0] + (belts_drive ? a.p1 : 0.0), state.belt_y[1] + (belts_drive ? a.p2 : 0.0)};
    next.pose = {r_c.x() - com_offset.x(), r_c.y() - com_offset.y(), theta};
    next.ang_vel = z.z();
    next.lin_vel = Vec2(z.x(), z.y()) - spin(z.z(), com_offset);
    next.time = state.time + cfg.control_period;
    next.step = state.step + 1;

    Observation obs = observe(next, dist, cfg);
    EventFlags ev;
    ev.support_lost = support_lost(next, obs, dist, body);
    ev.rotation_reached = std::abs(next.pose.theta - task.target_angle) <= task.angle_tolerance;
    ev.step_limit = next.step >= task.max_steps;
    return {next, std::move(obs), ev};
}

// ---------------------------------------------------------------------------
// Exploration

/// Fixed 15-vector exploratory program: translations, rotations, single-belt
/// drives and lateral belt moves, each vector held for three control periods.
inline const std::array<Action, 15>& exploratory_actions() {
    static const std::array<Action, 15> seq = {
        Action::velocity(0.2, 0.2),   Action::null(),
        Action::velocity(-0.2, -0.2), Action::null(),
        Action::velocity(0.2, -0.2),  Action::null(),
        Action::velocity(-0.2, 0.2),  Action::velocity(0.2, 0.0),
        Action::null(),               Action::velocity(0.0, 0.2),
        Action::null(),               Action::left_position(0.01),
        Action::left_position(-0.01), Action::right_position(-0.01),
        Action::right_position(0.01),
    };
    return seq;
}

inline constexpr int kExplorationRepeat = 3;
inline constexpr int kExplorationSteps = 45;

struct ExplorationResult {
    Trajectory trajectory;
    SimState final_state;
    Observation final_observation;
};

inline ExplorationResult run_exploratory_sequence(const SimState& start, const MassDistribution& dist,
                                                  const BeltConfig& cfg) {
    ExplorationResult out;
    SimState state = start;
    Observation obs = observe(state, dist, cfg);
    TaskLimits unlimited;
    unlimited.max_steps = std::numeric_limits<int>::max();
    for (const Action& a : exploratory_actions()) {
        for (int r = 0; r < kExplorationRepeat; ++r) {
            StepResult res = step(state, a, dist, cfg, unlimited);
            out.trajectory.transitions.push_back({obs, a, res.observation});
            state = res.state;
            obs = std::move(res.observation);
            if (res.events.support_lost) {
                out.trajectory.truncated = true;
                out.final_state = state;
                out.final_observation = obs;
                return out;
            }
        }
    }
    out.final_state = state;
    out.final_observation = obs;
    return out;
}

// ---------------------------------------------------------------------------
// Export

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    os << "t,x,y,theta,Py1,Py2,v1,v2,p1,p2,S1,S2\n";
    os << std::setprecision(10);
    for (const Transition& tr : traj.transitions) {
        const Observation& o = tr.after;
        os << o.t << ',' << o.geom_pose.x << ',' << o.geom_pose.y << ',' << o.geom_pose.theta << ','
           << o.belt_y[0] << ',' << o.belt_y[1] << ',' << tr.action.v1 << ',' << tr.action.v2 << ','
           << tr.action.p1 << ',' << tr.action.p2 << ',' << o.s1_voxels.size() << ',' << o.s2_voxels.size()
           << '\n';
    }
}

}  // namespace boxrot
