#pragma once

// Random-shooting MPC with two rewards and Pareto-front action selection.
//
// The episode loop is written against OneStepModel so the gray-box controller
// and the black-box baseline share candidates, scoring and termination.

#include "boxrot/estimator.hpp"
#include "boxrot/forcemap.hpp"
#include "boxrot/massmodel.hpp"
#include "boxrot/predictor.hpp"
#include "boxrot/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace boxrot {

struct RewardPair {
    double r1 = 0.0;  ///< pose
    double r2 = 0.0;  ///< balance

    bool operator==(const RewardPair&) const = default;
};

struct ActionGridSpec {
    double velocity_max = 0.3;
    int velocity_levels = 9;     ///< per belt, symmetric, includes zero
    double position_max = 0.02;
    double position_step = 0.005;  ///< levels are -max, -max + step, ... strictly below +max
};

struct ControllerConfig {
    double epsilon = 1e-6;
    double target_angle = kHalfPi;
    int candidates = 50;
    ActionGridSpec grid;
    int max_steps = 1000;
    double balance_threshold = 0.04;  ///< m, |y_geom - belt midline|
    double angle_tolerance = 0.05;
    std::uint64_t seed = 0;
    PredictorOptions predictor;
};

// ---------------------------------------------------------------------------
// Action set

/// Velocity pairs over a symmetric grid (null included) followed by the
/// nonzero position levels of the left and then the right belt.
inline std::vector<Action> discrete_action_set(const ActionGridSpec& spec = {}) {
    require(spec.velocity_levels >= 2 && spec.velocity_max > 0, "bad velocity grid");
    require(spec.position_step > 0 && spec.position_max > 0, "bad position grid");
    std::vector<double> vel(spec.velocity_levels);
    for (int i = 0; i < spec.velocity_levels; ++i) {
        vel[i] = -spec.velocity_max + 2 * spec.velocity_max * i / (spec.velocity_levels - 1);
        if (std::abs(vel[i]) < 1e-12) vel[i] = 0.0;
    }
    std::vector<double> pos;
    const int n_pos = static_cast<int>(std::ceil(2 * spec.position_max / spec.position_step - 1e-9));
    for (int k = 0; k < n_pos; ++k) {
        const double p = -spec.position_max + k * spec.position_step;
        if (std::abs(p) > 1e-12) pos.push_back(p);
    }
    std::vector<Action> out;
    out.reserve(vel.size() * vel.size() + 2 * pos.size());
    for (double v1 : vel)
        for (double v2 : vel) out.push_back(Action::velocity(v1, v2));
    for (double p : pos) out.push_back(Action::left_position(p));
    for (double p : pos) out.push_back(Action::right_position(p));
    return out;
}

/// Indices of a uniform sample without replacement (partial Fisher-Yates).
inline std::vector<std::size_t> sample_candidate_indices(std::size_t set_size, int n, std::mt19937_64& rng) {
    require(n >= 0 && static_cast<std::size_t>(n) <= set_size, "cannot sample more candidates than actions");
    std::vector<std::size_t> idx(set_size);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, set_size - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(n);
    return idx;
}

inline std::vector<Action> sample_candidates(std::span<const Action> set, int n, std::mt19937_64& rng) {
    std::vector<Action> out;
    for (std::size_t i : sample_candidate_indices(set.size(), n, rng)) out.push_back(set[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Scoring and selection

inline RewardPair score_action(const PosePrediction& p, const std::array<double, 2>& belts_after,
                               const ControllerConfig& cfg) {
    const double e1 = p.theta_hat - cfg.target_angle;
    const double e2 = p.r_hat.y() - 0.5 * (belts_after[0] + belts_after[1]);
    return {1.0 / (e1 * e1 + cfg.epsilon), 1.0 / (e2 * e2 + cfg.epsilon)};
}

inline bool dominates(const RewardPair& a, const RewardPair& b) {
    return a.r1 >= b.r1 && a.r2 >= b.r2 && (a.r1 > b.r1 || a.r2 > b.r2);
}

/// Indices (ascending) of the pairs no other pair dominates. Identical pairs
/// do not dominate each other. O(n log n).
inline std::vector<std::size_t> pareto_front(std::span<const RewardPair> scores) {
    require(!scores.empty(), "pareto front of an empty set");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a].r1 != scores[b].r1) return scores[a].r1 > scores[b].r1;
        return scores[a].r2 > scores[b].r2;
    });
    std::vector<std::size_t> front;
    double best_r2_higher_r1 = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < order.size();) {
        std::size_t end = g;
        while (end < order.size() && scores[order[end]].r1 == scores[order[g]].r1) ++end;
        const double group_max = scores[order[g]].r2;
        if (group_max > best_r2_higher_r1)
            for (std::size_t k = g; k < end && scores[order[k]].r2 == group_max; ++k) front.push_back(order[k]);
        best_r2_higher_r1 = std::max(best_r2_higher_r1, group_max);
        g = end;
    }
    std::sort(front.begin(), front.end());
    return front;
}

struct ScoredAction {
    Action action;
    RewardPair reward;
};

inline std::vector<ScoredAction> pareto_front(std::span<const ScoredAction> scored) {
    std::vector<RewardPair> r;
    r.reserve(scored.size());
    for (const ScoredAction& s : scored) r.push_back(s.reward);
    std::vector<ScoredAction> out;
    for (std::size_t i : pareto_front(std::span<const RewardPair>(r))) out.push_back(scored[i]);
    return out;
}

template <typename T>
const T& select_action(std::span<const T> front, std::mt19937_64& rng) {
    require(!front.empty(), "cannot select from an empty front");
    std::uniform_int_distribution<std::size_t> pick(0, front.size() - 1);
    return front[pick(rng)];
}

// ---------------------------------------------------------------------------
// Episode results

enum class Outcome { Success, Failure, AbortedHazard };

inline const char* outcome_name(Outcome o) {
    switch (o) {
    case Outcome::Success: return "success";
    case Outcome::Failure: return "failure";
    case Outcome::AbortedHazard: return "aborted_hazard";
    }
    return "?";
}

struct StepRecord {
    int step = 0;
    double theta = 0.0;
    double balance_error = 0.0;
    RewardPair reward;
    Action action;
    int front_size = 0;
};

struct EpisodeResult {
    Outcome outcome = Outcome::Failure;
    std::string reason;
    int steps = 0;
    std::vector<StepRecord> trace;
    double max_balance_error = 0.0;
    double final_theta = 0.0;
    double wall_seconds = 0.0;
    double adaptation_seconds = 0.0;
    int adaptations = 0;
    HazardReport hazard;          ///< of the distribution the gate saw
    bool estimate_fallback = false;
    std::uint64_t seed = 0;
};

/// Trace CSV with one row per control step and a trailing summary comment.
inline void write_episode_csv(std::ostream& os, const EpisodeResult& r, const std::vector<std::string>& header = {}) {
    for (const auto& line : header) os << "# " << line << '\n';
    os << "step,theta,balance_err,r1,r2,v1,v2,p1,p2,front\n";
    os << std::setprecision(10);
    for (const StepRecord& s : r.trace)
        os << s.step << ',' << s.theta << ',' << s.balance_error << ',' << s.reward.r1 << ',' << s.reward.r2 << ','
           << s.action.v1 << ',' << s.action.v2 << ',' << s.action.p1 << ',' << s.action.p2 << ',' << s.front_size
           << '\n';
    os << "# summary outcome=" << outcome_name(r.outcome) << " steps=" << r.steps
       << " max_balance_err=" << r.max_balance_error << " final_theta=" << r.final_theta
       << " adaptations=" << r.adaptations << " reason=\"" << r.reason << "\"\n";
}

// ---------------------------------------------------------------------------
// Shared control loop

/// One-step pose predictor driven by the control loop.
class OneStepModel {
public:
    virtual ~OneStepModel() = default;
    /// Called once per control step before candidates are scored.
    virtual void begin_step(std::span<const Observation> history) = 0;
    /// nullopt marks a candidate the model cannot evaluate; it is skipped.
    virtual std::optional<PosePrediction> predict(const Action& a) const = 0;
    /// Called after the action was applied; `step` counts control steps from 1.
    virtual void end_step(const Observation& /*before*/, const Action& /*a*/, const Observation& /*after*/,
                          int /*step*/, EpisodeResult& /*result*/) {}
};

class GrayBoxStepModel final : public OneStepModel {
public:
    explicit GrayBoxStepModel(const GrayBoxModel& model) : model_(model) {}

    void begin_step(std::span<const Observation> history) override {
        latest_ = &history.back();
        kin_ = model_.kinematics(history);
    }

    std::optional<PosePrediction> predict(const Action& a) const override {
        try {
            return model_.predict(*latest_, kin_, a);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::UnsupportedForce) return std::nullopt;
            throw;
        }
    }

private:
    const GrayBoxModel& model_;
    const Observation* latest_ = nullptr;
    KinematicEstimate kin_;
};

/// Runs control steps from `state` until success, failure or the step limit.
/// `history` holds the observations so far (at least the current one).
inline void run_control_loop(SimState state, std::vector<Observation> history, const MassDistribution& truth,
                             const BeltConfig& belts, const ControllerConfig& cfg, OneStepModel& model,
                             std::mt19937_64& rng, EpisodeResult& result) {
    require(!history.empty(), "control loop needs the current observation");
    const std::vector<Action> actions = discrete_action_set(cfg.grid);
    require(cfg.candidates >= 1 && cfg.candidates <= static_cast<int>(actions.size()),
            "candidate count must lie in [1, |action set|]");
    TaskLimits limits;
    limits.target_angle = cfg.target_angle;
    limits.angle_tolerance = cfg.angle_tolerance;
    limits.max_steps = std::numeric_limits<int>::max();

    result.final_theta = state.pose.theta;
    if (cfg.max_steps <= 0) {
        result.outcome = Outcome::Failure;
        result.reason = "step limit";
        return;
    }
    std::vector<ScoredAction> scored;
    for (int k = 1; k <= cfg.max_steps; ++k) {
        model.begin_step(history);
        scored.clear();
        for (std::size_t i : sample_candidate_indices(actions.size(), cfg.candidates, rng)) {
            const Action& a = actions[i];
            const std::optional<PosePrediction> p = model.predict(a);
            if (!p) continue;
            scored.push_back({a, score_action(*p, belts_after(a, history.back().belt_y, belts), cfg)});
        }
        ScoredAction chosen{Action::null(), {}};
        int front_size = 0;
        if (!scored.empty()) {
            const std::vector<ScoredAction> front = pareto_front(std::span<const ScoredAction>(scored));
            chosen = select_action(std::span<const ScoredAction>(front), rng);
            front_size = static_cast<int>(front.size());
        }
        StepResult next = step(state, chosen.action, truth, belts, limits);
        const double balance = std::abs(next.state.pose.y - next.state.belt_midline());
        result.trace.push_back({k, next.state.pose.theta, balance, chosen.reward, chosen.action, front_size});
        result.max_balance_error = std::max(result.max_balance_error, balance);
        result.steps = k;
        result.final_theta = next.state.pose.theta;
        const Observation before = history.back();
        history.push_back(next.observation);
        state = next.state;
        model.end_step(before, chosen.action, history.back(), k, result);

        if (next.events.support_lost) {
            result.outcome = Outcome::Failure;
            result.reason = "support lost";
            return;
        }
        if (balance > cfg.balance_threshold) {
            result.outcome = Outcome::Failure;
            result.reason = "balance threshold breached";
            return;
        }
        if (next.events.rotation_reached) {
            result.outcome = Outcome::Success;
            result.reason = "target angle reached";
            return;
        }
    }
    result.outcome = Outcome::Failure;
    result.reason = "step limit";
}

// ---------------------------------------------------------------------------
// Physics-prior episode

/// Where the controller's mass distribution comes from.
struct DistributionSource {
    const EstimatorModel* estimator = nullptr;      ///< learned estimate from the exploration
    const MassDistribution* known = nullptr;        ///< used as-is when no estimator is given
};

inline EpisodeResult run_episode(const MassDistribution& truth, DistributionSource source, const ControlForceMap& map,
                                 const BeltConfig& belts, const ControllerConfig& cfg) {
    require(source.estimator || source.known, "a distribution source is required");
    const auto start = std::chrono::steady_clock::now();
    EpisodeResult result;
    result.seed = cfg.seed;
    auto finish = [&] {
        result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return result;
    };
    std::mt19937_64 rng(cfg.seed);

    const StepResult init = reset(truth, {}, belts);
    const ExplorationResult ex = run_exploratory_sequence(init.state, truth, belts);
    result.final_theta = ex.final_state.pose.theta;
    if (ex.trajectory.truncated) {
        result.outcome = Outcome::Failure;
        result.reason = "support lost during exploration";
        return finish();
    }

    std::optional<MassDistribution> estimate;
    if (source.estimator) {
        EstimatorPrediction p = predict(*source.estimator, ex.trajectory);
        result.estimate_fallback = p.fallback;
        estimate = std::move(p.distribution);
    } else {
        estimate = *source.known;
    }
    result.hazard = classify_hazard(*estimate);
    if (result.hazard.hazardous) {
        result.outcome = Outcome::AbortedHazard;
        result.reason = "estimated distribution is hazardous";
        return finish();
    }

    PredictorOptions opts = cfg.predictor;
    try {
        const GrayBoxModel model(*estimate, map, belts, opts);
        if (!(model.inertia_zz() > 1e-12 * estimate->total_mass()))
            throw Error(ErrorKind::DegenerateInertia, "estimated I_zz vanishes");
        GrayBoxStepModel step_model(model);
        std::vector<Observation> history;
        history.reserve(ex.trajectory.size() + 1 + cfg.max_steps);
        history.push_back(ex.trajectory.transitions.front().before);
        for (const Transition& t : ex.trajectory.transitions) history.push_back(t.after);
        run_control_loop(ex.final_state, std::move(history), truth, belts, cfg, step_model, rng, result);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateInertia) throw;
        result.outcome = Outcome::AbortedHazard;
        result.reason = e.what();
    }
    return finish();
}

}  // namespace boxrot
