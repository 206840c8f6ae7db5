#pragma once

// Black-box MPC baseline: a dense network W(s, a) -> s' trained on one
// environment and refit for one epoch on the episode's own data every 20
// steps. It plugs into the same control loop as the physics-prior method.

#include "boxrot/controller.hpp"
#include "boxrot/nn.hpp"
#include "boxrot/sim.hpp"

#include <chrono>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace boxrot {

inline constexpr int kBlackboxInputs = 9;
inline constexpr int kBlackboxOutputs = 5;
inline constexpr const char* kBlackboxKind = "BBOX";

struct StateTransition {
    std::array<double, 5> state{};
    Action action;
    std::array<double, 5> next{};
};

inline StateTransition make_state_transition(const Observation& before, const Action& a, const Observation& after) {
    return {before.state_vector(), a, after.state_vector()};
}

/// Inputs are the state in a frame translated to the box's geometric center,
/// so the two position entries are always zero, followed by the action.
/// Outputs are the state increment s' - s.
inline std::array<double, kBlackboxInputs> blackbox_input(const std::array<double, 5>& s, const Action& a) {
    return {0.0, 0.0, s[2], s[3] - s[1], s[4] - s[1], a.v1, a.v2, a.p1, a.p2};
}

struct BlackboxModel {
    nn::Model model;
    std::uint32_t version = 0;  ///< bumped by every online update

    std::array<double, 5> predict(const std::array<double, 5>& s, const Action& a) const {
        const auto in = blackbox_input(s, a);
        const nn::Matrix x = Eigen::Map<const nn::Vector>(in.data(), kBlackboxInputs);
        const nn::Vector d = model.output.invert(model.predict(x)).col(0);
        std::array<double, 5> next{};
        for (int i = 0; i < 5; ++i) next[i] = s[i] + d[i];
        return next;
    }
};

struct BlackboxTrainingConfig {
    double learning_rate = 1e-3;
    int batch_size = 64;
    int epochs = 30;
    double validation_fraction = 0.1;
    std::uint64_t seed = 5;
    std::vector<int> hidden = {256, 256};
};

struct BlackboxReport {
    std::vector<double> train_loss;  ///< per epoch, standardized MSE
    std::vector<double> val_loss;
    double initial_val_loss = 0.0;
    std::size_t transitions = 0;
    Eigen::Index parameters = 0;
    double wall_seconds = 0.0;
};

namespace detail {

inline void blackbox_batch(std::span<const StateTransition> data, std::span<const std::size_t> idx, nn::Matrix& x,
                           nn::Matrix& y) {
    x.resize(kBlackboxInputs, static_cast<Eigen::Index>(idx.size()));
    y.resize(kBlackboxOutputs, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) {
        const StateTransition& t = data[idx[c]];
        const auto in = blackbox_input(t.state, t.action);
        for (int r = 0; r < kBlackboxInputs; ++r) x(r, c) = in[r];
        for (int r = 0; r < kBlackboxOutputs; ++r) y(r, c) = t.next[r] - t.state[r];
    }
}

/// One pass of minibatch updates; returns the sample-weighted mean loss.
inline double blackbox_epoch(nn::Model& m, std::span<const StateTransition> data, std::vector<std::size_t>& order,
                             int batch_size, std::mt19937_64& rng) {
    std::shuffle(order.begin(), order.end(), rng);
    nn::Matrix x, y, grad;
    nn::Mlp::Tape tape;
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
        const std::span<const std::size_t> idx(order.data() + b, std::min<std::size_t>(batch_size, order.size() - b));
        blackbox_batch(data, idx, x, y);
        const nn::Matrix out = m.net.forward(m.input.apply(x), tape);
        const nn::Matrix err = out - m.output.apply(y);
        const double n = static_cast<double>(err.size());
        total += err.squaredNorm() / n * static_cast<double>(idx.size());
        grad = (2.0 / n) * err;
        m.optimizer.step(m.net.params(), m.net.backward(tape, grad));
    }
    return order.empty() ? 0.0 : total / static_cast<double>(order.size());
}

inline double blackbox_loss(const nn::Model& m, std::span<const StateTransition> data,
                            std::span<const std::size_t> idx) {
    if (idx.empty()) return 0.0;
    nn::Matrix x, y;
    blackbox_batch(data, idx, x, y);
    return (m.net.forward(m.input.apply(x)) - m.output.apply(y)).squaredNorm() / static_cast<double>(y.size());
}

}  // namespace detail

inline std::pair<BlackboxModel, BlackboxReport> train_blackbox(std::span<const StateTransition> data,
                                                               const BlackboxTrainingConfig& tc) {
    require(data.size() >= 10, "black-box training needs at least 10 transitions");
    require(tc.batch_size >= 1 && tc.epochs >= 1 && tc.learning_rate > 0, "bad training config");
    require(tc.validation_fraction > 0 && tc.validation_fraction < 1, "validation fraction must lie in (0, 1)");
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(tc.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_val =
        std::clamp<std::size_t>(static_cast<std::size_t>(tc.validation_fraction * data.size()), 1, data.size() - 1);
    const std::vector<std::size_t> val(order.begin(), order.begin() + n_val);
    std::vector<std::size_t> tr(order.begin() + n_val, order.end());

    BlackboxModel bb;
    std::vector<int> dims = {kBlackboxInputs};
    dims.insert(dims.end(), tc.hidden.begin(), tc.hidden.end());
    dims.push_back(kBlackboxOutputs);
    bb.model.net = nn::Mlp(dims, mix_seed(tc.seed, 3));
    {
        nn::Matrix x, y;
        detail::blackbox_batch(data, tr, x, y);
        bb.model.input = nn::Standardizer::fit(x);
        bb.model.output = nn::Standardizer::fit(y);
    }
    bb.model.optimizer = nn::Adam(bb.model.net.parameter_count(), {tc.learning_rate});

    BlackboxReport rep;
    rep.transitions = data.size();
    rep.parameters = bb.model.net.parameter_count();
    rep.initial_val_loss = detail::blackbox_loss(bb.model, data, val);
    for (int e = 1; e <= tc.epochs; ++e) {
        const double loss = detail::blackbox_epoch(bb.model, data, tr, tc.batch_size, rng);
        const double vloss = detail::blackbox_loss(bb.model, data, val);
        if (!std::isfinite(loss) || !std::isfinite(vloss) || !bb.model.net.finite())
            throw Error(ErrorKind::TrainingDiverged, "black-box loss not finite at epoch " + std::to_string(e));
        rep.train_loss.push_back(loss);
        rep.val_loss.push_back(vloss);
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(bb), rep};
}

/// One optimization epoch over the episode buffer, in batches of
/// `batch_size`. Normalization stays fixed. Returns the wall time in seconds.
inline double online_adapt(BlackboxModel& bb, std::span<const StateTransition> buffer, int batch_size,
                           std::uint64_t seed) {
    if (buffer.empty()) return 0.0;
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(buffer.size());
    std::iota(order.begin(), order.end(), 0);
    detail::blackbox_epoch(bb.model, buffer, order, batch_size, rng);
    ++bb.version;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline double blackbox_buffer_loss(const BlackboxModel& bb, std::span<const StateTransition> buffer) {
    std::vector<std::size_t> idx(buffer.size());
    std::iota(idx.begin(), idx.end(), 0);
    return detail::blackbox_loss(bb.model, buffer, idx);
}

inline void save_blackbox(const std::string& path, const BlackboxModel& bb) {
    nn::save_model(path, bb.model, kBlackboxKind);
}

inline BlackboxModel load_blackbox(const std::string& path) {
    BlackboxModel bb;
    bb.model = nn::load_model(path, kBlackboxKind);
    if (bb.model.net.input_dim() != kBlackboxInputs || bb.model.net.output_dim() != kBlackboxOutputs)
        throw Error(ErrorKind::Format, "black-box model must map 9 inputs to 5 outputs");
    return bb;
}

// ---------------------------------------------------------------------------
// Data collection

struct RandomPolicyConfig {
    int transitions = 24000;
    int episode_length = 610;
    std::uint64_t seed = 3;
};

/// Uniform random actions from the controller's action set; an episode ends
/// on support loss or after `episode_length` steps.
inline std::vector<StateTransition> collect_random_transitions(const MassDistribution& dist, const BeltConfig& belts,
                                                               const RandomPolicyConfig& rp,
                                                               const ActionGridSpec& grid = {}) {
    require(rp.transitions >= 1 && rp.episode_length >= 1, "bad random-policy config");
    const std::vector<Action> actions = discrete_action_set(grid);
    std::mt19937_64 rng(rp.seed);
    std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
    TaskLimits unlimited;
    unlimited.max_steps = std::numeric_limits<int>::max();
    std::vector<StateTransition> out;
    out.reserve(rp.transitions);
    while (static_cast<int>(out.size()) < rp.transitions) {
        StepResult cur = reset(dist, {}, belts);
        for (int k = 0; k < rp.episode_length && static_cast<int>(out.size()) < rp.transitions; ++k) {
            const Action& a = actions[pick(rng)];
            StepResult next = step(cur.state, a, dist, belts, unlimited);
            out.push_back(make_state_transition(cur.observation, a, next.observation));
            if (next.events.support_lost) break;
            cur = std::move(next);
        }
    }
    return out;
}

/// Transitions of an episode's control phase, replayed from its trace.
inline std::vector<StateTransition> episode_transitions(const MassDistribution& dist, const BeltConfig& belts,
                                                        const EpisodeResult& r) {
    std::vector<StateTransition> out;
    StepResult cur = reset(dist, {}, belts);
    const ExplorationResult ex = run_exploratory_sequence(cur.state, dist, belts);
    SimState s = ex.final_state;
    Observation obs = ex.final_observation;
    TaskLimits unlimited;
    unlimited.max_steps = std::numeric_limits<int>::max();
    for (const StepRecord& rec : r.trace) {
        StepResult next = step(s, rec.action, dist, belts, unlimited);
        out.push_back(make_state_transition(obs, rec.action, next.observation));
        s = next.state;
        obs = std::move(next.observation);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Episode

struct BaselineConfig {
    int adapt_every = 20;
    int adapt_batch = 32;
    bool adapt = true;
};

class BlackboxStepModel final : public OneStepModel {
public:
    BlackboxStepModel(BlackboxModel& model, const BaselineConfig& cfg, std::uint64_t seed)
        : model_(model), cfg_(cfg), seed_(seed) {}

    void begin_step(std::span<const Observation> history) override { state_ = history.back().state_vector(); }

    std::optional<PosePrediction> predict(const Action& a) const override {
        const auto next = model_.predict(state_, a);
        PosePrediction p;
        p.r_hat = {next[0], next[1]};
        p.theta_hat = next[2];
        return p;
    }

    void end_step(const Observation& before, const Action& a, const Observation& after, int step,
                  EpisodeResult& result) override {
        buffer_.push_back(make_state_transition(before, a, after));
        if (cfg_.adapt && cfg_.adapt_every > 0 && step % cfg_.adapt_every == 0) {
            result.adaptation_seconds += online_adapt(model_, buffer_, cfg_.adapt_batch, mix_seed(seed_, step));
            ++result.adaptations;
        }
    }

    const std::vector<StateTransition>& buffer() const { return buffer_; }

private:
    BlackboxModel& model_;
    BaselineConfig cfg_;
    std::uint64_t seed_;
    std::array<double, 5> state_{};
    std::vector<StateTransition> buffer_;
};

/// Same loop as the physics-prior controller, without exploration or hazard
/// gate. The model is copied, so adaptation never leaks across episodes.
inline EpisodeResult run_episode_blackbox(const MassDistribution& truth, const BlackboxModel& trained,
                                          const BeltConfig& belts, const ControllerConfig& cfg,
                                          const BaselineConfig& bc = {}) {
    const auto start = std::chrono::steady_clock::now();
    EpisodeResult result;
    result.seed = cfg.seed;
    std::mt19937_64 rng(cfg.seed);
    BlackboxModel model = trained;
    BlackboxStepModel step_model(model, bc, cfg.seed);
    const StepResult init = reset(truth, {}, belts);
    run_control_loop(init.state, {init.observation}, truth, belts, cfg, step_model, rng, result);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace boxrot
