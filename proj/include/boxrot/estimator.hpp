#pragma once

// Mass-distribution estimator: a dense network reading the fixed exploratory
// trajectory and predicting an occupancy grid plus the payload mass.

#include "boxrot/massmodel.hpp"
#include "boxrot/nn.hpp"
#include "boxrot/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace boxrot {

inline constexpr int kTransitionFeatures = 14;
inline constexpr int kTrajectoryFeatures = kExplorationSteps * kTransitionFeatures;  // 630

/// Per transition: state, action and next state, with positions taken relative
/// to the pose at the start of the trajectory.
inline std::vector<double> featurize_trajectory(const Trajectory& traj) {
    if (traj.truncated || static_cast<int>(traj.size()) != kExplorationSteps)
        throw Error(ErrorKind::InvalidArgument, "exploratory trajectory must hold exactly " +
                                                    std::to_string(kExplorationSteps) + " transitions, got " +
                                                    std::to_string(traj.size()));
    const Pose2 origin = traj.transitions.front().before.geom_pose;
    auto rel = [&](const Observation& o, double* out) {
        out[0] = o.geom_pose.x - origin.x;
        out[1] = o.geom_pose.y - origin.y;
        out[2] = o.geom_pose.theta - origin.theta;
        out[3] = o.belt_y[0] - origin.y;
        out[4] = o.belt_y[1] - origin.y;
    };
    std::vector<double> f(kTrajectoryFeatures);
    double* p = f.data();
    for (const Transition& tr : traj.transitions) {
        rel(tr.before, p);
        const auto a = tr.action.as_array();
        std::copy(a.begin(), a.end(), p + 5);
        rel(tr.after, p + 9);
        p += kTransitionFeatures;
    }
    return f;
}

// ---------------------------------------------------------------------------
// Dataset

struct EstimatorSample {
    std::vector<double> features;
    std::vector<std::uint8_t> occupancy;
    double payload_mass = 0.0;  ///< label excludes the per-voxel floor
};

struct EstimatorDataset {
    GridDims grid = kDefaultGrid;
    BoxDims box = kDefaultBox;
    std::uint64_t config_hash = 0;
    int resampled = 0;  ///< boxes rejected because exploration lost support
    std::vector<EstimatorSample> items;

    std::size_t transitions() const { return items.size() * kExplorationSteps; }
};

struct DatasetConfig {
    int n_boxes = 500;
    std::uint64_t seed = 7;
    MassRange mass_range;
    GaussianSampler sampler;
    /// Share of boxes drawn with GaussianSampler::edge so the hazard gate has
    /// slab-concentrated training examples; the slab is picked uniformly.
    double edge_fraction = 0.35;
    int workers = 1;
};

/// Draws box i from its own seed stream; boxes whose exploration loses
/// support are redrawn from the next salt of the same stream.
inline EstimatorDataset generate_dataset(const DatasetConfig& dc, const BeltConfig& cfg, GridDims grid = kDefaultGrid,
                                         BoxDims box = kDefaultBox) {
    require(dc.n_boxes >= 1, "n_boxes must be positive");
    EstimatorDataset ds;
    ds.grid = grid;
    ds.box = box;
    ds.items.resize(dc.n_boxes);
    std::vector<int> rejects(dc.n_boxes, 0);

    require(dc.edge_fraction >= 0 && dc.edge_fraction <= 1, "edge fraction must lie in [0, 1]");
    auto make = [&](int i) {
        std::mt19937_64 pick(mix_seed(~dc.seed, static_cast<std::uint64_t>(i)));
        const bool edge = std::uniform_real_distribution<double>(0.0, 1.0)(pick) < dc.edge_fraction;
        const GaussianSampler sampler = edge ? GaussianSampler::edge(static_cast<HazardVolume>(1 + pick() % 4)) : dc.sampler;
        for (int attempt = 0;; ++attempt) {
            const std::uint64_t s = mix_seed(dc.seed, static_cast<std::uint64_t>(i) * 1024 + attempt);
            const MassDistribution dist = sample_gaussian_distribution(s, grid, box, dc.mass_range, sampler);
            const StepResult start = reset(dist, {}, cfg);
            const ExplorationResult ex = run_exploratory_sequence(start.state, dist, cfg);
            if (ex.trajectory.truncated) {
                ++rejects[i];
                continue;
            }
            ds.items[i] = {featurize_trajectory(ex.trajectory), dist.occupancy(), dist.payload_mass()};
            return;
        }
    };
    const int workers = std::clamp(dc.workers, 1, dc.n_boxes);
    if (workers == 1) {
        for (int i = 0; i < dc.n_boxes; ++i) make(i);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (int i = w; i < dc.n_boxes; i += workers) make(i);
            });
        for (auto& t : pool) t.join();
    }
    ds.resampled = std::accumulate(rejects.begin(), rejects.end(), 0);
    return ds;
}

// Binary container (little-endian)
//
//   char[4]  magic "BXDS"
//   u32      version (1)
//   u64      config hash
//   i32[3]   grid dims, f64[3] box dims
//   u32      item count, u32 feature length, i32 resampled
//   per item: f64[feature length] features, u8[N] occupancy, f64 payload mass

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

inline void write_dataset(std::ostream& os, const EstimatorDataset& ds) {
    io::write_magic(os, "BXDS");
    io::write_pod(os, kDatasetFormatVersion);
    io::write_pod(os, ds.config_hash);
    io::write_pod<std::int32_t>(os, ds.grid.nl);
    io::write_pod<std::int32_t>(os, ds.grid.nw);
    io::write_pod<std::int32_t>(os, ds.grid.nh);
    io::write_pod(os, ds.box.length);
    io::write_pod(os, ds.box.width);
    io::write_pod(os, ds.box.height);
    io::write_pod(os, static_cast<std::uint32_t>(ds.items.size()));
    io::write_pod(os, static_cast<std::uint32_t>(kTrajectoryFeatures));
    io::write_pod<std::int32_t>(os, ds.resampled);
    for (const EstimatorSample& s : ds.items) {
        require(static_cast<int>(s.features.size()) == kTrajectoryFeatures, "feature length mismatch");
        require(static_cast<int>(s.occupancy.size()) == ds.grid.count(), "label size mismatch");
        os.write(reinterpret_cast<const char*>(s.features.data()),
                 static_cast<std::streamsize>(s.features.size() * sizeof(double)));
        os.write(reinterpret_cast<const char*>(s.occupancy.data()), static_cast<std::streamsize>(s.occupancy.size()));
        io::write_pod(os, s.payload_mass);
    }
}

inline EstimatorDataset read_dataset(std::istream& is) {
    io::expect_magic(is, "BXDS");
    const auto version = io::read_pod<std::uint32_t>(is);
    if (version != kDatasetFormatVersion)
        throw Error(ErrorKind::Format, "unsupported dataset version " + std::to_string(version));
    EstimatorDataset ds;
    ds.config_hash = io::read_pod<std::uint64_t>(is);
    ds.grid = {io::read_pod<std::int32_t>(is), io::read_pod<std::int32_t>(is), io::read_pod<std::int32_t>(is)};
    if (ds.grid.nl <= 0 || ds.grid.nw <= 0 || ds.grid.nh <= 0 || ds.grid.count() > (1 << 20))
        throw Error(ErrorKind::Format, "bad grid dims");
    ds.box = {io::read_pod<double>(is), io::read_pod<double>(is), io::read_pod<double>(is)};
    const auto n = io::read_pod<std::uint32_t>(is);
    const auto flen = io::read_pod<std::uint32_t>(is);
    if (flen != static_cast<std::uint32_t>(kTrajectoryFeatures)) throw Error(ErrorKind::Format, "feature length mismatch");
    ds.resampled = io::read_pod<std::int32_t>(is);
    ds.items.resize(n);
    for (EstimatorSample& s : ds.items) {
        s.features.resize(flen);
        s.occupancy.resize(ds.grid.count());
        is.read(reinterpret_cast<char*>(s.features.data()), static_cast<std::streamsize>(flen * sizeof(double)));
        is.read(reinterpret_cast<char*>(s.occupancy.data()), static_cast<std::streamsize>(s.occupancy.size()));
        s.payload_mass = io::read_pod<double>(is);
    }
    return ds;
}

inline void save_dataset(const std::string& path, const EstimatorDataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
    write_dataset(os, ds);
}

inline EstimatorDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::Io, "cannot open " + path);
    return read_dataset(is);
}

// ---------------------------------------------------------------------------
// Loss

struct LossTerms {
    double bce = 0.0;
    double mse = 0.0;
    double total = 0.0;
};

/// Mean BCE over voxels and samples on the first `voxels` output rows, plus
/// lambda times the mean squared error of the last row (standardized mass).
/// Writes d total / d output into `grad` when given.
inline LossTerms combined_loss(const nn::Matrix& out, const nn::Matrix& occupancy, const nn::Vector& mass_std,
                               double lambda_mass, nn::Matrix* grad = nullptr) {
    const Eigen::Index voxels = out.rows() - 1;
    const Eigen::Index batch = out.cols();
    require(occupancy.rows() == voxels && occupancy.cols() == batch && mass_std.size() == batch,
            "loss target shape mismatch");
    const auto z = out.topRows(voxels).array();
    const auto y = occupancy.array();
    const double n_bce = static_cast<double>(voxels * batch);
    LossTerms t;
    t.bce = (z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).log()).sum() / n_bce;
    const nn::Vector err = out.row(voxels).transpose() - mass_std;
    t.mse = err.squaredNorm() / static_cast<double>(batch);
    t.total = t.bce + lambda_mass * t.mse;
    if (grad) {
        grad->resize(out.rows(), batch);
        grad->topRows(voxels) = ((1.0 / (1.0 + (-z).exp())) - y).matrix() / n_bce;
        grad->row(voxels) = (2.0 * lambda_mass / static_cast<double>(batch)) * err.transpose();
    }
    return t;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    int batch_size = 32;
    int epochs = 120;
    double lambda_mass = 1.0;
    double validation_fraction = 0.2;
    std::uint64_t seed = 11;
    std::vector<int> hidden = {512, 512};

    void validate() const {
        require(learning_rate > 0, "learning rate must be positive");
        require(batch_size >= 1 && epochs >= 1, "batch size and epochs must be positive");
        require(lambda_mass >= 0, "lambda_mass must be nonnegative");
        require(validation_fraction > 0 && validation_fraction < 1, "validation fraction must lie in (0, 1)");
        for (int h : hidden) require(h >= 1, "hidden widths must be positive");
    }
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_bce = 0.0;
    double train_mse = 0.0;
    double val_loss = 0.0;
    double val_median_iou = 0.0;
};

struct TrainingReport {
    std::vector<EpochStats> epochs;
    int train_items = 0;
    int val_items = 0;
    std::size_t transitions = 0;
    Eigen::Index parameters = 0;
    double final_val_median_iou = 0.0;
    double wall_seconds = 0.0;
};

struct EstimatorModel {
    nn::Model model;
    GridDims grid = kDefaultGrid;
    BoxDims box = kDefaultBox;

    int voxels() const { return grid.count(); }
};

inline constexpr const char* kEstimatorKind = "ESTM";

struct EstimatorPrediction {
    MassDistribution distribution;
    std::vector<double> probabilities;
    double payload_mass = 0.0;
    bool fallback = false;  ///< no voxel predicted occupied; full occupancy used instead
};

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    if (v.size() % 2 == 1) return v[mid];
    const double hi = v[mid];
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + mid));
}

inline nn::Matrix feature_matrix(const EstimatorDataset& ds, std::span<const int> idx) {
    nn::Matrix x(kTrajectoryFeatures, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c)
        x.col(c) = Eigen::Map<const nn::Vector>(ds.items[idx[c]].features.data(), kTrajectoryFeatures);
    return x;
}

}  // namespace detail

inline EstimatorPrediction decode_prediction(const EstimatorModel& em, const nn::Vector& out) {
    const int n = em.voxels();
    EstimatorPrediction p{MassDistribution::uniform(em.grid, em.box, 0.0), {}, 0.0, false};
    p.probabilities.resize(n);
    std::vector<std::uint8_t> occ(n);
    int occupied = 0;
    for (int q = 0; q < n; ++q) {
        p.probabilities[q] = 1.0 / (1.0 + std::exp(-out[q]));
        occ[q] = p.probabilities[q] >= 0.5 ? 1 : 0;
        occupied += occ[q];
    }
    if (occupied == 0) {
        std::fill(occ.begin(), occ.end(), 1);
        p.fallback = true;
    }
    p.payload_mass = std::max(0.0, out[n] * em.model.output.scale[n] + em.model.output.mean[n]);
    p.distribution = MassDistribution::from_occupancy(em.grid, em.box, occ, p.payload_mass);
    return p;
}

inline EstimatorPrediction predict(const EstimatorModel& em, const Trajectory& traj) {
    const std::vector<double> f = featurize_trajectory(traj);
    const nn::Matrix x = Eigen::Map<const nn::Vector>(f.data(), kTrajectoryFeatures);
    return decode_prediction(em, em.model.predict(x).col(0));
}

inline double median_iou(const EstimatorModel& em, const EstimatorDataset& ds, std::span<const int> idx) {
    if (idx.empty()) return 0.0;
    const nn::Matrix out = em.model.predict(detail::feature_matrix(ds, idx));
    std::vector<double> ious;
    ious.reserve(idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c) {
        const EstimatorPrediction p = decode_prediction(em, out.col(c));
        const auto& truth = ds.items[idx[c]].occupancy;
        ious.push_back(iou(OccupancyGrid(em.grid, p.probabilities), OccupancyGrid::from_mask(em.grid, truth)));
    }
    return detail::median(std::move(ious));
}

using EpochCallback = std::function<void(const EpochStats&)>;

inline std::pair<EstimatorModel, TrainingReport> train(const EstimatorDataset& ds, const TrainingConfig& tc,
                                                       const EpochCallback& on_epoch = {}) {
    tc.validate();
    require(ds.items.size() >= 10, "dataset needs at least 10 items");
    const auto start = std::chrono::steady_clock::now();
    const int n = static_cast<int>(ds.items.size());
    const int voxels = ds.grid.count();

    std::mt19937_64 rng(tc.seed);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int n_val = std::clamp(static_cast<int>(std::lround(tc.validation_fraction * n)), 1, n - 1);
    const std::vector<int> val(order.begin(), order.begin() + n_val);
    std::vector<int> tr(order.begin() + n_val, order.end());

    EstimatorModel em;
    em.grid = ds.grid;
    em.box = ds.box;
    std::vector<int> dims = {kTrajectoryFeatures};
    dims.insert(dims.end(), tc.hidden.begin(), tc.hidden.end());
    dims.push_back(voxels + 1);
    em.model.net = nn::Mlp(dims, mix_seed(tc.seed, 1));
    em.model.input = nn::Standardizer::fit(detail::feature_matrix(ds, tr));
    nn::Vector masses(static_cast<Eigen::Index>(tr.size()));
    for (std::size_t i = 0; i < tr.size(); ++i) masses[i] = ds.items[tr[i]].payload_mass;
    em.model.output = nn::Standardizer::identity(voxels + 1);
    em.model.output.mean[voxels] = masses.mean();
    const double mass_sd = std::sqrt((masses.array() - masses.mean()).square().mean());
    em.model.output.scale[voxels] = mass_sd > 1e-12 ? mass_sd : 1.0;
    em.model.optimizer = nn::Adam(em.model.net.parameter_count(), {tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon, tc.weight_decay});

    auto targets = [&](std::span<const int> idx, nn::Matrix& occ, nn::Vector& mass) {
        occ.resize(voxels, static_cast<Eigen::Index>(idx.size()));
        mass.resize(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t c = 0; c < idx.size(); ++c) {
            const EstimatorSample& s = ds.items[idx[c]];
            for (int q = 0; q < voxels; ++q) occ(q, c) = s.occupancy[q];
            mass[c] = (s.payload_mass - em.model.output.mean[voxels]) / em.model.output.scale[voxels];
        }
    };
    const nn::Matrix x_val = em.model.input.apply(detail::feature_matrix(ds, val));
    nn::Matrix occ_val;
    nn::Vector mass_val;
    targets(val, occ_val, mass_val);

    TrainingReport report;
    report.train_items = static_cast<int>(tr.size());
    report.val_items = n_val;
    report.transitions = ds.transitions();
    report.parameters = em.model.net.parameter_count();

    nn::Mlp::Tape tape;
    nn::Matrix occ, grad_out;
    nn::Vector mass;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::shuffle(tr.begin(), tr.end(), rng);
        EpochStats st;
        st.epoch = epoch;
        double seen = 0;
        for (std::size_t b = 0; b < tr.size(); b += tc.batch_size) {
            const std::span<const int> idx(tr.data() + b, std::min<std::size_t>(tc.batch_size, tr.size() - b));
            targets(idx, occ, mass);
            const nn::Matrix out = em.model.net.forward(em.model.input.apply(detail::feature_matrix(ds, idx)), tape);
            const LossTerms lt = combined_loss(out, occ, mass, tc.lambda_mass, &grad_out);
            if (!std::isfinite(lt.total))
                throw Error(ErrorKind::TrainingDiverged, "non-finite loss at epoch " + std::to_string(epoch));
            const double w = static_cast<double>(idx.size());
            st.train_loss += w * lt.total;
            st.train_bce += w * lt.bce;
            st.train_mse += w * lt.mse;
            seen += w;
            em.model.optimizer.step(em.model.net.params(), em.model.net.backward(tape, grad_out));
        }
        st.train_loss /= seen;
        st.train_bce /= seen;
        st.train_mse /= seen;
        st.val_loss = combined_loss(em.model.net.forward(x_val), occ_val, mass_val, tc.lambda_mass).total;
        if (!std::isfinite(st.val_loss) || !em.model.net.finite())
            throw Error(ErrorKind::TrainingDiverged, "non-finite state at epoch " + std::to_string(epoch));
        st.val_median_iou = median_iou(em, ds, val);
        report.epochs.push_back(st);
        if (on_epoch) on_epoch(st);
    }
    report.final_val_median_iou = report.epochs.back().val_median_iou;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(em), report};
}

// Estimator files append i32[3] grid dims and f64[3] box dims after the
// network container.

inline void save_estimator(const std::string& path, const EstimatorModel& em) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
    nn::write_model(os, em.model, kEstimatorKind);
    io::write_pod<std::int32_t>(os, em.grid.nl);
    io::write_pod<std::int32_t>(os, em.grid.nw);
    io::write_pod<std::int32_t>(os, em.grid.nh);
    io::write_pod(os, em.box.length);
    io::write_pod(os, em.box.width);
    io::write_pod(os, em.box.height);
}

inline EstimatorModel load_estimator(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::Io, "cannot open " + path);
    EstimatorModel em;
    em.model = nn::read_model(is, kEstimatorKind);
    em.grid = {io::read_pod<std::int32_t>(is), io::read_pod<std::int32_t>(is), io::read_pod<std::int32_t>(is)};
    em.box = {io::read_pod<double>(is), io::read_pod<double>(is), io::read_pod<double>(is)};
    if (em.model.net.input_dim() != kTrajectoryFeatures || em.model.net.output_dim() != em.grid.count() + 1)
        throw Error(ErrorKind::Format, "estimator dims do not match its grid");
    return em;
}

}  // namespace boxrot
