#pragma once

// Dense ReLU networks with hand-written backpropagation, an Adam optimizer and
// the binary model container shared by the estimator and the baseline.
//
// All parameters live in one flat vector. Layer l owns a row-major
// out x in weight block followed by its out-sized bias.

#include "boxrot/common.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace boxrot::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Per-feature affine normalization, x' = (x - mean) / scale.
struct Standardizer {
    Vector mean;
    Vector scale;

    static Standardizer identity(int dim) { return {Vector::Zero(dim), Vector::Ones(dim)}; }

    /// Columns are samples. Features with (near) zero spread keep unit scale.
    static Standardizer fit(const Matrix& samples, double min_scale = 1e-8) {
        Standardizer s;
        const double n = static_cast<double>(samples.cols());
        s.mean = samples.rowwise().sum() / n;
        s.scale = ((samples.colwise() - s.mean).array().square().rowwise().sum() / n).sqrt().matrix();
        for (Eigen::Index i = 0; i < s.scale.size(); ++i)
            if (!(s.scale[i] > min_scale)) s.scale[i] = 1.0;
        return s;
    }

    int dim() const { return static_cast<int>(mean.size()); }
    Matrix apply(const Matrix& x) const { return (x.colwise() - mean).array().colwise() / scale.array(); }
    Matrix invert(const Matrix& x) const { return (x.array().colwise() * scale.array()).colwise() + mean.array(); }
};

class Mlp {
public:
    Mlp() = default;

    /// dims = {input, hidden..., output}. He-uniform weights, zero biases.
    Mlp(std::vector<int> dims, std::uint64_t seed) : dims_(std::move(dims)) {
        layout();
        std::mt19937_64 rng(seed);
        for (int l = 0; l < layers(); ++l) {
            const double bound = std::sqrt(6.0 / dims_[l]);
            std::uniform_real_distribution<double> u(-bound, bound);
            auto w = weight(l);
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = u(rng);
            bias(l).setZero();
        }
    }

    Mlp(std::vector<int> dims, Vector params) : dims_(std::move(dims)) {
        layout();
        require(params.size() == params_.size(), "parameter count does not match layer dims");
        params_ = std::move(params);
    }

    const std::vector<int>& dims() const { return dims_; }
    int layers() const { return static_cast<int>(dims_.size()) - 1; }
    int input_dim() const { return dims_.front(); }
    int output_dim() const { return dims_.back(); }
    Eigen::Index parameter_count() const { return params_.size(); }

    Vector& params() { return params_; }
    const Vector& params() const { return params_; }

    RowMajorMap weight(int l) { return {params_.data() + offsets_[l], dims_[l + 1], dims_[l]}; }
    ConstRowMajorMap weight(int l) const { return {params_.data() + offsets_[l], dims_[l + 1], dims_[l]}; }
    Eigen::Map<Vector> bias(int l) {
        return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(dims_[l + 1]) * dims_[l], dims_[l + 1]};
    }
    Eigen::Map<const Vector> bias(int l) const {
        return {params_.data() + offsets_[l] + static_cast<Eigen::Index>(dims_[l + 1]) * dims_[l], dims_[l + 1]};
    }
    /// Flat offset of layer l's weight block.
    Eigen::Index offset(int l) const { return offsets_[l]; }

    /// Activations of every layer, kept for the backward pass.
    struct Tape {
        std::vector<Matrix> activations;  ///< [0] is the input, back() the linear output
    };

    Matrix forward(const Matrix& x) const {
        Tape t;
        return forward(x, t);
    }

    /// Columns of x are samples. Hidden layers use ReLU; the last is linear.
    Matrix forward(const Matrix& x, Tape& tape) const {
        require(x.rows() == input_dim(), "input dimension mismatch");
        tape.activations.assign(1, x);
        for (int l = 0; l < layers(); ++l) {
            Matrix z = weight(l) * tape.activations.back();
            z.colwise() += bias(l);
            if (l + 1 < layers()) z = z.cwiseMax(0.0);
            tape.activations.push_back(std::move(z));
        }
        return tape.activations.back();
    }

    /// Gradient of a scalar loss with respect to all parameters, given
    /// d loss / d output for the batch recorded in `tape`.
    Vector backward(const Tape& tape, const Matrix& d_out) const {
        Vector grad = Vector::Zero(params_.size());
        Matrix delta = d_out;
        for (int l = layers() - 1; l >= 0; --l) {
            const Matrix& in = tape.activations[l];
            RowMajorMap gw(grad.data() + offsets_[l], dims_[l + 1], dims_[l]);
            gw.noalias() = delta * in.transpose();
            Eigen::Map<Vector>(grad.data() + offsets_[l] + gw.size(), dims_[l + 1]) = delta.rowwise().sum();
            if (l == 0) break;
            Matrix back = weight(l).transpose() * delta;
            delta = back.cwiseProduct((in.array() > 0.0).cast<double>().matrix());
        }
        return grad;
    }

    bool finite() const { return params_.allFinite(); }

private:
    void layout() {
        require(dims_.size() >= 2, "network needs at least an input and an output");
        for (int d : dims_) require(d >= 1, "layer widths must be positive");
        offsets_.assign(dims_.size() - 1, 0);
        Eigen::Index total = 0;
        for (int l = 0; l + 1 < static_cast<int>(dims_.size()); ++l) {
            offsets_[l] = total;
            total += static_cast<Eigen::Index>(dims_[l + 1]) * (dims_[l] + 1);
        }
        params_ = Vector::Zero(total);
    }

    std::vector<int> dims_;
    std::vector<Eigen::Index> offsets_;
    Vector params_;
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  ///< decoupled, applied as params *= 1 - lr * decay
};

class Adam {
public:
    Adam() = default;
    Adam(Eigen::Index n, AdamConfig cfg = {}) : cfg_(cfg), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

    void step(Vector& params, const Vector& grad) {
        require(grad.size() == m_.size() && params.size() == m_.size(), "optimizer size mismatch");
        ++t_;
        m_ = cfg_.beta1 * m_ + (1 - cfg_.beta1) * grad;
        v_ = cfg_.beta2 * v_ + (1 - cfg_.beta2) * grad.cwiseAbs2();
        const double c1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
        if (cfg_.weight_decay > 0) params *= 1.0 - cfg_.learning_rate * cfg_.weight_decay;
        params.array() -= cfg_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
    }

    const AdamConfig& config() const { return cfg_; }
    AdamConfig& config() { return cfg_; }
    std::int64_t steps() const { return t_; }
    const Vector& first_moment() const { return m_; }
    const Vector& second_moment() const { return v_; }

    void restore(std::int64_t t, Vector m, Vector v) {
        require(m.size() == v.size(), "moment size mismatch");
        t_ = t;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    AdamConfig cfg_;
    Vector m_;
    Vector v_;
    std::int64_t t_ = 0;
};

/// Network plus its input/output normalization and optimizer state.
struct Model {
    Mlp net;
    Standardizer input;
    Standardizer output;
    Adam optimizer;

    Matrix predict(const Matrix& raw_inputs) const { return net.forward(input.apply(raw_inputs)); }
};

// ---------------------------------------------------------------------------
// Binary container (little-endian)
//
//   char[4]  magic "BXNN"
//   u32      version (1)
//   char[4]  kind tag ("ESTM", "BBOX", ...)
//   u32      layer count + 1, then i32 widths
//   f64[in]  input mean, f64[in] input scale
//   f64[out] output mean, f64[out] output scale
//   f64[P]   parameters, per layer: weights row-major, then biases
//   u8       optimizer present; if 1: f64 lr, beta1, beta2, eps, i64 step,
//            f64[P] first moments, f64[P] second moments

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline void write_vector(std::ostream& os, const Vector& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline Vector read_vector(std::istream& is, Eigen::Index n) {
    Vector v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw Error(ErrorKind::Format, "unexpected end of model file");
    return v;
}

}  // namespace detail

inline void write_model(std::ostream& os, const Model& m, const std::string& kind, bool with_optimizer = true) {
    require(kind.size() == 4, "model kind tag must have 4 characters");
    io::write_magic(os, "BXNN");
    io::write_pod(os, kModelFormatVersion);
    os.write(kind.data(), 4);
    const auto& dims = m.net.dims();
    io::write_pod(os, static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) io::write_pod<std::int32_t>(os, d);
    detail::write_vector(os, m.input.mean);
    detail::write_vector(os, m.input.scale);
    detail::write_vector(os, m.output.mean);
    detail::write_vector(os, m.output.scale);
    detail::write_vector(os, m.net.params());
    const bool opt = with_optimizer && m.optimizer.first_moment().size() == m.net.parameter_count();
    io::write_pod<std::uint8_t>(os, opt ? 1 : 0);
    if (opt) {
        const AdamConfig& c = m.optimizer.config();
        io::write_pod(os, c.learning_rate);
        io::write_pod(os, c.beta1);
        io::write_pod(os, c.beta2);
        io::write_pod(os, c.epsilon);
        io::write_pod<std::int64_t>(os, m.optimizer.steps());
        detail::write_vector(os, m.optimizer.first_moment());
        detail::write_vector(os, m.optimizer.second_moment());
    }
}

inline Model read_model(std::istream& is, const std::string& expected_kind) {
    io::expect_magic(is, "BXNN");
    const auto version = io::read_pod<std::uint32_t>(is);
    if (version != kModelFormatVersion)
        throw Error(ErrorKind::Format, "unsupported model version " + std::to_string(version));
    char kind[4];
    is.read(kind, 4);
    if (!is || std::string(kind, 4) != expected_kind)
        throw Error(ErrorKind::Format, "model kind is not " + expected_kind);
    const auto n = io::read_pod<std::uint32_t>(is);
    if (n < 2 || n > 64) throw Error(ErrorKind::Format, "bad layer count");
    std::vector<int> dims(n);
    for (int& d : dims) {
        d = io::read_pod<std::int32_t>(is);
        if (d < 1 || d > (1 << 20)) throw Error(ErrorKind::Format, "bad layer width");
    }
    Model m;
    m.input.mean = detail::read_vector(is, dims.front());
    m.input.scale = detail::read_vector(is, dims.front());
    m.output.mean = detail::read_vector(is, dims.back());
    m.output.scale = detail::read_vector(is, dims.back());
    Mlp shape(dims, 0);
    m.net = Mlp(dims, detail::read_vector(is, shape.parameter_count()));
    if (!m.net.finite()) throw Error(ErrorKind::Format, "non-finite weights");
    m.optimizer = Adam(m.net.parameter_count());
    if (io::read_pod<std::uint8_t>(is) == 1) {
        AdamConfig c;
        c.learning_rate = io::read_pod<double>(is);
        c.beta1 = io::read_pod<double>(is);
        c.beta2 = io::read_pod<double>(is);
        c.epsilon = io::read_pod<double>(is);
        const auto t = io::read_pod<std::int64_t>(is);
        Vector mm = detail::read_vector(is, m.net.parameter_count());
        Vector vv = detail::read_vector(is, m.net.parameter_count());
        m.optimizer = Adam(m.net.parameter_count(), c);
        m.optimizer.restore(t, std::move(mm), std::move(vv));
    }
    return m;
}

inline void save_model(const std::string& path, const Model& m, const std::string& kind) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
    write_model(os, m, kind);
}

inline Model load_model(const std::string& path, const std::string& kind) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::Io, "cannot open " + path);
    return read_model(is, kind);
}

}  // namespace boxrot::nn
