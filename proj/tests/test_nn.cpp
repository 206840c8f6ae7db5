#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace boxrot;
using namespace boxrot::nn;

TEST(Mlp, ParameterCountMatchesLayout) {
    EXPECT_EQ(Mlp({2, 2, 2}, 0).parameter_count(), 12);
    EXPECT_EQ(Mlp({630, 512, 512, 321}, 0).parameter_count(), 750401);
    EXPECT_EQ(Mlp({9, 256, 256, 5}, 0).parameter_count(), 69637);
}

TEST(Mlp, AnalyticGradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) EXPECT_LE(oracle::toy_gradient_error(seed), 1e-4) << seed;
}

TEST(Mlp, ForwardIsLinearWithoutHiddenLayers) {
    Mlp net({2, 1}, Vector::LinSpaced(3, 1.0, 3.0));
    Matrix x(2, 1);
    x << 0.5, -2.0;
    EXPECT_DOUBLE_EQ(net.forward(x)(0, 0), 1.0 * 0.5 + 2.0 * -2.0 + 3.0);
}

TEST(Mlp, RejectsWrongInputSize) {
    Mlp net({3, 4, 1}, 0);
    EXPECT_THROW(net.forward(Matrix::Zero(2, 1)), Error);
}

TEST(Adam, FitsALinearMap) {
    Mlp net({1, 1}, 4);
    Adam opt(net.parameter_count(), {0.05});
    Matrix x(1, 16), y(1, 16);
    for (int i = 0; i < 16; ++i) {
        x(0, i) = i / 8.0 - 1.0;
        y(0, i) = 3.0 * x(0, i) - 0.5;
    }
    for (int it = 0; it < 2000; ++it) {
        Mlp::Tape t;
        const Matrix out = net.forward(x, t);
        opt.step(net.params(), net.backward(t, (out - y) / 16.0));
    }
    EXPECT_NEAR(net.params()[0], 3.0, 1e-2);
    EXPECT_NEAR(net.params()[1], -0.5, 1e-2);
}

TEST(Standardizer, FitApplyInvert) {
    Matrix s(2, 4);
    s << 1, 2, 3, 4, 5, 5, 5, 5;
    const Standardizer st = Standardizer::fit(s);
    const Matrix z = st.apply(s);
    EXPECT_NEAR(z.row(0).mean(), 0.0, 1e-12);
    EXPECT_NEAR(z.row(0).squaredNorm() / 4, 1.0, 1e-12);
    EXPECT_EQ(st.scale[1], 1.0);
    EXPECT_LT((st.invert(z) - s).norm(), 1e-12);
}

TEST(ModelIo, RoundTripWithOptimizer) {
    Model m{Mlp({3, 5, 2}, 9), Standardizer::identity(3), Standardizer::identity(2), Adam(0)};
    m.optimizer = Adam(m.net.parameter_count());
    m.optimizer.step(m.net.params(), Vector::Ones(m.net.parameter_count()));
    m.input.mean << 1, 2, 3;
    std::stringstream ss;
    write_model(ss, m, "TEST");
    const Model back = read_model(ss, "TEST");
    EXPECT_EQ(back.net.dims(), m.net.dims());
    EXPECT_EQ(back.net.params(), m.net.params());
    EXPECT_EQ(back.input.mean, m.input.mean);
    EXPECT_EQ(back.optimizer.steps(), 1);
    EXPECT_EQ(back.optimizer.second_moment(), m.optimizer.second_moment());
}

TEST(ModelIo, WrongKindAndTruncationRejected) {
    Model m{Mlp({2, 2}, 1), Standardizer::identity(2), Standardizer::identity(2), Adam(0)};
    std::stringstream a;
    write_model(a, m, "AAAA");
    EXPECT_THROW(read_model(a, "BBBB"), Error);
    std::stringstream b;
    write_model(b, m, "AAAA");
    std::string bytes = b.str();
    bytes.resize(bytes.size() - 9);
    std::stringstream c(bytes);
    EXPECT_THROW(read_model(c, "AAAA"), Error);
}
