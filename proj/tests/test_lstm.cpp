#include "rudder/lstm.hpp"
#include "rudder/shaping.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace rudder;

namespace {

// Straight transcription of the cell equations, no shared code with the library.
std::vector<double> reference_forward(const LstmParams& p, const std::vector<double>& x) {
    const std::size_t T = x.size() / p.inputs;
    std::vector<double> c(p.cells, 0.0);
    std::vector<double> g(T);
    for (std::size_t t = 0; t < T; ++t) {
        double out = p.v0;
        for (std::size_t j = 0; j < p.cells; ++j) {
            double u = p.b[j];
            for (std::size_t i = 0; i < p.inputs; ++i) u += p.W[j * p.inputs + i] * x[t * p.inputs + i];
            c[j] += p.a_g / (1.0 + std::exp(-u));
            out += p.v[j] * p.a_h * std::tanh(c[j]);
        }
        g[t] = out;
    }
    return g;
}

LstmParams random_params(std::size_t inputs, std::size_t cells, Rng& rng) {
    LstmConfig cfg;
    cfg.cells = cells;
    cfg.init_scale = 0.5;
    cfg.zero_head = false;
    LstmParams p = LstmParams::init(inputs, cfg, rng);
    p.v0 = 0.25;
    return p;
}

std::vector<double> random_input(std::size_t n, Rng& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> x(n);
    for (double& v : x) v = d(rng);
    return x;
}

}  // namespace

TEST(Lstm, ForwardMatchesTheCellEquations) {
    Rng rng(1);
    for (int k = 0; k < 10; ++k) {
        const LstmParams p = random_params(3, 5, rng);
        const auto x = random_input(7 * 3, rng);
        const auto got = lstm_predict(p, x);
        const auto want = reference_forward(p, x);
        ASSERT_EQ(got.size(), 7u);
        for (std::size_t t = 0; t < 7; ++t) EXPECT_NEAR(got[t], want[t], 1e-13);
    }
}

TEST(Lstm, CellStateNeverDecreases) {
    Rng rng(2);
    const LstmParams p = random_params(4, 6, rng);
    const LstmState st = lstm_forward(p, random_input(20 * 4, rng));
    for (std::size_t t = 1; t < 20; ++t)
        for (std::size_t j = 0; j < 6; ++j) EXPECT_GE(st.c[t * 6 + j], st.c[(t - 1) * 6 + j]);
}

TEST(Lstm, InitialisationShape) {
    Rng rng(3);
    LstmConfig cfg;
    const LstmParams p = LstmParams::init(9, cfg, rng);
    EXPECT_EQ(p.size(), 8u * 9 + 8 + 8 + 1);
    for (double w : p.W) EXPECT_LE(std::abs(w), 0.2 + 1e-15);
    for (double b : p.b) EXPECT_EQ(b, -2.0);
    for (double v : p.v) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, RampWeights) {
    EXPECT_EQ(ramp_weights(4), (std::vector<double>{0.25, 0.5, 0.75, 1.0}));
}

TEST(Lstm, GradientCheckOnTwentyFiveStepInstances) {
    Rng rng(4);
    EXPECT_LT(random_gradient_check(20, 5, rng), 1e-4);
}

TEST(Lstm, GradientAgreesWithDifferencesOfTheReferenceForward) {
    Rng rng(5);
    LstmParams p = random_params(2, 3, rng);
    const auto x = random_input(6 * 2, rng);
    const std::vector<double> target(6, 0.7);
    const auto w = ramp_weights(6);
    const LstmGrad an = lstm_bptt_gradient(p, x, target, w);
    auto loss = [&](const LstmParams& q) {
        const auto g = reference_forward(q, x);
        double l = 0.0;
        for (std::size_t t = 0; t < 6; ++t) l += w[t] * (g[t] - target[t]) * (g[t] - target[t]);
        return l;
    };
    for (std::size_t i = 0; i < p.size(); ++i) {
        LstmParams up = p;
        LstmParams dn = p;
        up.flat(i) += 1e-6;
        dn.flat(i) -= 1e-6;
        const double num = (loss(up) - loss(dn)) / 2e-6;
        EXPECT_NEAR(an.flat(i), num, 1e-6 * std::max(1.0, std::abs(num))) << i;
    }
}

TEST(Lstm, InputGradientMatchesDifferences) {
    Rng rng(6);
    const LstmParams p = random_params(3, 4, rng);
    auto x = random_input(5 * 3, rng);
    const LstmState st = lstm_forward(p, x);
    std::vector<double> dg(5, 0.0);
    dg[4] = 1.0;  // d g_last / dx
    std::vector<double> dx;
    lstm_backward(p, x, st, dg, &dx);
    ASSERT_EQ(dx.size(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + 1e-6;
        const double up = reference_forward(p, x).back();
        x[i] = keep - 1e-6;
        const double dn = reference_forward(p, x).back();
        x[i] = keep;
        EXPECT_NEAR(dx[i], (up - dn) / 2e-6, 1e-7);
    }
}

TEST(Adam, FirstStepMovesByTheLearningRate) {
    LstmParams p(1, 1);
    p.W[0] = 1.0;
    AdamState s(p.size(), 0.01);
    LstmGrad g(p);
    g.W[0] = 3.0;
    g.v0 = -0.5;
    adam_step(p, s, g);
    EXPECT_NEAR(p.W[0], 1.0 - 0.01, 1e-8);
    EXPECT_NEAR(p.v0, 0.01, 1e-8);
    EXPECT_DOUBLE_EQ(p.b[0], 0.0);
    AdamState wrong(3, 0.01);
    EXPECT_THROW(adam_step(p, wrong, g), ConfigError);
}

TEST(Checkpoint, RoundTripIsExact) {
    Rng rng(7);
    const LstmParams p = random_params(4, 3, rng);
    std::stringstream ss;
    write_checkpoint(ss, p);
    const LstmParams q = read_checkpoint(ss);
    EXPECT_EQ(q.W, p.W);
    EXPECT_EQ(q.b, p.b);
    EXPECT_EQ(q.v, p.v);
    EXPECT_EQ(q.v0, p.v0);
    std::stringstream bad("W,0,1\n");
    EXPECT_THROW(read_checkpoint(bad), ConfigError);
}

TEST(ReturnPredictor, LearnsASignCarriedFromTheFirstStep) {
    Rng rng(8);
    LstmConfig cfg;
    cfg.learning_rate = 0.02;
    ReturnPredictor pred(2, cfg, rng);
    EXPECT_FALSE(pred.trained());
    auto episode = [](bool up) {
        std::vector<double> x(6 * 2, 0.0);
        x[up ? 0 : 1] = 1.0;
        return x;
    };
    for (int i = 0; i < 3000; ++i) {
        const bool up = i % 2 == 0;
        pred.train(episode(up), up ? 1.0 : -1.0);
    }
    EXPECT_TRUE(pred.trained());
    EXPECT_NEAR(pred.predict(episode(true)).back(), 1.0, 0.1);
    EXPECT_NEAR(pred.predict(episode(false)).back(), -1.0, 0.1);
}

TEST(ReturnPredictor, UntrainedPredictorCannotSupplyPotentials) {
    Rng rng(9);
    ReturnPredictor pred(3, LstmConfig{}, rng);
    EXPECT_THROW(require_trained(pred), NotReadyError);
    pred.train(std::vector<double>(3, 0.0), 1.0);
    EXPECT_NO_THROW(require_trained(pred));
}
