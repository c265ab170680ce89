#pragma once

// Gateless LSTM return predictor.
//
//   u_t = W x_t + b
//   z_t = a_g * sigmoid(u_t)
//   c_t = c_{t-1} + z_t,        c_{-1} = 0
//   y_t = a_h * tanh(c_t)
//   g_t = v . y_t + v0
//
// Trained on sum_t w_t (g_t - target)^2 with exact backpropagation through
// time and Adam.

#include "rudder/core.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace rudder {

struct LstmConfig {
    std::size_t cells = 8;
    double a_g = 2.0;
    double a_h = 2.0;
    double bias_init = -2.0;   ///< b_z
    double init_scale = 0.1;   ///< truncated normal std (cut at 2 std)
    double learning_rate = 0.01;
    bool zero_head = true;     ///< read-out starts at 0
};

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmParams {
    std::size_t cells = 0;
    std::size_t inputs = 0;
    double a_g = 2.0;
    double a_h = 2.0;
    std::vector<double> W;  ///< cells x inputs, row-major
    std::vector<double> b;  ///< cells
    std::vector<double> v;  ///< cells
    double v0 = 0.0;

    LstmParams() = default;
    LstmParams(std::size_t cells_, std::size_t inputs_, double ag = 2.0, double ah = 2.0)
        : cells(cells_), inputs(inputs_), a_g(ag), a_h(ah), W(cells_ * inputs_, 0.0), b(cells_, 0.0),
          v(cells_, 0.0) {}

    [[nodiscard]] std::size_t size() const noexcept { return W.size() + b.size() + v.size() + 1; }

    /// Flat view order: W, b, v, v0.
    double& flat(std::size_t i) {
        if (i < W.size()) return W[i];
        i -= W.size();
        if (i < b.size()) return b[i];
        i -= b.size();
        if (i < v.size()) return v[i];
        return v0;
    }

    static LstmParams init(std::size_t inputs, const LstmConfig& cfg, Rng& rng) {
        LstmParams p(cfg.cells, inputs, cfg.a_g, cfg.a_h);
        std::normal_distribution<double> n(0.0, 1.0);
        auto trunc = [&] {
            double x;
            do {
                x = n(rng);
            } while (std::abs(x) > 2.0);
            return x * cfg.init_scale;
        };
        for (auto& w : p.W) w = trunc();
        for (auto& x : p.b) x = cfg.bias_init;
        if (!cfg.zero_head) {
            for (auto& x : p.v) x = trunc();
        }
        return p;
    }
};

struct LstmGrad {
    std::vector<double> W, b, v;
    double v0 = 0.0;

    explicit LstmGrad(const LstmParams& p) : W(p.W.size(), 0.0), b(p.b.size(), 0.0), v(p.v.size(), 0.0) {}

    double flat(std::size_t i) const {
        if (i < W.size()) return W[i];
        i -= W.size();
        if (i < b.size()) return b[i];
        i -= b.size();
        if (i < v.size()) return v[i];
        return v0;
    }
};

/// Forward activations kept for backprop.
struct LstmState {
    std::size_t steps = 0;
    std::vector<double> z;  ///< steps x cells, sigmoid(u) before the a_g gain
    std::vector<double> c;  ///< steps x cells
    std::vector<double> y;  ///< steps x cells
    std::vector<double> g;  ///< steps
};

/// `x` is steps x inputs, row-major.
inline LstmState lstm_forward(const LstmParams& p, std::span<const double> x) {
    if (p.inputs == 0 || x.size() % p.inputs != 0) {
        throw ConfigError("input sequence does not match the LSTM input size");
    }
    const std::size_t T = x.size() / p.inputs;
    const std::size_t H = p.cells;
    LstmState st;
    st.steps = T;
    st.z.resize(T * H);
    st.c.resize(T * H);
    st.y.resize(T * H);
    st.g.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        const double* xt = x.data() + t * p.inputs;
        double g = p.v0;
        for (std::size_t j = 0; j < H; ++j) {
            double u = p.b[j];
            const double* wj = p.W.data() + j * p.inputs;
            for (std::size_t i = 0; i < p.inputs; ++i) {
                u += wj[i] * xt[i];
            }
            const double s = sigmoid(u);
            const double prev = t == 0 ? 0.0 : st.c[(t - 1) * H + j];
            const double c = prev + p.a_g * s;
            const double y = p.a_h * std::tanh(c);
            st.z[t * H + j] = s;
            st.c[t * H + j] = c;
            st.y[t * H + j] = y;
            g += p.v[j] * y;
        }
        st.g[t] = g;
    }
    return st;
}

inline std::vector<double> lstm_predict(const LstmParams& p, std::span<const double> x) {
    return lstm_forward(p, x).g;
}

/// Backprop of an arbitrary per-step output gradient dL/dg_t. Optionally
/// returns dL/dx (steps x inputs).
inline LstmGrad lstm_backward(const LstmParams& p, std::span<const double> x, const LstmState& st,
                              std::span<const double> dg, std::vector<double>* dx = nullptr) {
    const std::size_t T = st.steps;
    const std::size_t H = p.cells;
    LstmGrad grad(p);
    std::vector<double> dc_next(H, 0.0);
    if (dx) {
        dx->assign(T * p.inputs, 0.0);
    }
    for (std::size_t t = T; t-- > 0;) {
        const double dgt = dg[t];
        grad.v0 += dgt;
        const double* xt = x.data() + t * p.inputs;
        for (std::size_t j = 0; j < H; ++j) {
            const double y = st.y[t * H + j];
            grad.v[j] += dgt * y;
            const double th = y / p.a_h;
            const double dy = dgt * p.v[j];
            const double dc = dy * p.a_h * (1.0 - th * th) + dc_next[j];
            dc_next[j] = dc;
            const double s = st.z[t * H + j];
            const double du = dc * p.a_g * s * (1.0 - s);
            grad.b[j] += du;
            double* gw = grad.W.data() + j * p.inputs;
            for (std::size_t i = 0; i < p.inputs; ++i) {
                gw[i] += du * xt[i];
            }
            if (dx) {
                const double* wj = p.W.data() + j * p.inputs;
                double* dxt = dx->data() + t * p.inputs;
                for (std::size_t i = 0; i < p.inputs; ++i) {
                    dxt[i] += du * wj[i];
                }
            }
        }
    }
    return grad;
}

/// Ramp weights w_t = (t+1)/T (the final step has weight 1).
inline std::vector<double> ramp_weights(std::size_t steps) {
    std::vector<double> w(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        w[t] = static_cast<double>(t + 1) / static_cast<double>(steps);
    }
    return w;
}

inline double weighted_loss(std::span<const double> g, std::span<const double> target, std::span<const double> w) {
    double loss = 0.0;
    for (std::size_t t = 0; t < g.size(); ++t) {
        const double d = g[t] - target[t];
        loss += w[t] * d * d;
    }
    return loss;
}

/// Gradient of sum_t w_t (g_t - target_t)^2.
inline LstmGrad lstm_bptt_gradient(const LstmParams& p, std::span<const double> x, std::span<const double> target,
                                   std::span<const double> weights, double* loss = nullptr) {
    const LstmState st = lstm_forward(p, x);
    if (target.size() != st.steps || weights.size() != st.steps) {
        throw ConfigError("targets and weights must have one entry per step");
    }
    std::vector<double> dg(st.steps);
    for (std::size_t t = 0; t < st.steps; ++t) {
        dg[t] = 2.0 * weights[t] * (st.g[t] - target[t]);
    }
    if (loss) {
        *loss = weighted_loss(st.g, target, weights);
    }
    return lstm_backward(p, x, st, dg);
}

/// Largest relative deviation between BPTT and central differences.
struct GradCheck {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
};

inline GradCheck gradient_check(const LstmParams& p, std::span<const double> x, std::span<const double> target,
                                std::span<const double> weights, double step = 1e-5) {
    const LstmGrad an = lstm_bptt_gradient(p, x, target, weights);
    LstmParams q = p;
    GradCheck out;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = q.flat(i);
        q.flat(i) = orig + step;
        const double up = weighted_loss(lstm_predict(q, x), target, weights);
        q.flat(i) = orig - step;
        const double down = weighted_loss(lstm_predict(q, x), target, weights);
        q.flat(i) = orig;
        const double num = (up - down) / (2.0 * step);
        const double a = an.flat(i);
        const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-7});
        if (rel > out.max_relative_error) {
            out.max_relative_error = rel;
            out.worst_index = i;
        }
    }
    return out;
}

/// Gradient check on `instances` random networks and sequences.
inline double random_gradient_check(std::size_t instances, std::size_t steps, Rng& rng, std::size_t inputs = 5,
                                    std::size_t cells = 4) {
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    for (std::size_t k = 0; k < instances; ++k) {
        LstmConfig cfg;
        cfg.cells = cells;
        cfg.init_scale = 0.5;
        cfg.zero_head = false;
        LstmParams p = LstmParams::init(inputs, cfg, rng);
        for (auto& b : p.b) b += 0.5 * n(rng);
        p.v0 = 0.3 * n(rng);
        std::vector<double> x(steps * inputs);
        for (auto& v : x) v = n(rng);
        std::vector<double> target(steps, n(rng));
        worst = std::max(worst, gradient_check(p, x, target, ramp_weights(steps)).max_relative_error);
    }
    return worst;
}

struct AdamState {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    AdamState() = default;
    AdamState(std::size_t n, double lr) : learning_rate(lr), m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(LstmParams& p, AdamState& s, const LstmGrad& g) {
    const std::size_t n = p.size();
    if (s.m.size() != n) {
        throw ConfigError("Adam state does not match the parameter count");
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < n; ++i) {
        const double gi = g.flat(i);
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * gi;
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * gi * gi;
        const double mh = s.m[i] / c1;
        const double vh = s.v[i] / c2;
        p.flat(i) -= s.learning_rate * mh / (std::sqrt(vh) + s.epsilon);
    }
}

/// Named-tensor CSV checkpoint: `# shapes W=HxI b=H v=H v0=1`, then
/// `name,index,value` rows.
inline void write_checkpoint(std::ostream& os, const LstmParams& p) {
    const auto old = os.precision(std::numeric_limits<double>::max_digits10);
    os << "# shapes W=" << p.cells << 'x' << p.inputs << " b=" << p.cells << " v=" << p.cells << " v0=1"
       << " a_g=" << p.a_g << " a_h=" << p.a_h << '\n';
    os << "name,index,value\n";
    for (std::size_t i = 0; i < p.W.size(); ++i) os << "W," << i << ',' << p.W[i] << '\n';
    for (std::size_t i = 0; i < p.b.size(); ++i) os << "b," << i << ',' << p.b[i] << '\n';
    for (std::size_t i = 0; i < p.v.size(); ++i) os << "v," << i << ',' << p.v[i] << '\n';
    os << "v0,0," << p.v0 << '\n';
    os.precision(old);
}

inline LstmParams read_checkpoint(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("# shapes W=", 0) != 0) {
        throw ConfigError("checkpoint is missing its shapes header");
    }
    std::size_t cells = 0;
    std::size_t inputs = 0;
    double ag = 2.0;
    double ah = 2.0;
    {
        std::istringstream hs(line.substr(11));
        char x;
        hs >> cells >> x >> inputs;
        std::string tok;
        while (hs >> tok) {
            if (tok.rfind("a_g=", 0) == 0) ag = std::stod(tok.substr(4));
            if (tok.rfind("a_h=", 0) == 0) ah = std::stod(tok.substr(4));
        }
    }
    LstmParams p(cells, inputs, ag, ah);
    std::getline(is, line);  // column header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name, idx, val;
        std::getline(ls, name, ',');
        std::getline(ls, idx, ',');
        std::getline(ls, val, ',');
        const std::size_t i = std::stoul(idx);
        const double v = std::stod(val);
        std::vector<double>* dst = name == "W" ? &p.W : name == "b" ? &p.b : name == "v" ? &p.v : nullptr;
        if (dst) {
            if (i >= dst->size()) throw ConfigError("checkpoint index out of range");
            (*dst)[i] = v;
        } else if (name == "v0") {
            p.v0 = v;
        } else {
            throw ConfigError("unknown tensor in checkpoint: " + name);
        }
    }
    return p;
}

/// Predictor of the sequence-wide return at every step, owning its Adam state.
class ReturnPredictor {
public:
    ReturnPredictor(std::size_t inputs, const LstmConfig& cfg, Rng& rng)
        : cfg_(cfg), params_(LstmParams::init(inputs, cfg, rng)), adam_(params_.size(), cfg.learning_rate) {}

    [[nodiscard]] const LstmParams& params() const noexcept { return params_; }
    [[nodiscard]] LstmParams& params() noexcept { return params_; }
    [[nodiscard]] std::size_t updates() const noexcept { return adam_.step; }
    [[nodiscard]] bool trained() const noexcept { return adam_.step > 0; }

    [[nodiscard]] std::vector<double> predict(std::span<const double> x) const { return lstm_predict(params_, x); }

    /// One Adam step towards `target` at every step; returns the pre-update
    /// weighted loss and fills `predictions` with the pre-update outputs.
    double train(std::span<const double> x, double target, std::vector<double>* predictions = nullptr) {
        const LstmState st = lstm_forward(params_, x);
        const std::size_t T = st.steps;
        if (weights_.size() != T) {
            weights_ = ramp_weights(T);
        }
        std::vector<double> dg(T);
        double loss = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double d = st.g[t] - target;
            loss += weights_[t] * d * d;
            dg[t] = 2.0 * weights_[t] * d;
        }
        if (predictions) {
            *predictions = st.g;
        }
        adam_step(params_, adam_, lstm_backward(params_, x, st, dg));
        return loss;
    }

private:
    LstmConfig cfg_;
    LstmParams params_;
    AdamState adam_;
    std::vector<double> weights_;
};

/// Delta-feature sequence of an episode: step t encodes (s_{t-1},a_{t-1},s_t,a_t).
template <DeltaEncodedEnvironment Env>
std::vector<double> encode_episode(const Env& env, const EpisodeTrace& trace) {
    const std::size_t d = env.delta_dim();
    std::vector<double> x(trace.size() * d, 0.0);
    for (std::size_t t = 0; t < trace.size(); ++t) {
        std::span<double> row(x.data() + t * d, d);
        if (t == 0) {
            env.encode_delta(true, trace.states[0], 0, trace.states[0], trace.actions[0], row);
        } else {
            env.encode_delta(false, trace.states[t - 1], trace.actions[t - 1], trace.states[t], trace.actions[t], row);
        }
    }
    return x;
}

}  // namespace rudder
