#pragma once

#include <cmath>
#include <concepts>
#include <stdexcept>
#include <vector>

#include "safeopl/core.hpp"
#include "safeopl/environment.hpp"
#include "safeopl/mlp.hpp"

namespace safeopl {

// Anything that yields pi(a|x) for a batch of contexts (rows).
template <class P>
concept StochasticPolicy = requires(const P& p, const Matrix& contexts) {
    { p.probabilities(contexts) } -> std::convertible_to<Matrix>;
    { p.n_actions() } -> std::convertible_to<int>;
};

// Flat gradient congruent with a policy's parameter vector.
struct GradientBuffer {
    Vector values;

    GradientBuffer() = default;
    explicit GradientBuffer(Vector v) : values(std::move(v)) {}
    static GradientBuffer zeros(Eigen::Index n) { return GradientBuffer(Vector::Zero(n)); }

    Eigen::Index size() const { return values.size(); }
    bool finite() const { return values.allFinite(); }

    GradientBuffer& operator+=(const GradientBuffer& o) {
        values += o.values;
        return *this;
    }
    GradientBuffer& operator*=(double s) {
        values *= s;
        return *this;
    }
    friend GradientBuffer operator+(GradientBuffer a, const GradientBuffer& b) { return a += b; }
    friend GradientBuffer operator*(double s, GradientBuffer g) { return g *= s; }
};

inline Matrix softmax_rows(const Matrix& scores) {
    Matrix p = scores.colwise() - scores.rowwise().maxCoeff();
    p = p.array().exp().matrix();
    p.array().colwise() /= p.rowwise().sum().array();
    return p;
}

// pi_psi(.|x) = softmax(f_psi(x, .)) with f_psi a one-hidden-layer ReLU network.
class SoftmaxPolicy {
public:
    SoftmaxPolicy() = default;
    SoftmaxPolicy(int context_dim, int hidden, int n_actions) : net_({context_dim, hidden, n_actions}) {}

    // Glorot-uniform hidden layer, zero output layer: starts uniform.
    static SoftmaxPolicy initialized(int context_dim, int hidden, int n_actions, RngStream& rng) {
        SoftmaxPolicy p(context_dim, hidden, n_actions);
        p.net_.init_glorot_uniform(rng);
        p.net_.weight(1).setZero();
        p.net_.bias(1).setZero();
        return p;
    }

    int context_dim() const { return net_.input_dim(); }
    int hidden() const { return net_.widths()[1]; }
    int n_actions() const { return net_.output_dim(); }
    Eigen::Index n_params() const { return net_.n_params(); }

    Vector& params() { return net_.params(); }
    const Vector& params() const { return net_.params(); }
    const Mlp& network() const { return net_; }
    Mlp& network() { return net_; }

    Matrix scores(const Matrix& contexts) const { return net_.forward(contexts); }
    Matrix probabilities(const Matrix& contexts) const { return softmax_rows(net_.forward(contexts)); }

    Vector action_distribution(const Vector& x) const {
        if (x.size() != context_dim()) throw std::invalid_argument("context dimension mismatch");
        return probabilities(Matrix(x.transpose())).row(0).transpose();
    }

    int sample_action(const Vector& x, RngStream& rng) const { return sample_from(action_distribution(x), rng); }

    // Backpropagates d(objective)/d(scores) (one row per context) to the
    // parameters. Returns the sum over rows.
    GradientBuffer score_backprop(const Matrix& contexts, const Matrix& d_scores) const {
        Mlp::Tape tape;
        net_.forward(contexts, tape);
        return GradientBuffer(net_.backward(tape, d_scores));
    }

    GradientBuffer log_prob_gradient(const Vector& x, int a) const {
        if (a < 0 || a >= n_actions()) throw std::out_of_range("action id out of range");
        const Matrix ctx = x.transpose();
        Matrix d = -probabilities(ctx);
        d(0, a) += 1.0;
        return score_backprop(ctx, d);
    }

    void ascend(const GradientBuffer& g, double step) {
        if (g.size() != n_params()) throw std::invalid_argument("gradient size mismatch");
        net_.params() += step * g.values;
    }

private:
    Mlp net_;
};

// Mean over rows of -sum_a pi log pi, with 0 log 0 = 0.
inline double entropy_of_rows(const Matrix& probs) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        for (Eigen::Index a = 0; a < probs.cols(); ++a) {
            const double p = probs(i, a);
            if (p > 0.0) total -= p * std::log(p);
        }
    }
    return total / static_cast<double>(probs.rows());
}

template <StochasticPolicy P>
double policy_entropy(const P& policy, const Matrix& contexts) {
    if (contexts.rows() == 0) throw std::invalid_argument("empty context list");
    return entropy_of_rows(policy.probabilities(contexts));
}

// Fixed mixture (1 - mix) * pi0 + mix * Uniform(novel actions).
class NaiveSafeExplorationPolicy {
public:
    NaiveSafeExplorationPolicy(const Environment& env, LoggingPolicySpec spec, double mix)
        : env_(&env), spec_(spec), mix_(mix) {}

    int n_actions() const { return env_->n_actions(); }
    double mix() const { return mix_; }

    Matrix probabilities(const Matrix& contexts) const {
        Matrix p = (1.0 - mix_) * env_->logging_probs(spec_, contexts);
        const double each = mix_ / env_->n_novel();
        for (int a = env_->n_supported(); a < env_->n_actions(); ++a) p.col(a).array() += each;
        return p;
    }

private:
    const Environment* env_;
    LoggingPolicySpec spec_;
    double mix_;
};

}  // namespace safeopl
