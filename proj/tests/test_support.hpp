#pragma once

#include <cmath>
#include <functional>
#include <utility>

#include "safeopl/safeopl.hpp"

namespace safeopl::testing {

// Policy with context-independent probabilities.
struct FixedPolicy {
    Vector probs;
    int n_actions() const { return static_cast<int>(probs.size()); }
    Matrix probabilities(const Matrix& contexts) const {
        return probs.transpose().replicate(contexts.rows(), 1);
    }
};

// Policy given by an arbitrary function of the context batch.
struct FunctionPolicy {
    int actions = 0;
    std::function<Matrix(const Matrix&)> fn;
    int n_actions() const { return actions; }
    Matrix probabilities(const Matrix& contexts) const { return fn(contexts); }
};

struct ConstantModel {
    double value = 0.5;
    Matrix predict_matrix(const Matrix& contexts, const Matrix& features) const {
        return Matrix::Constant(contexts.rows(), features.rows(), value);
    }
};

// q_hat(x, a) = table[a], independent of x.
struct ActionTableModel {
    Vector table;
    Matrix predict_matrix(const Matrix& contexts, const Matrix& features) const {
        if (features.rows() != table.size()) throw std::invalid_argument("dimension mismatch");
        return table.transpose().replicate(contexts.rows(), 1);
    }
};

// q_hat := exact q of an environment.
struct OracleModel {
    const Environment* env;
    Matrix predict_matrix(const Matrix& contexts, const Matrix&) const { return env->reward_matrix(contexts); }
};

inline EnvironmentConfig small_env_config() {
    EnvironmentConfig c;
    c.d_x = 4;
    c.d_a = 3;
    c.n_actions = 6;
    c.n_supported = 4;
    c.hidden_widths = {16, 8};
    return c;
}

inline Vector one_hot(int n, int k) {
    Vector v = Vector::Zero(n);
    v[k] = 1.0;
    return v;
}

inline Matrix random_normal(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

// Policy with random (non-zero) weights everywhere, so probabilities vary.
inline SoftmaxPolicy random_policy(int dx, int h, int actions, RngStream& rng, double scale = 1.0) {
    SoftmaxPolicy p(dx, h, actions);
    std::normal_distribution<double> normal(0.0, scale);
    for (Eigen::Index i = 0; i < p.params().size(); ++i) p.params()[i] = normal(rng);
    return p;
}

// Central differences of f around params.
inline Vector finite_difference(Vector& params, const std::function<double()>& f, double step = 1e-5) {
    Vector g(params.size());
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const double keep = params[i];
        params[i] = keep + step;
        const double up = f();
        params[i] = keep - step;
        const double down = f();
        params[i] = keep;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

inline double relative_error(const Vector& a, const Vector& b) {
    const double scale = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / scale;
}

// Logged data with rewards from the environment and a uniform logging policy
// over every action, so novel actions are covered too.
inline BanditDataset uniform_all_actions_data(const Environment& env, std::size_t n, RngStream& rng) {
    auto ctx_rng = rng.derive("contexts");
    auto act_rng = rng.derive("actions");
    auto rew_rng = rng.derive("rewards");
    Matrix x = env.sample_contexts(n, ctx_rng);
    const Matrix q = env.reward_matrix(x);
    std::vector<int> actions(n);
    Vector r(static_cast<Eigen::Index>(n));
    Vector p = Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / env.n_actions());
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        actions[i] = static_cast<int>(act_rng.below(static_cast<std::uint64_t>(env.n_actions())));
        r[row] = rew_rng.uniform() < q(row, actions[i]) ? 1.0 : 0.0;
    }
    return BanditDataset(std::move(x), std::move(actions), std::move(r), std::move(p), "uniform_all");
}

}  // namespace safeopl::testing
