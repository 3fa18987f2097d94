#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeopl/core.hpp"
#include "safeopl/mlp.hpp"

namespace safeopl {

struct EnvironmentConfig {
    int d_x = 10;
    int d_a = 5;
    int n_actions = 50;
    int n_supported = 40;
    std::uint64_t ground_truth_seed = 12345;
    std::vector<int> hidden_widths{100, 50};
    // q(x, a) = sigmoid(logit_scale * net(x, e_a) + logit_offset)
    double logit_scale = 0.3;
    double logit_offset = -1.2;
    // 0 draws fresh standard-normal contexts; otherwise contexts are drawn
    // uniformly from a fixed pool of this many standard-normal vectors.
    int context_pool_size = 0;

    void validate() const {
        std::vector<std::string> problems;
        if (d_x < 1) problems.emplace_back("d_x must be >= 1");
        if (d_a < 1) problems.emplace_back("d_a must be >= 1");
        if (n_supported < 1) problems.emplace_back("n_supported must be >= 1");
        if (n_supported >= n_actions) problems.emplace_back("n_supported must be < n_actions (need a novel action)");
        if (hidden_widths.size() != 2 || hidden_widths[0] < 1 || hidden_widths[1] < 1) {
            problems.emplace_back("hidden_widths must be two positive integers");
        }
        if (!(logit_scale > 0.0) || !std::isfinite(logit_offset)) problems.emplace_back("logit_scale must be > 0");
        if (context_pool_size < 0) problems.emplace_back("context_pool_size must be >= 0");
        if (!problems.empty()) {
            std::ostringstream msg;
            msg << "invalid environment config:";
            for (const auto& p : problems) msg << ' ' << p << ';';
            throw std::invalid_argument(msg.str());
        }
    }
};

struct LoggingPolicySpec {
    double beta = 0.0;
};

inline constexpr double kLogitClamp = 1e-9;

inline double clamped_logit(double q) {
    const double z = std::clamp(q, kLogitClamp, 1.0 - kLogitClamp);
    return std::log(z / (1.0 - z));
}

// Row-wise softmax with max subtraction; entries where `mask` is false get 0.
inline Matrix masked_softmax_rows(const Matrix& scores, const std::vector<bool>& mask) {
    Matrix out = Matrix::Zero(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index a = 0; a < scores.cols(); ++a) {
            if (mask[static_cast<std::size_t>(a)]) mx = std::max(mx, scores(i, a));
        }
        double total = 0.0;
        for (Eigen::Index a = 0; a < scores.cols(); ++a) {
            if (!mask[static_cast<std::size_t>(a)]) continue;
            const double e = std::exp(scores(i, a) - mx);
            out(i, a) = e;
            total += e;
        }
        out.row(i) /= total;
    }
    return out;
}

// Synthetic contextual bandit: a fixed random network maps (x, e_a) to a mean
// binary reward. Actions 0..n_supported-1 form the supported set A0; the rest
// are novel. Immutable after construction.
class Environment {
public:
    using RewardOverride = std::function<double(const Vector& context, int action)>;

    explicit Environment(const EnvironmentConfig& config) : config_(config) {
        config_.validate();
        RngStream root(config_.ground_truth_seed, fnv1a64("environment"));
        auto feature_rng = root.derive("action_features");
        std::normal_distribution<double> normal(0.0, 1.0);
        action_features_.resize(config_.n_actions, config_.d_a);
        for (Eigen::Index a = 0; a < action_features_.rows(); ++a) {
            for (Eigen::Index j = 0; j < action_features_.cols(); ++j) action_features_(a, j) = normal(feature_rng);
        }
        network_ = Mlp({config_.d_x + config_.d_a, config_.hidden_widths[0], config_.hidden_widths[1], 1});
        auto net_rng = root.derive("network");
        network_.init_fan_in_normal(net_rng);
        if (config_.context_pool_size > 0) {
            auto pool_rng = root.derive("context_pool");
            context_pool_.resize(config_.context_pool_size, config_.d_x);
            for (Eigen::Index i = 0; i < context_pool_.size(); ++i) context_pool_.data()[i] = normal(pool_rng);
        }
        supported_mask_.assign(static_cast<std::size_t>(config_.n_actions), false);
        for (int a = 0; a < config_.n_supported; ++a) supported_mask_[static_cast<std::size_t>(a)] = true;
    }

    // Restores an environment from persisted weights.
    Environment(const EnvironmentConfig& config, Matrix action_features, Vector network_params)
        : Environment(config) {
        if (action_features.rows() != action_features_.rows() || action_features.cols() != action_features_.cols() ||
            network_params.size() != network_.n_params()) {
            throw std::invalid_argument("persisted environment does not match its header");
        }
        action_features_ = std::move(action_features);
        network_.params() = std::move(network_params);
    }

    // Copy whose mean reward is given by `q` instead of the network.
    [[nodiscard]] Environment with_reward_override(RewardOverride q) const {
        Environment e = *this;
        e.override_ = std::make_shared<RewardOverride>(std::move(q));
        return e;
    }

    const EnvironmentConfig& config() const { return config_; }
    int n_actions() const { return config_.n_actions; }
    int n_supported() const { return config_.n_supported; }
    int n_novel() const { return config_.n_actions - config_.n_supported; }
    int context_dim() const { return config_.d_x; }
    bool is_supported(int a) const { return a >= 0 && a < config_.n_supported; }
    const std::vector<bool>& supported_mask() const { return supported_mask_; }
    const Matrix& action_features() const { return action_features_; }
    const Mlp& network() const { return network_; }

    double true_reward_mean(const Vector& x, int a) const {
        check_action(a);
        if (x.size() != config_.d_x) throw std::invalid_argument("context dimension mismatch");
        if (override_) return (*override_)(x, a);
        Matrix input(1, config_.d_x + config_.d_a);
        input << x.transpose(), action_features_.row(a);
        return sigmoid(config_.logit_scale * network_.forward(input)(0, 0) + config_.logit_offset);
    }

    // Entry (i, a) = q(X_i, e_a).
    Matrix reward_matrix(const Matrix& contexts) const {
        if (contexts.cols() != config_.d_x) throw std::invalid_argument("context dimension mismatch");
        if (override_) {
            Matrix q(contexts.rows(), config_.n_actions);
            for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
                const Vector x = contexts.row(i).transpose();
                for (int a = 0; a < config_.n_actions; ++a) q(i, a) = (*override_)(x, a);
            }
            return q;
        }
        Matrix z = network_.forward_pairs(contexts, action_features_);
        return z.unaryExpr([this](double v) { return sigmoid(config_.logit_scale * v + config_.logit_offset); });
    }

    int sample_reward(const Vector& x, int a, RngStream& rng) const {
        return rng.uniform() < true_reward_mean(x, a) ? 1 : 0;
    }

    Matrix sample_contexts(std::size_t n, RngStream& rng) const {
        Matrix x(static_cast<Eigen::Index>(n), config_.d_x);
        if (config_.context_pool_size > 0) {
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                x.row(i) = context_pool_.row(static_cast<Eigen::Index>(rng.below(context_pool_.rows())));
            }
            return x;
        }
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = normal(rng);
        }
        return x;
    }

    // pi0(a|x) proportional to exp(beta * logit(q(x, a))) on A0, zero elsewhere.
    Matrix logging_probs_from_rewards(const LoggingPolicySpec& spec, const Matrix& q) const {
        Matrix scores = q.unaryExpr([&](double v) { return spec.beta * clamped_logit(v); });
        return masked_softmax_rows(scores, supported_mask_);
    }

    Matrix logging_probs(const LoggingPolicySpec& spec, const Matrix& contexts) const {
        return logging_probs_from_rewards(spec, reward_matrix(contexts));
    }

    Vector logging_policy_probs(const LoggingPolicySpec& spec, const Vector& x) const {
        if (x.size() != config_.d_x) throw std::invalid_argument("context dimension mismatch");
        return logging_probs(spec, Matrix(x.transpose())).row(0).transpose();
    }

private:
    void check_action(int a) const {
        if (a < 0 || a >= config_.n_actions) throw std::out_of_range("action id out of range");
    }

    EnvironmentConfig config_;
    Matrix action_features_;
    Mlp network_;
    Matrix context_pool_;
    std::vector<bool> supported_mask_;
    std::shared_ptr<const RewardOverride> override_;
};

// Inverse-CDF draw from a probability row.
inline int sample_from(const Eigen::Ref<const Vector>& probs, RngStream& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    int last_positive = 0;
    for (Eigen::Index a = 0; a < probs.size(); ++a) {
        if (probs[a] <= 0.0) continue;
        cum += probs[a];
        last_positive = static_cast<int>(a);
        if (u < cum) return static_cast<int>(a);
    }
    return last_positive;
}

// Logs n interactions of pi0: x ~ p(x), a ~ pi0(.|x), r ~ Bernoulli(q(x, a)).
inline BanditDataset generate_logged_data(const Environment& env, const LoggingPolicySpec& spec, std::size_t n,
                                          RngStream& rng, const std::string& origin = "pi0") {
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    auto ctx_rng = rng.derive("contexts");
    auto act_rng = rng.derive("actions");
    auto rew_rng = rng.derive("rewards");
    Matrix contexts = env.sample_contexts(n, ctx_rng);
    const Matrix q = env.reward_matrix(contexts);
    const Matrix probs = env.logging_probs_from_rewards(spec, q);
    std::vector<int> actions(n);
    Vector rewards(static_cast<Eigen::Index>(n));
    Vector propensities(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
        const int a = sample_from(probs.row(i).transpose(), act_rng);
        actions[static_cast<std::size_t>(i)] = a;
        propensities[i] = probs(i, a);
        rewards[i] = rew_rng.uniform() < q(i, a) ? 1.0 : 0.0;
    }
    return BanditDataset(std::move(contexts), std::move(actions), std::move(rewards), std::move(propensities), origin);
}

// pi0 as a policy object usable by estimators and evaluation.
class LoggingPolicy {
public:
    LoggingPolicy(const Environment& env, LoggingPolicySpec spec) : env_(&env), spec_(spec) {}
    int n_actions() const { return env_->n_actions(); }
    Matrix probabilities(const Matrix& contexts) const { return env_->logging_probs(spec_, contexts); }
    const LoggingPolicySpec& spec() const { return spec_; }

private:
    const Environment* env_;
    LoggingPolicySpec spec_;
};

}  // namespace safeopl
