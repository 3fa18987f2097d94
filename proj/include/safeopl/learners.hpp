#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "safeopl/core.hpp"
#include "safeopl/estimators.hpp"
#include "safeopl/policy.hpp"
#include "safeopl/reward_model.hpp"

namespace safeopl {

struct TrainConfig {
    double eta_psi = 0.1;
    double eta_lambda = 0.01;
    int steps = 10000;
    double entropy_alpha = 0.1;
    int batch_contexts = 1024;
    bool rescale_gradient = true;
    int lambda_update_interval = 1;
    int hidden = 100;
    // Keeps lambda at its initial value (0); used to compare against plain OPG.
    bool freeze_lambda = false;

    // Step size used for the primal-dual learner.
    static TrainConfig safe_defaults() {
        TrainConfig c;
        c.eta_psi = 0.001;
        return c;
    }

    void validate() const {
        if (!(eta_psi > 0.0) || !(eta_lambda > 0.0)) throw std::invalid_argument("learning rates must be > 0");
        if (steps < 0) throw std::invalid_argument("steps must be >= 0");
        if (!(entropy_alpha >= 0.0 && entropy_alpha < 1.0)) throw std::invalid_argument("entropy_alpha must lie in [0, 1)");
        if (batch_contexts < 1 || lambda_update_interval < 1 || hidden < 1) {
            throw std::invalid_argument("batch_contexts, lambda_update_interval and hidden must be >= 1");
        }
    }
};

struct TraceRow {
    int step = 0;
    double lambda = 0.0;
    double lower_bound = std::numeric_limits<double>::quiet_NaN();
    double batch_objective = 0.0;
};

struct LagrangianState {
    double lambda = 0.0;
    std::vector<TraceRow> trace;
};

struct PolicyTrainingResult {
    SoftmaxPolicy policy;
    LagrangianState state;
};

// d/d(scores) of sum_a pi(a|x) qhat(x, a), row-wise.
inline Matrix value_score_grad(const Matrix& probs, const Matrix& qhat) {
    const Vector expected = probs.cwiseProduct(qhat).rowwise().sum();
    return probs.cwiseProduct(qhat.colwise() - expected);
}

// d/d(scores) of -sum_a pi log pi, row-wise: -pi_a (log pi_a + H).
inline Matrix entropy_score_grad(const Matrix& probs) {
    Matrix logp = probs.unaryExpr([](double p) { return p > 0.0 ? std::log(p) : 0.0; });
    const Vector h = -probs.cwiseProduct(logp).rowwise().sum();
    return -probs.cwiseProduct(logp.colwise() + h);
}

// d/d(scores) of r_i log pi(a_i|x_i), row-wise.
inline Matrix regularizer_score_grad(const Matrix& probs, std::span<const int> actions, const Vector& rewards) {
    Matrix d = -probs;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        d(i, actions[static_cast<std::size_t>(i)]) += 1.0;
        d.row(i) *= rewards[i];
    }
    return d;
}

// Averaged over the batch rows: sum_a pi qhat grad log pi. Multiplied by
// 1 / max pi over the batch when cfg.rescale_gradient is set.
inline GradientBuffer value_gradient(const SoftmaxPolicy& policy, const Matrix& contexts, const Matrix& qhat,
                                     const TrainConfig& cfg) {
    if (contexts.rows() == 0) throw std::invalid_argument("empty batch");
    if (qhat.rows() != contexts.rows() || qhat.cols() != policy.n_actions()) {
        throw std::invalid_argument("reward predictions do not match the batch");
    }
    const Matrix probs = policy.probabilities(contexts);
    auto g = policy.score_backprop(contexts, value_score_grad(probs, qhat));
    g *= 1.0 / static_cast<double>(contexts.rows());
    if (cfg.rescale_gradient) g *= 1.0 / probs.maxCoeff();
    return g;
}

template <RewardPredictor M>
GradientBuffer value_gradient(const SoftmaxPolicy& policy, const BanditDataset& data, const M& model,
                              const Matrix& action_features, const TrainConfig& cfg) {
    return value_gradient(policy, data.contexts(), model.predict_matrix(data.contexts(), action_features), cfg);
}

inline GradientBuffer entropy_gradient(const SoftmaxPolicy& policy, const Matrix& contexts) {
    if (contexts.rows() == 0) throw std::invalid_argument("empty context list");
    auto g = policy.score_backprop(contexts, entropy_score_grad(policy.probabilities(contexts)));
    g *= 1.0 / static_cast<double>(contexts.rows());
    return g;
}

// R = mean_i r_i log pi(a_i|x_i) and its gradient.
inline std::pair<double, GradientBuffer> regularizer_value_and_gradient(const SoftmaxPolicy& policy,
                                                                        const BanditDataset& data) {
    if (data.empty()) throw std::invalid_argument("empty dataset");
    const Matrix probs = policy.probabilities(data.contexts());
    const auto& actions = data.actions();
    const Vector& rewards = data.rewards();
    double r = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        if (rewards[i] != 0.0) r += rewards[i] * std::log(probs(i, actions[static_cast<std::size_t>(i)]));
    }
    const double n = static_cast<double>(data.size());
    auto g = policy.score_backprop(data.contexts(), regularizer_score_grad(probs, actions, rewards));
    g *= 1.0 / n;
    return {r / n, std::move(g)};
}

// One ascent direction for (1 - alpha) V + alpha H + lambda R on a batch.
struct ObjectiveStep {
    GradientBuffer gradient;
    double objective = 0.0;
    double max_prob = 0.0;
};

inline ObjectiveStep objective_step(const SoftmaxPolicy& policy, const Matrix& contexts, const Matrix& qhat,
                                    std::span<const int> actions, const Vector& rewards, double alpha,
                                    double lambda, bool rescale) {
    const Matrix probs = policy.probabilities(contexts);
    const double b = static_cast<double>(contexts.rows());
    Matrix d = (1.0 - alpha) * value_score_grad(probs, qhat);
    double value = probs.cwiseProduct(qhat).sum() / b;
    double objective = (1.0 - alpha) * value;
    if (alpha > 0.0) {
        d += alpha * entropy_score_grad(probs);
        objective += alpha * entropy_of_rows(probs);
    }
    if (lambda != 0.0) {
        d += lambda * regularizer_score_grad(probs, actions, rewards);
        double r = 0.0;
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            if (rewards[i] != 0.0) r += rewards[i] * std::log(probs(i, actions[static_cast<std::size_t>(i)]));
        }
        objective += lambda * r / b;
    }
    ObjectiveStep out;
    out.max_prob = probs.maxCoeff();
    out.gradient = policy.score_backprop(contexts, d);
    out.gradient *= 1.0 / b;
    if (rescale) out.gradient *= 1.0 / out.max_prob;
    out.objective = objective;
    return out;
}

// lambda <- max(lambda - eta (bound - C), 0)
inline double lambda_update(double lambda, double eta_lambda, double bound, double threshold) {
    return std::max(lambda - eta_lambda * (bound - threshold), 0.0);
}

namespace detail {

// Draws batches without replacement within a step via a partial shuffle.
class MinibatchSampler {
public:
    MinibatchSampler(std::size_t n, std::size_t batch, RngStream rng)
        : order_(n), batch_(std::min(batch, n)), rng_(rng) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
    }

    std::span<const std::size_t> next() {
        if (batch_ == order_.size()) return order_;
        for (std::size_t j = 0; j < batch_; ++j) {
            std::swap(order_[j], order_[j + rng_.below(order_.size() - j)]);
        }
        return {order_.data(), batch_};
    }

private:
    std::vector<std::size_t> order_;
    std::size_t batch_;
    RngStream rng_;
};

struct SafetyFold {
    const BanditDataset* data;
    SafetySpec safety;
    HcopeConfig hcope;
};

inline PolicyTrainingResult primal_dual_loop(const BanditDataset& train, const std::optional<SafetyFold>& guard,
                                             const Matrix& qhat, const TrainConfig& cfg, RngStream& rng,
                                             const SoftmaxPolicy* warm_start) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("empty dataset");
    auto init_rng = rng.derive("policy_init");
    PolicyTrainingResult out;
    out.policy = warm_start ? *warm_start
                            : SoftmaxPolicy::initialized(train.context_dim(), cfg.hidden,
                                                         static_cast<int>(qhat.cols()), init_rng);
    const auto& actions = train.actions();
    const Vector& rewards = train.rewards();
    const Matrix& contexts = train.contexts();
    MinibatchSampler sampler(train.size(), static_cast<std::size_t>(cfg.batch_contexts), rng.derive("minibatch"));
    const auto hcope_rng = rng.derive("hcope_split");

    Matrix batch_x, batch_q;
    Vector batch_r;
    std::vector<int> batch_a;
    double lambda = 0.0;
    double bound = std::numeric_limits<double>::quiet_NaN();
    for (int step = 1; step <= cfg.steps; ++step) {
        const auto rows = sampler.next();
        const auto b = static_cast<Eigen::Index>(rows.size());
        batch_x.resize(b, contexts.cols());
        batch_q.resize(b, qhat.cols());
        batch_r.resize(b);
        batch_a.resize(rows.size());
        for (Eigen::Index j = 0; j < b; ++j) {
            const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(j)]);
            batch_x.row(j) = contexts.row(i);
            batch_q.row(j) = qhat.row(i);
            batch_r[j] = rewards[i];
            batch_a[static_cast<std::size_t>(j)] = actions[static_cast<std::size_t>(i)];
        }
        auto st = objective_step(out.policy, batch_x, batch_q, batch_a, batch_r, cfg.entropy_alpha, lambda,
                                 cfg.rescale_gradient);
        out.policy.ascend(st.gradient, cfg.eta_psi);

        if (guard && step % cfg.lambda_update_interval == 0) {
            bound = hcope_lower_bound(out.policy, *guard->data, guard->hcope, hcope_rng).bound;
            if (!cfg.freeze_lambda) lambda = lambda_update(lambda, cfg.eta_lambda, bound, guard->safety.threshold);
        }
        out.state.trace.push_back({step, lambda, bound, st.objective});
    }
    out.state.lambda = lambda;
    return out;
}

}  // namespace detail

// Entropy-regularised model-based policy gradient on the whole dataset.
template <RewardPredictor M>
PolicyTrainingResult train_opg(const BanditDataset& data, const M& model, const Matrix& action_features,
                               const TrainConfig& cfg, RngStream& rng) {
    const Matrix qhat = model.predict_matrix(data.contexts(), action_features);
    return detail::primal_dual_loop(data, std::nullopt, qhat, cfg, rng, nullptr);
}

// Primal-dual learner: ascent on (1 - alpha) V + alpha H + lambda R using S1
// only, then lambda <- max(lambda - eta_lambda (lower bound on S2 - C), 0).
template <RewardPredictor M>
PolicyTrainingResult train_safe_opg(const BanditDataset& data_s1, const BanditDataset& data_s2,
                                    const SafetySpec& safety, const HcopeConfig& hcope_cfg, const M& model,
                                    const Matrix& action_features, const TrainConfig& cfg, RngStream& rng,
                                    const SoftmaxPolicy* warm_start = nullptr) {
    safety.validate();
    hcope_cfg.validate();
    if (folds_overlap(data_s1, data_s2)) throw std::invalid_argument("fold leakage");
    if (data_s2.empty()) throw std::invalid_argument("empty dataset");
    const Matrix qhat = model.predict_matrix(data_s1.contexts(), action_features);
    HcopeConfig hc = hcope_cfg;
    hc.delta = safety.delta;
    return detail::primal_dual_loop(data_s1, detail::SafetyFold{&data_s2, safety, hc}, qhat, cfg, rng, warm_start);
}

// Follows pi0 with probability 1 - mix, otherwise a uniform novel action.
inline NaiveSafeExplorationPolicy naive_safe_exploration(const LoggingPolicySpec& spec, const Environment& env,
                                                         double mix = 0.05) {
    if (!(mix >= 0.0 && mix < 1.0)) throw std::invalid_argument("mix must lie in [0, 1)");
    if (env.n_novel() < 1) throw std::invalid_argument("no novel actions");
    return NaiveSafeExplorationPolicy(env, spec, mix);
}

}  // namespace safeopl
