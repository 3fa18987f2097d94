#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "safeopl/core.hpp"
#include "safeopl/policy.hpp"
#include "safeopl/reward_model.hpp"

namespace safeopl {

struct SafetySpec {
    double threshold = 0.0;  // C
    double delta = 0.05;

    void validate() const {
        if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
        if (!std::isfinite(threshold)) throw std::invalid_argument("threshold must be finite");
    }
};

struct HcopeConfig {
    std::vector<double> tau_grid{0.5, 1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
    double tuning_fraction = 1.0 / 20.0;
    double delta = 0.05;
    double reward_max = 1.0;

    void validate() const {
        if (tau_grid.empty()) throw std::invalid_argument("tau_grid must be non-empty");
        for (std::size_t i = 0; i < tau_grid.size(); ++i) {
            if (!(tau_grid[i] > 0.0)) throw std::invalid_argument("tau_grid entries must be positive");
            if (i > 0 && !(tau_grid[i] > tau_grid[i - 1])) throw std::invalid_argument("tau_grid must be increasing");
        }
        if (!(tuning_fraction > 0.0 && tuning_fraction < 1.0)) {
            throw std::invalid_argument("tuning_fraction must lie in (0, 1)");
        }
        if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
        if (!(reward_max > 0.0)) throw std::invalid_argument("reward_max must be > 0");
    }
};

inline double on_policy_value(const BanditDataset& data) {
    if (data.empty()) throw std::invalid_argument("empty dataset");
    return data.rewards().mean();
}

// pi(a_i|x_i) for every logged row.
template <StochasticPolicy P>
Vector target_propensities(const P& policy, const BanditDataset& data) {
    const Matrix probs = policy.probabilities(data.contexts());
    const auto& actions = data.actions();
    Vector out(static_cast<Eigen::Index>(data.size()));
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = probs(i, actions[static_cast<std::size_t>(i)]);
    return out;
}

template <StochasticPolicy P>
Vector importance_weights(const P& policy, const BanditDataset& data) {
    const Vector& p0 = data.propensities();
    if ((p0.array() <= 0.0).any()) throw std::invalid_argument("invalid propensity");
    return target_propensities(policy, data).cwiseQuotient(p0);
}

template <StochasticPolicy P>
double ope_ips(const P& policy, const BanditDataset& data) {
    if (data.empty()) throw std::invalid_argument("empty dataset");
    return importance_weights(policy, data).cwiseProduct(data.rewards()).mean();
}

template <StochasticPolicy P>
double ope_clipped_ips(const P& policy, const BanditDataset& data, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
    if (data.empty()) throw std::invalid_argument("empty dataset");
    return importance_weights(policy, data).cwiseMin(tau).cwiseProduct(data.rewards()).mean();
}

template <StochasticPolicy P, RewardPredictor M>
double ope_dm(const P& policy, const BanditDataset& data, const M& model, const Matrix& action_features) {
    if (data.empty()) throw std::invalid_argument("empty dataset");
    const Matrix probs = policy.probabilities(data.contexts());
    const Matrix qhat = model.predict_matrix(data.contexts(), action_features);
    if (qhat.rows() != probs.rows() || qhat.cols() != probs.cols()) throw std::invalid_argument("dimension mismatch");
    return probs.cwiseProduct(qhat).rowwise().sum().mean();
}

template <StochasticPolicy P, RewardPredictor M>
double ope_dr(const P& policy, const BanditDataset& data, const M& model, const Matrix& action_features) {
    if (data.empty()) throw std::invalid_argument("empty dataset");
    const Vector& p0 = data.propensities();
    if ((p0.array() <= 0.0).any()) throw std::invalid_argument("invalid propensity");
    const Matrix probs = policy.probabilities(data.contexts());
    const Matrix qhat = model.predict_matrix(data.contexts(), action_features);
    if (qhat.rows() != probs.rows() || qhat.cols() != probs.cols()) throw std::invalid_argument("dimension mismatch");
    const auto& actions = data.actions();
    const Vector& rewards = data.rewards();
    double total = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const int a = actions[static_cast<std::size_t>(i)];
        const double baseline = probs.row(i).dot(qhat.row(i));
        const double w = probs(i, a) / p0[i];
        total += baseline + w * (rewards[i] - qhat(i, a));
    }
    return total / static_cast<double>(probs.rows());
}

namespace detail {

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;  // unbiased, n - 1 denominator
};

inline MeanVar mean_var(std::span<const double> z) {
    const auto n = static_cast<double>(z.size());
    double mean = 0.0;
    for (double v : z) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : z) ss += (v - mean) * (v - mean);
    return {mean, z.size() > 1 ? ss / (n - 1.0) : 0.0};
}

// mean - sqrt(2 log(2/delta) var / (n-1)) - 7 zmax log(2/delta) / (3 (n-1))
inline double bernstein_expression(double mean, double var, double z_max, double delta, double n) {
    const double log_term = std::log(2.0 / delta);
    return mean - std::sqrt(2.0 * log_term * var / (n - 1.0)) - 7.0 * z_max * log_term / (3.0 * (n - 1.0));
}

}  // namespace detail

inline double empirical_bernstein_lower_bound(std::span<const double> z, double z_max, double delta) {
    if (z.size() < 2) throw std::invalid_argument("insufficient samples");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
    for (double v : z) {
        if (!(v >= 0.0 && v <= z_max)) throw std::invalid_argument("sample outside [0, z_max]");
    }
    const auto mv = detail::mean_var(z);
    return detail::bernstein_expression(mv.mean, mv.var, z_max, delta, static_cast<double>(z.size()));
}

struct HcopeResult {
    double bound = 0.0;
    double tau = 0.0;
    // Clipped-IPS estimate on the evaluation fold at the selected tau.
    double point_estimate = 0.0;
    std::size_t n_tuning = 0;
    std::size_t n_evaluation = 0;
};

// Lower bound from precomputed importance weights and rewards. A shuffled
// tuning fold (tuning_fraction of the rows, at least 2) picks tau from the
// grid by maximising the bound expression with the evaluation-fold size in
// the penalty terms; the bound is then computed on the remaining rows.
inline HcopeResult hcope_from_weights(const Vector& weights, const Vector& rewards, const HcopeConfig& cfg,
                                      RngStream rng) {
    cfg.validate();
    const std::size_t n = static_cast<std::size_t>(weights.size());
    if (n == 0) throw std::invalid_argument("empty dataset");
    const auto n_tune = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::floor(cfg.tuning_fraction * static_cast<double>(n))));
    if (n < n_tune + 2) throw std::invalid_argument("insufficient samples");
    const std::size_t n_eval = n - n_tune;
    const auto perm = shuffled_indices(n, rng);

    std::vector<double> z(n);
    auto fill = [&](double tau, std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) {
            const auto i = static_cast<Eigen::Index>(perm[j]);
            z[j] = std::min(weights[i], tau) * rewards[i];
        }
    };

    double best_tau = cfg.tau_grid.front();
    double best = -std::numeric_limits<double>::infinity();
    for (double tau : cfg.tau_grid) {
        fill(tau, 0, n_tune);
        const auto mv = detail::mean_var(std::span<const double>(z.data(), n_tune));
        const double value =
            detail::bernstein_expression(mv.mean, mv.var, tau * cfg.reward_max, cfg.delta, static_cast<double>(n_eval));
        if (value > best) {
            best = value;
            best_tau = tau;
        }
    }

    fill(best_tau, n_tune, n);
    const std::span<const double> eval(z.data() + n_tune, n_eval);
    const auto mv = detail::mean_var(eval);
    HcopeResult out;
    out.tau = best_tau;
    out.point_estimate = mv.mean;
    out.bound = detail::bernstein_expression(mv.mean, mv.var, best_tau * cfg.reward_max, cfg.delta,
                                             static_cast<double>(n_eval));
    out.n_tuning = n_tune;
    out.n_evaluation = n_eval;
    return out;
}

template <StochasticPolicy P>
HcopeResult hcope_lower_bound(const P& policy, const BanditDataset& data, const HcopeConfig& cfg, RngStream rng) {
    if (data.empty()) throw std::invalid_argument("empty dataset");
    return hcope_from_weights(importance_weights(policy, data), data.rewards(), cfg, rng);
}

}  // namespace safeopl
