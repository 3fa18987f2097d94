#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "safeopl/core.hpp"

namespace safeopl {

// Feed-forward network with ReLU hidden layers and a linear output layer.
// Rows of the input matrix are samples. All weights live in one flat vector
// laid out layer by layer as (W_l row-major by output unit, then b_l), so a
// gradient with respect to the network is a vector of the same shape.
class Mlp {
public:
    // Forward activations kept for backpropagation.
    struct Tape {
        std::vector<Matrix> activations;  // activations[0] = input, last = output
        std::vector<Matrix> preactivations;
    };

    Mlp() = default;
    explicit Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
        if (widths_.size() < 2) throw std::invalid_argument("network needs an input and an output width");
        for (int w : widths_) {
            if (w < 1) throw std::invalid_argument("layer widths must be positive");
        }
        std::size_t offset = 0;
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            weight_offset_.push_back(offset);
            offset += static_cast<std::size_t>(widths_[l]) * static_cast<std::size_t>(widths_[l + 1]);
            bias_offset_.push_back(offset);
            offset += static_cast<std::size_t>(widths_[l + 1]);
        }
        params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
    }

    const std::vector<int>& widths() const { return widths_; }
    int input_dim() const { return widths_.front(); }
    int output_dim() const { return widths_.back(); }
    std::size_t n_layers() const { return widths_.size() - 1; }
    Eigen::Index n_params() const { return params_.size(); }

    Vector& params() { return params_; }
    const Vector& params() const { return params_; }

    // W_l as an (out x in) matrix.
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> weight(std::size_t l) const {
        return {params_.data() + weight_offset_[l], widths_[l + 1], widths_[l]};
    }
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> weight(std::size_t l) {
        return {params_.data() + weight_offset_[l], widths_[l + 1], widths_[l]};
    }
    Eigen::Map<const Vector> bias(std::size_t l) const { return {params_.data() + bias_offset_[l], widths_[l + 1]}; }
    Eigen::Map<Vector> bias(std::size_t l) { return {params_.data() + bias_offset_[l], widths_[l + 1]}; }

    std::size_t weight_offset(std::size_t l) const { return weight_offset_[l]; }
    std::size_t bias_offset(std::size_t l) const { return bias_offset_[l]; }

    // Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    void init_glorot_uniform(RngStream& rng) {
        for (std::size_t l = 0; l < n_layers(); ++l) {
            const double limit = std::sqrt(6.0 / (widths_[l] + widths_[l + 1]));
            auto w = weight(l);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * rng.uniform() - 1.0) * limit;
            bias(l).setZero();
        }
    }

    // Zero-mean normal weights with variance gain / fan_in; biases likewise
    // scaled so hidden units are not all active at the origin.
    void init_fan_in_normal(RngStream& rng, double gain = 2.0) {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t l = 0; l < n_layers(); ++l) {
            const double sd = std::sqrt(gain / widths_[l]);
            auto w = weight(l);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = sd * normal(rng);
            auto b = bias(l);
            for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = sd * normal(rng);
        }
    }

    Matrix forward(const Matrix& input) const {
        check_input(input);
        Matrix a = input;
        for (std::size_t l = 0; l < n_layers(); ++l) {
            Matrix z = a * weight(l).transpose();
            z.rowwise() += bias(l).transpose();
            if (l + 1 < n_layers()) z = z.cwiseMax(0.0);
            a = std::move(z);
        }
        return a;
    }

    Matrix forward(const Matrix& input, Tape& tape) const {
        check_input(input);
        tape.activations.clear();
        tape.preactivations.clear();
        tape.activations.push_back(input);
        for (std::size_t l = 0; l < n_layers(); ++l) {
            Matrix z = tape.activations.back() * weight(l).transpose();
            z.rowwise() += bias(l).transpose();
            tape.preactivations.push_back(z);
            if (l + 1 < n_layers()) z = z.cwiseMax(0.0);
            tape.activations.push_back(std::move(z));
        }
        return tape.activations.back();
    }

    // Gradient of sum_i <d_output_i, output_i> with respect to params.
    Vector backward(const Tape& tape, const Matrix& d_output) const {
        Vector grad = Vector::Zero(params_.size());
        Matrix delta = d_output;
        for (std::size_t l = n_layers(); l-- > 0;) {
            const Matrix& a_prev = tape.activations[l];
            Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
                grad.data() + weight_offset_[l], widths_[l + 1], widths_[l]);
            gw.noalias() = delta.transpose() * a_prev;
            Eigen::Map<Vector>(grad.data() + bias_offset_[l], widths_[l + 1]) = delta.colwise().sum().transpose();
            if (l > 0) {
                Matrix d_prev = delta * weight(l);
                const Matrix& z_prev = tape.preactivations[l - 1];
                delta = d_prev.cwiseProduct((z_prev.array() > 0.0).cast<double>().matrix());
            }
        }
        return grad;
    }

    // Scalar-output network over (context, action feature) pairs: entry (i, a)
    // is the output for input [X_i, E_a]. Splits the first layer so each context
    // and each action feature is projected once.
    Matrix forward_pairs(const Matrix& contexts, const Matrix& action_features) const {
        if (output_dim() != 1) throw std::invalid_argument("pairwise evaluation needs a scalar output");
        const auto dx = contexts.cols();
        const auto de = action_features.cols();
        if (dx + de != input_dim()) throw std::invalid_argument("feature dimension mismatch");
        const auto n = contexts.rows();
        const auto n_actions = action_features.rows();
        const auto w0 = weight(0);
        const Matrix ctx_proj = contexts * w0.leftCols(dx).transpose();
        Matrix act_proj = action_features * w0.rightCols(de).transpose();
        act_proj.rowwise() += bias(0).transpose();

        Matrix out(n, n_actions);
        const auto h0 = widths_[1];
        constexpr Eigen::Index kChunk = 256;
        Matrix block;
        for (Eigen::Index start = 0; start < n; start += kChunk) {
            const auto rows = std::min(kChunk, n - start);
            block.resize(rows * n_actions, h0);
            for (Eigen::Index a = 0; a < n_actions; ++a) {
                block.middleRows(a * rows, rows) = ctx_proj.middleRows(start, rows).rowwise() + act_proj.row(a);
            }
            Matrix act = block.cwiseMax(0.0);
            for (std::size_t l = 1; l < n_layers(); ++l) {
                Matrix z = act * weight(l).transpose();
                z.rowwise() += bias(l).transpose();
                act = (l + 1 < n_layers()) ? Matrix(z.cwiseMax(0.0)) : std::move(z);
            }
            if (n_layers() == 1) act = block;
            for (Eigen::Index a = 0; a < n_actions; ++a) {
                out.block(start, a, rows, 1) = act.middleRows(a * rows, rows);
            }
        }
        return out;
    }

private:
    void check_input(const Matrix& input) const {
        if (input.cols() != input_dim()) throw std::invalid_argument("input dimension mismatch");
    }

    std::vector<int> widths_;
    std::vector<std::size_t> weight_offset_;
    std::vector<std::size_t> bias_offset_;
    Vector params_;
};

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline Matrix sigmoid(const Matrix& z) { return z.unaryExpr([](double v) { return sigmoid(v); }); }

}  // namespace safeopl
