#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgfuse/types.hpp"

namespace ecgfuse {

// spectral: dense + softmax head per window, window predictions averaged.
// longitudinal: LSTM over the raw feature sequence, head on the last hidden state.
// joint: dense per window feeding the LSTM, head on the last hidden state.
enum class ModelMode : std::uint8_t { Spectral, Longitudinal, Joint };

std::optional<ModelMode> parse_model_mode(std::string_view name);  // dense | lstm | dense-lstm
std::string_view model_mode_name(ModelMode mode);

struct ModelDims {
    std::size_t input = 0;    // tau_in
    std::size_t dense = 16;   // kappa
    std::size_t hidden = 16;  // nu
    std::size_t classes = 4;  // N_c

    bool operator==(const ModelDims&) const = default;
};

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool operator==(const Matrix&) const = default;
};

struct DenseParams {
    Matrix weight;  // kappa x tau_in
    std::vector<double> bias;

    bool operator==(const DenseParams&) const = default;
};

// No bias: the head is a bare linear map followed by softmax.
struct HeadParams {
    Matrix weight;  // N_c x width

    bool operator==(const HeadParams&) const = default;
};

// Gates stacked row-wise in the order input, forget, output, candidate; each block maps
// [x ; h_prev] to nu values.
struct LstmParams {
    Matrix weight;  // 4 nu x (input + nu)
    std::vector<double> bias;
    std::size_t hidden = 0;

    bool operator==(const LstmParams&) const = default;
};

struct ModelParams {
    ModelMode mode = ModelMode::Joint;
    ModelDims dims;
    std::optional<DenseParams> dense;
    std::optional<LstmParams> lstm;
    HeadParams head;

    // Parameter tensors in the fixed serialization order:
    // dense.weight, dense.bias, lstm.weight, lstm.bias, head.weight (absent ones skipped).
    std::vector<std::span<double>> tensors();
    std::vector<std::span<const double>> tensors() const;
    std::vector<std::string> tensor_names() const;
    std::size_t parameter_count() const;

    ModelParams zeros_like() const;

    bool operator==(const ModelParams&) const = default;
};

// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
ModelParams init_params(ModelMode mode, const ModelDims& dims, std::uint64_t seed);

double glorot_bound(std::size_t fan_in, std::size_t fan_out);

std::vector<double> dense_forward(std::span<const double> input, const DenseParams& params);

std::vector<double> head_logits(std::span<const double> input, const HeadParams& params);
std::vector<double> softmax(std::span<const double> logits);
Prediction head_forward(std::span<const double> input, const HeadParams& params);

struct LstmState {
    std::vector<double> h;
    std::vector<double> c;
};

LstmState lstm_step(std::span<const double> x, std::span<const double> h_prev,
                    std::span<const double> c_prev, const LstmParams& params);

// gamma input vectors in window order.
using Sequence = std::vector<std::vector<double>>;

// Every intermediate of one forward pass, kept for the backward pass.
struct ForwardTrace {
    std::vector<std::vector<double>> dense_pre;   // W d + b per window
    std::vector<std::vector<double>> dense_out;   // ReLU of the above
    std::vector<std::vector<double>> gates;       // sigmoid/tanh gate activations, 4 nu per step
    std::vector<std::vector<double>> hidden;      // h_1..h_gamma
    std::vector<std::vector<double>> cell;        // c_1..c_gamma
    std::vector<std::vector<double>> logits;      // one per window (spectral) or one (sequence modes)
    Prediction prediction;
};

ForwardTrace forward_trace(const Sequence& inputs, const ModelParams& params);
Prediction forward_sequence(const Sequence& inputs, const ModelParams& params);

// Sparse softmax cross-entropy, evaluated through log-sum-exp.
double loss(std::span<const double> logits, std::size_t target);
std::vector<double> loss_gradient(std::span<const double> logits, std::size_t target);

// Training objective of one sequence: the cross-entropy of the final logits, or the mean of
// the per-window cross-entropies in spectral mode.
double sequence_loss(const Sequence& inputs, std::size_t target, const ModelParams& params);

struct LabeledSequence {
    const Sequence* inputs = nullptr;
    std::size_t target = 0;
};

// Mean loss over the batch; `grads` receives the exact gradient of that mean.
double backward(std::span<const LabeledSequence> batch, const ModelParams& params, ModelParams& grads);

struct OptimizerState {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::optional<ModelParams> first_moment;
    std::optional<ModelParams> second_moment;

    bool operator==(const OptimizerState&) const = default;
};

OptimizerState make_optimizer(const ModelParams& params, double learning_rate = 0.01);

// Bias-corrected Adam update applied in place.
void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state);

// Parameter block of a checkpoint: dims, then every tensor as f64 in tensors() order, then the
// optimizer (step, hyper-parameters, both moment sets in the same order).
void write_params(std::ostream& out, const ModelParams& params, const OptimizerState& state);
std::pair<ModelParams, OptimizerState> read_params(std::istream& in, ModelMode mode);

}  // namespace ecgfuse
