#include "ecgfuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "ecgfuse/binary_io.hpp"
#include "ecgfuse/error.hpp"
#include "ecgfuse/rng.hpp"

namespace ecgfuse {

namespace {

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void matvec(const Matrix& m, std::span<const double> x, std::vector<double>& out) {
    out.assign(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.data.data() + r * m.cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        out[r] = acc;
    }
}

// grad += outer(delta, x)
void add_outer(Matrix& grad, std::span<const double> delta, std::span<const double> x, double scale) {
    for (std::size_t r = 0; r < grad.rows; ++r) {
        const double d = delta[r] * scale;
        if (d == 0.0) continue;
        double* row = grad.data.data() + r * grad.cols;
        for (std::size_t c = 0; c < grad.cols; ++c) row[c] += d * x[c];
    }
}

// out = m^T delta
void matvec_transposed(const Matrix& m, std::span<const double> delta, std::vector<double>& out) {
    out.assign(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double d = delta[r];
        if (d == 0.0) continue;
        const double* row = m.data.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) out[c] += row[c] * d;
    }
}

std::size_t lstm_input_width(const ModelParams& p) {
    return p.mode == ModelMode::Joint ? p.dims.dense : p.dims.input;
}

std::size_t head_width(ModelMode mode, const ModelDims& dims) {
    return mode == ModelMode::Spectral ? dims.dense : dims.hidden;
}

void check_inputs(const Sequence& inputs, const ModelParams& params) {
    if (inputs.empty()) throw Error(ErrorCode::EmptySequence, "model input sequence is empty");
    for (const auto& x : inputs) {
        if (x.size() != params.dims.input) {
            throw Error(ErrorCode::ShapeMismatch, "model expects inputs of width " + std::to_string(params.dims.input) +
                                                      ", got " + std::to_string(x.size()));
        }
    }
}

void fill_glorot(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = glorot_bound(fan_in, fan_out);
    for (double& w : m.data) w = rng.uniform(-bound, bound);
}

ModelParams shaped(ModelMode mode, const ModelDims& dims) {
    if (dims.input == 0 || dims.classes < 2 || dims.dense == 0 || dims.hidden == 0) {
        throw Error(ErrorCode::ConfigInvalid, "model dimensions must be positive with at least two classes");
    }
    ModelParams p;
    p.mode = mode;
    p.dims = dims;
    if (mode != ModelMode::Longitudinal) {
        p.dense = DenseParams{Matrix(dims.dense, dims.input), std::vector<double>(dims.dense, 0.0)};
    }
    if (mode != ModelMode::Spectral) {
        const std::size_t in = mode == ModelMode::Joint ? dims.dense : dims.input;
        p.lstm = LstmParams{Matrix(4 * dims.hidden, in + dims.hidden), std::vector<double>(4 * dims.hidden, 0.0),
                            dims.hidden};
    }
    p.head.weight = Matrix(dims.classes, head_width(mode, dims));
    return p;
}

}  // namespace

std::optional<ModelMode> parse_model_mode(std::string_view name) {
    if (name == "dense" || name == "spectral") return ModelMode::Spectral;
    if (name == "lstm" || name == "longitudinal") return ModelMode::Longitudinal;
    if (name == "dense-lstm" || name == "joint") return ModelMode::Joint;
    return std::nullopt;
}

std::string_view model_mode_name(ModelMode mode) {
    switch (mode) {
        case ModelMode::Spectral: return "dense";
        case ModelMode::Longitudinal: return "lstm";
        case ModelMode::Joint: return "dense-lstm";
    }
    return "unknown";
}

std::vector<std::span<double>> ModelParams::tensors() {
    std::vector<std::span<double>> out;
    if (dense) {
        out.emplace_back(dense->weight.data);
        out.emplace_back(dense->bias);
    }
    if (lstm) {
        out.emplace_back(lstm->weight.data);
        out.emplace_back(lstm->bias);
    }
    out.emplace_back(head.weight.data);
    return out;
}

std::vector<std::span<const double>> ModelParams::tensors() const {
    std::vector<std::span<const double>> out;
    for (auto s : const_cast<ModelParams*>(this)->tensors()) out.emplace_back(s.data(), s.size());
    return out;
}

std::vector<std::string> ModelParams::tensor_names() const {
    std::vector<std::string> names;
    if (dense) names.insert(names.end(), {"dense.weight", "dense.bias"});
    if (lstm) names.insert(names.end(), {"lstm.weight", "lstm.bias"});
    names.emplace_back("head.weight");
    return names;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (auto t : tensors()) n += t.size();
    return n;
}

ModelParams ModelParams::zeros_like() const { return shaped(mode, dims); }

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

ModelParams init_params(ModelMode mode, const ModelDims& dims, std::uint64_t seed) {
    ModelParams p = shaped(mode, dims);
    Rng rng(seed);
    if (p.dense) fill_glorot(p.dense->weight, dims.input, dims.dense, rng);
    if (p.lstm) {
        // each gate block is its own (input + nu) -> nu map
        fill_glorot(p.lstm->weight, p.lstm->weight.cols, dims.hidden, rng);
        for (std::size_t k = 0; k < dims.hidden; ++k) p.lstm->bias[dims.hidden + k] = 1.0;
    }
    fill_glorot(p.head.weight, p.head.weight.cols, dims.classes, rng);
    return p;
}

std::vector<double> dense_forward(std::span<const double> input, const DenseParams& params) {
    if (input.size() != params.weight.cols) {
        throw Error(ErrorCode::ShapeMismatch, "dense layer expects width " + std::to_string(params.weight.cols));
    }
    std::vector<double> out;
    matvec(params.weight, input, out);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::max(0.0, out[k] + params.bias[k]);
    return out;
}

std::vector<double> head_logits(std::span<const double> input, const HeadParams& params) {
    if (input.size() != params.weight.cols) {
        throw Error(ErrorCode::ShapeMismatch, "head expects width " + std::to_string(params.weight.cols));
    }
    std::vector<double> out;
    matvec(params.weight, input, out);
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    const double peak = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        p[k] = std::exp(logits[k] - peak);
        total += p[k];
    }
    for (double& v : p) v /= total;
    return p;
}

Prediction head_forward(std::span<const double> input, const HeadParams& params) {
    Prediction pred;
    pred.probs = softmax(head_logits(input, params));
    pred.label = argmax(pred.probs);
    return pred;
}

namespace {

// One LSTM step; `gates` receives i, f, o, candidate activations.
void lstm_cell(std::span<const double> x, std::span<const double> h_prev, std::span<const double> c_prev,
               const LstmParams& p, std::vector<double>& gates, std::vector<double>& h, std::vector<double>& c) {
    const std::size_t nu = p.hidden;
    const std::size_t in = p.weight.cols - nu;
    if (x.size() != in || h_prev.size() != nu || c_prev.size() != nu) {
        throw Error(ErrorCode::ShapeMismatch, "lstm step shapes do not match its parameters");
    }
    gates.assign(4 * nu, 0.0);
    for (std::size_t r = 0; r < 4 * nu; ++r) {
        const double* row = p.weight.data.data() + r * p.weight.cols;
        double acc = p.bias[r];
        for (std::size_t k = 0; k < in; ++k) acc += row[k] * x[k];
        for (std::size_t k = 0; k < nu; ++k) acc += row[in + k] * h_prev[k];
        gates[r] = r < 3 * nu ? logistic(acc) : std::tanh(acc);
    }
    h.assign(nu, 0.0);
    c.assign(nu, 0.0);
    for (std::size_t k = 0; k < nu; ++k) {
        const double i = gates[k], f = gates[nu + k], o = gates[2 * nu + k], g = gates[3 * nu + k];
        c[k] = f * c_prev[k] + i * g;
        h[k] = o * std::tanh(c[k]);
    }
}

}  // namespace

LstmState lstm_step(std::span<const double> x, std::span<const double> h_prev, std::span<const double> c_prev,
                    const LstmParams& params) {
    LstmState s;
    std::vector<double> gates;
    lstm_cell(x, h_prev, c_prev, params, gates, s.h, s.c);
    return s;
}

ForwardTrace forward_trace(const Sequence& inputs, const ModelParams& params) {
    check_inputs(inputs, params);
    ForwardTrace t;
    const std::size_t gamma = inputs.size();

    if (params.dense) {
        t.dense_pre.resize(gamma);
        t.dense_out.resize(gamma);
        for (std::size_t n = 0; n < gamma; ++n) {
            matvec(params.dense->weight, inputs[n], t.dense_pre[n]);
            for (std::size_t k = 0; k < t.dense_pre[n].size(); ++k) t.dense_pre[n][k] += params.dense->bias[k];
            t.dense_out[n].resize(t.dense_pre[n].size());
            for (std::size_t k = 0; k < t.dense_pre[n].size(); ++k) t.dense_out[n][k] = std::max(0.0, t.dense_pre[n][k]);
        }
    }

    if (params.mode == ModelMode::Spectral) {
        t.prediction.probs.assign(params.dims.classes, 0.0);
        for (std::size_t n = 0; n < gamma; ++n) {
            t.logits.push_back(head_logits(t.dense_out[n], params.head));
            const auto p = softmax(t.logits.back());
            for (std::size_t c = 0; c < p.size(); ++c) t.prediction.probs[c] += p[c] / static_cast<double>(gamma);
        }
        t.prediction.label = argmax(t.prediction.probs);
        return t;
    }

    const std::size_t nu = params.dims.hidden;
    std::vector<double> h(nu, 0.0), c(nu, 0.0);
    t.gates.resize(gamma);
    t.hidden.resize(gamma);
    t.cell.resize(gamma);
    for (std::size_t n = 0; n < gamma; ++n) {
        const auto& x = params.mode == ModelMode::Joint ? t.dense_out[n] : inputs[n];
        lstm_cell(x, h, c, *params.lstm, t.gates[n], t.hidden[n], t.cell[n]);
        h = t.hidden[n];
        c = t.cell[n];
    }
    t.logits.push_back(head_logits(t.hidden.back(), params.head));
    t.prediction.probs = softmax(t.logits.back());
    t.prediction.label = argmax(t.prediction.probs);
    return t;
}

Prediction forward_sequence(const Sequence& inputs, const ModelParams& params) {
    return forward_trace(inputs, params).prediction;
}

double loss(std::span<const double> logits, std::size_t target) {
    if (target >= logits.size()) throw Error(ErrorCode::InvalidTarget, "target class out of range");
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double z : logits) total += std::exp(z - peak);
    return peak + std::log(total) - logits[target];
}

std::vector<double> loss_gradient(std::span<const double> logits, std::size_t target) {
    if (target >= logits.size()) throw Error(ErrorCode::InvalidTarget, "target class out of range");
    auto g = softmax(logits);
    g[target] -= 1.0;
    return g;
}

double sequence_loss(const Sequence& inputs, std::size_t target, const ModelParams& params) {
    const ForwardTrace t = forward_trace(inputs, params);
    double total = 0.0;
    for (const auto& z : t.logits) total += loss(z, target);
    return total / static_cast<double>(t.logits.size());
}

double backward(std::span<const LabeledSequence> batch, const ModelParams& params, ModelParams& grads) {
    if (batch.empty()) throw Error(ErrorCode::EmptyTrainingSet, "backward on an empty batch");
    grads = params.zeros_like();
    const double batch_scale = 1.0 / static_cast<double>(batch.size());
    double total_loss = 0.0;
    std::vector<double> scratch;

    // Accumulates the dense-layer gradient for window n given d(loss)/d(dense_out[n]).
    auto dense_backward = [&](const ForwardTrace& t, const std::vector<double>& input, std::size_t n,
                              std::vector<double> d_out, double scale) {
        for (std::size_t k = 0; k < d_out.size(); ++k) {
            if (t.dense_pre[n][k] <= 0.0) d_out[k] = 0.0;
        }
        add_outer(grads.dense->weight, d_out, input, scale);
        for (std::size_t k = 0; k < d_out.size(); ++k) grads.dense->bias[k] += d_out[k] * scale;
    };

    for (const auto& sample : batch) {
        if (sample.inputs == nullptr) throw Error(ErrorCode::EmptySequence, "batch entry without inputs");
        const Sequence& inputs = *sample.inputs;
        const ForwardTrace t = forward_trace(inputs, params);
        const std::size_t gamma = inputs.size();

        if (params.mode == ModelMode::Spectral) {
            const double scale = batch_scale / static_cast<double>(gamma);
            for (std::size_t n = 0; n < gamma; ++n) {
                total_loss += loss(t.logits[n], sample.target) * scale;
                const auto d_logits = loss_gradient(t.logits[n], sample.target);
                add_outer(grads.head.weight, d_logits, t.dense_out[n], scale);
                std::vector<double> d_r;
                matvec_transposed(params.head.weight, d_logits, d_r);
                dense_backward(t, inputs[n], n, std::move(d_r), scale);
            }
            continue;
        }

        total_loss += loss(t.logits[0], sample.target) * batch_scale;
        const auto d_logits = loss_gradient(t.logits[0], sample.target);
        add_outer(grads.head.weight, d_logits, t.hidden.back(), batch_scale);

        const LstmParams& lstm = *params.lstm;
        const std::size_t nu = lstm.hidden;
        const std::size_t in = lstm.weight.cols - nu;
        std::vector<double> dh;
        matvec_transposed(params.head.weight, d_logits, dh);
        std::vector<double> dc(nu, 0.0);
        std::vector<double> d_gate(4 * nu);
        std::vector<double> concat(in + nu);
        const std::vector<double> zeros(nu, 0.0);

        for (std::size_t n = gamma; n-- > 0;) {
            const auto& g = t.gates[n];
            const auto& c = t.cell[n];
            const auto& c_prev = n > 0 ? t.cell[n - 1] : zeros;
            const auto& h_prev = n > 0 ? t.hidden[n - 1] : zeros;
            const auto& x = params.mode == ModelMode::Joint ? t.dense_out[n] : inputs[n];
            std::vector<double> dc_prev(nu);
            for (std::size_t k = 0; k < nu; ++k) {
                const double i = g[k], f = g[nu + k], o = g[2 * nu + k], cand = g[3 * nu + k];
                const double tc = std::tanh(c[k]);
                const double d_o = dh[k] * tc;
                const double d_c = dc[k] + dh[k] * o * (1.0 - tc * tc);
                d_gate[k] = d_c * cand * i * (1.0 - i);
                d_gate[nu + k] = d_c * c_prev[k] * f * (1.0 - f);
                d_gate[2 * nu + k] = d_o * o * (1.0 - o);
                d_gate[3 * nu + k] = d_c * i * (1.0 - cand * cand);
                dc_prev[k] = d_c * f;
            }
            std::copy(x.begin(), x.end(), concat.begin());
            std::copy(h_prev.begin(), h_prev.end(), concat.begin() + static_cast<std::ptrdiff_t>(in));
            add_outer(grads.lstm->weight, d_gate, concat, batch_scale);
            for (std::size_t r = 0; r < 4 * nu; ++r) grads.lstm->bias[r] += d_gate[r] * batch_scale;

            matvec_transposed(lstm.weight, d_gate, scratch);
            if (params.mode == ModelMode::Joint) {
                dense_backward(t, inputs[n], n, std::vector<double>(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(in)),
                               batch_scale);
            }
            dh.assign(scratch.begin() + static_cast<std::ptrdiff_t>(in), scratch.end());
            dc = std::move(dc_prev);
        }
    }
    return total_loss;
}

OptimizerState make_optimizer(const ModelParams& params, double learning_rate) {
    OptimizerState s;
    s.learning_rate = learning_rate;
    s.first_moment = params.zeros_like();
    s.second_moment = params.zeros_like();
    return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
    if (!state.first_moment) {
        state.first_moment = params.zeros_like();
        state.second_moment = params.zeros_like();
    }
    auto p = params.tensors();
    const auto g = grads.tensors();
    auto m = state.first_moment->tensors();
    auto v = state.second_moment->tensors();
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
        throw Error(ErrorCode::ShapeMismatch, "adam: gradient layout differs from parameters");
    }
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (g[t].size() != p[t].size() || m[t].size() != p[t].size() || v[t].size() != p[t].size()) {
            throw Error(ErrorCode::ShapeMismatch, "adam: tensor shapes differ");
        }
    }
    ++state.step;
    const double b1 = state.beta1, b2 = state.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < p.size(); ++t) {
        for (std::size_t k = 0; k < p[t].size(); ++k) {
            const double gk = g[t][k];
            m[t][k] = b1 * m[t][k] + (1.0 - b1) * gk;
            v[t][k] = b2 * v[t][k] + (1.0 - b2) * gk * gk;
            const double m_hat = m[t][k] / correction1;
            const double v_hat = v[t][k] / correction2;
            p[t][k] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

void write_params(std::ostream& out, const ModelParams& params, const OptimizerState& state) {
    binary::put_u32(out, static_cast<std::uint32_t>(params.dims.input));
    binary::put_u32(out, static_cast<std::uint32_t>(params.dims.dense));
    binary::put_u32(out, static_cast<std::uint32_t>(params.dims.hidden));
    binary::put_u32(out, static_cast<std::uint32_t>(params.dims.classes));
    for (auto t : params.tensors()) binary::put_f64s(out, t);
    binary::put_u64(out, state.step);
    binary::put_f64(out, state.learning_rate);
    binary::put_f64(out, state.beta1);
    binary::put_f64(out, state.beta2);
    binary::put_f64(out, state.epsilon);
    const ModelParams zeros = params.zeros_like();
    for (auto t : (state.first_moment ? *state.first_moment : zeros).tensors()) binary::put_f64s(out, t);
    for (auto t : (state.second_moment ? *state.second_moment : zeros).tensors()) binary::put_f64s(out, t);
}

std::pair<ModelParams, OptimizerState> read_params(std::istream& in, ModelMode mode) {
    ModelDims dims;
    dims.input = binary::get_u32(in);
    dims.dense = binary::get_u32(in);
    dims.hidden = binary::get_u32(in);
    dims.classes = binary::get_u32(in);
    ModelParams params = shaped(mode, dims);
    auto read_into = [&](ModelParams& p) {
        for (auto t : p.tensors()) {
            for (double& v : t) v = binary::get_f64(in);
        }
    };
    read_into(params);
    OptimizerState state;
    state.step = binary::get_u64(in);
    state.learning_rate = binary::get_f64(in);
    state.beta1 = binary::get_f64(in);
    state.beta2 = binary::get_f64(in);
    state.epsilon = binary::get_f64(in);
    state.first_moment = params.zeros_like();
    state.second_moment = params.zeros_like();
    read_into(*state.first_moment);
    read_into(*state.second_moment);
    return {std::move(params), std::move(state)};
}

}  // namespace ecgfuse
