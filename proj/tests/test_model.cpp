#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ecgfuse/error.hpp"
#include "ecgfuse/model.hpp"
#include "ecgfuse/rng.hpp"

using namespace ecgfuse;

namespace {

constexpr ModelMode kModes[] = {ModelMode::Spectral, ModelMode::Longitudinal, ModelMode::Joint};

template <typename F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no ecgfuse::Error thrown");
    return ErrorCode::ConfigInvalid;
}

Sequence random_sequence(Rng& rng, std::size_t gamma, std::size_t width, double scale = 1.0) {
    Sequence s(gamma, std::vector<double>(width));
    for (auto& x : s) {
        for (auto& v : x) v = rng.normal() * scale;
    }
    return s;
}

// Randomizes every tensor (biases included) so no gradient is structurally zero.
void jitter(ModelParams& params, Rng& rng, double scale) {
    for (auto t : params.tensors()) {
        for (auto& v : t) v += rng.normal() * scale;
    }
}

double mean_loss(const std::vector<Sequence>& xs, const std::vector<std::size_t>& ys, const ModelParams& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) total += sequence_loss(xs[i], ys[i], p);
    return total / static_cast<double>(xs.size());
}

struct GradCheck {
    double worst_rel = 0.0;
    std::size_t checked = 0;
};

// Central differences on every parameter against backward(). The relative error uses
// max(|analytic|, |numeric|) with a 1e-8 floor so exactly-zero gradients compare absolutely.
GradCheck gradient_check(ModelParams params, const std::vector<Sequence>& xs, const std::vector<std::size_t>& ys) {
    std::vector<LabeledSequence> batch;
    for (std::size_t i = 0; i < xs.size(); ++i) batch.push_back({&xs[i], ys[i]});
    ModelParams grads = params.zeros_like();
    const double l = backward(batch, params, grads);
    CHECK(l == doctest::Approx(mean_loss(xs, ys, params)).epsilon(1e-12));

    GradCheck out;
    const double h = 1e-5;
    auto ptensors = params.tensors();
    const auto gtensors = std::as_const(grads).tensors();
    for (std::size_t t = 0; t < ptensors.size(); ++t) {
        for (std::size_t i = 0; i < ptensors[t].size(); ++i) {
            const double saved = ptensors[t][i];
            ptensors[t][i] = saved + h;
            const double up = mean_loss(xs, ys, params);
            ptensors[t][i] = saved - h;
            const double down = mean_loss(xs, ys, params);
            ptensors[t][i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = gtensors[t][i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            out.worst_rel = std::max(out.worst_rel, std::abs(analytic - numeric) / denom);
            ++out.checked;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("dense_forward") {
    DenseParams zero{Matrix(4, 6), std::vector<double>(4, 0.0)};
    Rng rng(1);
    const auto x = random_sequence(rng, 1, 6)[0];
    for (double v : dense_forward(x, zero)) CHECK(v == 0.0);

    DenseParams eye{Matrix(4, 6), std::vector<double>(4, 0.0)};
    for (std::size_t i = 0; i < 4; ++i) eye.weight.at(i, i) = 1.0;
    std::vector<double> pos(6);
    for (auto& v : pos) v = std::abs(rng.normal());
    const auto r = dense_forward(pos, eye);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == pos[i]);

    CHECK(code_of([&] { dense_forward(std::vector<double>(5), eye); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("dense_forward Jacobian-vector products match central differences") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        DenseParams p{Matrix(5, 7), std::vector<double>(5)};
        for (auto& v : p.weight.data) v = rng.normal();
        for (auto& v : p.bias) v = rng.normal();
        std::vector<double> x(7), dir(7);
        for (auto& v : x) v = rng.normal();
        for (auto& v : dir) v = rng.normal();
        const auto pre = [&](const std::vector<double>& in) {
            std::vector<double> z(5);
            for (std::size_t i = 0; i < 5; ++i) {
                z[i] = p.bias[i];
                for (std::size_t j = 0; j < 7; ++j) z[i] += p.weight.at(i, j) * in[j];
            }
            return z;
        };
        const auto z = pre(x);
        const double h = 1e-5;
        std::vector<double> xp = x, xm = x;
        for (std::size_t j = 0; j < 7; ++j) {
            xp[j] += h * dir[j];
            xm[j] -= h * dir[j];
        }
        const auto rp = dense_forward(xp, p), rm = dense_forward(xm, p);
        for (std::size_t i = 0; i < 5; ++i) {
            if (std::abs(z[i]) < 1e-3) continue;  // ReLU kink
            double analytic = 0.0;
            if (z[i] > 0) {
                for (std::size_t j = 0; j < 7; ++j) analytic += p.weight.at(i, j) * dir[j];
            }
            const double numeric = (rp[i] - rm[i]) / (2.0 * h);
            CHECK(std::abs(analytic - numeric) <= 1e-4 * std::max(1.0, std::abs(analytic)));
        }
    }
}

TEST_CASE("head_forward and softmax") {
    HeadParams zero{Matrix(4, 3)};
    const auto uniform = head_forward(std::vector<double>{1, 2, 3}, zero);
    for (double p : uniform.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(uniform.label == 0);

    const auto peaked = softmax(std::vector<double>{10, 0, 0, 0});
    CHECK(peaked[0] > 0.9998);
    CHECK(peaked[0] == doctest::Approx(std::exp(10.0) / (std::exp(10.0) + 3.0)).epsilon(1e-14));

    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> z(2 + rng.below(5));
        for (auto& v : z) v = rng.normal() * std::pow(10.0, rng.uniform(-2, 2.5));
        const auto p = softmax(z);
        double total = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
        const double c = rng.normal() * 100.0;
        auto shifted = z;
        for (auto& v : shifted) v += c;
        const auto q = softmax(shifted);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
    }
    CHECK(code_of([&] { head_forward(std::vector<double>{1, 2}, zero); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("lstm_step limits") {
    LstmParams zero{Matrix(4 * 3, 5 + 3), std::vector<double>(12, 0.0), 3};
    const std::vector<double> x{1, -2, 3, 0.5, 7}, h0(3, 0.0), c0(3, 0.0);
    const auto s = lstm_step(x, h0, c0, zero);
    for (double v : s.h) CHECK(v == 0.0);
    for (double v : s.c) CHECK(v == 0.0);

    // forget gate saturated open, candidate path zero: the cell is carried through
    LstmParams keep = zero;
    for (std::size_t k = 3; k < 6; ++k) keep.bias[k] = 20.0;
    const std::vector<double> c_prev{0.9, -0.4, 1.0}, h_prev{0.3, 0.1, -0.2};
    const auto kept = lstm_step(x, h_prev, c_prev, keep);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(kept.c[k] - c_prev[k]) < 1e-8);

    CHECK(code_of([&] { lstm_step(std::vector<double>(4), h0, c0, zero); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("gates are one half with zero parameters") {
    ModelParams p = init_params(ModelMode::Longitudinal, {5, 16, 3, 4}, 1);
    for (auto t : p.tensors()) std::fill(t.begin(), t.end(), 0.0);
    Rng rng(4);
    const auto trace = forward_trace(random_sequence(rng, 4, 5), p);
    for (const auto& g : trace.gates) {
        REQUIRE(g.size() == 12);
        for (std::size_t k = 0; k < 9; ++k) CHECK(g[k] == 0.5);
        for (std::size_t k = 9; k < 12; ++k) CHECK(g[k] == 0.0);
    }
}

TEST_CASE("joint trace at the default sizes") {
    const auto p = init_params(ModelMode::Joint, {64, 16, 16, 4}, 5);
    Rng rng(5);
    const auto trace = forward_trace(random_sequence(rng, 19, 64), p);
    CHECK(trace.dense_out.size() == 19);
    for (const auto& r : trace.dense_out) CHECK(r.size() == 16);
    CHECK(trace.hidden.size() == 19);
    for (const auto& h : trace.hidden) CHECK(h.size() == 16);
    CHECK(trace.logits.size() == 1);
    CHECK(trace.prediction.probs.size() == 4);
}

TEST_CASE("joint forward equals the manual composition") {
    Rng rng(6);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto p = init_params(ModelMode::Joint, {9, 6, 5, 4}, seed);
        jitter(p, rng, 0.1);
        const auto xs = random_sequence(rng, 19, 9);
        std::vector<double> h(5, 0.0), c(5, 0.0);
        for (const auto& x : xs) {
            const auto r = dense_forward(x, *p.dense);
            auto s = lstm_step(r, h, c, *p.lstm);
            h = s.h;
            c = s.c;
        }
        const auto manual = head_forward(h, p.head);
        const auto pred = forward_sequence(xs, p);
        for (std::size_t k = 0; k < 4; ++k) CHECK(pred.probs[k] == doctest::Approx(manual.probs[k]).epsilon(1e-14));
        CHECK(pred.label == manual.label);
    }
}

TEST_CASE("degenerate sequences") {
    Rng rng(7);
    auto lp = init_params(ModelMode::Longitudinal, {6, 16, 4, 3}, 2);
    const auto one = random_sequence(rng, 1, 6);
    const auto s = lstm_step(one[0], std::vector<double>(4, 0.0), std::vector<double>(4, 0.0), *lp.lstm);
    CHECK(forward_sequence(one, lp).probs == head_forward(s.h, lp.head).probs);

    auto sp = init_params(ModelMode::Spectral, {6, 5, 16, 4}, 3);
    const Sequence twice{one[0], one[0]};
    const auto a = forward_sequence(one, sp), b = forward_sequence(twice, sp);
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.probs[k] == doctest::Approx(b.probs[k]).epsilon(1e-15));

    CHECK(code_of([&] { forward_sequence({}, lp); }) == ErrorCode::EmptySequence);
    CHECK(code_of([&] { forward_sequence(random_sequence(rng, 3, 7), lp); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("cross-entropy loss") {
    CHECK(loss(std::vector<double>{0, 0, 0, 0}, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(loss(std::vector<double>{0, 50, 0, 0}, 1) < 1e-10);
    CHECK(loss(std::vector<double>{0, 1000, 0, 0}, 0) == doctest::Approx(1000.0));
    CHECK(code_of([] { loss(std::vector<double>{0, 0}, 2); }) == ErrorCode::InvalidTarget);
    CHECK(code_of([] { loss_gradient(std::vector<double>{0, 0}, 5); }) == ErrorCode::InvalidTarget);

    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> z(2 + rng.below(5));
        for (auto& v : z) v = rng.normal() * 3.0;
        const std::size_t target = rng.below(z.size());
        const auto g = loss_gradient(z, target);
        const auto p = softmax(z);
        for (std::size_t k = 0; k < z.size(); ++k) {
            CHECK(g[k] == doctest::Approx(p[k] - (k == target ? 1.0 : 0.0)).epsilon(1e-14));
            auto zp = z, zm = z;
            zp[k] += 1e-5;
            zm[k] -= 1e-5;
            CHECK(std::abs(g[k] - (loss(zp, target) - loss(zm, target)) / 2e-5) < 1e-6);
        }
        auto shifted = z;
        const double c = rng.normal() * 50.0;
        for (auto& v : shifted) v += c;
        CHECK(std::abs(loss(shifted, target) - loss(z, target)) < 1e-10);
    }
}

TEST_CASE("backward matches central differences on every parameter, all modes, gamma 19") {
    for (ModelMode mode : kModes) {
        for (std::uint64_t seed : {11u, 22u, 33u}) {
            Rng rng(seed);
            const ModelDims dims{6, 5, 4, 3};
            auto params = init_params(mode, dims, seed);
            jitter(params, rng, 0.2);
            std::vector<Sequence> xs;
            std::vector<std::size_t> ys;
            for (int i = 0; i < 3; ++i) {
                xs.push_back(random_sequence(rng, 19, dims.input));
                ys.push_back(rng.below(dims.classes));
            }
            const auto result = gradient_check(params, xs, ys);
            INFO("mode ", model_mode_name(mode), " seed ", seed, " worst relative error ", result.worst_rel);
            CHECK(result.checked == params.parameter_count());
            CHECK(result.worst_rel <= 1e-4);
        }
    }
}

TEST_CASE("backward at a confident correct prediction is stationary") {
    auto p = init_params(ModelMode::Longitudinal, {4, 16, 3, 4}, 9);
    for (auto t : p.tensors()) std::fill(t.begin(), t.end(), 0.0);
    // input, output and candidate gates saturated: h is tanh(1) in every unit
    for (std::size_t k = 0; k < 3; ++k) {
        p.lstm->bias[k] = 20.0;
        p.lstm->bias[6 + k] = 20.0;
        p.lstm->bias[9 + k] = 20.0;
    }
    for (std::size_t k = 0; k < 3; ++k) p.head.weight.at(2, k) = 100.0;
    Rng rng(10);
    const auto xs = random_sequence(rng, 19, 4);
    const LabeledSequence batch[] = {{&xs, 2}};
    ModelParams g = p.zeros_like();
    CHECK(backward(batch, p, g) < 1e-10);
    double sq = 0.0;
    for (auto t : std::as_const(g).tensors()) {
        for (double v : t) sq += v * v;
    }
    CHECK(std::sqrt(sq) < 1e-8);
}

TEST_CASE("a duplicated sample has the single-sample gradient") {
    Rng rng(12);
    for (ModelMode mode : kModes) {
        auto p = init_params(mode, {5, 4, 3, 4}, 4);
        jitter(p, rng, 0.1);
        const auto xs = random_sequence(rng, 7, 5);
        const LabeledSequence one[] = {{&xs, 1}};
        const LabeledSequence two[] = {{&xs, 1}, {&xs, 1}};
        ModelParams g1 = p.zeros_like(), g2 = p.zeros_like();
        CHECK(backward(one, p, g1) == doctest::Approx(backward(two, p, g2)).epsilon(1e-15));
        const auto t1 = std::as_const(g1).tensors(), t2 = std::as_const(g2).tensors();
        for (std::size_t t = 0; t < t1.size(); ++t) {
            for (std::size_t i = 0; i < t1[t].size(); ++i) CHECK(t1[t][i] == doctest::Approx(t2[t][i]).epsilon(1e-14));
        }
    }
}

TEST_CASE("adam first step moves every parameter by lr against the gradient sign") {
    Rng rng(13);
    auto p = init_params(ModelMode::Joint, {6, 5, 4, 3}, 1);
    const auto before = p;
    ModelParams g = p.zeros_like();
    for (auto t : g.tensors()) {
        for (auto& v : t) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(1e-3, 10.0);
    }
    auto state = make_optimizer(p, 0.01);
    adam_step(p, g, state);
    CHECK(state.step == 1);
    const auto pa = std::as_const(p).tensors(), pb = before.tensors(), gt = std::as_const(g).tensors();
    for (std::size_t t = 0; t < pa.size(); ++t) {
        for (std::size_t i = 0; i < pa[t].size(); ++i) {
            const double delta = pa[t][i] - pb[t][i];
            CHECK(std::abs(delta + 0.01 * (gt[t][i] > 0 ? 1.0 : -1.0)) < 1e-6);
        }
    }
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
    auto p = init_params(ModelMode::Spectral, {6, 5, 4, 3}, 2);
    const auto before = p;
    auto state = make_optimizer(p);
    const ModelParams zero = p.zeros_like();
    for (int i = 0; i < 50; ++i) adam_step(p, zero, state);
    CHECK(p == before);

    auto other = init_params(ModelMode::Spectral, {7, 5, 4, 3}, 2);
    CHECK(code_of([&] { adam_step(p, other.zeros_like(), state); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("identical training runs give bit-identical trajectories") {
    auto run = [] {
        Rng rng(14);
        auto p = init_params(ModelMode::Joint, {6, 5, 4, 3}, 7);
        auto state = make_optimizer(p);
        std::vector<Sequence> xs;
        for (int i = 0; i < 4; ++i) xs.push_back(random_sequence(rng, 5, 6));
        std::vector<ModelParams> trajectory;
        for (int step = 0; step < 10; ++step) {
            std::vector<LabeledSequence> batch;
            for (std::size_t i = 0; i < xs.size(); ++i) batch.push_back({&xs[i], i % 3});
            ModelParams g = p.zeros_like();
            backward(batch, p, g);
            adam_step(p, g, state);
            trajectory.push_back(p);
        }
        return trajectory;
    };
    CHECK(run() == run());
}

TEST_CASE("init_params") {
    CHECK(init_params(ModelMode::Joint, {1056, 16, 16, 4}, 3) == init_params(ModelMode::Joint, {1056, 16, 16, 4}, 3));
    CHECK_FALSE(init_params(ModelMode::Joint, {10, 16, 16, 4}, 3) == init_params(ModelMode::Joint, {10, 16, 16, 4}, 4));

    const auto p = init_params(ModelMode::Joint, {1056, 16, 16, 4}, 3);
    const double bound = std::sqrt(6.0 / 1072.0);
    CHECK(glorot_bound(1056, 16) == doctest::Approx(bound).epsilon(1e-15));
    double peak = 0.0;
    for (double w : p.dense->weight.data) {
        CHECK(std::abs(w) <= bound);
        peak = std::max(peak, std::abs(w));
    }
    CHECK(peak > 0.99 * bound);
    for (double b : p.dense->bias) CHECK(b == 0.0);
    for (std::size_t k = 0; k < p.lstm->bias.size(); ++k) CHECK(p.lstm->bias[k] == (k >= 16 && k < 32 ? 1.0 : 0.0));

    CHECK(p.dense->weight.rows == 16);
    CHECK(p.dense->weight.cols == 1056);
    CHECK(p.lstm->weight.rows == 64);
    CHECK(p.lstm->weight.cols == 32);
    CHECK(p.head.weight.rows == 4);
    CHECK(p.head.weight.cols == 16);

    const auto s = init_params(ModelMode::Spectral, {20, 16, 16, 4}, 3);
    CHECK(s.dense.has_value());
    CHECK_FALSE(s.lstm.has_value());
    CHECK(s.head.weight.cols == 16);
    const auto l = init_params(ModelMode::Longitudinal, {20, 16, 16, 4}, 3);
    CHECK_FALSE(l.dense.has_value());
    CHECK(l.lstm->weight.cols == 36);
}

TEST_CASE("separable clusters are learned to 99% within 200 Adam steps in every mode") {
    for (ModelMode mode : kModes) {
        Rng rng(15);
        const std::size_t width = 8;
        std::vector<Sequence> xs;
        std::vector<std::size_t> ys;
        for (int i = 0; i < 80; ++i) {
            const std::size_t y = static_cast<std::size_t>(i % 2);
            Sequence s(19, std::vector<double>(width));
            for (auto& x : s) {
                for (std::size_t d = 0; d < width; ++d) x[d] = (y ? 1.0 : -1.0) + 0.5 * rng.normal();
            }
            xs.push_back(std::move(s));
            ys.push_back(y);
        }
        auto p = init_params(mode, {width, 16, 16, 2}, 21);
        auto state = make_optimizer(p, 0.01);
        std::vector<LabeledSequence> batch;
        for (std::size_t i = 0; i < xs.size(); ++i) batch.push_back({&xs[i], ys[i]});
        std::size_t correct = 0;
        for (int step = 0; step < 200; ++step) {
            ModelParams g = p.zeros_like();
            backward(batch, p, g);
            adam_step(p, g, state);
            correct = 0;
            for (std::size_t i = 0; i < xs.size(); ++i) correct += forward_sequence(xs[i], p).label == ys[i];
            if (correct >= 0.99 * xs.size()) break;
        }
        INFO("mode ", model_mode_name(mode));
        CHECK(static_cast<double>(correct) >= 0.99 * xs.size());
    }
}

TEST_CASE("parameter blocks round trip with optimizer state") {
    Rng rng(16);
    for (ModelMode mode : kModes) {
        auto p = init_params(mode, {7, 5, 4, 3}, 8);
        auto state = make_optimizer(p, 0.02);
        ModelParams g = p.zeros_like();
        for (auto t : g.tensors()) {
            for (auto& v : t) v = rng.normal();
        }
        adam_step(p, g, state);
        adam_step(p, g, state);
        std::stringstream buf;
        write_params(buf, p, state);
        const auto [p2, s2] = read_params(buf, mode);
        CHECK(p2 == p);
        CHECK(s2 == state);
    }
}

TEST_CASE("mode names") {
    CHECK(parse_model_mode("dense") == ModelMode::Spectral);
    CHECK(parse_model_mode("lstm") == ModelMode::Longitudinal);
    CHECK(parse_model_mode("dense-lstm") == ModelMode::Joint);
    CHECK_FALSE(parse_model_mode("gru").has_value());
}
