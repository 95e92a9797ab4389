#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "ecgfuse/error.hpp"
#include "ecgfuse/onnx.hpp"

using namespace ecgfuse;
using namespace ecgfuse::onnx;

namespace {

const std::filesystem::path kData = ECGFUSE_TEST_DATA;

nlohmann::json expected_outputs() {
    std::ifstream in(kData / "expected.json");
    return nlohmann::json::parse(in);
}

// Pattern image (7x + 13y + 29c) mod 256 with the ImageNet normalization, NCHW.
Tensor pattern_input(int h, int w) {
    const float mean[] = {0.485f, 0.456f, 0.406f};
    const float stdev[] = {0.229f, 0.224f, 0.225f};
    std::vector<float> v(static_cast<std::size_t>(3 * h * w));
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const float p = static_cast<float>((7 * x + 13 * y + 29 * c) % 256) / 255.0f;
                v[static_cast<std::size_t>((c * h + y) * w + x)] = (p - mean[c]) / stdev[c];
            }
        }
    }
    return Tensor::floats({1, 3, h, w}, std::move(v));
}

void check_close(const std::vector<float>& got, const nlohmann::json& want) {
    REQUIRE(got.size() == want.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double w = want[i].get<double>();
        worst = std::max(worst, std::abs(got[i] - w) / (1.0 + std::abs(w)));
    }
    CHECK(worst < 1e-4);
}

Node node(std::string op, std::vector<std::string> in, std::vector<std::string> out) {
    Node n;
    n.op_type = std::move(op);
    n.name = n.op_type;
    n.inputs = std::move(in);
    n.outputs = std::move(out);
    return n;
}

Attribute ints_attr(std::string name, std::vector<std::int64_t> v) {
    Attribute a;
    a.name = std::move(name);
    a.ints = std::move(v);
    return a;
}

Attribute int_attr(std::string name, std::int64_t v) {
    Attribute a;
    a.name = std::move(name);
    a.i = v;
    return a;
}

Tensor run_single(Graph g, const Tensor& x) {
    const std::string out = g.nodes.back().outputs[0];
    Session s(std::move(g), {out});
    return s.run({{"x", x}}).at(out);
}

}  // namespace

TEST_CASE("mnas-style fixture matches the exporting framework") {
    const auto expected = expected_outputs()["mnas_tiny"];
    Graph g = load_model(kData / "mnas_tiny.onnx");
    REQUIRE(g.inputs.size() == 1);
    CHECK(g.inputs[0].dims == std::vector<std::int64_t>{1, 3, 32, 32});
    Session s(std::move(g), {"features", "logits"});
    const auto out = s.run({{"image", pattern_input(32, 32)}});
    CHECK(out.at("features").shape == std::vector<std::int64_t>{1, 1056});
    check_close(out.at("features").data, expected["features"]);
    check_close(out.at("logits").data, expected["logits"]);
}

TEST_CASE("inception-style fixture with a symbolic batch and dynamic reshape") {
    const auto expected = expected_outputs()["inception_tiny"];
    Graph g = load_model(kData / "inception_tiny.onnx");
    CHECK(g.inputs[0].dims == std::vector<std::int64_t>{-1, 3, 24, 40});
    Session s(std::move(g), {"features"});
    const auto out = s.run({{"image", pattern_input(24, 40)}});
    CHECK(out.at("features").shape == std::vector<std::int64_t>{1, 2048});
    check_close(out.at("features").data, expected["features"]);
}

TEST_CASE("sessions give bit-identical results across calls") {
    Session s(load_model(kData / "mnas_tiny.onnx"), {"features"});
    const auto x = pattern_input(32, 32);
    CHECK(s.run({{"image", x}}).at("features").data == s.run({{"image", x}}).at("features").data);
}

TEST_CASE("malformed bytes are rejected") {
    const std::vector<std::uint8_t> junk = {0x0a, 0xff, 0xff, 0xff, 0xff, 0x0f, 0x01};
    CHECK_THROWS_AS(parse_model(junk), Error);
    try {
        load_model(kData / "make_onnx_fixtures.py");
        FAIL("python source parsed as a model");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnsupportedFormat);
    }
}

TEST_CASE("planning rejects unsupported operators") {
    Graph g;
    g.inputs.push_back({"x", 1, {1}});
    g.nodes.push_back(node("Einsum", {"x"}, {"y"}));
    try {
        plan(g, {"y"});
        FAIL("expected UnsupportedFormat");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnsupportedFormat);
    }
    CHECK_FALSE(is_supported_op("Einsum"));
    CHECK(is_supported_op("Conv"));
}

TEST_CASE("slice with negative steps and clamped bounds") {
    Graph g;
    g.inputs.push_back({"x", 1, {2, 5}});
    g.initializers["starts"] = Tensor::int64s({2}, {-1, 100});
    g.initializers["ends"] = Tensor::int64s({2}, {-100, 0});
    g.initializers["axes"] = Tensor::int64s({2}, {0, 1});
    g.initializers["steps"] = Tensor::int64s({2}, {-1, -2});
    g.nodes.push_back(node("Slice", {"x", "starts", "ends", "axes", "steps"}, {"y"}));
    const auto y = run_single(g, Tensor::floats({2, 5}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
    CHECK(y.shape == std::vector<std::int64_t>{2, 2});
    CHECK(y.data == std::vector<float>{9, 7, 4, 2});
}

TEST_CASE("transpose permutes axes") {
    Graph g;
    g.inputs.push_back({"x", 1, {2, 3, 1}});
    Node t = node("Transpose", {"x"}, {"y"});
    t.attributes["perm"] = ints_attr("perm", {1, 2, 0});
    g.nodes.push_back(t);
    const auto y = run_single(g, Tensor::floats({2, 3, 1}, {0, 1, 2, 3, 4, 5}));
    CHECK(y.shape == std::vector<std::int64_t>{3, 1, 2});
    CHECK(y.data == std::vector<float>{0, 3, 1, 4, 2, 5});
}

TEST_CASE("grouped convolution with stride and padding") {
    // two groups, each a 2x2 box filter on its own channel
    Graph g;
    g.inputs.push_back({"x", 1, {1, 2, 3, 3}});
    g.initializers["w"] = Tensor::floats({2, 1, 2, 2}, {1, 1, 1, 1, 1, 0, 0, -1});
    g.initializers["b"] = Tensor::floats({2}, {0.5f, 0});
    Node c = node("Conv", {"x", "w", "b"}, {"y"});
    c.attributes["group"] = int_attr("group", 2);
    c.attributes["strides"] = ints_attr("strides", {2, 2});
    c.attributes["pads"] = ints_attr("pads", {1, 1, 0, 0});
    g.nodes.push_back(c);
    std::vector<float> x(18);
    for (int i = 0; i < 18; ++i) x[static_cast<std::size_t>(i)] = static_cast<float>(i);
    const auto y = run_single(g, Tensor::floats({1, 2, 3, 3}, x));
    CHECK(y.shape == std::vector<std::int64_t>{1, 2, 2, 2});
    // channel 0 padded top/left: windows [pad,pad;pad,0], [pad,pad;1,2], [pad,3;pad,6], [4,5;7,8]
    CHECK(y.data[0] == doctest::Approx(0.5));
    CHECK(y.data[1] == doctest::Approx(3.5));
    CHECK(y.data[2] == doctest::Approx(9.5));
    CHECK(y.data[3] == doctest::Approx(24.5));
    // channel 1 (values 9..17) with taps (+1 top-left, -1 bottom-right)
    CHECK(y.data[4] == doctest::Approx(-9));
    CHECK(y.data[5] == doctest::Approx(-11));
    CHECK(y.data[6] == doctest::Approx(-15));
    CHECK(y.data[7] == doctest::Approx(13 - 17));
}

TEST_CASE("max pool with ceil mode covers the ragged edge") {
    Graph g;
    g.inputs.push_back({"x", 1, {1, 1, 1, 5}});
    Node p = node("MaxPool", {"x"}, {"y"});
    p.attributes["kernel_shape"] = ints_attr("kernel_shape", {1, 2});
    p.attributes["strides"] = ints_attr("strides", {1, 2});
    p.attributes["ceil_mode"] = int_attr("ceil_mode", 1);
    g.nodes.push_back(p);
    const auto y = run_single(g, Tensor::floats({1, 1, 1, 5}, {3, 1, -2, -5, -7}));
    CHECK(y.data == std::vector<float>{3, -2, -7});
}

TEST_CASE("gemm with transposed weight and broadcast bias") {
    Graph g;
    g.inputs.push_back({"x", 1, {2, 3}});
    g.initializers["w"] = Tensor::floats({2, 3}, {1, 0, 2, -1, 1, 0});
    g.initializers["b"] = Tensor::floats({2}, {10, 20});
    Node m = node("Gemm", {"x", "w", "b"}, {"y"});
    m.attributes["transB"] = int_attr("transB", 1);
    g.nodes.push_back(m);
    const auto y = run_single(g, Tensor::floats({2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK(y.shape == std::vector<std::int64_t>{2, 2});
    CHECK(y.data == std::vector<float>{17, 21, 26, 21});
}
