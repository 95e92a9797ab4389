#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Minimal reader and CPU interpreter for the ONNX model format: enough of the protobuf wire
// format and the operator set to run image classifiers exported from common frameworks.
namespace ecgfuse::onnx {

enum class DataType : std::int32_t { Undefined = 0, Float = 1, Int32 = 6, Int64 = 7, Double = 11 };

// Float tensors keep `data`; integer tensors (shapes, indices) keep `ints`.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;
    std::vector<std::int64_t> ints;
    bool is_int = false;

    std::size_t numel() const;
    static Tensor floats(std::vector<std::int64_t> shape, std::vector<float> values);
    static Tensor int64s(std::vector<std::int64_t> shape, std::vector<std::int64_t> values);
};

struct Attribute {
    std::string name;
    std::int32_t type = 0;
    float f = 0.0f;
    std::int64_t i = 0;
    std::string s;
    std::vector<float> floats;
    std::vector<std::int64_t> ints;
    std::optional<Tensor> t;
};

struct Node {
    std::string name;
    std::string op_type;
    std::string domain;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::map<std::string, Attribute> attributes;

    const Attribute* attr(const std::string& key) const;
    std::int64_t attr_int(const std::string& key, std::int64_t fallback) const;
    float attr_float(const std::string& key, float fallback) const;
    std::vector<std::int64_t> attr_ints(const std::string& key) const;
    std::string attr_string(const std::string& key, const std::string& fallback) const;
};

// Declared type of a graph input or output; symbolic dimensions are -1.
struct ValueInfo {
    std::string name;
    std::int32_t elem_type = 0;
    std::vector<std::int64_t> dims;
};

struct Graph {
    std::int64_t opset = 0;
    std::vector<Node> nodes;
    std::map<std::string, Tensor> initializers;
    std::vector<ValueInfo> inputs;  // initializers excluded
    std::vector<ValueInfo> outputs;
};

// Parses a serialized ModelProto. Throws UnsupportedFormat on malformed input.
Graph load_model(const std::filesystem::path& path);
Graph parse_model(std::span<const std::uint8_t> bytes);

bool is_supported_op(const std::string& op_type);

// Nodes needed to compute `outputs`, in execution order. Throws UnsupportedFormat if any of
// them uses an operator outside the supported set or consumes an undefined value.
std::vector<const Node*> plan(const Graph& graph, const std::vector<std::string>& outputs);

class Session {
public:
    Session(Graph graph, std::vector<std::string> outputs);
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;
    Session(Session&&) = default;

    const Graph& graph() const { return graph_; }
    const std::vector<std::string>& outputs() const { return outputs_; }

    // Thread-safe: all state is read-only after construction.
    std::map<std::string, Tensor> run(const std::map<std::string, Tensor>& feeds) const;

private:
    Graph graph_;
    std::vector<std::string> outputs_;
    std::vector<const Node*> schedule_;
};

}  // namespace ecgfuse::onnx
