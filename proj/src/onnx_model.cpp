#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "ecgfuse/error.hpp"
#include "ecgfuse/onnx.hpp"

namespace ecgfuse::onnx {

namespace {

[[noreturn]] void malformed(const std::string& what) {
    throw Error(ErrorCode::UnsupportedFormat, "onnx: " + what);
}

enum WireType : std::uint32_t { Varint = 0, Fixed64 = 1, LengthDelimited = 2, Fixed32 = 5 };

// Protocol buffer wire-format cursor.
class WireReader {
public:
    explicit WireReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    bool done() const { return pos_ >= bytes_.size(); }

    std::pair<std::uint32_t, WireType> tag() {
        const std::uint64_t key = varint();
        return {static_cast<std::uint32_t>(key >> 3), static_cast<WireType>(key & 7)};
    }

    std::uint64_t varint() {
        std::uint64_t value = 0;
        for (int shift = 0; shift < 64; shift += 7) {
            if (pos_ >= bytes_.size()) malformed("truncated varint");
            const std::uint8_t b = bytes_[pos_++];
            value |= static_cast<std::uint64_t>(b & 0x7F) << shift;
            if ((b & 0x80) == 0) return value;
        }
        malformed("varint too long");
    }

    std::uint32_t fixed32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t fixed64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    std::span<const std::uint8_t> bytes() {
        const auto len = static_cast<std::size_t>(varint());
        need(len);
        auto out = bytes_.subspan(pos_, len);
        pos_ += len;
        return out;
    }

    std::string string() {
        const auto b = bytes();
        return std::string(reinterpret_cast<const char*>(b.data()), b.size());
    }

    void skip(WireType type) {
        switch (type) {
            case Varint: varint(); break;
            case Fixed64: need(8); pos_ += 8; break;
            case LengthDelimited: bytes(); break;
            case Fixed32: need(4); pos_ += 4; break;
            default: malformed("unsupported wire type " + std::to_string(type));
        }
    }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) malformed("truncated field");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

// Repeated scalar fields may arrive packed or one per tag.
void read_ints(WireReader& r, WireType type, std::vector<std::int64_t>& out) {
    if (type == LengthDelimited) {
        WireReader packed(r.bytes());
        while (!packed.done()) out.push_back(static_cast<std::int64_t>(packed.varint()));
    } else {
        out.push_back(static_cast<std::int64_t>(r.varint()));
    }
}

void read_floats(WireReader& r, WireType type, std::vector<float>& out) {
    if (type == LengthDelimited) {
        WireReader packed(r.bytes());
        while (!packed.done()) out.push_back(std::bit_cast<float>(packed.fixed32()));
    } else {
        out.push_back(std::bit_cast<float>(r.fixed32()));
    }
}

void read_doubles(WireReader& r, WireType type, std::vector<double>& out) {
    if (type == LengthDelimited) {
        WireReader packed(r.bytes());
        while (!packed.done()) out.push_back(std::bit_cast<double>(packed.fixed64()));
    } else {
        out.push_back(std::bit_cast<double>(r.fixed64()));
    }
}

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

NamedTensor parse_tensor(std::span<const std::uint8_t> bytes) {
    WireReader r(bytes);
    NamedTensor out;
    std::int32_t data_type = 0;
    std::vector<float> float_data;
    std::vector<std::int64_t> int_data;
    std::vector<double> double_data;
    std::span<const std::uint8_t> raw;
    bool has_raw = false;
    while (!r.done()) {
        const auto [field, type] = r.tag();
        switch (field) {
            case 1: read_ints(r, type, out.tensor.shape); break;
            case 2: data_type = static_cast<std::int32_t>(r.varint()); break;
            case 4: read_floats(r, type, float_data); break;
            case 5: read_ints(r, type, int_data); break;
            case 7: read_ints(r, type, int_data); break;
            case 8: out.name = r.string(); break;
            case 9: raw = r.bytes(); has_raw = true; break;
            case 10: read_doubles(r, type, double_data); break;
            case 14:
                if (r.varint() != 0) malformed("external tensor data is not supported");
                break;
            default: r.skip(type);
        }
    }

    std::size_t count = 1;
    for (auto d : out.tensor.shape) {
        if (d < 0) malformed("negative tensor dimension");
        count *= static_cast<std::size_t>(d);
    }
    Tensor& t = out.tensor;
    switch (static_cast<DataType>(data_type)) {
        case DataType::Float:
            t.is_int = false;
            if (has_raw) {
                if (raw.size() != count * 4) malformed("raw float data size mismatch for " + out.name);
                t.data.resize(count);
                for (std::size_t i = 0; i < count; ++i) {
                    std::uint32_t bits = 0;
                    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[i * 4 + b]) << (8 * b);
                    t.data[i] = std::bit_cast<float>(bits);
                }
            } else {
                t.data = std::move(float_data);
            }
            break;
        case DataType::Double:
            t.is_int = false;
            if (has_raw) {
                if (raw.size() != count * 8) malformed("raw double data size mismatch for " + out.name);
                t.data.resize(count);
                for (std::size_t i = 0; i < count; ++i) {
                    std::uint64_t bits = 0;
                    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[i * 8 + b]) << (8 * b);
                    t.data[i] = static_cast<float>(std::bit_cast<double>(bits));
                }
            } else {
                for (double d : double_data) t.data.push_back(static_cast<float>(d));
            }
            break;
        case DataType::Int64:
        case DataType::Int32: {
            t.is_int = true;
            if (has_raw) {
                const std::size_t width = static_cast<DataType>(data_type) == DataType::Int64 ? 8 : 4;
                if (raw.size() != count * width) malformed("raw int data size mismatch for " + out.name);
                t.ints.resize(count);
                for (std::size_t i = 0; i < count; ++i) {
                    std::uint64_t bits = 0;
                    for (std::size_t b = 0; b < width; ++b) bits |= static_cast<std::uint64_t>(raw[i * width + b]) << (8 * b);
                    t.ints[i] = width == 8 ? static_cast<std::int64_t>(bits)
                                           : static_cast<std::int64_t>(static_cast<std::int32_t>(bits));
                }
            } else {
                t.ints = std::move(int_data);
                if (static_cast<DataType>(data_type) == DataType::Int32) {
                    for (auto& v : t.ints) v = static_cast<std::int32_t>(v);
                }
            }
            break;
        }
        default:
            malformed("tensor " + out.name + " has unsupported data type " + std::to_string(data_type));
    }
    if ((t.is_int ? t.ints.size() : t.data.size()) != count) {
        malformed("tensor " + out.name + " holds the wrong number of elements");
    }
    return out;
}

Attribute parse_attribute(std::span<const std::uint8_t> bytes) {
    WireReader r(bytes);
    Attribute a;
    while (!r.done()) {
        const auto [field, type] = r.tag();
        switch (field) {
            case 1: a.name = r.string(); break;
            case 2: a.f = std::bit_cast<float>(r.fixed32()); break;
            case 3: a.i = static_cast<std::int64_t>(r.varint()); break;
            case 4: a.s = r.string(); break;
            case 5: a.t = parse_tensor(r.bytes()).tensor; break;
            case 7: read_floats(r, type, a.floats); break;
            case 8: read_ints(r, type, a.ints); break;
            case 20: a.type = static_cast<std::int32_t>(r.varint()); break;
            default: r.skip(type);
        }
    }
    return a;
}

Node parse_node(std::span<const std::uint8_t> bytes) {
    WireReader r(bytes);
    Node n;
    while (!r.done()) {
        const auto [field, type] = r.tag();
        switch (field) {
            case 1: n.inputs.push_back(r.string()); break;
            case 2: n.outputs.push_back(r.string()); break;
            case 3: n.name = r.string(); break;
            case 4: n.op_type = r.string(); break;
            case 5: {
                Attribute a = parse_attribute(r.bytes());
                n.attributes[a.name] = std::move(a);
                break;
            }
            case 7: n.domain = r.string(); break;
            default: r.skip(type);
        }
    }
    return n;
}

void parse_shape(std::span<const std::uint8_t> bytes, std::vector<std::int64_t>& dims) {
    WireReader r(bytes);
    while (!r.done()) {
        const auto [field, type] = r.tag();
        if (field != 1) {
            r.skip(type);
            continue;
        }
        WireReader dim(r.bytes());
        std::int64_t value = -1;
        while (!dim.done()) {
            const auto [f, t] = dim.tag();
            if (f == 1) {
                value = static_cast<std::int64_t>(dim.varint());
            } else {
                dim.skip(t);
            }
        }
        dims.push_back(value);
    }
}

ValueInfo parse_value_info(std::span<const std::uint8_t> bytes) {
    WireReader r(bytes);
    ValueInfo info;
    while (!r.done()) {
        const auto [field, type] = r.tag();
        if (field == 1) {
            info.name = r.string();
        } else if (field == 2) {
            WireReader type_proto(r.bytes());
            while (!type_proto.done()) {
                const auto [tf, tt] = type_proto.tag();
                if (tf != 1) {
                    type_proto.skip(tt);
                    continue;
                }
                WireReader tensor_type(type_proto.bytes());
                while (!tensor_type.done()) {
                    const auto [f, t] = tensor_type.tag();
                    if (f == 1) {
                        info.elem_type = static_cast<std::int32_t>(tensor_type.varint());
                    } else if (f == 2) {
                        parse_shape(tensor_type.bytes(), info.dims);
                    } else {
                        tensor_type.skip(t);
                    }
                }
            }
        } else {
            r.skip(type);
        }
    }
    return info;
}

Graph parse_graph(std::span<const std::uint8_t> bytes) {
    WireReader r(bytes);
    Graph g;
    std::vector<ValueInfo> declared_inputs;
    while (!r.done()) {
        const auto [field, type] = r.tag();
        switch (field) {
            case 1: g.nodes.push_back(parse_node(r.bytes())); break;
            case 5: {
                auto t = parse_tensor(r.bytes());
                g.initializers[t.name] = std::move(t.tensor);
                break;
            }
            case 11: declared_inputs.push_back(parse_value_info(r.bytes())); break;
            case 12: g.outputs.push_back(parse_value_info(r.bytes())); break;
            default: r.skip(type);
        }
    }
    for (auto& in : declared_inputs) {
        if (!g.initializers.contains(in.name)) g.inputs.push_back(std::move(in));
    }
    return g;
}

}  // namespace

std::size_t Tensor::numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

Tensor Tensor::floats(std::vector<std::int64_t> shape, std::vector<float> values) {
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
}

Tensor Tensor::int64s(std::vector<std::int64_t> shape, std::vector<std::int64_t> values) {
    Tensor t;
    t.shape = std::move(shape);
    t.ints = std::move(values);
    t.is_int = true;
    return t;
}

const Attribute* Node::attr(const std::string& key) const {
    const auto it = attributes.find(key);
    return it == attributes.end() ? nullptr : &it->second;
}

std::int64_t Node::attr_int(const std::string& key, std::int64_t fallback) const {
    const auto* a = attr(key);
    return a ? a->i : fallback;
}

float Node::attr_float(const std::string& key, float fallback) const {
    const auto* a = attr(key);
    return a ? a->f : fallback;
}

std::vector<std::int64_t> Node::attr_ints(const std::string& key) const {
    const auto* a = attr(key);
    return a ? a->ints : std::vector<std::int64_t>{};
}

std::string Node::attr_string(const std::string& key, const std::string& fallback) const {
    const auto* a = attr(key);
    return a ? a->s : fallback;
}

Graph parse_model(std::span<const std::uint8_t> bytes) {
    WireReader r(bytes);
    Graph graph;
    bool has_graph = false;
    std::int64_t opset = 0;
    while (!r.done()) {
        const auto [field, type] = r.tag();
        if (field == 7 && type == LengthDelimited) {
            graph = parse_graph(r.bytes());
            has_graph = true;
        } else if (field == 8 && type == LengthDelimited) {
            WireReader op(r.bytes());
            std::string domain;
            std::int64_t version = 0;
            while (!op.done()) {
                const auto [f, t] = op.tag();
                if (f == 1) {
                    domain = op.string();
                } else if (f == 2) {
                    version = static_cast<std::int64_t>(op.varint());
                } else {
                    op.skip(t);
                }
            }
            if (domain.empty() || domain == "ai.onnx") opset = version;
        } else {
            r.skip(type);
        }
    }
    if (!has_graph) malformed("model has no graph");
    graph.opset = opset;
    return graph;
}

Graph load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::BackendLoadFailure, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty()) malformed(path.string() + " is empty");
    return parse_model(bytes);
}

std::vector<const Node*> plan(const Graph& graph, const std::vector<std::string>& outputs) {
    std::map<std::string, const Node*> producer;
    for (const auto& node : graph.nodes) {
        for (const auto& out : node.outputs) {
            if (!out.empty()) producer[out] = &node;
        }
    }
    std::set<std::string> available;
    for (const auto& [name, t] : graph.initializers) available.insert(name);
    for (const auto& in : graph.inputs) available.insert(in.name);

    std::set<const Node*> needed;
    std::vector<std::string> stack(outputs.begin(), outputs.end());
    while (!stack.empty()) {
        const std::string name = stack.back();
        stack.pop_back();
        if (name.empty() || available.contains(name)) continue;
        const auto it = producer.find(name);
        if (it == producer.end()) malformed("value '" + name + "' is never produced");
        if (!needed.insert(it->second).second) continue;
        for (const auto& in : it->second->inputs) stack.push_back(in);
    }

    // Keep the file's node order; ONNX requires it to be topological.
    std::vector<const Node*> schedule;
    for (const auto& node : graph.nodes) {
        if (!needed.contains(&node)) continue;
        if (!node.domain.empty() && node.domain != "ai.onnx") {
            malformed("operator domain '" + node.domain + "' is not supported");
        }
        if (!is_supported_op(node.op_type)) malformed("operator '" + node.op_type + "' is not supported");
        for (const auto& in : node.inputs) {
            if (!in.empty() && !available.contains(in)) malformed("node '" + node.name + "' is not in topological order");
        }
        for (const auto& out : node.outputs) available.insert(out);
        schedule.push_back(&node);
    }
    return schedule;
}

}  // namespace ecgfuse::onnx
