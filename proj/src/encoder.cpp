#include "ecgfuse/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ecgfuse/binary_io.hpp"
#include "ecgfuse/error.hpp"
#include "ecgfuse/onnx.hpp"
#include "ecgfuse/rng.hpp"

namespace ecgfuse {

namespace fs = std::filesystem;

std::size_t argmax(const std::vector<double>& values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

// ---- fallback --------------------------------------------------------------------------

FallbackBackend::FallbackBackend(std::size_t tau, std::uint64_t seed, InputSpec input)
    : tau_(tau), seed_(seed), input_(input) {
    if (tau == 0) throw Error(ErrorCode::ConfigInvalid, "fallback tau must be at least 1");
    if (input.width <= 0 || input.height <= 0 || input.channels != 3) {
        throw Error(ErrorCode::ConfigInvalid, "fallback input must be a positive RGB size");
    }
    dim_ = static_cast<std::size_t>(input.width) * static_cast<std::size_t>(input.height) * 3;
    projection_.resize(tau_ * dim_);
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    for (double& p : projection_) p = rng.normal() * scale;
}

std::string FallbackBackend::id() const {
    return "fallback:" + std::to_string(tau_) + ":" + std::to_string(seed_);
}

std::vector<double> FallbackBackend::embed(const RgbImage& image) const {
    if (image.width != input_.width || image.height != input_.height) {
        throw Error(ErrorCode::ShapeMismatch, "fallback backend expects " + std::to_string(input_.width) +
                                                  "x" + std::to_string(input_.height) + " input");
    }
    std::vector<double> x(dim_);
    for (std::size_t j = 0; j < dim_; ++j) x[j] = image.pixels[j] / 255.0;
    std::vector<double> out(tau_);
    for (std::size_t i = 0; i < tau_; ++i) {
        const double* row = projection_.data() + i * dim_;
        double acc = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) acc += row[j] * x[j];
        out[i] = acc > 0.0 ? acc : 0.0;
    }
    return out;
}

std::unique_ptr<EmbeddingBackend> fallback_backend(std::size_t tau, std::uint64_t seed) {
    return std::make_unique<FallbackBackend>(tau, seed);
}

// ---- onnx ------------------------------------------------------------------------------

namespace {

constexpr float kImagenetMean[3] = {0.485f, 0.456f, 0.406f};
constexpr float kImagenetStd[3] = {0.229f, 0.224f, 0.225f};

std::string_view kind_name(BackendKind kind) {
    return kind == BackendKind::InceptionClass ? "inception" : "mnasnet";
}

class OnnxBackend final : public EmbeddingBackend {
public:
    OnnxBackend(onnx::Graph graph, std::string output, BackendKind kind, std::string source)
        : session_(std::move(graph), {output}), output_(std::move(output)) {
        const auto& g = session_.graph();
        if (g.inputs.size() != 1) {
            throw Error(ErrorCode::UnsupportedFormat, "expected exactly one image input, found " +
                                                          std::to_string(g.inputs.size()));
        }
        const auto& in = g.inputs[0];
        input_name_ = in.name;
        if (in.dims.size() != 4 || (in.dims[1] != 3 && in.dims[1] != -1)) {
            throw Error(ErrorCode::UnsupportedFormat, "image input must be [N, 3, H, W]");
        }
        const int fallback_side = kind == BackendKind::InceptionClass ? 299 : 224;
        input_.height = in.dims[2] > 0 ? static_cast<int>(in.dims[2]) : fallback_side;
        input_.width = in.dims[3] > 0 ? static_cast<int>(in.dims[3]) : fallback_side;

        const auto out_info = std::find_if(g.outputs.begin(), g.outputs.end(),
                                           [&](const onnx::ValueInfo& v) { return v.name == output_; });
        bool known = out_info != g.outputs.end() && out_info->dims.size() >= 2;
        std::size_t width = 1;
        if (known) {
            for (std::size_t d = 1; d < out_info->dims.size(); ++d) {
                if (out_info->dims[d] <= 0) known = false;
                width *= static_cast<std::size_t>(std::max<std::int64_t>(out_info->dims[d], 1));
            }
        }
        tau_ = known ? width : run(RgbImage(input_.width, input_.height)).size();
        if (tau_ != declared_tau(kind)) {
            throw Error(ErrorCode::TauMismatch, "output '" + output_ + "' is " + std::to_string(tau_) +
                                                    " wide, " + std::string(kind_name(kind)) +
                                                    "-class backends expose " +
                                                    std::to_string(declared_tau(kind)));
        }
        id_ = "onnx:" + source + ":" + std::string(kind_name(kind));
    }

    std::string id() const override { return id_; }
    std::size_t tau() const override { return tau_; }
    InputSpec expected_input() const override { return input_; }

    std::vector<double> embed(const RgbImage& image) const override {
        if (image.width != input_.width || image.height != input_.height) {
            throw Error(ErrorCode::ShapeMismatch, "onnx backend expects " + std::to_string(input_.width) +
                                                      "x" + std::to_string(input_.height) + " input");
        }
        auto out = run(image);
        if (out.size() != tau_) throw Error(ErrorCode::ShapeMismatch, "backend output width changed");
        return out;
    }

private:
    std::vector<double> run(const RgbImage& image) const {
        const auto h = static_cast<std::size_t>(image.height), w = static_cast<std::size_t>(image.width);
        std::vector<float> pixels(3 * h * w);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const float v = image.pixels[(y * w + x) * 3 + c] / 255.0f;
                    pixels[(c * h + y) * w + x] = (v - kImagenetMean[c]) / kImagenetStd[c];
                }
            }
        }
        std::map<std::string, onnx::Tensor> feeds;
        feeds[input_name_] = onnx::Tensor::floats(
            {1, 3, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)}, std::move(pixels));
        const auto result = session_.run(feeds);
        const onnx::Tensor& t = result.at(output_);
        return std::vector<double>(t.data.begin(), t.data.end());
    }

    onnx::Session session_;
    std::string output_;
    std::string input_name_;
    InputSpec input_;
    std::size_t tau_ = 0;
    std::string id_;
};

}  // namespace

std::size_t declared_tau(BackendKind kind) {
    return kind == BackendKind::InceptionClass ? 2048 : 1056;
}

std::unique_ptr<EmbeddingBackend> load_backend(const fs::path& path, BackendKind kind,
                                               const std::string& output_name) {
    if (!fs::exists(path)) throw Error(ErrorCode::BackendLoadFailure, path.string() + " does not exist");
    onnx::Graph graph = onnx::load_model(path);
    std::string output = output_name;
    if (output.empty()) {
        for (const auto& o : graph.outputs) {
            if (o.name == "features") output = o.name;
        }
        if (output.empty() && graph.outputs.size() == 1) output = graph.outputs[0].name;
        if (output.empty()) {
            throw Error(ErrorCode::UnsupportedFormat,
                        path.string() + ": no graph output named 'features' and more than one output");
        }
    }
    return std::make_unique<OnnxBackend>(std::move(graph), output, kind, path.filename().string());
}

std::unique_ptr<EmbeddingBackend> make_backend(const std::string& spec) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    try {
        if (parts.size() == 3 && parts[0] == "fallback") {
            return fallback_backend(std::stoull(parts[1]), std::stoull(parts[2]));
        }
    } catch (const std::logic_error&) {
        throw Error(ErrorCode::ConfigInvalid, "bad fallback backend spec '" + spec + "'");
    }
    if (parts.size() >= 2 && parts[0] == "onnx") {
        BackendKind kind = BackendKind::MnasnetClass;
        std::string path = spec.substr(5);
        if (const auto colon = path.rfind(':'); colon != std::string::npos) {
            const std::string suffix = path.substr(colon + 1);
            if (suffix == "inception" || suffix == "mnasnet") {
                kind = suffix == "inception" ? BackendKind::InceptionClass : BackendKind::MnasnetClass;
                path = path.substr(0, colon);
            }
        }
        return load_backend(path, kind);
    }
    throw Error(ErrorCode::ConfigInvalid, "backend spec must be onnx:<path>[:kind] or fallback:<tau>:<seed>, got '" + spec + "'");
}

FeatureVector encode(const EmbeddingBackend& backend, const Spectrogram& spec, FeatureSource source) {
    if (!spec.normalized) throw Error(ErrorCode::NotNormalized, "encode needs a normalized spectrogram");
    if (std::any_of(spec.values.begin(), spec.values.end(), [](double v) { return !std::isfinite(v); })) {
        throw Error(ErrorCode::NonFiniteOutput, "spectrogram contains non-finite cells");
    }
    const auto rendered = render_image(spec, Colormap::Viridis);
    const InputSpec in = backend.expected_input();
    const RgbImage fitted = resize_letterbox(rendered.image, in.width, in.height,
                                             colormap_entry(Colormap::Viridis, 0));
    FeatureVector fv;
    fv.values = backend.embed(fitted);
    fv.backend_id = backend.id();
    fv.source = source;
    if (fv.values.size() != backend.tau()) throw Error(ErrorCode::ShapeMismatch, "backend returned wrong width");
    if (std::any_of(fv.values.begin(), fv.values.end(), [](double v) { return !std::isfinite(v); })) {
        throw Error(ErrorCode::NonFiniteOutput, backend.id() + " produced non-finite features");
    }
    return fv;
}

// ---- feature blobs ---------------------------------------------------------------------

std::span<const float> FeatureBlob::at(std::size_t lead, std::size_t window) const {
    return std::span<const float>(values).subspan((lead * gamma + window) * tau, tau);
}

std::span<float> FeatureBlob::at(std::size_t lead, std::size_t window) {
    return std::span<float>(values).subspan((lead * gamma + window) * tau, tau);
}

void write_feature_blob(const FeatureBlob& blob, const fs::path& path) {
    if (blob.values.size() != static_cast<std::size_t>(blob.tau) * blob.gamma * blob.n_leads) {
        throw Error(ErrorCode::ShapeMismatch, "feature blob size does not match its header");
    }
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + tmp.string());
        out.write("ECGF1", 5);
        binary::put_u32(out, blob.tau);
        binary::put_u32(out, blob.gamma);
        binary::put_u32(out, blob.n_leads);
        for (float v : blob.values) binary::put_f32(out, v);
    }
    fs::rename(tmp, path);
}

FeatureBlob read_feature_blob(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::CacheMiss, "missing feature blob " + path.string());
    binary::expect_magic(in, "ECGF1", path.string());
    FeatureBlob blob;
    blob.tau = binary::get_u32(in);
    blob.gamma = binary::get_u32(in);
    blob.n_leads = binary::get_u32(in);
    blob.values.resize(static_cast<std::size_t>(blob.tau) * blob.gamma * blob.n_leads);
    for (float& v : blob.values) v = binary::get_f32(in);
    if (in.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorCode::UnsupportedFormat, path.string() + ": trailing bytes");
    }
    return blob;
}

}  // namespace ecgfuse
