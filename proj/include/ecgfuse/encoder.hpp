#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ecgfuse/dsp.hpp"
#include "ecgfuse/image.hpp"
#include "ecgfuse/types.hpp"

namespace ecgfuse {

struct InputSpec {
    int width = 0;
    int height = 0;
    int channels = 3;
};

// Maps a colormapped image at the backend's native resolution to a tau-dimensional embedding.
// Implementations are read-only after construction and safe to share between threads.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;

    virtual std::string id() const = 0;
    virtual std::size_t tau() const = 0;
    virtual InputSpec expected_input() const = 0;

    // `image` must already be expected_input().width x height.
    virtual std::vector<double> embed(const RgbImage& image) const = 0;
};

// ReLU(P * x) where x is the image flattened to [0, 1] values (row-major, RGB interleaved)
// and P is a tau x D Gaussian projection with entries N(0, 1/D) drawn from `seed`.
class FallbackBackend final : public EmbeddingBackend {
public:
    FallbackBackend(std::size_t tau, std::uint64_t seed, InputSpec input = {64, 64, 3});

    std::string id() const override;
    std::size_t tau() const override { return tau_; }
    InputSpec expected_input() const override { return input_; }
    std::vector<double> embed(const RgbImage& image) const override;

    // Row-major tau x D.
    std::span<const double> projection() const { return projection_; }
    std::size_t input_dim() const { return dim_; }

private:
    std::size_t tau_;
    std::uint64_t seed_;
    InputSpec input_;
    std::size_t dim_;
    std::vector<double> projection_;
};

enum class BackendKind { InceptionClass, MnasnetClass };

std::size_t declared_tau(BackendKind kind);

// Loads an ONNX network and taps `output_name` (default: the graph output named "features",
// or the only output). Throws TauMismatch when the tapped width is not the kind's width.
std::unique_ptr<EmbeddingBackend> load_backend(const std::filesystem::path& path, BackendKind kind,
                                               const std::string& output_name = "");

std::unique_ptr<EmbeddingBackend> fallback_backend(std::size_t tau, std::uint64_t seed);

// Parses "onnx:<path>[:inception|:mnasnet]" or "fallback:<tau>:<seed>".
std::unique_ptr<EmbeddingBackend> make_backend(const std::string& spec);

// Colormaps the normalized spectrogram, letterboxes it to the backend's input with bilinear
// interpolation (padding with the colormap's first colour), and embeds it.
FeatureVector encode(const EmbeddingBackend& backend, const Spectrogram& spec, FeatureSource source);

// On-disk feature block for one record: "ECGF1", tau, gamma, n_leads (u32 LE), then
// little-endian f32 values ordered lead-major, window-major.
struct FeatureBlob {
    std::uint32_t tau = 0;
    std::uint32_t gamma = 0;
    std::uint32_t n_leads = 0;
    std::vector<float> values;

    std::span<const float> at(std::size_t lead, std::size_t window) const;
    std::span<float> at(std::size_t lead, std::size_t window);

    bool operator==(const FeatureBlob&) const = default;
};

// Writes through a temporary file renamed into place.
void write_feature_blob(const FeatureBlob& blob, const std::filesystem::path& path);
FeatureBlob read_feature_blob(const std::filesystem::path& path);

}  // namespace ecgfuse
