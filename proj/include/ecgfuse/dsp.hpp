#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ecgfuse/image.hpp"
#include "ecgfuse/ingest.hpp"
#include "ecgfuse/leads.hpp"

namespace ecgfuse {

struct DspOptions {
    double hp_cutoff_hz = 0.5;
    double gauss_sigma_s = 0.002;
    double window_s = 1.0;
    double overlap = 0.5;
    double chunk_s = 0.1;
    double chunk_overlap = 0.9;
    double floor_eps = 1e-6;
};

struct Window {
    std::string record_id;
    LeadId lead = LeadId::I;
    std::size_t index = 0;
    int sampling_rate = 0;
    std::vector<double> samples;
};

// Frequency rows (low to high) by time columns (early to late), row-major.
struct Spectrogram {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    double bin_hz = 0.0;
    double frame_s = 0.0;
    bool normalized = false;

    Spectrogram() = default;
    Spectrogram(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), values(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    bool operator==(const Spectrogram&) const = default;
};

// First-order recursive high-pass (started at steady state for the first sample) followed by
// a truncated Gaussian FIR of radius ceil(4 sigma) with half-sample symmetric boundaries.
std::vector<double> bandpass(std::span<const double> signal, int rate, double hp_cutoff_hz,
                             double gauss_sigma_s);

std::size_t window_length(int rate, double window_s);
std::size_t window_hop(std::size_t length, double overlap_fraction);

// Windows of window_s * rate samples starting every hop; a trailing remainder is dropped.
std::vector<Window> segment_windows(std::span<const double> signal, int rate, double window_s,
                                    double overlap_fraction);

// Magnitude of the one-sided DFT of Hann-windowed chunks.
Spectrogram stft(const Window& window, double chunk_s, double chunk_overlap);

// ln(max(F / max F, floor_eps) * 255), elementwise.
Spectrogram normalize_spectrogram(const Spectrogram& spec, double floor_eps = 1e-6);

struct RenderResult {
    RgbImage image;
    bool degenerate_range = false;
};

// Min-max scales a normalized spectrogram onto the colormap; low frequencies at the bottom.
RenderResult render_image(const Spectrogram& spec, Colormap colormap = Colormap::Viridis);

// Normalized spectrograms of every window of every lead, indexed [lead][window].
struct SpectrogramSet {
    std::string record_id;
    std::array<std::vector<Spectrogram>, kNumLeads> leads;

    std::size_t gamma() const { return leads[0].size(); }
};

SpectrogramSet record_spectrograms(const EcgRecord& rec, const DspOptions& options = {});

}  // namespace ecgfuse
