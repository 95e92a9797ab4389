#include "ecgfuse/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "ecgfuse/error.hpp"

namespace ecgfuse {

namespace {

// Half-sample symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1.
std::size_t reflect_index(long long i, long long n) {
    const long long period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < n ? i : period - 1 - i);
}

// FFTW plans are not safe to create concurrently; executing them is.
class PlanCache {
public:
    static PlanCache& instance() {
        static PlanCache cache;
        return cache;
    }

    fftw_plan r2c(int n) {
        std::lock_guard lock(mutex_);
        auto it = plans_.find(n);
        if (it != plans_.end()) return it->second;
        auto* in = fftw_alloc_real(static_cast<std::size_t>(n));
        auto* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
        // ESTIMATE keeps the chosen algorithm, and so every output bit, stable between runs.
        fftw_plan plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
        fftw_free(in);
        fftw_free(out);
        plans_.emplace(n, plan);
        return plan;
    }

    ~PlanCache() {
        for (auto& [n, plan] : plans_) fftw_destroy_plan(plan);
    }

private:
    std::mutex mutex_;
    std::map<int, fftw_plan> plans_;
};

struct FftwDeleter {
    void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

std::vector<double> bandpass(std::span<const double> signal, int rate, double hp_cutoff_hz,
                             double gauss_sigma_s) {
    if (rate <= 0) throw Error(ErrorCode::InvalidCutoff, "sampling rate must be positive");
    if (!(hp_cutoff_hz > 0.0) || !(hp_cutoff_hz < rate / 2.0)) {
        throw Error(ErrorCode::InvalidCutoff, "high-pass cutoff must lie in (0, rate/2)");
    }
    if (!(gauss_sigma_s > 0.0)) throw Error(ErrorCode::InvalidCutoff, "gaussian sigma must be positive");
    if (signal.empty()) throw Error(ErrorCode::EmptySignal, "bandpass of an empty signal");

    const std::size_t n = signal.size();
    const double dt = 1.0 / rate;
    const double rc = 1.0 / (2.0 * std::numbers::pi * hp_cutoff_hz);
    const double alpha = rc / (rc + dt);

    std::vector<double> hp(n);
    double y_prev = 0.0;
    double x_prev = signal[0];
    for (std::size_t k = 0; k < n; ++k) {
        const double y = alpha * (y_prev + signal[k] - x_prev);
        hp[k] = y;
        y_prev = y;
        x_prev = signal[k];
    }

    const double sigma = gauss_sigma_s * rate;
    const auto radius = static_cast<long long>(std::ceil(4.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (long long k = -radius; k <= radius; ++k) {
        const double w = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
        kernel[static_cast<std::size_t>(k + radius)] = w;
        total += w;
    }
    for (double& w : kernel) w /= total;

    std::vector<double> out(n, 0.0);
    const auto len = static_cast<long long>(n);
    for (long long i = 0; i < len; ++i) {
        double acc = 0.0;
        for (long long k = -radius; k <= radius; ++k) {
            acc += kernel[static_cast<std::size_t>(k + radius)] * hp[reflect_index(i + k, len)];
        }
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

std::size_t window_length(int rate, double window_s) {
    return static_cast<std::size_t>(std::llround(window_s * rate));
}

std::size_t window_hop(std::size_t length, double overlap_fraction) {
    const auto hop = static_cast<std::size_t>(
        std::llround(static_cast<double>(length) * (1.0 - overlap_fraction)));
    return std::max<std::size_t>(hop, 1);
}

std::vector<Window> segment_windows(std::span<const double> signal, int rate, double window_s,
                                    double overlap_fraction) {
    if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
        throw Error(ErrorCode::ConfigInvalid, "overlap fraction must lie in [0, 1)");
    }
    const std::size_t length = window_length(rate, window_s);
    if (length == 0 || length > signal.size()) {
        throw Error(ErrorCode::WindowTooLong, "window of " + std::to_string(length) +
                                                  " samples does not fit a signal of " +
                                                  std::to_string(signal.size()));
    }
    const std::size_t hop = window_hop(length, overlap_fraction);
    const std::size_t count = (signal.size() - length) / hop + 1;

    std::vector<Window> windows(count);
    for (std::size_t n = 0; n < count; ++n) {
        windows[n].index = n;
        windows[n].sampling_rate = rate;
        const auto first = signal.begin() + static_cast<std::ptrdiff_t>(n * hop);
        windows[n].samples.assign(first, first + static_cast<std::ptrdiff_t>(length));
    }
    return windows;
}

Spectrogram stft(const Window& window, double chunk_s, double chunk_overlap) {
    if (!(chunk_overlap >= 0.0 && chunk_overlap < 1.0)) {
        throw Error(ErrorCode::ConfigInvalid, "chunk overlap must lie in [0, 1)");
    }
    const std::size_t chunk = window_length(window.sampling_rate, chunk_s);
    if (chunk < 2) throw Error(ErrorCode::ChunkTooLong, "chunk must span at least two samples");
    if (chunk > window.samples.size()) {
        throw Error(ErrorCode::ChunkTooLong, "chunk of " + std::to_string(chunk) +
                                                 " samples exceeds window of " +
                                                 std::to_string(window.samples.size()));
    }
    const std::size_t hop = window_hop(chunk, chunk_overlap);
    const std::size_t frames = (window.samples.size() - chunk) / hop + 1;
    const std::size_t bins = chunk / 2 + 1;

    std::vector<double> hann(chunk);
    for (std::size_t k = 0; k < chunk; ++k) {
        hann[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                                        static_cast<double>(chunk)));
    }

    const fftw_plan plan = PlanCache::instance().r2c(static_cast<int>(chunk));
    std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(chunk));
    std::unique_ptr<fftw_complex, FftwDeleter> out(fftw_alloc_complex(bins));

    Spectrogram spec(bins, frames);
    spec.bin_hz = static_cast<double>(window.sampling_rate) / static_cast<double>(chunk);
    spec.frame_s = static_cast<double>(hop) / static_cast<double>(window.sampling_rate);
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t k = 0; k < chunk; ++k) in.get()[k] = window.samples[f * hop + k] * hann[k];
        fftw_execute_dft_r2c(plan, in.get(), out.get());
        for (std::size_t b = 0; b < bins; ++b) {
            spec.at(b, f) = std::hypot(out.get()[b][0], out.get()[b][1]);
        }
    }
    return spec;
}

Spectrogram normalize_spectrogram(const Spectrogram& spec, double floor_eps) {
    if (spec.normalized) throw Error(ErrorCode::AlreadyNormalized, "spectrogram is already normalized");
    if (!(floor_eps > 0.0 && floor_eps <= 1.0)) {
        throw Error(ErrorCode::ConfigInvalid, "floor_eps must lie in (0, 1]");
    }
    Spectrogram out = spec;
    out.normalized = true;
    const double peak = spec.values.empty() ? 0.0 : *std::max_element(spec.values.begin(), spec.values.end());
    if (!(peak > 0.0)) {
        std::fill(out.values.begin(), out.values.end(), std::log(floor_eps * 255.0));
        return out;
    }
    for (double& v : out.values) v = std::log(std::max(v / peak, floor_eps) * 255.0);
    return out;
}

RenderResult render_image(const Spectrogram& spec, Colormap colormap) {
    if (!spec.normalized) throw Error(ErrorCode::NotNormalized, "render_image needs a normalized spectrogram");
    const int width = static_cast<int>(spec.cols);
    const int height = static_cast<int>(spec.rows);
    RenderResult result;
    if (spec.values.empty()) {
        result.image = RgbImage(width, height);
        return result;
    }
    const auto [lo_it, hi_it] = std::minmax_element(spec.values.begin(), spec.values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) {
        result.degenerate_range = true;
        result.image = RgbImage(width, height, colormap_entry(colormap, 128));
        return result;
    }
    result.image = RgbImage(width, height);
    const double scale = 255.0 / (hi - lo);
    for (int y = 0; y < height; ++y) {
        const std::size_t row = spec.rows - 1 - static_cast<std::size_t>(y);
        for (int x = 0; x < width; ++x) {
            const long level = std::lround((spec.at(row, static_cast<std::size_t>(x)) - lo) * scale);
            result.image.set(x, y, colormap_entry(colormap, static_cast<std::uint8_t>(std::clamp(level, 0L, 255L))));
        }
    }
    return result;
}

SpectrogramSet record_spectrograms(const EcgRecord& rec, const DspOptions& options) {
    SpectrogramSet set;
    set.record_id = rec.record_id;
    for (LeadId lead : kAllLeads) {
        const auto filtered = bandpass(rec.lead(lead), rec.sampling_rate, options.hp_cutoff_hz,
                                       options.gauss_sigma_s);
        auto windows = segment_windows(filtered, rec.sampling_rate, options.window_s, options.overlap);
        auto& specs = set.leads[index_of(lead)];
        specs.reserve(windows.size());
        for (auto& w : windows) {
            w.record_id = rec.record_id;
            w.lead = lead;
            specs.push_back(normalize_spectrogram(stft(w, options.chunk_s, options.chunk_overlap),
                                                  options.floor_eps));
        }
    }
    return set;
}

}  // namespace ecgfuse
