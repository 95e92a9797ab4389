#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "ecgfuse/dsp.hpp"
#include "ecgfuse/error.hpp"
#include "ecgfuse/rng.hpp"
#include "ecgfuse/synthetic.hpp"

using namespace ecgfuse;

namespace {

constexpr double kPi = std::numbers::pi;

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

Window make_window(std::vector<double> samples, int rate = 500) {
    Window w;
    w.sampling_rate = rate;
    w.samples = std::move(samples);
    return w;
}

// Direct O(C^2) DFT of Hann-weighted chunks, written independently of the FFT path.
Spectrogram naive_stft(const Window& w, std::size_t chunk, std::size_t hop) {
    const std::size_t frames = (w.samples.size() - chunk) / hop + 1;
    Spectrogram out(chunk / 2 + 1, frames);
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t b = 0; b <= chunk / 2; ++b) {
            std::complex<double> acc = 0.0;
            for (std::size_t n = 0; n < chunk; ++n) {
                const double hann = 0.5 - 0.5 * std::cos(2.0 * kPi * n / chunk);
                const double angle = -2.0 * kPi * static_cast<double>(b * n % chunk) / chunk;
                acc += hann * w.samples[f * hop + n] * std::polar(1.0, angle);
            }
            out.at(b, f) = std::abs(acc);
        }
    }
    return out;
}

double steady_amplitude(const std::vector<double>& y, std::size_t from) {
    double peak = 0.0;
    for (std::size_t k = from; k < y.size(); ++k) peak = std::max(peak, std::abs(y[k]));
    return peak;
}

std::vector<double> sine(double hz, int rate, std::size_t n, double amp = 1.0) {
    std::vector<double> s(n);
    for (std::size_t k = 0; k < n; ++k) s[k] = amp * std::sin(2.0 * kPi * hz * k / rate);
    return s;
}

}  // namespace

TEST_CASE("bandpass rejects DC") {
    for (double c : {1.0, -3.5, 1e-3}) {
        const std::vector<double> x(5000, c);
        const auto y = bandpass(x, 500, 0.5, 0.002);
        REQUIRE(y.size() == x.size());
        // ten time constants of a 0.5 Hz first-order section is ~3.2 s
        for (std::size_t k = 1600; k < y.size(); ++k) CHECK(std::abs(y[k]) < 1e-6 * std::abs(c));
    }
}

TEST_CASE("bandpass attenuates 0.05 Hz below the analytic bound") {
    // |H| = (f/fc)/sqrt(1+(f/fc)^2) at f/fc = 0.1 is 0.0995
    const auto x = sine(0.05, 500, 500 * 200);
    const auto y = bandpass(x, 500, 0.5, 0.002);
    const double amp = steady_amplitude(y, y.size() / 2);
    CHECK(amp < 0.15);
    CHECK(amp == doctest::Approx(0.1 / std::sqrt(1.01)).epsilon(0.01));
}

TEST_CASE("bandpass passes 40 Hz with the analytic product gain") {
    const int rate = 500;
    const double sigma = 0.002 * rate;
    const double w = 2.0 * kPi * 40.0 / rate;
    // discrete first-order high-pass: alpha (1 - z^-1) / (1 - alpha z^-1)
    const double rc = 1.0 / (2.0 * kPi * 0.5);
    const double alpha = rc / (rc + 1.0 / rate);
    const std::complex<double> z = std::polar(1.0, -w);
    const double hp = std::abs(alpha * (1.0 - z) / (1.0 - alpha * z));
    // truncated, renormalized Gaussian kernel (radius ceil(4 sigma)), zero phase
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    double num = 0.0, den = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double g = std::exp(-0.5 * k * k / (sigma * sigma));
        num += g * std::cos(w * k);
        den += g;
    }
    const double expected = hp * num / den;

    const auto y = bandpass(sine(40.0, rate, 5000), rate, 0.5, 0.002);
    const double amp = steady_amplitude(y, 2500);
    CHECK(amp >= 0.5);
    CHECK(amp <= 1.0);
    CHECK(amp == doctest::Approx(expected).epsilon(2e-3));
}

TEST_CASE("bandpass maps zero to zero and keeps the length") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.below(3000);
        const std::vector<double> zero(n, 0.0);
        const auto y = bandpass(zero, 500, 0.5, 0.002);
        CHECK(y.size() == n);
        for (double v : y) CHECK(v == 0.0);
        std::vector<double> x(n);
        for (auto& v : x) v = rng.normal();
        CHECK(bandpass(x, 360, 0.7, 0.004).size() == n);
    }
}

TEST_CASE("bandpass argument errors") {
    const std::vector<double> x(100, 1.0);
    CHECK(code_of([&] { bandpass(x, 500, 0.0, 0.002); }) == ErrorCode::InvalidCutoff);
    CHECK(code_of([&] { bandpass(x, 500, 250.0, 0.002); }) == ErrorCode::InvalidCutoff);
    CHECK(code_of([&] { bandpass(x, 500, 0.5, 0.0); }) == ErrorCode::InvalidCutoff);
    CHECK(code_of([&] { bandpass({}, 500, 0.5, 0.002); }) == ErrorCode::EmptySignal);
}

TEST_CASE("segment_windows examples") {
    std::vector<double> x(5000);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = static_cast<double>(k);
    const auto half = segment_windows(x, 500, 1.0, 0.5);
    CHECK(half.size() == 19);
    for (std::size_t n = 0; n < half.size(); ++n) {
        CHECK(half[n].index == n);
        CHECK(half[n].samples.size() == 500);
        CHECK(half[n].samples.front() == 250.0 * n);
    }
    const auto tiled = segment_windows(x, 500, 1.0, 0.0);
    CHECK(tiled.size() == 10);
    CHECK(tiled[9].samples.back() == 4999.0);

    const std::vector<double> exact(500, 2.0);
    const auto one = segment_windows(exact, 500, 1.0, 0.5);
    REQUIRE(one.size() == 1);
    CHECK(one[0].samples == exact);

    CHECK(code_of([&] { segment_windows(std::vector<double>(499), 500, 1.0, 0.5); }) == ErrorCode::WindowTooLong);
}

TEST_CASE("segment_windows count matches the closed form") {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        const int rate = 100 + static_cast<int>(rng.below(900));
        const double window_s = rng.uniform(0.05, 2.0);
        const double overlap = rng.uniform(0.0, 0.95);
        const std::size_t w = window_length(rate, window_s);
        if (w == 0) continue;
        const std::size_t len = w + rng.below(5000);
        const std::size_t hop = window_hop(w, overlap);
        const auto windows = segment_windows(std::vector<double>(len), rate, window_s, overlap);
        CHECK(windows.size() == (len - w) / hop + 1);
        // trailing remainder shorter than a window is dropped
        CHECK((windows.size() - 1) * hop + w <= len);
        CHECK(windows.size() * hop + w > len);
    }
}

TEST_CASE("stft shape and units at the default settings") {
    const auto spec = stft(make_window(std::vector<double>(500, 0.0)), 0.1, 0.9);
    CHECK(spec.rows == 26);
    CHECK(spec.cols == 91);
    CHECK(spec.bin_hz == 10.0);
    CHECK_FALSE(spec.normalized);
    for (double v : spec.values) CHECK(v == 0.0);
}

TEST_CASE("stft of a 50 Hz tone peaks in bin 5 and matches the direct DFT") {
    const auto w = make_window(sine(50.0, 500, 500));
    const auto spec = stft(w, 0.1, 0.9);
    const auto oracle = naive_stft(w, 50, 5);
    for (std::size_t f = 0; f < spec.cols; ++f) {
        std::size_t best = 0;
        for (std::size_t b = 1; b < spec.rows; ++b) {
            if (spec.at(b, f) > spec.at(best, f)) best = b;
        }
        CHECK(best == 5);
    }
    for (std::size_t i = 0; i < spec.values.size(); ++i) CHECK(std::abs(spec.values[i] - oracle.values[i]) <= 1e-9);
}

TEST_CASE("stft matches the direct DFT on random windows and chunk sizes") {
    Rng rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        const int rate = 100 + static_cast<int>(rng.below(600));
        const double chunk_s = rng.uniform(0.02, 0.3);
        const double overlap = rng.uniform(0.0, 0.95);
        const std::size_t chunk = window_length(rate, chunk_s);
        if (chunk < 2) continue;
        std::vector<double> x(chunk + rng.below(400));
        for (auto& v : x) v = rng.normal() * 3.0;
        const auto w = make_window(x, rate);
        const auto spec = stft(w, chunk_s, overlap);
        const auto oracle = naive_stft(w, chunk, window_hop(chunk, overlap));
        REQUIRE(spec.rows == oracle.rows);
        REQUIRE(spec.cols == oracle.cols);
        double worst = 0.0;
        for (std::size_t i = 0; i < spec.values.size(); ++i) worst = std::max(worst, std::abs(spec.values[i] - oracle.values[i]));
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("stft magnitudes satisfy Parseval against the Hann-weighted chunk energy") {
    Rng rng(9);
    for (std::size_t chunk : {50u, 51u, 64u, 7u}) {
        std::vector<double> x(chunk);
        for (auto& v : x) v = rng.normal();
        const int rate = static_cast<int>(chunk) * 10;
        const auto spec = stft(make_window(x, rate), 0.1, 0.0);
        REQUIRE(spec.cols == 1);
        // one-sided spectrum: interior bins count twice, DC and (even C) Nyquist once
        double spectral = 0.0;
        for (std::size_t b = 0; b < spec.rows; ++b) {
            const bool single = b == 0 || (chunk % 2 == 0 && b == chunk / 2);
            spectral += (single ? 1.0 : 2.0) * spec.at(b, 0) * spec.at(b, 0);
        }
        double windowed = 0.0;
        for (std::size_t n = 0; n < chunk; ++n) {
            const double h = 0.5 - 0.5 * std::cos(2.0 * kPi * n / chunk);
            windowed += h * h * x[n] * x[n];
        }
        CHECK(spectral == doctest::Approx(chunk * windowed).epsilon(1e-6));
    }
}

TEST_CASE("stft errors") {
    CHECK(code_of([] { stft(make_window(std::vector<double>(40)), 0.1, 0.9); }) == ErrorCode::ChunkTooLong);
    CHECK(code_of([] { stft(make_window(std::vector<double>(40)), 0.001, 0.9); }) == ErrorCode::ChunkTooLong);
}

TEST_CASE("normalize_spectrogram examples") {
    Spectrogram s(2, 3);
    s.values = {4.0, 2.0, 4.0 / 255.0, 1e-12, 0.0, 3.0};
    const auto n = normalize_spectrogram(s, 1e-6);
    CHECK(n.normalized);
    CHECK(n.rows == 2);
    CHECK(n.cols == 3);
    CHECK(n.at(0, 0) == doctest::Approx(std::log(255.0)).epsilon(1e-15));
    CHECK(n.at(0, 0) == doctest::Approx(5.5413).epsilon(1e-4));
    CHECK(std::abs(n.at(0, 2)) < 1e-12);
    CHECK(n.at(1, 0) == doctest::Approx(std::log(1e-6 * 255.0)));
    CHECK(n.at(1, 1) == doctest::Approx(std::log(1e-6 * 255.0)));

    const auto constant = normalize_spectrogram(Spectrogram(3, 4, 7.5));
    for (double v : constant.values) CHECK(v == std::log(255.0));

    const auto zero = normalize_spectrogram(Spectrogram(3, 4, 0.0), 1e-6);
    for (double v : zero.values) CHECK(v == std::log(1e-6 * 255.0));

    CHECK(code_of([&] { normalize_spectrogram(n); }) == ErrorCode::AlreadyNormalized);
}

TEST_CASE("normalize_spectrogram is scale invariant") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        Spectrogram s(1 + rng.below(30), 1 + rng.below(100));
        for (auto& v : s.values) v = std::abs(rng.normal()) * std::pow(10.0, rng.uniform(-3, 3));
        const auto base = normalize_spectrogram(s);
        for (double alpha : {1e-3, 1.0, 1e3, rng.uniform(0.01, 100.0)}) {
            Spectrogram scaled = s;
            for (auto& v : scaled.values) v *= alpha;
            const auto n = normalize_spectrogram(scaled);
            for (std::size_t i = 0; i < n.values.size(); ++i) CHECK(std::abs(n.values[i] - base.values[i]) <= 1e-12);
        }
    }
}

TEST_CASE("render_image orientation, endpoints and degenerate range") {
    Spectrogram s(26, 91);
    for (std::size_t r = 0; r < 26; ++r) {
        for (std::size_t c = 0; c < 91; ++c) s.at(r, c) = 1.0 + static_cast<double>(r * 91 + c);
    }
    const auto n = normalize_spectrogram(s);
    const auto out = render_image(n, Colormap::Viridis);
    CHECK_FALSE(out.degenerate_range);
    CHECK(out.image.width == 91);
    CHECK(out.image.height == 26);
    // min cell is (row 0, col 0): lowest frequency drawn on the bottom row
    CHECK(out.image.at(0, 25) == colormap_entry(Colormap::Viridis, 0));
    CHECK(out.image.at(90, 0) == colormap_entry(Colormap::Viridis, 255));

    const auto flat = render_image(normalize_spectrogram(Spectrogram(26, 91, 3.0)), Colormap::Viridis);
    CHECK(flat.degenerate_range);
    for (int y = 0; y < 26; ++y) {
        for (int x = 0; x < 91; ++x) CHECK(flat.image.at(x, y) == colormap_entry(Colormap::Viridis, 128));
    }
    CHECK(code_of([&] { render_image(s); }) == ErrorCode::NotNormalized);
}

TEST_CASE("default settings give 19 windows of 26 x 91 per lead for a 10 s record") {
    const auto rec = synthetic_record("s", DiagnosisLabel::Old, 3);
    const auto set = record_spectrograms(rec);
    CHECK(set.gamma() == 19);
    for (const auto& lead : set.leads) {
        REQUIRE(lead.size() == 19);
        for (const auto& spec : lead) {
            CHECK(spec.rows == 26);
            CHECK(spec.cols == 91);
            CHECK(spec.normalized);
        }
    }
}
