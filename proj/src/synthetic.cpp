#include "ecgfuse/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "ecgfuse/rng.hpp"

namespace ecgfuse {

double synthetic_tone_hz(DiagnosisLabel label, LeadId lead) {
    static constexpr double base[] = {15.0, 30.0, 45.0, 60.0};
    const auto c = static_cast<std::size_t>(label) % 4;
    return base[c] + 2.0 * static_cast<double>(index_of(lead) % 3);
}

EcgRecord synthetic_record(const std::string& record_id, DiagnosisLabel label, std::uint64_t seed,
                           const SyntheticOptions& options) {
    Rng rng(seed);
    EcgRecord rec;
    rec.record_id = record_id;
    rec.sampling_rate = options.rate_hz;
    rec.label = label;
    const auto n = static_cast<std::size_t>(std::floor(options.seconds * options.rate_hz + 1e-9));
    const double beat_hz = rng.uniform(1.0, 1.6);
    const double beat_phase = rng.uniform(0.0, 1.0 / beat_hz);
    const double pulse_width = 0.012;
    const double two_pi = 2.0 * std::numbers::pi;
    for (LeadId lead : kAllLeads) {
        const double pulse_mv = rng.uniform(0.6, 1.4) * (index_of(lead) % 2 ? -1.0 : 1.0);
        const double tone_mv = options.tone_mv * rng.uniform(0.8, 1.2);
        const double tone_hz = synthetic_tone_hz(label, lead);
        const double phase = rng.uniform(0.0, two_pi);
        Signal& s = rec.lead(lead);
        s.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            const double t = static_cast<double>(k) / options.rate_hz;
            // distance to the nearest beat centre
            const double period = 1.0 / beat_hz;
            const double offset = std::remainder(t - beat_phase, period);
            const double pulse = pulse_mv * std::exp(-0.5 * (offset / pulse_width) * (offset / pulse_width));
            s[k] = pulse + tone_mv * std::sin(two_pi * tone_hz * t + phase) + options.noise_mv * rng.normal();
        }
    }
    return rec;
}

std::vector<EcgRecord> synthetic_dataset(std::size_t per_class, std::uint64_t seed, const SyntheticOptions& options) {
    static constexpr DiagnosisLabel classes[] = {DiagnosisLabel::Acute, DiagnosisLabel::Recent, DiagnosisLabel::Old,
                                                 DiagnosisLabel::Normal};
    std::vector<EcgRecord> out;
    out.reserve(4 * per_class);
    for (std::size_t i = 0; i < 4 * per_class; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "syn%04zu", i);
        out.push_back(synthetic_record(id, classes[i % 4], derive_seed(seed, i), options));
    }
    return out;
}

}  // namespace ecgfuse
