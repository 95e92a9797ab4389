#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecgfuse/ingest.hpp"

namespace ecgfuse {

// Synthetic 12-lead records for end-to-end checks: a pulse train at a random heart rate plus
// one sinusoid per lead whose frequency is set by the class, plus white noise.
struct SyntheticOptions {
    int rate_hz = 500;
    double seconds = 10.0;
    double tone_mv = 0.5;
    double noise_mv = 0.05;
};

// Dominant tone of class `label` on `lead`, in Hz.
double synthetic_tone_hz(DiagnosisLabel label, LeadId lead);

EcgRecord synthetic_record(const std::string& record_id, DiagnosisLabel label, std::uint64_t seed,
                           const SyntheticOptions& options = {});

// `per_class` records of each onset class, ids "syn0000", "syn0001", ... with classes
// interleaved.
std::vector<EcgRecord> synthetic_dataset(std::size_t per_class, std::uint64_t seed,
                                         const SyntheticOptions& options = {});

}  // namespace ecgfuse
