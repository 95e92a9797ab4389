#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ecgfuse/leads.hpp"

namespace ecgfuse {

using Signal = std::vector<double>;

// One patient's 12 synchronized leads in millivolts, indexed by canonical LeadId order.
struct EcgRecord {
    std::string record_id;
    int sampling_rate = 0;
    std::array<Signal, kNumLeads> leads;
    std::optional<DiagnosisLabel> label;

    const Signal& lead(LeadId id) const { return leads[index_of(id)]; }
    Signal& lead(LeadId id) { return leads[index_of(id)]; }

    std::size_t num_samples() const { return leads[0].size(); }
    double duration_s() const {
        return sampling_rate > 0 ? static_cast<double>(num_samples()) / sampling_rate : 0.0;
    }

    bool operator==(const EcgRecord&) const = default;
};

enum class RecordFormat { DelimitedText, WfdbBinary };

std::optional<RecordFormat> parse_record_format(std::string_view name);

struct LeadFlags {
    bool missing = false;
    bool flatline = false;
    bool out_of_range = false;

    bool any() const { return missing || flatline || out_of_range; }
    bool operator==(const LeadFlags&) const = default;
};

struct ValidationReport {
    std::string record_id;
    std::array<LeadFlags, kNumLeads> flags{};
    bool accepted = true;
};

struct ValidationThresholds {
    double flatline_eps_mv = 0.01;
    double range_limit_mv = 25.0;
};

// Reads a record from disk. Delimited text expects `<path>` plus `<stem>.meta.json`;
// WFDB expects the `.hea` header path (the `.dat` file is resolved next to it).
EcgRecord parse_record(const std::filesystem::path& path, RecordFormat format);

// Record id with every character outside [A-Za-z0-9._-] replaced by '_', for file names.
std::string file_stem_for(std::string_view record_id);

// Writes `<dir>/<file_stem_for(record_id)>.csv` and its sidecar; values round-trip bit-exactly.
std::filesystem::path write_csv_record(const EcgRecord& rec, const std::filesystem::path& dir);

ValidationReport validate_record(const EcgRecord& rec, const ValidationThresholds& thresholds = {});

// Linear-interpolation resampling of every lead.
EcgRecord resample(const EcgRecord& rec, int target_hz);

// Keeps the first floor(seconds * rate) samples of every lead.
EcgRecord truncate(const EcgRecord& rec, double seconds);

}  // namespace ecgfuse
