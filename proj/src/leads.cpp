#include "ecgfuse/leads.hpp"

#include <algorithm>
#include <cctype>

#include "ecgfuse/error.hpp"

namespace ecgfuse {

namespace {

constexpr std::array<std::string_view, kNumLeads> kLeadNames = {
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) ==
                      std::tolower(static_cast<unsigned char>(y));
           });
}

}  // namespace

std::string_view lead_name(LeadId lead) { return kLeadNames[index_of(lead)]; }

std::optional<LeadId> parse_lead(std::string_view name) {
    for (LeadId lead : kAllLeads) {
        if (iequals(name, lead_name(lead))) return lead;
    }
    return std::nullopt;
}

std::string_view label_name(DiagnosisLabel label) {
    switch (label) {
        case DiagnosisLabel::Acute: return "acute";
        case DiagnosisLabel::Recent: return "recent";
        case DiagnosisLabel::Old: return "old";
        case DiagnosisLabel::Normal: return "normal";
        case DiagnosisLabel::MiUnspecified: return "mi";
    }
    return "unknown";
}

std::optional<DiagnosisLabel> parse_label(std::string_view name) {
    for (auto label : {DiagnosisLabel::Acute, DiagnosisLabel::Recent, DiagnosisLabel::Old,
                       DiagnosisLabel::Normal, DiagnosisLabel::MiUnspecified}) {
        if (iequals(name, label_name(label))) return label;
    }
    return std::nullopt;
}

std::size_t num_classes(Task task) {
    return task == Task::Binary ? kBinaryClasses : kOnsetClasses;
}

std::size_t class_index(DiagnosisLabel label, Task task) {
    if (task == Task::Binary) return is_mi(label) ? 0 : 1;
    if (label == DiagnosisLabel::MiUnspecified) {
        throw Error(ErrorCode::ConfigInvalid, "record without onset label used for onset task");
    }
    return static_cast<std::size_t>(label);
}

std::string_view class_name(std::size_t index, Task task) {
    static constexpr std::array<std::string_view, 2> binary = {"MI", "Normal"};
    static constexpr std::array<std::string_view, 4> onset = {"Acute", "Recent", "Old", "Normal"};
    if (task == Task::Binary) return index < binary.size() ? binary[index] : "?";
    return index < onset.size() ? onset[index] : "?";
}

std::string_view task_name(Task task) { return task == Task::Binary ? "binary" : "onset"; }

std::optional<Task> parse_task(std::string_view name) {
    if (name == "binary") return Task::Binary;
    if (name == "onset") return Task::Onset;
    return std::nullopt;
}

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MissingLead: return "MissingLead";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::UnreadableFile: return "UnreadableFile";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::EmptySignal: return "EmptySignal";
        case ErrorCode::InvalidCutoff: return "InvalidCutoff";
        case ErrorCode::WindowTooLong: return "WindowTooLong";
        case ErrorCode::ChunkTooLong: return "ChunkTooLong";
        case ErrorCode::AlreadyNormalized: return "AlreadyNormalized";
        case ErrorCode::NotNormalized: return "NotNormalized";
        case ErrorCode::BackendLoadFailure: return "BackendLoadFailure";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonFiniteOutput: return "NonFiniteOutput";
        case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
        case ErrorCode::TauMismatch: return "TauMismatch";
        case ErrorCode::InvalidTarget: return "InvalidTarget";
        case ErrorCode::EmptySequence: return "EmptySequence";
        case ErrorCode::ClassTooSmall: return "ClassTooSmall";
        case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
        case ErrorCode::DegenerateLabels: return "DegenerateLabels";
        case ErrorCode::CacheMiss: return "CacheMiss";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::UnknownSubcommand: return "UnknownSubcommand";
        case ErrorCode::StaleCache: return "StaleCache";
    }
    return "Unknown";
}

bool is_config_error(ErrorCode code) {
    return code == ErrorCode::ConfigInvalid || code == ErrorCode::UnknownSubcommand ||
           code == ErrorCode::StaleCache;
}

}  // namespace ecgfuse
