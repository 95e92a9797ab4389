#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace ecgfuse {

inline constexpr std::size_t kNumLeads = 12;

// Canonical ordering; every per-lead container iterates in this order.
enum class LeadId : std::uint8_t { I, II, III, aVR, aVL, aVF, V1, V2, V3, V4, V5, V6 };

inline constexpr std::array<LeadId, kNumLeads> kAllLeads = {
    LeadId::I,  LeadId::II, LeadId::III, LeadId::aVR, LeadId::aVL, LeadId::aVF,
    LeadId::V1, LeadId::V2, LeadId::V3,  LeadId::V4,  LeadId::V5,  LeadId::V6};

constexpr std::size_t index_of(LeadId lead) { return static_cast<std::size_t>(lead); }

std::string_view lead_name(LeadId lead);

// Case-insensitive match against the standard names ("avr" and "AVR" both map to aVR).
std::optional<LeadId> parse_lead(std::string_view name);

// Onset classes in canonical order. MiUnspecified marks an infarction whose onset is
// unknown (e.g. public records that only say "myocardial infarction"); it is usable for the
// binary task only.
enum class DiagnosisLabel : std::uint8_t { Acute, Recent, Old, Normal, MiUnspecified };

enum class Task : std::uint8_t { Binary, Onset };

inline constexpr std::size_t kOnsetClasses = 4;
inline constexpr std::size_t kBinaryClasses = 2;

std::string_view label_name(DiagnosisLabel label);
std::optional<DiagnosisLabel> parse_label(std::string_view name);

constexpr bool is_mi(DiagnosisLabel label) { return label != DiagnosisLabel::Normal; }

std::size_t num_classes(Task task);

// Class index used by the classifier heads. Binary: MI = 0, Normal = 1. Onset: enum order.
// Throws ConfigInvalid when an MiUnspecified record is used for the onset task.
std::size_t class_index(DiagnosisLabel label, Task task);

// Human-readable name of a class index under a task ("MI", "Normal", "Acute", ...).
std::string_view class_name(std::size_t index, Task task);

std::string_view task_name(Task task);
std::optional<Task> parse_task(std::string_view name);

}  // namespace ecgfuse
