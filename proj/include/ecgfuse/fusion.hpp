#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

#include "ecgfuse/dsp.hpp"
#include "ecgfuse/leads.hpp"
#include "ecgfuse/types.hpp"

namespace ecgfuse {

enum class FusionStrategy { Data, FeatureConcat, FeatureAccum, DecisionAccum, DecisionVote };

std::optional<FusionStrategy> parse_fusion(std::string_view name);
std::string_view fusion_name(FusionStrategy strategy);

// Data fusion encodes one stacked image per window; the other strategies need per-lead features.
constexpr bool uses_stacked_input(FusionStrategy s) { return s == FusionStrategy::Data; }
constexpr bool is_decision_fusion(FusionStrategy s) {
    return s == FusionStrategy::DecisionAccum || s == FusionStrategy::DecisionVote;
}

// Grid position of each lead in the stacked layout:
//   I   aVR V1 V4
//   II  aVL V2 V5
//   III aVF V3 V6
struct GridCell {
    std::size_t row;
    std::size_t col;
};
GridCell grid_cell(LeadId lead);

inline constexpr std::size_t kGridRows = 3;
inline constexpr std::size_t kGridCols = 4;

// Per-lead containers keyed by canonical lead order; unset entries count as missing.
template <typename T>
using PerLead = std::array<std::optional<T>, kNumLeads>;

struct StackedSpectrogram {
    Spectrogram grid;  // 3 * tile rows by 4 * tile cols
    std::size_t window = 0;
    std::size_t tile_rows = 0;
    std::size_t tile_cols = 0;

    Spectrogram tile(LeadId lead) const;
};

StackedSpectrogram data_fuse(const PerLead<Spectrogram>& specs, std::size_t window);

// Lead vectors stacked in canonical order; length 12 * tau.
FeatureVector feature_concat(const PerLead<FeatureVector>& bundle);

// Inverse of feature_concat.
std::array<FeatureVector, kNumLeads> feature_split(const FeatureVector& concatenated);

// Elementwise mean over the 12 leads.
FeatureVector feature_accumulate(const PerLead<FeatureVector>& bundle);

// Elementwise mean of 12 probability vectors.
Prediction decision_accumulate(const PerLead<Prediction>& bundle);

// Each lead votes its argmax. Ties go to the label with the higher mean probability across
// leads, then to the lower class index.
std::size_t majority_vote(const PerLead<Prediction>& bundle);

}  // namespace ecgfuse
