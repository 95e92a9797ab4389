#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ecgfuse/leads.hpp"

namespace ecgfuse {

// Where a feature vector came from: one lead's window, or a fused (stacked) window.
struct FeatureSource {
    enum class Kind { SingleLead, Fused };
    Kind kind = Kind::Fused;
    LeadId lead = LeadId::I;
    std::size_t window = 0;

    static FeatureSource single_lead(LeadId lead, std::size_t window) {
        return {Kind::SingleLead, lead, window};
    }
    static FeatureSource fused(std::size_t window) { return {Kind::Fused, LeadId::I, window}; }

    bool operator==(const FeatureSource&) const = default;
};

struct FeatureVector {
    std::vector<double> values;
    std::string backend_id;
    FeatureSource source;

    std::size_t size() const { return values.size(); }
};

// Class-probability vector over N_c classes with its argmax.
struct Prediction {
    std::vector<double> probs;
    std::size_t label = 0;
};

// Lowest index wins ties.
std::size_t argmax(const std::vector<double>& values);

}  // namespace ecgfuse
