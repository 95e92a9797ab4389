#include "ecgfuse/fusion.hpp"

#include <cmath>
#include <numeric>

#include "ecgfuse/error.hpp"

namespace ecgfuse {

namespace {

template <typename T>
void require_all(const PerLead<T>& bundle, const char* what) {
    for (LeadId lead : kAllLeads) {
        if (!bundle[index_of(lead)]) {
            throw Error(ErrorCode::MissingLead,
                        std::string(what) + ": lead " + std::string(lead_name(lead)) + " missing");
        }
    }
}

std::size_t uniform_tau(const PerLead<FeatureVector>& bundle, const char* what) {
    require_all(bundle, what);
    const std::size_t tau = bundle[0]->size();
    for (const auto& fv : bundle) {
        if (fv->size() != tau) throw Error(ErrorCode::TauMismatch, std::string(what) + ": lead vectors differ in length");
    }
    return tau;
}

std::size_t uniform_classes(const PerLead<Prediction>& bundle, const char* what) {
    require_all(bundle, what);
    const std::size_t n = bundle[0]->probs.size();
    for (const auto& p : bundle) {
        if (p->probs.size() != n) throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": class counts differ");
    }
    return n;
}

}  // namespace

std::optional<FusionStrategy> parse_fusion(std::string_view name) {
    if (name == "data") return FusionStrategy::Data;
    if (name == "feature_concat") return FusionStrategy::FeatureConcat;
    if (name == "feature_accum") return FusionStrategy::FeatureAccum;
    if (name == "decision_accum") return FusionStrategy::DecisionAccum;
    if (name == "decision_vote") return FusionStrategy::DecisionVote;
    return std::nullopt;
}

std::string_view fusion_name(FusionStrategy strategy) {
    switch (strategy) {
        case FusionStrategy::Data: return "data";
        case FusionStrategy::FeatureConcat: return "feature_concat";
        case FusionStrategy::FeatureAccum: return "feature_accum";
        case FusionStrategy::DecisionAccum: return "decision_accum";
        case FusionStrategy::DecisionVote: return "decision_vote";
    }
    return "unknown";
}

GridCell grid_cell(LeadId lead) {
    switch (lead) {
        case LeadId::I: return {0, 0};
        case LeadId::aVR: return {0, 1};
        case LeadId::V1: return {0, 2};
        case LeadId::V4: return {0, 3};
        case LeadId::II: return {1, 0};
        case LeadId::aVL: return {1, 1};
        case LeadId::V2: return {1, 2};
        case LeadId::V5: return {1, 3};
        case LeadId::III: return {2, 0};
        case LeadId::aVF: return {2, 1};
        case LeadId::V3: return {2, 2};
        case LeadId::V6: return {2, 3};
    }
    return {0, 0};
}

Spectrogram StackedSpectrogram::tile(LeadId lead) const {
    const GridCell cell = grid_cell(lead);
    Spectrogram out(tile_rows, tile_cols);
    out.bin_hz = grid.bin_hz;
    out.frame_s = grid.frame_s;
    out.normalized = grid.normalized;
    for (std::size_t r = 0; r < tile_rows; ++r) {
        for (std::size_t c = 0; c < tile_cols; ++c) {
            out.at(r, c) = grid.at(cell.row * tile_rows + r, cell.col * tile_cols + c);
        }
    }
    return out;
}

StackedSpectrogram data_fuse(const PerLead<Spectrogram>& specs, std::size_t window) {
    require_all(specs, "data_fuse");
    const Spectrogram& first = *specs[0];
    for (const auto& s : specs) {
        if (s->rows != first.rows || s->cols != first.cols) {
            throw Error(ErrorCode::ShapeMismatch, "data_fuse: lead spectrograms differ in shape");
        }
        if (!s->normalized) throw Error(ErrorCode::NotNormalized, "data_fuse: spectrograms must be normalized");
    }
    StackedSpectrogram out;
    out.window = window;
    out.tile_rows = first.rows;
    out.tile_cols = first.cols;
    out.grid = Spectrogram(kGridRows * first.rows, kGridCols * first.cols);
    out.grid.bin_hz = first.bin_hz;
    out.grid.frame_s = first.frame_s;
    out.grid.normalized = true;
    for (LeadId lead : kAllLeads) {
        const GridCell cell = grid_cell(lead);
        const Spectrogram& s = *specs[index_of(lead)];
        for (std::size_t r = 0; r < s.rows; ++r) {
            for (std::size_t c = 0; c < s.cols; ++c) {
                out.grid.at(cell.row * s.rows + r, cell.col * s.cols + c) = s.at(r, c);
            }
        }
    }
    return out;
}

FeatureVector feature_concat(const PerLead<FeatureVector>& bundle) {
    const std::size_t tau = uniform_tau(bundle, "feature_concat");
    FeatureVector out;
    out.values.reserve(kNumLeads * tau);
    for (const auto& fv : bundle) out.values.insert(out.values.end(), fv->values.begin(), fv->values.end());
    out.backend_id = bundle[0]->backend_id;
    out.source = FeatureSource::fused(bundle[0]->source.window);
    return out;
}

std::array<FeatureVector, kNumLeads> feature_split(const FeatureVector& concatenated) {
    if (concatenated.size() % kNumLeads != 0) {
        throw Error(ErrorCode::TauMismatch, "feature_split: length is not a multiple of 12");
    }
    const std::size_t tau = concatenated.size() / kNumLeads;
    std::array<FeatureVector, kNumLeads> out;
    for (LeadId lead : kAllLeads) {
        const std::size_t j = index_of(lead);
        auto first = concatenated.values.begin() + static_cast<std::ptrdiff_t>(j * tau);
        out[j].values.assign(first, first + static_cast<std::ptrdiff_t>(tau));
        out[j].backend_id = concatenated.backend_id;
        out[j].source = FeatureSource::single_lead(lead, concatenated.source.window);
    }
    return out;
}

FeatureVector feature_accumulate(const PerLead<FeatureVector>& bundle) {
    const std::size_t tau = uniform_tau(bundle, "feature_accumulate");
    FeatureVector out;
    out.values.assign(tau, 0.0);
    for (const auto& fv : bundle) {
        for (std::size_t k = 0; k < tau; ++k) out.values[k] += fv->values[k];
    }
    for (double& v : out.values) v /= static_cast<double>(kNumLeads);
    out.backend_id = bundle[0]->backend_id;
    out.source = FeatureSource::fused(bundle[0]->source.window);
    return out;
}

Prediction decision_accumulate(const PerLead<Prediction>& bundle) {
    const std::size_t n = uniform_classes(bundle, "decision_accumulate");
    Prediction out;
    out.probs.assign(n, 0.0);
    for (const auto& p : bundle) {
        const double sum = std::accumulate(p->probs.begin(), p->probs.end(), 0.0);
        if (std::abs(sum - 1.0) > 1e-6) {
            throw Error(ErrorCode::NotNormalized, "decision_accumulate: a lead's probabilities sum to " + std::to_string(sum));
        }
        for (std::size_t c = 0; c < n; ++c) out.probs[c] += p->probs[c];
    }
    for (double& v : out.probs) v /= static_cast<double>(kNumLeads);
    out.label = argmax(out.probs);
    return out;
}

std::size_t majority_vote(const PerLead<Prediction>& bundle) {
    const std::size_t n = uniform_classes(bundle, "majority_vote");
    std::vector<std::size_t> votes(n, 0);
    std::vector<double> mean(n, 0.0);
    for (const auto& p : bundle) {
        ++votes[argmax(p->probs)];
        for (std::size_t c = 0; c < n; ++c) mean[c] += p->probs[c] / static_cast<double>(kNumLeads);
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
        if (votes[c] > votes[best] || (votes[c] == votes[best] && mean[c] > mean[best])) best = c;
    }
    return best;
}

}  // namespace ecgfuse
