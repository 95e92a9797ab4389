#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "ecgfuse/dsp.hpp"
#include "ecgfuse/eval.hpp"
#include "ecgfuse/ingest.hpp"

namespace ecgfuse {

enum class FusionInput { PerLead, Stacked };

std::string_view fusion_input_name(FusionInput input);
std::optional<FusionInput> parse_fusion_input(std::string_view name);

struct IngestOptions {
    int rate_hz = 500;
    double seconds = 10.0;
    ValidationThresholds thresholds;
};

// Everything that determines an artifact. Paths are carried along but never hashed.
struct PipelineConfig {
    IngestOptions ingest;
    DspOptions dsp;
    std::string backend = "fallback:64:7";
    FusionInput fusion_input = FusionInput::PerLead;
    FusionStrategy fusion = FusionStrategy::FeatureConcat;
    TrainOptions train;
    Task task = Task::Onset;
    std::size_t folds = 10;
    std::uint64_t seed = 0;

    struct Paths {
        std::string manifest;
        std::string cache;
        std::string checkpoint;
        std::string report;
    } paths;
};

// Keys sorted, numbers in shortest round-trip form. Paths are excluded.
nlohmann::json to_json(const PipelineConfig& config);

// Starts from `base` and overrides whatever keys `j` sets. Unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});

// Throws ConfigInvalid on out-of-range values.
void validate_config(const PipelineConfig& config);

std::string canonical_json(const PipelineConfig& config);

std::string sha256_hex(std::string_view bytes);

// Digest of the whole canonical config; stamped on checkpoints and reports.
std::string config_hash(const PipelineConfig& config);

// Digest of the parts that determine encoded features (ingest, dsp, backend, fusion input);
// stamped on feature caches so training sweeps can share them.
std::string feature_hash(const PipelineConfig& config);

ExperimentConfig experiment_config(const PipelineConfig& config);

}  // namespace ecgfuse
