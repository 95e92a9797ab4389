#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfuse/config.hpp"
#include "ecgfuse/encoder.hpp"
#include "ecgfuse/eval.hpp"
#include "ecgfuse/ingest.hpp"

namespace ecgfuse {

using Logger = std::function<void(const std::string&)>;

// ---- ingest ----------------------------------------------------------------------------

struct ManifestEntry {
    std::string record_id;
    std::string file;  // canonical CSV, relative to the manifest's directory
    std::optional<DiagnosisLabel> label;
    bool accepted = true;
    std::vector<std::string> issues;  // e.g. "V3: out_of_range", "too_short"
};

struct Manifest {
    IngestOptions ingest;
    std::string ingest_hash;
    std::vector<ManifestEntry> records;
    std::filesystem::path dir;  // where `file` paths are resolved
};

// Resamples to the pipeline rate and keeps the first `seconds`.
EcgRecord canonicalize(const EcgRecord& rec, const IngestOptions& options);

std::string ingest_hash(const IngestOptions& options);

// Parses every record under `input` (*.csv with sidecars, or *.hea), canonicalizes and
// validates it, writes canonical CSVs to `<manifest dir>/records/` and the manifest itself.
// Rejected records stay in the manifest with accepted=false and are logged.
Manifest ingest_directory(const std::filesystem::path& input, RecordFormat format,
                          const std::filesystem::path& manifest_path, const IngestOptions& options,
                          const Logger& log = {});

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

std::vector<EcgRecord> load_accepted(const Manifest& manifest);

// ---- spectrograms ----------------------------------------------------------------------

// `<out>/<record_id>.ecgs`: "ECGS1", rows, cols, gamma, n_leads (u32 LE), then f64 LE values
// lead-major, window-major, row-major. With `png`, also `<out>/<record_id>/<lead>/<n>.png`.
void export_spectrograms(const EcgRecord& rec, const DspOptions& options, const std::filesystem::path& out,
                         bool png, const Logger& log = {});

// ---- features --------------------------------------------------------------------------

// Per-lead: 12 leads x gamma windows. Stacked: one stacked grid per window.
FeatureBlob encode_record(const EcgRecord& rec, const EmbeddingBackend& backend, FusionInput input,
                          const DspOptions& options);

struct CacheInfo {
    std::string feature_hash;
    nlohmann::json config;  // ingest, dsp and encoder sections of the producing config
    std::string backend_id;
    std::uint32_t tau = 0;
    std::uint32_t gamma = 0;
    std::uint32_t n_leads = 0;
    struct Entry {
        std::string record_id;
        std::optional<DiagnosisLabel> label;
    };
    std::vector<Entry> records;
};

CacheInfo read_cache_info(const std::filesystem::path& cache_dir);

// Encodes `records` into `cache_dir` (`<record_id>.ecgf` plus cache.json). An existing cache
// built under a different feature hash raises StaleCache; blobs already present are reused.
CacheInfo encode_to_cache(const std::vector<EcgRecord>& records, const PipelineConfig& config,
                          const std::filesystem::path& cache_dir, const Logger& log = {});

// Throws CacheMiss when the cache or one of its blobs is missing, StaleCache when
// `expected_hash` is given and differs.
std::vector<RecordFeatures> load_cache(const std::filesystem::path& cache_dir,
                                       const std::optional<std::string>& expected_hash = std::nullopt);

// The producing config of a cache with `overrides` applied on top.
PipelineConfig config_for_cache(const CacheInfo& info, const nlohmann::json& overrides = nlohmann::json::object());

// ---- checkpoints -----------------------------------------------------------------------

struct Checkpoint {
    PipelineConfig config;
    std::string config_hash;
    std::string feature_hash;
    std::vector<ModelSet> folds;
    ModelSet final_model;
};

// "ECGM1", mode u8, dims (input, dense, hidden, classes) u32, seed u64, then the hashes and
// canonical config as length-prefixed strings, fusion u8, task u8, and every model set:
// fold (u32, 0xFFFFFFFF for the final model), held-out ids, members, each member's
// parameter block. Written through a temporary file renamed into place.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Cross-validates, trains the final model, and packs both.
Checkpoint train_checkpoint(const std::vector<RecordFeatures>& records, const PipelineConfig& config,
                            const std::string& cache_feature_hash);

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<RecordFeatures>& records);

// Runs one raw record through the checkpoint's ingest, dsp, encoder and final model.
RecordPrediction predict_record(const Checkpoint& ckpt, const EcgRecord& raw);

// ---- helpers ---------------------------------------------------------------------------

// Writes `text` to `path` through a temporary file renamed into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// Default cache root: $ECGFUSE_CACHE, else ".ecgfuse-cache".
std::filesystem::path default_cache_root();

}  // namespace ecgfuse
