#include "ecgfuse/config.hpp"

#include <iomanip>
#include <set>
#include <sstream>
#include <type_traits>

#include <openssl/evp.h>

#include "ecgfuse/error.hpp"

namespace ecgfuse {

std::string_view fusion_input_name(FusionInput input) {
    return input == FusionInput::Stacked ? "stacked" : "per-lead";
}

std::optional<FusionInput> parse_fusion_input(std::string_view name) {
    if (name == "per-lead") return FusionInput::PerLead;
    if (name == "stacked") return FusionInput::Stacked;
    return std::nullopt;
}

namespace {

nlohmann::json ingest_json(const IngestOptions& o) {
    return {{"rate_hz", o.rate_hz},
            {"seconds", o.seconds},
            {"flatline_eps_mv", o.thresholds.flatline_eps_mv},
            {"range_limit_mv", o.thresholds.range_limit_mv}};
}

nlohmann::json dsp_json(const DspOptions& o) {
    return {{"hp_cutoff_hz", o.hp_cutoff_hz}, {"gauss_sigma_s", o.gauss_sigma_s}, {"window_s", o.window_s},
            {"overlap", o.overlap},           {"chunk_s", o.chunk_s},             {"chunk_overlap", o.chunk_overlap},
            {"floor_eps", o.floor_eps}};
}

nlohmann::json encoder_json(const PipelineConfig& c) {
    return {{"backend", c.backend}, {"fusion_input", std::string(fusion_input_name(c.fusion_input))}};
}

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::ConfigInvalid, what); }

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) invalid(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) invalid("unknown config key '" + where + (where.empty() ? "" : ".") + key + "'");
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
        if (!j.at(key).is_number_unsigned()) invalid(std::string("config key '") + key + "' must be a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
        if (!j.at(key).is_number_integer()) invalid(std::string("config key '") + key + "' must be an integer");
    }
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        invalid(std::string("config key '") + key + "' has the wrong type");
    }
}

template <typename E, typename Parse>
void read_enum(const nlohmann::json& j, const char* key, E& out, Parse parse) {
    if (!j.contains(key)) return;
    std::string name;
    read(j, key, name);
    const auto parsed = parse(name);
    if (!parsed) invalid(std::string("config key '") + key + "' has unknown value '" + name + "'");
    out = *parsed;
}

}  // namespace

void validate_config(const PipelineConfig& c) {
    if (c.ingest.rate_hz <= 0) invalid("ingest.rate_hz must be positive");
    if (!(c.ingest.seconds > 0)) invalid("ingest.seconds must be positive");
    if (!(c.dsp.window_s > 0) || !(c.dsp.chunk_s > 0)) invalid("window and chunk lengths must be positive");
    if (c.dsp.overlap < 0 || c.dsp.overlap >= 1 || c.dsp.chunk_overlap < 0 || c.dsp.chunk_overlap >= 1) {
        invalid("overlap fractions must lie in [0, 1)");
    }
    if (!(c.dsp.floor_eps > 0) || c.dsp.floor_eps >= 1) invalid("dsp.floor_eps must lie in (0, 1)");
    if (c.folds < 2) invalid("folds must be at least 2");
    if (c.train.epochs == 0 || c.train.batch_size == 0 || c.train.dense == 0 || c.train.hidden == 0) {
        invalid("model sizes, epochs and batch size must be positive");
    }
    if (!(c.train.learning_rate > 0)) invalid("model.learning_rate must be positive");
    if (c.train.validation_fraction < 0 || c.train.validation_fraction >= 1) {
        invalid("model.validation_fraction must lie in [0, 1)");
    }
}

nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["ingest"] = ingest_json(c.ingest);
    j["dsp"] = dsp_json(c.dsp);
    j["encoder"] = encoder_json(c);
    j["fusion"] = std::string(fusion_name(c.fusion));
    j["model"] = {{"mode", std::string(model_mode_name(c.train.mode))},
                  {"dense", c.train.dense},
                  {"hidden", c.train.hidden},
                  {"learning_rate", c.train.learning_rate},
                  {"batch_size", c.train.batch_size},
                  {"epochs", c.train.epochs},
                  {"patience", c.train.patience},
                  {"validation_fraction", c.train.validation_fraction}};
    j["task"] = std::string(task_name(c.task));
    j["folds"] = c.folds;
    j["seed"] = c.seed;
    return j;
}

PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c) {
    reject_unknown(j, {"ingest", "dsp", "encoder", "fusion", "model", "task", "folds", "seed", "paths"}, "");
    if (j.contains("ingest")) {
        const auto& s = j["ingest"];
        reject_unknown(s, {"rate_hz", "seconds", "flatline_eps_mv", "range_limit_mv"}, "ingest");
        read(s, "rate_hz", c.ingest.rate_hz);
        read(s, "seconds", c.ingest.seconds);
        read(s, "flatline_eps_mv", c.ingest.thresholds.flatline_eps_mv);
        read(s, "range_limit_mv", c.ingest.thresholds.range_limit_mv);
    }
    if (j.contains("dsp")) {
        const auto& s = j["dsp"];
        reject_unknown(s, {"hp_cutoff_hz", "gauss_sigma_s", "window_s", "overlap", "chunk_s", "chunk_overlap", "floor_eps"},
                       "dsp");
        read(s, "hp_cutoff_hz", c.dsp.hp_cutoff_hz);
        read(s, "gauss_sigma_s", c.dsp.gauss_sigma_s);
        read(s, "window_s", c.dsp.window_s);
        read(s, "overlap", c.dsp.overlap);
        read(s, "chunk_s", c.dsp.chunk_s);
        read(s, "chunk_overlap", c.dsp.chunk_overlap);
        read(s, "floor_eps", c.dsp.floor_eps);
    }
    if (j.contains("encoder")) {
        const auto& s = j["encoder"];
        reject_unknown(s, {"backend", "fusion_input"}, "encoder");
        read(s, "backend", c.backend);
        read_enum(s, "fusion_input", c.fusion_input, parse_fusion_input);
    }
    read_enum(j, "fusion", c.fusion, parse_fusion);
    if (j.contains("fusion") && !(j.contains("encoder") && j["encoder"].contains("fusion_input"))) {
        c.fusion_input = uses_stacked_input(c.fusion) ? FusionInput::Stacked : FusionInput::PerLead;
    }
    if (j.contains("model")) {
        const auto& s = j["model"];
        reject_unknown(s, {"mode", "dense", "hidden", "learning_rate", "batch_size", "epochs", "patience",
                           "validation_fraction"},
                       "model");
        read_enum(s, "mode", c.train.mode, parse_model_mode);
        read(s, "dense", c.train.dense);
        read(s, "hidden", c.train.hidden);
        read(s, "learning_rate", c.train.learning_rate);
        read(s, "batch_size", c.train.batch_size);
        read(s, "epochs", c.train.epochs);
        read(s, "patience", c.train.patience);
        read(s, "validation_fraction", c.train.validation_fraction);
    }
    read_enum(j, "task", c.task, parse_task);
    read(j, "folds", c.folds);
    read(j, "seed", c.seed);
    if (j.contains("paths")) {
        const auto& s = j["paths"];
        reject_unknown(s, {"manifest", "cache", "checkpoint", "report"}, "paths");
        read(s, "manifest", c.paths.manifest);
        read(s, "cache", c.paths.cache);
        read(s, "checkpoint", c.paths.checkpoint);
        read(s, "report", c.paths.report);
    }
    validate_config(c);
    return c;
}

std::string canonical_json(const PipelineConfig& config) { return to_json(config).dump(); }

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    std::ostringstream out;
    out << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) out << std::setw(2) << static_cast<int>(digest[i]);
    return out.str();
}

std::string config_hash(const PipelineConfig& config) { return sha256_hex(canonical_json(config)); }

std::string feature_hash(const PipelineConfig& config) {
    const nlohmann::json j = {{"ingest", ingest_json(config.ingest)},
                              {"dsp", dsp_json(config.dsp)},
                              {"encoder", encoder_json(config)}};
    return sha256_hex(j.dump());
}

ExperimentConfig experiment_config(const PipelineConfig& config) {
    ExperimentConfig e;
    e.fusion = config.fusion;
    e.task = config.task;
    e.folds = config.folds;
    e.seed = config.seed;
    e.train = config.train;
    e.config_hash = config_hash(config);
    return e;
}

}  // namespace ecgfuse
