#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ecgfuse/config.hpp"
#include "ecgfuse/error.hpp"

using namespace ecgfuse;
using nlohmann::json;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no ecgfuse::Error thrown");
    return ErrorCode::ConfigInvalid;
}

}  // namespace

TEST_CASE("sha256 known answers") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("defaults") {
    const PipelineConfig c;
    CHECK(c.ingest.rate_hz == 500);
    CHECK(c.ingest.seconds == 10.0);
    CHECK(c.dsp.window_s == 1.0);
    CHECK(c.dsp.overlap == 0.5);
    CHECK(c.dsp.chunk_s == 0.1);
    CHECK(c.dsp.chunk_overlap == 0.9);
    CHECK(c.train.dense == 16);
    CHECK(c.train.hidden == 16);
    CHECK(c.train.learning_rate == 0.01);
    CHECK(c.train.batch_size == 64);
    CHECK(c.folds == 10);
    CHECK_NOTHROW(validate_config(c));
}

TEST_CASE("json round trip and canonical form") {
    PipelineConfig c;
    c.dsp.hp_cutoff_hz = 0.7;
    c.backend = "fallback:32:9";
    c.fusion = FusionStrategy::DecisionVote;
    c.train.mode = ModelMode::Spectral;
    c.train.epochs = 12;
    c.task = Task::Binary;
    c.folds = 4;
    c.seed = 123456789012345ULL;
    const auto back = config_from_json(to_json(c));
    CHECK(canonical_json(back) == canonical_json(c));
    CHECK(config_hash(back) == config_hash(c));
    // sorted keys, no whitespace
    const std::string text = canonical_json(c);
    CHECK(text.find(' ') == std::string::npos);
    CHECK(text.find("\"dsp\"") < text.find("\"encoder\""));
    CHECK(text.find("\"folds\"") < text.find("\"fusion\""));
}

TEST_CASE("overrides apply on top of a base config") {
    PipelineConfig base;
    base.folds = 7;
    const auto c = config_from_json(json::parse(R"({"model": {"epochs": 3}, "dsp": {"overlap": 0.25}})"), base);
    CHECK(c.folds == 7);
    CHECK(c.train.epochs == 3);
    CHECK(c.dsp.overlap == 0.25);
    CHECK(c.train.hidden == 16);
}

TEST_CASE("fusion choice sets the encoder input unless given explicitly") {
    const auto data = config_from_json(json::parse(R"({"fusion": "data"})"));
    CHECK(data.fusion_input == FusionInput::Stacked);
    const auto concat = config_from_json(json::parse(R"({"fusion": "feature_concat"})"), data);
    CHECK(concat.fusion_input == FusionInput::PerLead);
    const auto explicit_input = config_from_json(json::parse(R"({"fusion": "data", "encoder": {"fusion_input": "per-lead"}})"));
    CHECK(explicit_input.fusion_input == FusionInput::PerLead);
}

TEST_CASE("invalid configs") {
    const char* bad[] = {
        R"({"colour": "blue"})",
        R"({"dsp": {"window": 1.0}})",
        R"({"model": {"epochs": "many"}})",
        R"({"model": {"epochs": 2.5}})",
        R"({"folds": -3})",
        R"({"folds": 1})",
        R"({"fusion": "telepathy"})",
        R"({"model": {"mode": "transformer"}})",
        R"({"task": "triage"})",
        R"({"dsp": {"overlap": 1.0}})",
        R"({"dsp": {"floor_eps": 0}})",
        R"({"ingest": {"rate_hz": 0}})",
        R"({"model": {"learning_rate": -0.1}})",
        R"({"model": {"validation_fraction": 1.0}})",
        R"([1, 2, 3])",
    };
    for (const char* text : bad) {
        INFO(text);
        CHECK(code_of([&] { config_from_json(json::parse(text)); }) == ErrorCode::ConfigInvalid);
    }
}

TEST_CASE("paths never enter the hashes") {
    PipelineConfig a, b;
    b.paths.cache = "/elsewhere";
    b.paths.report = "r.json";
    CHECK(config_hash(a) == config_hash(b));
    CHECK(feature_hash(a) == feature_hash(b));
    const auto with_paths = config_from_json(json::parse(R"({"paths": {"manifest": "m.json"}})"));
    CHECK(with_paths.paths.manifest == "m.json");
    CHECK(config_hash(with_paths) == config_hash(a));
}

TEST_CASE("feature hash covers encoding inputs only") {
    const PipelineConfig base;
    PipelineConfig model = base;
    model.train.epochs = 3;
    model.fusion = FusionStrategy::FeatureAccum;
    model.folds = 4;
    CHECK(feature_hash(model) == feature_hash(base));
    CHECK(config_hash(model) != config_hash(base));

    PipelineConfig dsp = base;
    dsp.dsp.chunk_overlap = 0.8;
    CHECK(feature_hash(dsp) != feature_hash(base));
    PipelineConfig backend = base;
    backend.backend = "fallback:64:8";
    CHECK(feature_hash(backend) != feature_hash(base));
    PipelineConfig stacked = base;
    stacked.fusion_input = FusionInput::Stacked;
    CHECK(feature_hash(stacked) != feature_hash(base));
    PipelineConfig ingest = base;
    ingest.ingest.rate_hz = 250;
    CHECK(feature_hash(ingest) != feature_hash(base));
}

TEST_CASE("experiment config mirrors the pipeline config") {
    PipelineConfig c;
    c.folds = 4;
    c.seed = 9;
    c.fusion = FusionStrategy::DecisionAccum;
    const auto e = experiment_config(c);
    CHECK(e.folds == 4);
    CHECK(e.seed == 9);
    CHECK(e.fusion == FusionStrategy::DecisionAccum);
    CHECK(e.config_hash == config_hash(c));
}

TEST_CASE("error codes map to exit classes") {
    CHECK(is_config_error(ErrorCode::ConfigInvalid));
    CHECK(is_config_error(ErrorCode::UnknownSubcommand));
    CHECK(is_config_error(ErrorCode::StaleCache));
    CHECK_FALSE(is_config_error(ErrorCode::MissingLead));
    CHECK_FALSE(is_config_error(ErrorCode::TooShort));
    CHECK(to_string(ErrorCode::StaleCache) == "StaleCache");
}
