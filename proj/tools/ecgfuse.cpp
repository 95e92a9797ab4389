// ecgfuse: command-line front end for the ingest -> spectrogram -> encode -> train ->
// evaluate -> predict pipeline, plus grid sweeps over fusion strategies and model modes.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ecgfuse/config.hpp"
#include "ecgfuse/error.hpp"
#include "ecgfuse/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ecgfuse;

namespace {

void log_line(const std::string& line) { std::cerr << "ecgfuse: " << line << '\n'; }

json read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot open config " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, path + ": " + e.what());
    }
}

// Flags that were given on the command line, as a config fragment. The --config file is
// merged on top, so its keys win.
struct Overrides {
    json flags = json::object();
    std::string config_file;

    template <typename T>
    void set_if(const CLI::Option* opt, const json::json_pointer& key, const T& value) {
        if (opt && opt->count() > 0) flags[key] = value;
    }

    json merged() const {
        json out = flags;
        if (!config_file.empty()) out.merge_patch(read_config_file(config_file));
        return out;
    }
};

struct DspFlags {
    double window_s = 1.0, overlap = 0.5, chunk_s = 0.1, chunk_overlap = 0.9, hp_cutoff = 0.5, gauss_sigma = 0.002;
    CLI::Option *o_window = nullptr, *o_overlap = nullptr, *o_chunk = nullptr, *o_chunk_overlap = nullptr,
                *o_hp = nullptr, *o_sigma = nullptr;

    void add(CLI::App* app) {
        o_window = app->add_option("--window-s", window_s, "Window length in seconds");
        o_overlap = app->add_option("--overlap", overlap, "Overlap between consecutive windows");
        o_chunk = app->add_option("--chunk-s", chunk_s, "STFT chunk length in seconds");
        o_chunk_overlap = app->add_option("--chunk-overlap", chunk_overlap, "Overlap between STFT chunks");
        o_hp = app->add_option("--hp-cutoff", hp_cutoff, "High-pass cutoff in Hz");
        o_sigma = app->add_option("--gauss-sigma", gauss_sigma, "Gaussian smoothing sigma in seconds");
    }

    void apply(Overrides& o) const {
        o.set_if(o_window, "/dsp/window_s"_json_pointer, window_s);
        o.set_if(o_overlap, "/dsp/overlap"_json_pointer, overlap);
        o.set_if(o_chunk, "/dsp/chunk_s"_json_pointer, chunk_s);
        o.set_if(o_chunk_overlap, "/dsp/chunk_overlap"_json_pointer, chunk_overlap);
        o.set_if(o_hp, "/dsp/hp_cutoff_hz"_json_pointer, hp_cutoff);
        o.set_if(o_sigma, "/dsp/gauss_sigma_s"_json_pointer, gauss_sigma);
    }
};

// Config whose ingest section comes from the manifest; a conflicting override is stale.
PipelineConfig config_for_manifest(const Manifest& manifest, const json& overrides) {
    PipelineConfig base;
    base.ingest = manifest.ingest;
    PipelineConfig c = config_from_json(overrides, base);
    if (ingest_hash(c.ingest) != manifest.ingest_hash) {
        throw Error(ErrorCode::StaleCache, "the manifest was ingested with different rate/duration/validation options");
    }
    return c;
}

fs::path cache_or_default(const std::string& given) {
    return given.empty() ? default_cache_root() / "features" : fs::path(given);
}

std::string fixed(const std::optional<double>& v, int digits = 4) {
    if (!v) return "n/a";
    std::ostringstream out;
    out << std::fixed << std::setprecision(digits) << *v;
    return out.str();
}

void print_summary(const MetricsReport& report) {
    std::ostringstream line;
    line << "macro AUROC " << fixed(report.aggregate.auroc_macro) << ", accuracy "
         << fixed(report.aggregate.classification.accuracy) << " over " << report.aggregate.n_records << " records";
    log_line(line.str());
}

nlohmann::ordered_json prediction_json(const RecordPrediction& p, Task task, const std::string& record_id) {
    json probs = json::object();
    for (std::size_t c = 0; c < p.scores.size(); ++c) probs[std::string(class_name(c, task))] = p.scores[c];
    nlohmann::ordered_json out;
    out["record_id"] = record_id;
    out["label"] = std::string(class_name(p.label, task));
    out["probs"] = probs;
    return out;
}

// ---- sweep -----------------------------------------------------------------------------

int run_sweep(const std::string& grid_path, const std::string& out_prefix) {
    json grid_file = read_config_file(grid_path);
    json grid = grid_file.contains("grid") ? grid_file["grid"] : json::object();
    grid_file.erase("grid");
    const PipelineConfig base = config_from_json(grid_file);
    if (base.paths.manifest.empty()) throw Error(ErrorCode::ConfigInvalid, "sweep needs paths.manifest");
    const fs::path cache_root = cache_or_default(base.paths.cache);

    std::vector<FusionStrategy> fusions;
    std::vector<ModelMode> modes;
    try {
        for (const auto& f : grid.value("fusion", json::array({std::string(fusion_name(base.fusion))}))) {
            const auto parsed = parse_fusion(f.get<std::string>());
            if (!parsed) throw Error(ErrorCode::ConfigInvalid, "unknown fusion in grid: " + f.dump());
            fusions.push_back(*parsed);
        }
        for (const auto& m : grid.value("model", json::array({std::string(model_mode_name(base.train.mode))}))) {
            const auto parsed = parse_model_mode(m.get<std::string>());
            if (!parsed) throw Error(ErrorCode::ConfigInvalid, "unknown model in grid: " + m.dump());
            modes.push_back(*parsed);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, grid_path + ": grid entries must be arrays of strings");
    }

    const Manifest manifest = read_manifest(base.paths.manifest);
    std::optional<std::vector<EcgRecord>> records;
    std::map<FusionInput, std::vector<RecordFeatures>> features;
    std::vector<std::string> classes;
    for (std::size_t c = 0; c < num_classes(base.task); ++c) classes.emplace_back(class_name(c, base.task));

    std::ostringstream csv, text;
    csv << "fusion,model";
    for (const auto& c : classes) csv << ",auroc_" << c;
    csv << ",auroc_global,accuracy,config_hash\n";
    text << std::left << std::setw(28) << "Method";
    for (const auto& c : classes) text << std::setw(10) << c;
    text << std::setw(10) << "Global" << '\n';

    for (FusionStrategy fusion : fusions) {
        PipelineConfig c = base;
        c.fusion = fusion;
        c.fusion_input = uses_stacked_input(fusion) ? FusionInput::Stacked : FusionInput::PerLead;
        c.ingest = manifest.ingest;
        if (!features.count(c.fusion_input)) {
            const fs::path dir = cache_root / std::string(fusion_input_name(c.fusion_input));
            if (!records) records = load_accepted(manifest);
            encode_to_cache(*records, c, dir, log_line);
            features[c.fusion_input] = load_cache(dir, feature_hash(c));
        }
        for (ModelMode mode : modes) {
            c.train.mode = mode;
            const MetricsReport report = run_experiment(features[c.fusion_input], experiment_config(c));
            const std::string method = std::string(fusion_name(fusion)) + " / " + std::string(model_mode_name(mode));
            log_line(method + ": macro AUROC " + fixed(report.aggregate.auroc_macro));
            csv << fusion_name(fusion) << ',' << model_mode_name(mode);
            text << std::left << std::setw(28) << method;
            for (const auto& a : report.aggregate.auroc_per_class) {
                csv << ',' << (a ? fixed(a, 6) : "");
                text << std::setw(10) << fixed(a, 3);
            }
            csv << ',' << (report.aggregate.auroc_macro ? fixed(report.aggregate.auroc_macro, 6) : "") << ','
                << fixed(report.aggregate.classification.accuracy, 6) << ',' << report.config_hash << '\n';
            text << std::setw(10) << fixed(report.aggregate.auroc_macro, 3) << '\n';
        }
    }
    const std::string prefix = out_prefix.empty() ? (base.paths.report.empty() ? "sweep" : base.paths.report) : out_prefix;
    write_text_atomic(prefix + ".csv", csv.str());
    write_text_atomic(prefix + ".txt", text.str());
    std::cout << text.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-lead ECG spectrogram fusion pipeline"};
    app.require_subcommand(1);
    Overrides ov;

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Parse, canonicalize and validate raw records");
    std::string in_dir, in_format = "csv", manifest_out;
    int rate = 500;
    double seconds = 10.0, flatline = 0.01, range_limit = 25.0;
    ingest->add_option("--input", in_dir, "Directory of raw records")->required();
    ingest->add_option("--format", in_format, "csv or wfdb")->check(CLI::IsMember({"csv", "wfdb"}));
    ingest->add_option("--out", manifest_out, "Manifest path")->required();
    auto* o_rate = ingest->add_option("--rate", rate, "Pipeline sampling rate in Hz");
    auto* o_seconds = ingest->add_option("--seconds", seconds, "Seconds kept per record");
    auto* o_flat = ingest->add_option("--flatline-eps", flatline, "Flatline threshold in mV");
    auto* o_range = ingest->add_option("--range-limit", range_limit, "Out-of-range threshold in mV");
    ingest->add_option("--config", ov.config_file, "JSON config overriding flags");

    // spectrogram
    auto* spectro = app.add_subcommand("spectrogram", "Write normalized spectrograms");
    std::string manifest_in, spec_out;
    bool export_png = false;
    DspFlags spec_dsp;
    spectro->add_option("--manifest", manifest_in, "Manifest from ingest")->required();
    spectro->add_option("--out", spec_out, "Output directory")->required();
    spectro->add_flag("--export-png", export_png, "Also write viridis PNGs");
    spec_dsp.add(spectro);
    spectro->add_option("--config", ov.config_file, "JSON config overriding flags");

    // encode
    auto* enc = app.add_subcommand("encode", "Encode spectrograms into the feature cache");
    std::string backend = "fallback:64:7", fusion_input = "per-lead", cache_dir;
    DspFlags enc_dsp;
    enc->add_option("--manifest", manifest_in, "Manifest from ingest")->required();
    auto* o_backend = enc->add_option("--backend", backend, "onnx:<path>[:inception|mnasnet] or fallback:<tau>:<seed>");
    auto* o_finput = enc->add_option("--fusion-input", fusion_input, "per-lead or stacked")
                         ->check(CLI::IsMember({"per-lead", "stacked"}));
    enc->add_option("--cache", cache_dir, "Cache directory (default $ECGFUSE_CACHE/features)");
    enc_dsp.add(enc);
    enc->add_option("--config", ov.config_file, "JSON config overriding flags");

    // train
    auto* train = app.add_subcommand("train", "Cross-validate and train a model");
    std::string fusion = "feature_concat", model = "dense-lstm", task = "onset", ckpt_out;
    std::size_t folds = 10, epochs = 30, batch = 64, patience = 5;
    std::uint64_t seed = 0;
    double lr = 0.01;
    train->add_option("--cache", cache_dir, "Feature cache directory");
    auto* o_fusion = train->add_option("--fusion", fusion, "data, feature_concat, feature_accum, decision_accum, decision_vote");
    auto* o_model = train->add_option("--model", model, "dense, lstm or dense-lstm");
    auto* o_task = train->add_option("--task", task, "binary or onset");
    auto* o_folds = train->add_option("--folds", folds, "Cross-validation folds");
    auto* o_seed = train->add_option("--seed", seed, "Seed for every random draw");
    auto* o_epochs = train->add_option("--epochs", epochs, "Maximum epochs");
    auto* o_batch = train->add_option("--batch-size", batch, "Batch size");
    auto* o_patience = train->add_option("--patience", patience, "Early-stopping patience in epochs");
    auto* o_lr = train->add_option("--lr", lr, "Adam learning rate");
    train->add_option("--out", ckpt_out, "Checkpoint path")->required();
    train->add_option("--config", ov.config_file, "JSON config overriding flags");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint's folds on the cache");
    std::string ckpt_in, report_out;
    evaluate->add_option("--ckpt", ckpt_in, "Checkpoint from train")->required();
    evaluate->add_option("--cache", cache_dir, "Feature cache directory");
    evaluate->add_option("--report", report_out, "Metrics JSON path (default: standard output)");

    // predict
    auto* pred = app.add_subcommand("predict", "Classify one record with a checkpoint's final model");
    std::string record_path, record_format;
    pred->add_option("--ckpt", ckpt_in, "Checkpoint from train")->required();
    pred->add_option("--record", record_path, "Record (.csv with sidecar, or .hea)")->required();
    pred->add_option("--format", record_format, "csv or wfdb (default: from the extension)")
        ->check(CLI::IsMember({"csv", "wfdb"}));

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Compare fusion strategies and models on one manifest");
    std::string grid_path, sweep_out;
    sweep->add_option("--grid", grid_path, "Config JSON with a \"grid\" section")->required();
    sweep->add_option("--out", sweep_out, "Output prefix for .csv and .txt");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (argc > 1 && app.get_subcommands().empty() && argv[1][0] != '-') {
            std::cerr << "ecgfuse: " << to_string(ErrorCode::UnknownSubcommand) << ": '" << argv[1]
                      << "' (expected ingest, spectrogram, encode, train, evaluate, predict or sweep)\n";
            return 2;
        }
        app.exit(e);
        return 2;
    }

    try {
        if (*ingest) {
            ov.set_if(o_rate, "/ingest/rate_hz"_json_pointer, rate);
            ov.set_if(o_seconds, "/ingest/seconds"_json_pointer, seconds);
            ov.set_if(o_flat, "/ingest/flatline_eps_mv"_json_pointer, flatline);
            ov.set_if(o_range, "/ingest/range_limit_mv"_json_pointer, range_limit);
            const PipelineConfig c = config_from_json(ov.merged());
            const Manifest m = ingest_directory(in_dir, *parse_record_format(in_format), manifest_out, c.ingest, log_line);
            std::size_t accepted = 0;
            for (const auto& e : m.records) accepted += e.accepted ? 1 : 0;
            log_line("ingested " + std::to_string(m.records.size()) + " record(s), " + std::to_string(accepted) +
                     " accepted -> " + manifest_out);
        } else if (*spectro) {
            spec_dsp.apply(ov);
            const Manifest m = read_manifest(manifest_in);
            const PipelineConfig c = config_for_manifest(m, ov.merged());
            const auto records = load_accepted(m);
            for (const auto& rec : records) export_spectrograms(rec, c.dsp, spec_out, export_png, log_line);
            log_line("wrote spectrograms of " + std::to_string(records.size()) + " record(s) to " + spec_out);
        } else if (*enc) {
            enc_dsp.apply(ov);
            ov.set_if(o_backend, "/encoder/backend"_json_pointer, backend);
            ov.set_if(o_finput, "/encoder/fusion_input"_json_pointer, fusion_input);
            const Manifest m = read_manifest(manifest_in);
            const PipelineConfig c = config_for_manifest(m, ov.merged());
            encode_to_cache(load_accepted(m), c, cache_or_default(cache_dir), log_line);
        } else if (*train) {
            ov.set_if(o_fusion, "/fusion"_json_pointer, fusion);
            ov.set_if(o_model, "/model/mode"_json_pointer, model);
            ov.set_if(o_task, "/task"_json_pointer, task);
            ov.set_if(o_folds, "/folds"_json_pointer, folds);
            ov.set_if(o_seed, "/seed"_json_pointer, seed);
            ov.set_if(o_epochs, "/model/epochs"_json_pointer, epochs);
            ov.set_if(o_batch, "/model/batch_size"_json_pointer, batch);
            ov.set_if(o_patience, "/model/patience"_json_pointer, patience);
            ov.set_if(o_lr, "/model/learning_rate"_json_pointer, lr);
            const fs::path dir = cache_or_default(cache_dir);
            const CacheInfo info = read_cache_info(dir);
            const PipelineConfig c = config_for_cache(info, ov.merged());
            const auto records = load_cache(dir, info.feature_hash);
            const Checkpoint ckpt = train_checkpoint(records, c, info.feature_hash);
            write_checkpoint(ckpt, ckpt_out);
            print_summary(evaluate_checkpoint(ckpt, records));
            log_line("config " + ckpt.config_hash.substr(0, 12) + ", checkpoint " + ckpt_out);
        } else if (*evaluate) {
            const Checkpoint ckpt = read_checkpoint(ckpt_in);
            const auto records = load_cache(cache_or_default(cache_dir), ckpt.feature_hash);
            const MetricsReport report = evaluate_checkpoint(ckpt, records);
            const std::string text = to_json(report).dump(2) + "\n";
            if (report_out.empty()) {
                std::cout << text;
            } else {
                write_text_atomic(report_out, text);
            }
            print_summary(report);
        } else if (*pred) {
            const Checkpoint ckpt = read_checkpoint(ckpt_in);
            RecordFormat format = fs::path(record_path).extension() == ".hea" ? RecordFormat::WfdbBinary
                                                                                : RecordFormat::DelimitedText;
            if (!record_format.empty()) format = *parse_record_format(record_format);
            const EcgRecord raw = parse_record(record_path, format);
            std::cout << prediction_json(predict_record(ckpt, raw), ckpt.config.task, raw.record_id).dump() << '\n';
        } else if (*sweep) {
            return run_sweep(grid_path, sweep_out);
        }
    } catch (const Error& e) {
        std::cerr << "ecgfuse: " << e.what() << '\n';
        return is_config_error(e.code()) ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "ecgfuse: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
