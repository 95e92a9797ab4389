#include "ecgfuse/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "ecgfuse/binary_io.hpp"
#include "ecgfuse/error.hpp"
#include "ecgfuse/fusion.hpp"
#include "ecgfuse/image.hpp"
#include "ecgfuse/parallel.hpp"

namespace ecgfuse {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void say(const Logger& log, const std::string& line) {
    if (log) log(line);
}

json read_json_file(const fs::path& path, ErrorCode missing) {
    std::ifstream in(path);
    if (!in) throw Error(missing, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::UnsupportedFormat, path.string() + ": " + e.what());
    }
}

json label_json(const std::optional<DiagnosisLabel>& label) {
    return label ? json(std::string(label_name(*label))) : json(nullptr);
}

std::optional<DiagnosisLabel> label_from_json(const json& j, const std::string& where) {
    if (j.is_null()) return std::nullopt;
    const auto label = parse_label(j.get<std::string>());
    if (!label) throw Error(ErrorCode::UnsupportedFormat, where + ": unknown label " + j.dump());
    return label;
}

json ingest_options_json(const IngestOptions& o) {
    return {{"rate_hz", o.rate_hz},
            {"seconds", o.seconds},
            {"flatline_eps_mv", o.thresholds.flatline_eps_mv},
            {"range_limit_mv", o.thresholds.range_limit_mv}};
}

}  // namespace

void write_text_atomic(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, path);
}

fs::path default_cache_root() {
    if (const char* env = std::getenv("ECGFUSE_CACHE"); env && *env) return env;
    return ".ecgfuse-cache";
}

// ---- ingest ----------------------------------------------------------------------------

EcgRecord canonicalize(const EcgRecord& rec, const IngestOptions& options) {
    return truncate(resample(rec, options.rate_hz), options.seconds);
}

std::string ingest_hash(const IngestOptions& options) { return sha256_hex(ingest_options_json(options).dump()); }

Manifest ingest_directory(const fs::path& input, RecordFormat format, const fs::path& manifest_path,
                          const IngestOptions& options, const Logger& log) {
    if (!fs::is_directory(input)) throw Error(ErrorCode::UnreadableFile, input.string() + " is not a directory");
    const std::string ext = format == RecordFormat::DelimitedText ? ".csv" : ".hea";
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(input)) {
        if (entry.is_regular_file() && entry.path().extension() == ext) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error(ErrorCode::UnreadableFile, "no " + ext + " records under " + input.string());

    Manifest manifest;
    manifest.ingest = options;
    manifest.ingest_hash = ingest_hash(options);
    manifest.dir = manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
    const fs::path records_dir = manifest.dir / "records";

    std::vector<ManifestEntry> entries(files.size());
    parallel_for(files.size(), [&](std::size_t i) {
        const EcgRecord raw = parse_record(files[i], format);
        ManifestEntry& e = entries[i];
        e.record_id = raw.record_id;
        e.label = raw.label;
        EcgRecord rec;
        try {
            rec = canonicalize(raw, options);
        } catch (const Error& err) {
            if (err.code() != ErrorCode::TooShort) throw;
            e.accepted = false;
            e.issues.push_back("too_short");
            return;
        }
        const ValidationReport report = validate_record(rec, options.thresholds);
        for (LeadId lead : kAllLeads) {
            const LeadFlags& f = report.flags[index_of(lead)];
            const std::string name(lead_name(lead));
            if (f.missing) e.issues.push_back(name + ": missing");
            if (f.flatline) e.issues.push_back(name + ": flatline");
            if (f.out_of_range) e.issues.push_back(name + ": out_of_range");
        }
        e.accepted = report.accepted;
        e.file = fs::relative(write_csv_record(rec, records_dir), manifest.dir).generic_string();
    });

    std::set<std::string> ids;
    for (auto& e : entries) {
        if (!ids.insert(e.record_id).second) {
            throw Error(ErrorCode::MalformedHeader, "two input files carry record id '" + e.record_id + "'");
        }
        if (!e.accepted) {
            std::string why;
            for (const auto& issue : e.issues) why += (why.empty() ? "" : ", ") + issue;
            say(log, "rejected " + e.record_id + " (" + why + ")");
        }
        manifest.records.push_back(std::move(e));
    }
    write_manifest(manifest, manifest_path);
    return manifest;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
    json j;
    j["ingest"] = ingest_options_json(manifest.ingest);
    j["ingest_hash"] = manifest.ingest_hash;
    j["records"] = json::array();
    for (const auto& e : manifest.records) {
        j["records"].push_back({{"record_id", e.record_id},
                                {"file", e.file},
                                {"label", label_json(e.label)},
                                {"accepted", e.accepted},
                                {"issues", e.issues}});
    }
    write_text_atomic(path, j.dump(2) + "\n");
}

Manifest read_manifest(const fs::path& path) {
    const json j = read_json_file(path, ErrorCode::UnreadableFile);
    Manifest m;
    try {
        const json& o = j.at("ingest");
        m.ingest.rate_hz = o.at("rate_hz").get<int>();
        m.ingest.seconds = o.at("seconds").get<double>();
        m.ingest.thresholds.flatline_eps_mv = o.at("flatline_eps_mv").get<double>();
        m.ingest.thresholds.range_limit_mv = o.at("range_limit_mv").get<double>();
        m.ingest_hash = j.at("ingest_hash").get<std::string>();
        for (const auto& r : j.at("records")) {
            ManifestEntry e;
            e.record_id = r.at("record_id").get<std::string>();
            e.file = r.at("file").get<std::string>();
            e.label = label_from_json(r.at("label"), path.string());
            e.accepted = r.at("accepted").get<bool>();
            e.issues = r.at("issues").get<std::vector<std::string>>();
            m.records.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::UnsupportedFormat, path.string() + ": " + e.what());
    }
    if (m.ingest_hash != ingest_hash(m.ingest)) {
        throw Error(ErrorCode::StaleCache, path.string() + ": ingest hash does not match its options");
    }
    m.dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    return m;
}

std::vector<EcgRecord> load_accepted(const Manifest& manifest) {
    std::vector<const ManifestEntry*> accepted;
    for (const auto& e : manifest.records) {
        if (e.accepted) accepted.push_back(&e);
    }
    std::vector<EcgRecord> out(accepted.size());
    parallel_for(accepted.size(), [&](std::size_t i) {
        out[i] = parse_record(manifest.dir / accepted[i]->file, RecordFormat::DelimitedText);
        if (out[i].sampling_rate != manifest.ingest.rate_hz) {
            throw Error(ErrorCode::StaleCache, accepted[i]->file + " is not at the manifest's rate");
        }
    });
    return out;
}

// ---- spectrograms ----------------------------------------------------------------------

void export_spectrograms(const EcgRecord& rec, const DspOptions& options, const fs::path& out, bool png,
                         const Logger& log) {
    const SpectrogramSet set = record_spectrograms(rec, options);
    const std::string stem = file_stem_for(rec.record_id);
    std::ostringstream bin;
    bin.write("ECGS1", 5);
    const Spectrogram& first = set.leads[0].at(0);
    binary::put_u32(bin, static_cast<std::uint32_t>(first.rows));
    binary::put_u32(bin, static_cast<std::uint32_t>(first.cols));
    binary::put_u32(bin, static_cast<std::uint32_t>(set.gamma()));
    binary::put_u32(bin, static_cast<std::uint32_t>(kNumLeads));
    for (const auto& lead : set.leads) {
        for (const auto& spec : lead) binary::put_f64s(bin, spec.values);
    }
    write_text_atomic(out / (stem + ".ecgs"), bin.str());
    if (!png) return;
    for (LeadId lead : kAllLeads) {
        const auto& specs = set.leads[index_of(lead)];
        for (std::size_t n = 0; n < specs.size(); ++n) {
            const RenderResult r = render_image(specs[n], Colormap::Viridis);
            if (r.degenerate_range) {
                say(log, "warning: " + rec.record_id + " " + std::string(lead_name(lead)) + " window " +
                             std::to_string(n) + " has a constant spectrogram");
            }
            const fs::path dir = out / stem / std::string(lead_name(lead));
            fs::create_directories(dir);
            write_png(r.image, dir / (std::to_string(n) + ".png"));
        }
    }
}

// ---- features --------------------------------------------------------------------------

FeatureBlob encode_record(const EcgRecord& rec, const EmbeddingBackend& backend, FusionInput input,
                          const DspOptions& options) {
    const SpectrogramSet set = record_spectrograms(rec, options);
    FeatureBlob blob;
    blob.tau = static_cast<std::uint32_t>(backend.tau());
    blob.gamma = static_cast<std::uint32_t>(set.gamma());
    blob.n_leads = input == FusionInput::Stacked ? 1 : static_cast<std::uint32_t>(kNumLeads);
    blob.values.resize(static_cast<std::size_t>(blob.tau) * blob.gamma * blob.n_leads);
    auto store = [&](std::size_t lead, std::size_t n, const FeatureVector& fv) {
        auto slot = blob.at(lead, n);
        for (std::size_t k = 0; k < slot.size(); ++k) slot[k] = static_cast<float>(fv.values[k]);
    };
    for (std::size_t n = 0; n < set.gamma(); ++n) {
        if (input == FusionInput::Stacked) {
            PerLead<Spectrogram> specs;
            for (std::size_t j = 0; j < kNumLeads; ++j) specs[j] = set.leads[j][n];
            const StackedSpectrogram stacked = data_fuse(specs, n);
            store(0, n, encode(backend, stacked.grid, FeatureSource::fused(n)));
        } else {
            for (LeadId lead : kAllLeads) {
                const std::size_t j = index_of(lead);
                store(j, n, encode(backend, set.leads[j][n], FeatureSource::single_lead(lead, n)));
            }
        }
    }
    return blob;
}

namespace {

json encoder_section(const PipelineConfig& config) {
    const json full = to_json(config);
    return {{"ingest", full["ingest"]}, {"dsp", full["dsp"]}, {"encoder", full["encoder"]}};
}

void write_cache_info(const CacheInfo& info, const fs::path& dir) {
    json j;
    j["format"] = "ECGF1";
    j["feature_hash"] = info.feature_hash;
    j["config"] = info.config;
    j["backend_id"] = info.backend_id;
    j["tau"] = info.tau;
    j["gamma"] = info.gamma;
    j["n_leads"] = info.n_leads;
    j["records"] = json::array();
    for (const auto& r : info.records) {
        j["records"].push_back({{"record_id", r.record_id},
                                {"file", file_stem_for(r.record_id) + ".ecgf"},
                                {"label", label_json(r.label)}});
    }
    write_text_atomic(dir / "cache.json", j.dump(2) + "\n");
}

}  // namespace

CacheInfo read_cache_info(const fs::path& cache_dir) {
    const fs::path path = cache_dir / "cache.json";
    if (!fs::exists(path)) throw Error(ErrorCode::CacheMiss, "no feature cache at " + cache_dir.string());
    const json j = read_json_file(path, ErrorCode::CacheMiss);
    CacheInfo info;
    try {
        info.feature_hash = j.at("feature_hash").get<std::string>();
        info.config = j.at("config");
        info.backend_id = j.at("backend_id").get<std::string>();
        info.tau = j.at("tau").get<std::uint32_t>();
        info.gamma = j.at("gamma").get<std::uint32_t>();
        info.n_leads = j.at("n_leads").get<std::uint32_t>();
        for (const auto& r : j.at("records")) {
            info.records.push_back({r.at("record_id").get<std::string>(), label_from_json(r.at("label"), path.string())});
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::UnsupportedFormat, path.string() + ": " + e.what());
    }
    return info;
}

CacheInfo encode_to_cache(const std::vector<EcgRecord>& records, const PipelineConfig& config, const fs::path& cache_dir,
                          const Logger& log) {
    const std::string hash = feature_hash(config);
    if (fs::exists(cache_dir / "cache.json")) {
        const CacheInfo existing = read_cache_info(cache_dir);
        if (existing.feature_hash != hash) {
            throw Error(ErrorCode::StaleCache, cache_dir.string() + " was built under feature hash " +
                                                   existing.feature_hash.substr(0, 12) + ", this config has " +
                                                   hash.substr(0, 12));
        }
    }
    const auto backend = make_backend(config.backend);
    fs::create_directories(cache_dir);

    std::vector<FeatureBlob> blobs(records.size());
    std::vector<bool> reused(records.size(), false);
    parallel_for(records.size(), [&](std::size_t i) {
        const fs::path path = cache_dir / (file_stem_for(records[i].record_id) + ".ecgf");
        if (fs::exists(path)) {
            blobs[i] = read_feature_blob(path);
            reused[i] = true;
            return;
        }
        blobs[i] = encode_record(records[i], *backend, config.fusion_input, config.dsp);
        write_feature_blob(blobs[i], path);
    });

    CacheInfo info;
    info.feature_hash = hash;
    info.config = encoder_section(config);
    info.backend_id = backend->id();
    info.tau = static_cast<std::uint32_t>(backend->tau());
    info.n_leads = config.fusion_input == FusionInput::Stacked ? 1 : static_cast<std::uint32_t>(kNumLeads);
    std::size_t n_reused = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const FeatureBlob& b = blobs[i];
        if (i == 0) info.gamma = b.gamma;
        if (b.tau != info.tau || b.gamma != info.gamma || b.n_leads != info.n_leads) {
            throw Error(ErrorCode::ShapeMismatch, "feature blob of " + records[i].record_id + " has an unexpected shape");
        }
        info.records.push_back({records[i].record_id, records[i].label});
        if (reused[i]) ++n_reused;
    }
    write_cache_info(info, cache_dir);
    say(log, "encoded " + std::to_string(records.size() - n_reused) + " record(s), reused " + std::to_string(n_reused) +
                 " into " + cache_dir.string());
    return info;
}

std::vector<RecordFeatures> load_cache(const fs::path& cache_dir, const std::optional<std::string>& expected_hash) {
    const CacheInfo info = read_cache_info(cache_dir);
    if (expected_hash && *expected_hash != info.feature_hash) {
        throw Error(ErrorCode::StaleCache, cache_dir.string() + " holds features for hash " +
                                               info.feature_hash.substr(0, 12) + ", expected " +
                                               expected_hash->substr(0, 12));
    }
    std::vector<RecordFeatures> out(info.records.size());
    parallel_for(info.records.size(), [&](std::size_t i) {
        out[i].record_id = info.records[i].record_id;
        out[i].label = info.records[i].label;
        out[i].blob = read_feature_blob(cache_dir / (file_stem_for(out[i].record_id) + ".ecgf"));
        if (out[i].blob.tau != info.tau || out[i].blob.gamma != info.gamma || out[i].blob.n_leads != info.n_leads) {
            throw Error(ErrorCode::StaleCache, out[i].record_id + ": blob shape differs from cache.json");
        }
    });
    return out;
}

PipelineConfig config_for_cache(const CacheInfo& info, const json& overrides) {
    PipelineConfig c = config_from_json(info.config);
    c = config_from_json(overrides, c);
    // a fusion override must not silently switch the encoder input recorded in the cache
    const auto recorded = parse_fusion_input(info.config.at("encoder").at("fusion_input").get<std::string>());
    if (recorded) c.fusion_input = *recorded;
    return c;
}

// ---- checkpoints -----------------------------------------------------------------------

namespace {

constexpr std::uint32_t kFinalFold = 0xFFFFFFFFu;

void put_set(std::ostream& out, const ModelSet& set) {
    binary::put_u32(out, set.fold ? static_cast<std::uint32_t>(*set.fold) : kFinalFold);
    binary::put_u32(out, static_cast<std::uint32_t>(set.held_out.size()));
    for (const auto& id : set.held_out) binary::put_string(out, id);
    binary::put_u32(out, static_cast<std::uint32_t>(set.members.size()));
    for (const auto& m : set.members) {
        binary::put_u32(out, static_cast<std::uint32_t>(m.epochs_run));
        binary::put_u32(out, static_cast<std::uint32_t>(m.best_epoch));
        write_params(out, m.params, m.optimizer);
    }
}

ModelSet get_set(std::istream& in, ModelMode mode) {
    ModelSet set;
    const std::uint32_t fold = binary::get_u32(in);
    if (fold != kFinalFold) set.fold = fold;
    const std::uint32_t n_held = binary::get_u32(in);
    for (std::uint32_t i = 0; i < n_held; ++i) set.held_out.push_back(binary::get_string(in));
    const std::uint32_t n_members = binary::get_u32(in);
    if (n_members != 1 && n_members != kNumLeads) {
        throw Error(ErrorCode::UnsupportedFormat, "checkpoint model set has " + std::to_string(n_members) + " members");
    }
    for (std::uint32_t m = 0; m < n_members; ++m) {
        TrainedModel t;
        t.epochs_run = binary::get_u32(in);
        t.best_epoch = binary::get_u32(in);
        auto [params, opt] = read_params(in, mode);
        t.params = std::move(params);
        t.optimizer = std::move(opt);
        set.members.push_back(std::move(t));
    }
    return set;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    if (ckpt.final_model.members.empty()) throw Error(ErrorCode::ConfigInvalid, "checkpoint has no final model");
    const ModelParams& head = ckpt.final_model.members[0].params;
    std::ostringstream out;
    out.write("ECGM1", 5);
    binary::put_u8(out, static_cast<std::uint8_t>(ckpt.config.train.mode));
    binary::put_u32(out, static_cast<std::uint32_t>(head.dims.input));
    binary::put_u32(out, static_cast<std::uint32_t>(head.dims.dense));
    binary::put_u32(out, static_cast<std::uint32_t>(head.dims.hidden));
    binary::put_u32(out, static_cast<std::uint32_t>(head.dims.classes));
    binary::put_u64(out, ckpt.config.seed);
    binary::put_string(out, ckpt.config_hash);
    binary::put_string(out, ckpt.feature_hash);
    binary::put_string(out, canonical_json(ckpt.config));
    binary::put_u8(out, static_cast<std::uint8_t>(ckpt.config.fusion));
    binary::put_u8(out, static_cast<std::uint8_t>(ckpt.config.task));
    binary::put_u32(out, static_cast<std::uint32_t>(ckpt.folds.size() + 1));
    for (const auto& set : ckpt.folds) put_set(out, set);
    put_set(out, ckpt.final_model);
    write_text_atomic(path, out.str());
}

Checkpoint read_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::UnreadableFile, "cannot open checkpoint " + path.string());
    binary::expect_magic(in, "ECGM1", path.string());
    const std::uint8_t mode_byte = binary::get_u8(in);
    if (mode_byte > static_cast<std::uint8_t>(ModelMode::Joint)) {
        throw Error(ErrorCode::UnsupportedFormat, path.string() + ": unknown model mode");
    }
    const auto mode = static_cast<ModelMode>(mode_byte);
    ModelDims dims;
    dims.input = binary::get_u32(in);
    dims.dense = binary::get_u32(in);
    dims.hidden = binary::get_u32(in);
    dims.classes = binary::get_u32(in);
    const std::uint64_t seed = binary::get_u64(in);
    Checkpoint ckpt;
    ckpt.config_hash = binary::get_string(in);
    ckpt.feature_hash = binary::get_string(in);
    const std::string config_text = binary::get_string(in);
    try {
        ckpt.config = config_from_json(json::parse(config_text));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::UnsupportedFormat, path.string() + ": embedded config: " + e.what());
    }
    if (config_hash(ckpt.config) != ckpt.config_hash || ckpt.config.seed != seed || ckpt.config.train.mode != mode) {
        throw Error(ErrorCode::StaleCache, path.string() + ": header does not match the embedded config");
    }
    if (binary::get_u8(in) != static_cast<std::uint8_t>(ckpt.config.fusion) ||
        binary::get_u8(in) != static_cast<std::uint8_t>(ckpt.config.task)) {
        throw Error(ErrorCode::StaleCache, path.string() + ": fusion or task does not match the embedded config");
    }
    const std::uint32_t n_sets = binary::get_u32(in);
    for (std::uint32_t s = 0; s < n_sets; ++s) {
        ModelSet set = get_set(in, mode);
        for (const auto& m : set.members) {
            if (!(m.params.dims == dims)) throw Error(ErrorCode::ShapeMismatch, path.string() + ": member dims differ from header");
        }
        if (set.fold) {
            ckpt.folds.push_back(std::move(set));
        } else {
            ckpt.final_model = std::move(set);
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::UnsupportedFormat, path.string() + ": trailing bytes");
    if (ckpt.final_model.members.empty()) throw Error(ErrorCode::UnsupportedFormat, path.string() + ": no final model");
    return ckpt;
}

Checkpoint train_checkpoint(const std::vector<RecordFeatures>& records, const PipelineConfig& config,
                            const std::string& cache_feature_hash) {
    if (feature_hash(config) != cache_feature_hash) {
        throw Error(ErrorCode::StaleCache, "the feature cache was built under a different ingest/dsp/encoder config");
    }
    const ExperimentConfig exp = experiment_config(config);
    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.config_hash = exp.config_hash;
    ckpt.feature_hash = cache_feature_hash;
    ckpt.folds = cross_validate(records, exp);
    ckpt.final_model = train_final(records, exp);
    return ckpt;
}

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<RecordFeatures>& records) {
    return evaluate_folds(records, experiment_config(ckpt.config), ckpt.folds);
}

RecordPrediction predict_record(const Checkpoint& ckpt, const EcgRecord& raw) {
    const PipelineConfig& c = ckpt.config;
    const EcgRecord rec = canonicalize(raw, c.ingest);
    const auto backend = make_backend(c.backend);
    RecordFeatures features;
    features.record_id = rec.record_id;
    features.label = rec.label;
    features.blob = encode_record(rec, *backend, c.fusion_input, c.dsp);
    return predict(ckpt.final_model, features, c.fusion);
}

}  // namespace ecgfuse
