#include "ecgfuse/ingest.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ecgfuse/error.hpp"

namespace ecgfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::vector<std::string> split_ws(std::string_view line) {
    std::istringstream in{std::string(line)};
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

double parse_double(std::string_view text, const fs::path& path) {
    double value = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        throw Error(ErrorCode::UnreadableFile,
                    path.string() + ": bad numeric field '" + std::string(text) + "'");
    }
    return value;
}

fs::path sidecar_path(const fs::path& path) {
    return path.parent_path() / (path.stem().string() + ".meta.json");
}

std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

struct Sidecar {
    std::string record_id;
    int sampling_rate = 0;
    std::optional<DiagnosisLabel> label;
};

Sidecar read_sidecar(const fs::path& meta_path, bool require_rate) {
    std::ifstream in(meta_path);
    if (!in) throw Error(ErrorCode::MalformedHeader, "missing sidecar " + meta_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedHeader, meta_path.string() + ": " + e.what());
    }
    Sidecar meta;
    meta.record_id = j.value("record_id", meta_path.stem().stem().string());
    if (j.contains("sampling_rate_hz")) {
        if (!j["sampling_rate_hz"].is_number_integer() || j["sampling_rate_hz"].get<int>() <= 0) {
            throw Error(ErrorCode::MalformedHeader, meta_path.string() + ": bad sampling_rate_hz");
        }
        meta.sampling_rate = j["sampling_rate_hz"].get<int>();
    } else if (require_rate) {
        throw Error(ErrorCode::MalformedHeader, meta_path.string() + ": no sampling_rate_hz");
    }
    if (j.contains("label") && !j["label"].is_null()) {
        meta.label = parse_label(j["label"].get<std::string>());
        if (!meta.label) {
            throw Error(ErrorCode::MalformedHeader,
                        meta_path.string() + ": unknown label " + j["label"].dump());
        }
    }
    return meta;
}

EcgRecord parse_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::UnreadableFile, "cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::MalformedHeader, path.string() + ": empty file");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

    const auto names = split(line, ',');
    // column index -> lead slot, or -1 for columns that are not standard leads
    std::vector<int> slot(names.size(), -1);
    std::array<bool, kNumLeads> seen{};
    for (std::size_t c = 0; c < names.size(); ++c) {
        if (const auto lead = parse_lead(names[c])) {
            if (seen[index_of(*lead)]) {
                throw Error(ErrorCode::MalformedHeader, path.string() + ": duplicate lead " + names[c]);
            }
            seen[index_of(*lead)] = true;
            slot[c] = static_cast<int>(index_of(*lead));
        }
    }
    for (LeadId lead : kAllLeads) {
        if (!seen[index_of(lead)]) {
            throw Error(ErrorCode::MissingLead,
                        path.string() + ": lead " + std::string(lead_name(lead)) + " not present");
        }
    }

    const Sidecar meta = read_sidecar(sidecar_path(path), true);
    EcgRecord rec;
    rec.record_id = meta.record_id;
    rec.sampling_rate = meta.sampling_rate;
    rec.label = meta.label;

    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != names.size()) {
            throw Error(ErrorCode::LengthMismatch, path.string() + ": row " + std::to_string(row) +
                                                       " has " + std::to_string(fields.size()) +
                                                       " fields, expected " +
                                                       std::to_string(names.size()));
        }
        for (std::size_t c = 0; c < fields.size(); ++c) {
            if (slot[c] >= 0) rec.leads[static_cast<std::size_t>(slot[c])].push_back(parse_double(fields[c], path));
        }
    }
    return rec;
}

// WFDB per-signal header line (format 16 only).
struct WfdbSignal {
    std::string file;
    long long byte_offset = 0;
    double gain = 200.0;
    double baseline = 0.0;
    std::string description;
};

double leading_number(const std::string& token, const fs::path& path) {
    std::size_t end = 0;
    while (end < token.size() && (std::isdigit(static_cast<unsigned char>(token[end])) ||
                                  token[end] == '.' || token[end] == '-' || token[end] == '+' ||
                                  token[end] == 'e' || token[end] == 'E')) {
        ++end;
    }
    if (end == 0) throw Error(ErrorCode::MalformedHeader, path.string() + ": bad field '" + token + "'");
    try {
        return std::stod(token.substr(0, end));
    } catch (const std::exception&) {
        throw Error(ErrorCode::MalformedHeader, path.string() + ": bad field '" + token + "'");
    }
}

std::optional<DiagnosisLabel> label_from_comments(const std::vector<std::string>& comments) {
    for (const auto& c : comments) {
        std::string lower = c;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
        if (lower.find("reason for admission") == std::string::npos) continue;
        if (lower.find("healthy control") != std::string::npos) return DiagnosisLabel::Normal;
        if (lower.find("myocardial infarction") != std::string::npos) {
            return DiagnosisLabel::MiUnspecified;
        }
    }
    return std::nullopt;
}

EcgRecord parse_wfdb(const fs::path& header_path) {
    fs::path hea = header_path;
    if (hea.extension() != ".hea") hea.replace_extension(".hea");
    std::ifstream in(hea);
    if (!in) throw Error(ErrorCode::UnreadableFile, "cannot open " + hea.string());

    std::vector<std::string> comments;
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t[0] == '#') {
            comments.push_back(t.substr(1));
            continue;
        }
        lines.push_back(t);
    }
    if (lines.empty()) throw Error(ErrorCode::MalformedHeader, hea.string() + ": no record line");

    const auto record_line = split_ws(lines[0]);
    if (record_line.size() < 2) throw Error(ErrorCode::MalformedHeader, hea.string() + ": short record line");
    if (record_line[0].find('/') != std::string::npos) {
        throw Error(ErrorCode::MalformedHeader, hea.string() + ": multi-segment records are not supported");
    }
    const int n_sig = static_cast<int>(leading_number(record_line[1], hea));
    const double fs_hz = record_line.size() > 2 ? leading_number(record_line[2], hea) : 250.0;
    if (fs_hz <= 0.0 || std::floor(fs_hz) != fs_hz) {
        throw Error(ErrorCode::MalformedHeader, hea.string() + ": sampling rate must be a positive integer");
    }
    long long n_samples = record_line.size() > 3 ? static_cast<long long>(leading_number(record_line[3], hea)) : -1;
    if (n_sig <= 0 || static_cast<int>(lines.size()) < 1 + n_sig) {
        throw Error(ErrorCode::MalformedHeader, hea.string() + ": signal lines missing");
    }

    std::vector<WfdbSignal> signals;
    for (int s = 0; s < n_sig; ++s) {
        const auto tok = split_ws(lines[1 + s]);
        if (tok.size() < 2) throw Error(ErrorCode::MalformedHeader, hea.string() + ": short signal line");
        WfdbSignal sig;
        sig.file = tok[0];
        const std::string& fmt = tok[1];
        const auto plus = fmt.find('+');
        if (fmt.substr(0, plus) != "16") {
            throw Error(ErrorCode::MalformedHeader, hea.string() + ": only format 16 is supported, got " + fmt);
        }
        if (plus != std::string::npos) sig.byte_offset = std::stoll(fmt.substr(plus + 1));
        std::optional<double> baseline;
        if (tok.size() > 2) {
            const std::string& g = tok[2];
            sig.gain = leading_number(g, hea);
            if (const auto open = g.find('('); open != std::string::npos) {
                baseline = leading_number(g.substr(open + 1), hea);
            }
            if (sig.gain == 0.0) sig.gain = 200.0;
        }
        const double adc_zero = tok.size() > 4 ? leading_number(tok[4], hea) : 0.0;
        sig.baseline = baseline.value_or(adc_zero);
        if (tok.size() > 8) {
            std::string desc;
            for (std::size_t i = 8; i < tok.size(); ++i) desc += (i > 8 ? " " : "") + tok[i];
            sig.description = desc;
        }
        signals.push_back(sig);
    }
    for (const auto& sig : signals) {
        if (sig.file != signals[0].file || sig.byte_offset != signals[0].byte_offset) {
            throw Error(ErrorCode::MalformedHeader, hea.string() + ": signals must share one data file");
        }
    }

    std::array<int, kNumLeads> column{};
    column.fill(-1);
    for (int s = 0; s < n_sig; ++s) {
        if (const auto lead = parse_lead(signals[static_cast<std::size_t>(s)].description)) {
            if (column[index_of(*lead)] < 0) column[index_of(*lead)] = s;
        }
    }
    for (LeadId lead : kAllLeads) {
        if (column[index_of(lead)] < 0) {
            throw Error(ErrorCode::MissingLead,
                        hea.string() + ": lead " + std::string(lead_name(lead)) + " not present");
        }
    }

    const fs::path dat = hea.parent_path() / signals[0].file;
    std::ifstream data(dat, std::ios::binary);
    if (!data) throw Error(ErrorCode::UnreadableFile, "cannot open " + dat.string());
    data.seekg(0, std::ios::end);
    const long long file_bytes = static_cast<long long>(data.tellg()) - signals[0].byte_offset;
    const long long frame_bytes = 2LL * n_sig;
    const long long available = file_bytes / frame_bytes;
    if (n_samples < 0) n_samples = available;
    if (available < n_samples) {
        throw Error(ErrorCode::LengthMismatch, dat.string() + ": holds " + std::to_string(available) +
                                                   " frames, header declares " + std::to_string(n_samples));
    }
    data.seekg(signals[0].byte_offset);
    std::vector<unsigned char> raw(static_cast<std::size_t>(n_samples * frame_bytes));
    data.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));

    EcgRecord rec;
    rec.record_id = hea.stem().string();
    rec.sampling_rate = static_cast<int>(fs_hz);
    for (LeadId lead : kAllLeads) {
        const auto s = static_cast<std::size_t>(column[index_of(lead)]);
        const auto& sig = signals[s];
        Signal& out = rec.lead(lead);
        out.resize(static_cast<std::size_t>(n_samples));
        for (long long k = 0; k < n_samples; ++k) {
            const std::size_t at = static_cast<std::size_t>(k * frame_bytes) + 2 * s;
            const auto adc = static_cast<std::int16_t>(
                static_cast<std::uint16_t>(raw[at]) | (static_cast<std::uint16_t>(raw[at + 1]) << 8));
            out[static_cast<std::size_t>(k)] = (adc - sig.baseline) / sig.gain;
        }
    }

    rec.label = label_from_comments(comments);
    if (const fs::path meta = sidecar_path(hea); fs::exists(meta)) {
        const Sidecar side = read_sidecar(meta, false);
        rec.record_id = side.record_id;
        if (side.label) rec.label = side.label;
    }
    return rec;
}

}  // namespace

std::optional<RecordFormat> parse_record_format(std::string_view name) {
    if (name == "csv" || name == "delimited_text") return RecordFormat::DelimitedText;
    if (name == "wfdb" || name == "wfdb_binary") return RecordFormat::WfdbBinary;
    return std::nullopt;
}

EcgRecord parse_record(const fs::path& path, RecordFormat format) {
    if (!fs::exists(path) && !(format == RecordFormat::WfdbBinary &&
                               fs::exists(fs::path(path).replace_extension(".hea")))) {
        throw Error(ErrorCode::UnreadableFile, path.string() + " does not exist");
    }
    EcgRecord rec = format == RecordFormat::DelimitedText ? parse_csv(path) : parse_wfdb(path);
    const std::size_t n = rec.num_samples();
    for (LeadId lead : kAllLeads) {
        if (rec.lead(lead).size() != n) {
            throw Error(ErrorCode::LengthMismatch, path.string() + ": unequal lead lengths");
        }
    }
    return rec;
}

std::string file_stem_for(std::string_view record_id) {
    std::string out(record_id);
    for (char& ch : out) {
        const bool plain = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                           ch == '-' || ch == '_' || ch == '.';
        if (!plain) ch = '_';
    }
    if (out.empty() || out == "." || out == "..") out = "_" + out;
    return out;
}

fs::path write_csv_record(const EcgRecord& rec, const fs::path& dir) {
    fs::create_directories(dir);
    const fs::path csv = dir / (file_stem_for(rec.record_id) + ".csv");
    {
        std::ofstream out(csv);
        if (!out) throw Error(ErrorCode::UnreadableFile, "cannot write " + csv.string());
        for (LeadId lead : kAllLeads) {
            out << (lead == LeadId::I ? "" : ",") << lead_name(lead);
        }
        out << '\n';
        std::string line;
        for (std::size_t k = 0; k < rec.num_samples(); ++k) {
            line.clear();
            for (LeadId lead : kAllLeads) {
                if (lead != LeadId::I) line += ',';
                line += format_double(rec.lead(lead)[k]);
            }
            line += '\n';
            out << line;
        }
    }
    json meta = {{"record_id", rec.record_id}, {"sampling_rate_hz", rec.sampling_rate}};
    meta["label"] = rec.label ? json(std::string(label_name(*rec.label))) : json(nullptr);
    std::ofstream(sidecar_path(csv)) << meta.dump(2) << '\n';
    return csv;
}

ValidationReport validate_record(const EcgRecord& rec, const ValidationThresholds& thresholds) {
    ValidationReport report;
    report.record_id = rec.record_id;
    for (LeadId lead : kAllLeads) {
        const Signal& s = rec.lead(lead);
        LeadFlags& flags = report.flags[index_of(lead)];
        if (s.empty()) {
            flags.missing = true;
        } else {
            const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
            flags.flatline = (*hi - *lo) < thresholds.flatline_eps_mv;
            flags.out_of_range = std::any_of(s.begin(), s.end(), [&](double v) {
                return !std::isfinite(v) || std::abs(v) > thresholds.range_limit_mv;
            });
        }
        if (flags.any()) report.accepted = false;
    }
    return report;
}

EcgRecord resample(const EcgRecord& rec, int target_hz) {
    if (target_hz <= 0) throw Error(ErrorCode::ConfigInvalid, "target rate must be positive");
    if (rec.num_samples() == 0) throw Error(ErrorCode::EmptySignal, rec.record_id + ": no samples");
    if (target_hz == rec.sampling_rate) return rec;

    const auto n_in = static_cast<long long>(rec.num_samples());
    const long long src = rec.sampling_rate;
    const long long dst = target_hz;
    const long long n_out = std::max(1LL, (n_in * dst + src / 2) / src);

    EcgRecord out = rec;
    out.sampling_rate = target_hz;
    for (LeadId lead : kAllLeads) {
        const Signal& in = rec.lead(lead);
        Signal& res = out.lead(lead);
        res.assign(static_cast<std::size_t>(n_out), 0.0);
        for (long long k = 0; k < n_out; ++k) {
            // source position k * src / dst, split into integer and fractional parts exactly
            const long long num = k * src;
            long long i0 = num / dst;
            double frac = static_cast<double>(num % dst) / static_cast<double>(dst);
            if (i0 >= n_in - 1) {
                i0 = n_in - 1;
                frac = 0.0;
            }
            const double a = in[static_cast<std::size_t>(i0)];
            const double b = frac > 0.0 ? in[static_cast<std::size_t>(i0 + 1)] : a;
            res[static_cast<std::size_t>(k)] = a + frac * (b - a);
        }
    }
    return out;
}

EcgRecord truncate(const EcgRecord& rec, double seconds) {
    const auto n = static_cast<std::size_t>(std::floor(seconds * rec.sampling_rate + 1e-9));
    if (n > rec.num_samples()) {
        throw Error(ErrorCode::TooShort, rec.record_id + ": " + std::to_string(rec.duration_s()) +
                                             " s is shorter than " + std::to_string(seconds) + " s");
    }
    EcgRecord out = rec;
    for (auto& lead : out.leads) lead.resize(n);
    return out;
}

}  // namespace ecgfuse
