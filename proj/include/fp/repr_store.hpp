#pragma once

// On-disk representation of hidden-state stacks, model manifests and label
// tables.
//
// Depth convention: a stack for an encoder with L blocks has L + 1 layers.
// Layer 0 is the pre-block representation (embedding/projection output) and
// layer L the final block output. Convolutional stems are never indexed.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"

namespace fp {

inline constexpr std::size_t kNumAcousticTargets = 24;
inline constexpr int kNumPhonemeClasses = 39;
inline constexpr int kNumAccentClasses = 6;
inline constexpr std::size_t kNumGroups = 5;

enum class Architecture { Transformer, Conformer };

inline std::string_view to_string(Architecture a) {
    return a == Architecture::Conformer ? "Conformer" : "Transformer";
}

inline Architecture parse_architecture(std::string_view s) {
    if (s == "Conformer" || s == "conformer" || s == "C") return Architecture::Conformer;
    if (s == "Transformer" || s == "transformer" || s == "T") return Architecture::Transformer;
    throw FormatError("unknown architecture '" + std::string(s) + "'");
}

enum class Gender { M, F };

enum class Accent { Arabic, Hindi, Korean, Mandarin, Spanish, Vietnamese };

inline constexpr std::array<std::string_view, kNumAccentClasses> kAccentNames = {
    "Arabic", "Hindi", "Korean", "Mandarin", "Spanish", "Vietnamese"};

inline std::optional<Accent> parse_accent(std::string_view s) {
    for (std::size_t i = 0; i < kAccentNames.size(); ++i)
        if (kAccentNames[i] == s) return static_cast<Accent>(i);
    return std::nullopt;
}

/// Feature groups, in the canonical profile order.
enum class TargetGroup { Acoustic, Gender, Accent, Phoneme, Duration };

inline constexpr std::array<TargetGroup, kNumGroups> kGroups = {
    TargetGroup::Acoustic, TargetGroup::Gender, TargetGroup::Accent, TargetGroup::Phoneme,
    TargetGroup::Duration};

inline std::string_view group_name(TargetGroup g) {
    switch (g) {
    case TargetGroup::Acoustic: return "acoustic";
    case TargetGroup::Gender: return "gender";
    case TargetGroup::Accent: return "accent";
    case TargetGroup::Phoneme: return "phoneme";
    case TargetGroup::Duration: return "duration";
    }
    return "?";
}

inline TargetGroup parse_group(std::string_view s) {
    for (auto g : kGroups)
        if (group_name(g) == s) return g;
    throw FormatError("unknown feature group '" + std::string(s) + "'");
}

inline std::size_t group_index(TargetGroup g) { return static_cast<std::size_t>(g); }

enum class TargetKind { Regression, Classification };
enum class Pooling { Frame, Segment, Utterance };

struct ProbeTargetSpec {
    std::string name;
    TargetKind kind = TargetKind::Regression;
    int num_classes = 0;
    TargetGroup group = TargetGroup::Acoustic;
    Pooling pooling = Pooling::Frame;
};

/// Human-readable description of acoustic column k (F0, F1, F2, F3, F3-F2,
/// intensity; each as min/mean/median/max).
inline std::string acoustic_feature_label(std::size_t k) {
    static constexpr std::array<std::string_view, 6> base = {"F0", "F1", "F2", "F3", "F3-F2", "Intensity"};
    static constexpr std::array<std::string_view, 4> stat = {"min", "mean", "median", "max"};
    return std::string(base.at(k / 4)) + " " + std::string(stat[k % 4]);
}

inline std::string acoustic_column_name(std::size_t k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "acoustic_%02zu", k);
    return buf;
}

/// The 28 built-in probe targets: 24 acoustic, gender, accent, phoneme, duration.
inline const std::vector<ProbeTargetSpec>& builtin_targets() {
    static const std::vector<ProbeTargetSpec> targets = [] {
        std::vector<ProbeTargetSpec> t;
        for (std::size_t k = 0; k < kNumAcousticTargets; ++k)
            t.push_back({acoustic_column_name(k), TargetKind::Regression, 0, TargetGroup::Acoustic,
                         Pooling::Utterance});
        t.push_back({"gender", TargetKind::Classification, 2, TargetGroup::Gender, Pooling::Frame});
        t.push_back({"accent", TargetKind::Classification, kNumAccentClasses, TargetGroup::Accent, Pooling::Frame});
        t.push_back({"phoneme", TargetKind::Classification, kNumPhonemeClasses, TargetGroup::Phoneme, Pooling::Frame});
        t.push_back({"duration", TargetKind::Regression, 0, TargetGroup::Duration, Pooling::Segment});
        return t;
    }();
    return targets;
}

inline const ProbeTargetSpec* find_target(std::string_view name) {
    for (const auto& t : builtin_targets())
        if (t.name == name) return &t;
    return nullptr;
}

/// Normalized depth l / L of layer index l in an encoder with L blocks.
inline double normalized_depth(std::size_t layer, std::size_t num_blocks) {
    return static_cast<double>(layer) / static_cast<double>(num_blocks);
}

// ---------------------------------------------------------------------------
// TensorStack

/// Immutable (L + 1) x frames x hidden array of float32 hidden states.
class TensorStack {
public:
    TensorStack(std::size_t num_layers_plus_1, std::size_t num_frames, std::size_t hidden_dim,
                std::vector<float> data, double frame_rate_hz)
        : layers_(num_layers_plus_1), frames_(num_frames), hidden_(hidden_dim),
          frame_rate_hz_(frame_rate_hz), data_(std::move(data)) {
        if (layers_ < 2) throw ShapeError("stack needs at least 2 layers (L >= 1)");
        if (frames_ < 1 || hidden_ < 1) throw ShapeError("stack needs num_frames >= 1 and hidden_dim >= 1");
        if (data_.size() != layers_ * frames_ * hidden_)
            throw ShapeError("stack payload has " + std::to_string(data_.size()) + " values, expected " +
                             std::to_string(layers_ * frames_ * hidden_));
        if (!(frame_rate_hz_ > 0.0) || !std::isfinite(frame_rate_hz_))
            throw DataError("frame_rate_hz must be positive");
        for (float v : data_)
            if (!std::isfinite(v)) throw DataError("stack contains a non-finite value");
    }

    std::size_t num_layers_plus_1() const noexcept { return layers_; }
    std::size_t num_blocks() const noexcept { return layers_ - 1; }
    std::size_t num_frames() const noexcept { return frames_; }
    std::size_t hidden_dim() const noexcept { return hidden_; }
    double frame_rate_hz() const noexcept { return frame_rate_hz_; }

    std::span<const float> data() const noexcept { return data_; }

    /// Row-major frames x hidden slice for one layer.
    std::span<const float> layer(std::size_t l) const {
        return std::span<const float>(data_).subspan(l * frames_ * hidden_, frames_ * hidden_);
    }

    std::span<const float> frame(std::size_t l, std::size_t f) const {
        return layer(l).subspan(f * hidden_, hidden_);
    }

    float at(std::size_t l, std::size_t f, std::size_t h) const { return data_[(l * frames_ + f) * hidden_ + h]; }

    friend bool operator==(const TensorStack&, const TensorStack&) = default;

private:
    std::size_t layers_;
    std::size_t frames_;
    std::size_t hidden_;
    double frame_rate_hz_;
    std::vector<float> data_;
};

// ---------------------------------------------------------------------------
// ModelManifest

struct ModelManifest {
    std::string model_id;
    Architecture architecture = Architecture::Transformer;
    std::uint64_t param_count = 0;
    std::uint32_t num_blocks = 0;
    std::string dataset_id;
    double frame_rate_hz = 0.0;

    friend bool operator==(const ModelManifest&, const ModelManifest&) = default;
};

inline void to_json(nlohmann::json& j, const ModelManifest& m) {
    j = nlohmann::json{{"model_id", m.model_id},
                       {"architecture", std::string(to_string(m.architecture))},
                       {"param_count", m.param_count},
                       {"num_blocks", m.num_blocks},
                       {"dataset_id", m.dataset_id},
                       {"frame_rate_hz", m.frame_rate_hz}};
}

inline void from_json(const nlohmann::json& j, ModelManifest& m) {
    try {
        m.model_id = j.at("model_id").get<std::string>();
        m.architecture = parse_architecture(j.at("architecture").get<std::string>());
        m.param_count = j.at("param_count").get<std::uint64_t>();
        m.num_blocks = j.at("num_blocks").get<std::uint32_t>();
        m.dataset_id = j.at("dataset_id").get<std::string>();
        m.frame_rate_hz = j.at("frame_rate_hz").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    if (m.param_count == 0) throw FormatError("manifest: param_count must be positive");
    if (m.num_blocks == 0) throw FormatError("manifest: num_blocks must be positive");
    if (!(m.frame_rate_hz > 0.0)) throw FormatError("manifest: frame_rate_hz must be positive");
}

/// `<dir>/<stem>.manifest.json` for a stack written at `<dir>/<stem>.<ext>`.
inline std::filesystem::path manifest_path_for(const std::filesystem::path& stack_path) {
    auto p = stack_path;
    p.replace_filename(stack_path.stem().string() + ".manifest.json");
    return p;
}

inline void write_manifest(const ModelManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << nlohmann::json(m).dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

inline ModelManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    return j.get<ModelManifest>();
}

// ---------------------------------------------------------------------------
// REPR1 binary format
//
//   0..3   magic "RPRS"
//   4..7   version        u32 LE (1)
//   8..11  dtype code     u32 LE (0 = float32)
//   12..15 layers (L + 1) u32 LE
//   16..19 frames         u32 LE
//   20..23 hidden         u32 LE
//   24..   float32 LE payload, row-major [layer][frame][hidden]

namespace repr1 {

inline constexpr std::array<char, 4> kMagic = {'R', 'P', 'R', 'S'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 0;
inline constexpr std::size_t kHeaderBytes = 24;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

/// Serialize a stack to its exact REPR1 byte image.
inline std::string encode(const TensorStack& stack) {
    auto checked = [](std::size_t v, const char* what) {
        if (v > 0xffffffffu) throw ShapeError(std::string(what) + " exceeds u32 range");
        return static_cast<std::uint32_t>(v);
    };
    std::string out;
    out.reserve(kHeaderBytes + 4 * stack.data().size());
    out.append(kMagic.data(), kMagic.size());
    put_u32(out, kVersion);
    put_u32(out, kDtypeFloat32);
    put_u32(out, checked(stack.num_layers_plus_1(), "num_layers_plus_1"));
    put_u32(out, checked(stack.num_frames(), "num_frames"));
    put_u32(out, checked(stack.hidden_dim(), "hidden_dim"));
    for (float v : stack.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

/// Parse a REPR1 byte image. The frame rate lives in the manifest, so it is
/// passed in.
inline TensorStack decode(std::string_view bytes, double frame_rate_hz) {
    if (bytes.size() < kHeaderBytes) throw FormatError("REPR1: file shorter than header");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (std::memcmp(p, kMagic.data(), 4) != 0) throw FormatError("REPR1: bad magic");
    if (get_u32(p + 4) != kVersion) throw FormatError("REPR1: unsupported version " + std::to_string(get_u32(p + 4)));
    if (get_u32(p + 8) != kDtypeFloat32) throw FormatError("REPR1: unsupported dtype code");
    const std::uint64_t layers = get_u32(p + 12);
    const std::uint64_t frames = get_u32(p + 16);
    const std::uint64_t hidden = get_u32(p + 20);
    const std::uint64_t count = layers * frames * hidden;
    if (bytes.size() - kHeaderBytes != count * 4)
        throw FormatError("REPR1: header declares " + std::to_string(count) + " values but payload holds " +
                          std::to_string((bytes.size() - kHeaderBytes) / 4.0));
    std::vector<float> data(count);
    for (std::uint64_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(get_u32(p + kHeaderBytes + 4 * i));
    try {
        return TensorStack(layers, frames, hidden, std::move(data), frame_rate_hz);
    } catch (const ShapeError& e) {
        throw FormatError(std::string("REPR1: ") + e.what());
    }
}

} // namespace repr1

/// Write the stack at `path` and its manifest as the `.manifest.json` sidecar.
inline void write_stack(const TensorStack& stack, const ModelManifest& manifest, const std::filesystem::path& path) {
    if (static_cast<std::size_t>(manifest.num_blocks) + 1 != stack.num_layers_plus_1())
        throw ShapeError("manifest num_blocks=" + std::to_string(manifest.num_blocks) + " expects " +
                         std::to_string(manifest.num_blocks + 1) + " layers, stack has " +
                         std::to_string(stack.num_layers_plus_1()));
    const std::string bytes = repr1::encode(stack);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + path.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + path.string());
    }
    write_manifest(manifest, manifest_path_for(path));
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline std::pair<TensorStack, ModelManifest> read_stack(const std::filesystem::path& path) {
    const std::string bytes = read_file_bytes(path);
    ModelManifest manifest = read_manifest(manifest_path_for(path));
    TensorStack stack = repr1::decode(bytes, manifest.frame_rate_hz);
    if (static_cast<std::size_t>(manifest.num_blocks) + 1 != stack.num_layers_plus_1())
        throw ShapeError("manifest num_blocks=" + std::to_string(manifest.num_blocks) +
                         " does not match stack with " + std::to_string(stack.num_layers_plus_1()) + " layers");
    return {std::move(stack), std::move(manifest)};
}

// ---------------------------------------------------------------------------
// LabelTable

struct LabelRow {
    std::string utterance_id;
    std::uint32_t frame_index = 0;
    std::optional<std::string> speaker_id;
    std::optional<Gender> gender;
    std::optional<Accent> accent_l1;
    std::optional<int> phoneme;
    std::optional<double> duration_ms;
    std::array<std::optional<double>, kNumAcousticTargets> acoustic{};
};

struct LabelTable {
    std::vector<LabelRow> rows;

    bool empty() const noexcept { return rows.empty(); }
    std::size_t size() const noexcept { return rows.size(); }
};

/// Value of a built-in target on a row, as a double (class index for
/// classification targets), or nullopt when absent.
inline std::optional<double> target_value(const LabelRow& row, const ProbeTargetSpec& target) {
    switch (target.group) {
    case TargetGroup::Acoustic: {
        const auto& name = target.name;
        if (name.size() != 11 || name.rfind("acoustic_", 0) != 0) return std::nullopt;
        const std::size_t k = static_cast<std::size_t>(std::stoi(name.substr(9)));
        if (k >= kNumAcousticTargets) return std::nullopt;
        return row.acoustic[k];
    }
    case TargetGroup::Gender:
        if (!row.gender) return std::nullopt;
        return *row.gender == Gender::F ? 1.0 : 0.0;
    case TargetGroup::Accent:
        if (!row.accent_l1) return std::nullopt;
        return static_cast<double>(static_cast<int>(*row.accent_l1));
    case TargetGroup::Phoneme:
        if (!row.phoneme) return std::nullopt;
        return static_cast<double>(*row.phoneme);
    case TargetGroup::Duration:
        return row.duration_ms;
    }
    return std::nullopt;
}

namespace csv {

inline std::vector<std::string> split(std::string_view line, char delim = ',') {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            cells.emplace_back(line.substr(start));
            break;
        }
        cells.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!cells.empty() && !cells.back().empty() && cells.back().back() == '\r') cells.back().pop_back();
    return cells;
}

inline double parse_double(const std::string& cell, std::string_view what) {
    try {
        std::size_t used = 0;
        double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw FormatError("cannot parse " + std::string(what) + " value '" + cell + "'");
    }
}

inline long long parse_int(const std::string& cell, std::string_view what) {
    try {
        std::size_t used = 0;
        long long v = std::stoll(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw FormatError("cannot parse " + std::string(what) + " value '" + cell + "'");
    }
}

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

} // namespace csv

inline std::vector<std::string> label_table_columns() {
    std::vector<std::string> cols = {"utterance_id", "frame_index", "speaker_id", "gender",
                                     "accent_l1",    "phoneme",     "duration_ms"};
    for (std::size_t k = 0; k < kNumAcousticTargets; ++k) cols.push_back(acoustic_column_name(k));
    return cols;
}

inline LabelTable parse_label_table(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("label table: missing header row");
    const auto header = csv::split(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* required : {"utterance_id", "frame_index"})
        if (!col.count(required)) throw FormatError(std::string("label table: missing column ") + required);

    auto cell = [&](const std::vector<std::string>& cells, const std::string& name) -> const std::string* {
        auto it = col.find(name);
        if (it == col.end() || it->second >= cells.size() || cells[it->second].empty()) return nullptr;
        return &cells[it->second];
    };

    LabelTable table;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = csv::split(line);
        LabelRow row;
        const std::string* u = cell(cells, "utterance_id");
        if (!u) throw FormatError("label table line " + std::to_string(line_no) + ": empty utterance_id");
        row.utterance_id = *u;
        const std::string* f = cell(cells, "frame_index");
        if (!f) throw FormatError("label table line " + std::to_string(line_no) + ": empty frame_index");
        const long long fi = csv::parse_int(*f, "frame_index");
        if (fi < 0 || fi > 0xffffffffLL) throw FormatError("label table: frame_index out of range");
        row.frame_index = static_cast<std::uint32_t>(fi);
        if (auto s = cell(cells, "speaker_id")) row.speaker_id = *s;
        if (auto s = cell(cells, "gender")) {
            if (*s == "M") row.gender = Gender::M;
            else if (*s == "F") row.gender = Gender::F;
            else throw FormatError("label table: gender must be M or F, got '" + *s + "'");
        }
        if (auto s = cell(cells, "accent_l1")) {
            row.accent_l1 = parse_accent(*s);
            if (!row.accent_l1) throw FormatError("label table: unknown accent_l1 '" + *s + "'");
        }
        if (auto s = cell(cells, "phoneme")) row.phoneme = static_cast<int>(csv::parse_int(*s, "phoneme"));
        if (auto s = cell(cells, "duration_ms")) row.duration_ms = csv::parse_double(*s, "duration_ms");
        for (std::size_t k = 0; k < kNumAcousticTargets; ++k)
            if (auto s = cell(cells, acoustic_column_name(k))) row.acoustic[k] = csv::parse_double(*s, "acoustic");
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline LabelTable read_label_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label table " + path.string());
    return parse_label_table(in);
}

inline void write_label_table(const LabelTable& table, std::ostream& out) {
    const auto cols = label_table_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const auto& r : table.rows) {
        out << r.utterance_id << ',' << r.frame_index << ',' << r.speaker_id.value_or("") << ',';
        if (r.gender) out << (*r.gender == Gender::F ? "F" : "M");
        out << ',';
        if (r.accent_l1) out << kAccentNames[static_cast<std::size_t>(*r.accent_l1)];
        out << ',';
        if (r.phoneme) out << *r.phoneme;
        out << ',';
        if (r.duration_ms) out << csv::format_double(*r.duration_ms);
        for (const auto& a : r.acoustic) {
            out << ',';
            if (a) out << csv::format_double(*a);
        }
        out << '\n';
    }
}

inline void write_label_table(const LabelTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_label_table(table, out);
    if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Bundle validation

struct ValidationReport {
    std::vector<std::string> violations;
    std::vector<std::string> warnings;
    double frame_rate_hz = 0.0;

    bool ok() const noexcept { return violations.empty(); }
};

/// Check a (stack, manifest, labels) bundle. Never throws on parseable data;
/// every finding lands in the report.
inline ValidationReport validate_bundle(const TensorStack& stack, const ModelManifest& manifest,
                                        const LabelTable& labels) {
    ValidationReport report;
    report.frame_rate_hz = manifest.frame_rate_hz;
    auto violation = [&](std::string msg) { report.violations.push_back(std::move(msg)); };

    if (static_cast<std::size_t>(manifest.num_blocks) + 1 != stack.num_layers_plus_1())
        violation("manifest num_blocks + 1 (" + std::to_string(manifest.num_blocks + 1) +
                  ") does not match stack layer dimension (" + std::to_string(stack.num_layers_plus_1()) + ")");
    if (manifest.param_count == 0) violation("manifest param_count must be positive");
    if (!(manifest.frame_rate_hz > 0.0)) violation("manifest frame_rate_hz must be positive");
    else if (manifest.frame_rate_hz != stack.frame_rate_hz())
        violation("manifest frame rate differs from stack frame rate");
    for (float v : stack.data())
        if (!std::isfinite(v)) {
            violation("stack contains non-finite values");
            break;
        }

    if (labels.empty()) {
        violation("label table is empty");
        return report;
    }

    struct UtteranceLabels {
        std::optional<std::string> speaker;
        std::optional<Gender> gender;
        std::optional<Accent> accent;
        bool speaker_conflict = false, gender_conflict = false, accent_conflict = false;
        bool first = true;
    };
    std::map<std::string, UtteranceLabels> utterances;
    std::set<std::uint32_t> seen_frames;
    bool any_speaker = false, any_gender = false, any_accent = false, any_phoneme = false, any_duration = false;
    std::array<bool, kNumAcousticTargets> any_acoustic{};
    std::size_t out_of_range = 0, duplicates = 0, bad_phoneme = 0, bad_duration = 0, bad_acoustic = 0;

    auto merge = []<typename T>(bool first, std::optional<T>& slot, const std::optional<T>& v, bool& conflict) {
        if (first) slot = v;
        else if (slot != v) conflict = true;
    };

    for (const auto& r : labels.rows) {
        if (r.frame_index >= stack.num_frames()) ++out_of_range;
        if (!seen_frames.insert(r.frame_index).second) ++duplicates;
        auto& u = utterances[r.utterance_id];
        merge(u.first, u.speaker, r.speaker_id, u.speaker_conflict);
        merge(u.first, u.gender, r.gender, u.gender_conflict);
        merge(u.first, u.accent, r.accent_l1, u.accent_conflict);
        u.first = false;
        any_speaker |= r.speaker_id.has_value();
        any_gender |= r.gender.has_value();
        any_accent |= r.accent_l1.has_value();
        if (r.phoneme) {
            any_phoneme = true;
            if (*r.phoneme < 0 || *r.phoneme >= kNumPhonemeClasses) ++bad_phoneme;
        }
        if (r.duration_ms) {
            any_duration = true;
            if (!(*r.duration_ms >= 0.0) || !std::isfinite(*r.duration_ms)) ++bad_duration;
        }
        for (std::size_t k = 0; k < kNumAcousticTargets; ++k)
            if (r.acoustic[k]) {
                any_acoustic[k] = true;
                if (!std::isfinite(*r.acoustic[k])) ++bad_acoustic;
            }
    }

    if (out_of_range)
        violation("frame out of range: " + std::to_string(out_of_range) + " row(s) reference frame_index >= " +
                  std::to_string(stack.num_frames()));
    if (duplicates) violation("duplicate frame_index in " + std::to_string(duplicates) + " row(s)");
    if (bad_phoneme) violation("phoneme class outside 0..38 in " + std::to_string(bad_phoneme) + " row(s)");
    if (bad_duration) violation("negative or non-finite duration_ms in " + std::to_string(bad_duration) + " row(s)");
    if (bad_acoustic) violation("non-finite acoustic value in " + std::to_string(bad_acoustic) + " row(s)");
    for (const auto& [id, u] : utterances) {
        if (u.gender_conflict) violation("utterance-level label not constant: gender in utterance " + id);
        if (u.accent_conflict) violation("utterance-level label not constant: accent_l1 in utterance " + id);
        if (u.speaker_conflict) violation("utterance-level label not constant: speaker_id in utterance " + id);
    }

    auto absent = [&](bool any, const std::string& col) {
        if (!any) report.warnings.push_back("column " + col + " entirely absent");
    };
    absent(any_speaker, "speaker_id");
    absent(any_gender, "gender");
    absent(any_accent, "accent_l1");
    absent(any_phoneme, "phoneme");
    absent(any_duration, "duration_ms");
    for (std::size_t k = 0; k < kNumAcousticTargets; ++k) absent(any_acoustic[k], acoustic_column_name(k));
    return report;
}

} // namespace fp
