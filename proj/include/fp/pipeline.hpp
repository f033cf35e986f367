#pragma once

// Stage orchestration: config, registry, per-stage artifacts and the run ledger.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "errors.hpp"
#include "metrics.hpp"
#include "probe.hpp"
#include "repr_store.hpp"
#include "report.hpp"
#include "stats.hpp"

namespace fp {

enum class Stage { Validate, Probe, Metrics, Compare, Classify, Report };

inline constexpr std::array<Stage, 6> kStageOrder = {Stage::Validate, Stage::Probe,    Stage::Metrics,
                                                     Stage::Compare,  Stage::Classify, Stage::Report};

inline std::string_view stage_name(Stage s) {
    constexpr std::array<std::string_view, 6> names = {"validate", "probe", "metrics", "compare", "classify", "report"};
    return names[static_cast<std::size_t>(s)];
}

inline Stage parse_stage(std::string_view s) {
    for (auto st : kStageOrder)
        if (stage_name(st) == s) return st;
    throw ConfigError("unknown stage '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Digests

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return out.str();
}

inline std::string file_digest(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// Registry: {"bundles": [{model_id, dataset_id, stack, labels}], "models": [{model_id, architecture, param_count}]}

struct BundleEntry {
    std::string model_id;
    std::string dataset_id;
    std::filesystem::path stack;
    std::filesystem::path labels;
};

struct ModelInfo {
    Architecture architecture = Architecture::Transformer;
    std::uint64_t param_count = 0;
};

struct Registry {
    std::vector<BundleEntry> bundles; // sorted by (model, dataset)
    std::map<std::string, ModelInfo> models;
};

inline Registry load_registry(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw ConfigError("registry not found: " + path.string());
    const auto base = path.parent_path();
    Registry reg;
    try {
        const auto j = nlohmann::json::parse(read_file_bytes(path));
        for (const auto& m : j.value("models", nlohmann::json::array())) {
            ModelInfo info;
            info.architecture = parse_architecture(m.at("architecture").get<std::string>());
            info.param_count = m.at("param_count").get<std::uint64_t>();
            reg.models[m.at("model_id").get<std::string>()] = info;
        }
        for (const auto& b : j.value("bundles", nlohmann::json::array())) {
            BundleEntry e;
            e.model_id = b.at("model_id").get<std::string>();
            e.dataset_id = b.at("dataset_id").get<std::string>();
            e.stack = base / b.at("stack").get<std::string>();
            e.labels = base / b.at("labels").get<std::string>();
            reg.bundles.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("registry " + path.string() + ": " + e.what());
    }
    std::sort(reg.bundles.begin(), reg.bundles.end(), [](const auto& a, const auto& b) {
        return std::tie(a.model_id, a.dataset_id) < std::tie(b.model_id, b.dataset_id);
    });
    for (const auto& b : reg.bundles) {
        if (!fs::exists(b.stack)) throw ConfigError("registry: stack file missing: " + b.stack.string());
        if (!fs::exists(b.labels)) throw ConfigError("registry: label file missing: " + b.labels.string());
        const auto mpath = manifest_path_for(b.stack);
        if (reg.models.count(b.model_id) || !fs::exists(mpath)) continue;
        const auto m = read_manifest(mpath);
        reg.models[b.model_id] = {m.architecture, m.param_count};
    }
    return reg;
}

// ---------------------------------------------------------------------------
// RunConfig

struct RunConfig {
    std::filesystem::path registry;
    std::vector<Stage> stages;
    std::map<std::string, SplitPolicy> split_policy; // per dataset; key "default" applies otherwise
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> bootstrap_resamples;
    std::size_t bonferroni_family = kNumGroups;
    std::filesystem::path output_dir = "fp-out";
    std::vector<std::string> targets; // target or group names; empty means all
    std::filesystem::path profiles;   // bypasses probing and metrics
    std::filesystem::path curves;     // curve file or directory of curve files
    std::string subgroup_prefix = "whisper";
    double lowess_bandwidth = 0.3;
    std::size_t lowess_resamples = 200;
    RegressionSolver regression_solver = RegressionSolver::ClosedForm;
    std::size_t threads = 1;

    /// Stages must be a non-empty contiguous run of the canonical order.
    void check_stages() const {
        if (stages.empty()) throw ConfigError("stage list is empty");
        for (std::size_t i = 1; i < stages.size(); ++i)
            if (static_cast<int>(stages[i]) != static_cast<int>(stages[i - 1]) + 1)
                throw ConfigError("stages must follow validate, probe, metrics, compare, classify, report without gaps");
    }

    bool runs(Stage s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }

    void check() const {
        check_stages();
        const bool random = runs(Stage::Probe) || runs(Stage::Metrics) || runs(Stage::Compare);
        if (random && !seed) throw ConfigError("seed must be set explicitly");
        if (runs(Stage::Compare) && !bootstrap_resamples)
            throw ConfigError("bootstrap resamples must be set explicitly");
        if (bootstrap_resamples && *bootstrap_resamples == 0) throw ConfigError("bootstrap resamples must be positive");
        if (bonferroni_family == 0) throw ConfigError("bonferroni family must be positive");
        if (!(lowess_bandwidth > 0.0 && lowess_bandwidth <= 1.0)) throw ConfigError("lowess bandwidth must lie in (0, 1]");
        if ((runs(Stage::Validate) || runs(Stage::Probe)) && registry.empty())
            throw ConfigError("validate and probe need a registry");
        for (const auto& t : targets)
            if (!find_target(t)) {
                try {
                    parse_group(t);
                } catch (const Error&) {
                    throw ConfigError("unknown target '" + t + "'");
                }
            }
    }

    SplitPolicy policy_for(const std::string& dataset) const {
        if (auto it = split_policy.find(dataset); it != split_policy.end()) return it->second;
        if (auto it = split_policy.find("default"); it != split_policy.end()) return it->second;
        return SplitPolicy::SpeakerDisjoint;
    }

    bool wants(const std::string& target) const {
        if (targets.empty()) return true;
        const auto* spec = find_target(target);
        for (const auto& t : targets) {
            if (t == target) return true;
            if (spec && t == group_name(spec->group)) return true;
        }
        return false;
    }
};

/// Parse a config document; relative paths resolve against `base`.
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base) {
    static const std::set<std::string> known = {
        "registry",  "stages",          "split_policy",     "seed",              "bootstrap_resamples",
        "bonferroni_family", "output_dir", "targets",       "profiles",          "curves",
        "subgroup_prefix",   "lowess_bandwidth", "lowess_resamples", "regression_solver", "threads"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
    auto path = [&](const char* key) -> std::filesystem::path {
        if (!j.contains(key)) return {};
        std::filesystem::path p = j.at(key).get<std::string>();
        return p.is_absolute() ? p : base / p;
    };
    RunConfig c;
    try {
        c.registry = path("registry");
        c.profiles = path("profiles");
        c.curves = path("curves");
        if (j.contains("output_dir")) c.output_dir = path("output_dir");
        if (j.contains("stages"))
            for (const auto& s : j.at("stages")) c.stages.push_back(parse_stage(s.get<std::string>()));
        if (j.contains("split_policy")) {
            const auto& sp = j.at("split_policy");
            if (sp.is_string()) {
                c.split_policy["default"] = parse_split_policy(sp.get<std::string>());
            } else {
                for (const auto& [k, v] : sp.items()) c.split_policy[k] = parse_split_policy(v.get<std::string>());
            }
        }
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("bootstrap_resamples")) c.bootstrap_resamples = j.at("bootstrap_resamples").get<std::size_t>();
        c.bonferroni_family = j.value("bonferroni_family", c.bonferroni_family);
        if (j.contains("targets")) c.targets = j.at("targets").get<std::vector<std::string>>();
        c.subgroup_prefix = j.value("subgroup_prefix", c.subgroup_prefix);
        c.lowess_bandwidth = j.value("lowess_bandwidth", c.lowess_bandwidth);
        c.lowess_resamples = j.value("lowess_resamples", c.lowess_resamples);
        c.threads = j.value("threads", c.threads);
        if (j.contains("regression_solver")) {
            const auto s = j.at("regression_solver").get<std::string>();
            if (s == "closed_form") c.regression_solver = RegressionSolver::ClosedForm;
            else if (s == "adam") c.regression_solver = RegressionSolver::Adam;
            else throw ConfigError("regression_solver must be closed_form or adam");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config not found: " + path.string());
    try {
        return parse_config(nlohmann::json::parse(read_file_bytes(path)), path.parent_path());
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

/// FP_THREADS caps the worker count; unset or invalid leaves `requested`.
inline std::size_t thread_cap(std::size_t requested) {
    requested = resolve_threads(requested);
    if (const char* env = std::getenv("FP_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) requested = std::min(requested, static_cast<std::size_t>(v));
    }
    return requested;
}

// ---------------------------------------------------------------------------
// RunLedger

struct SkippedTargetRecord {
    std::string model_id;
    std::string dataset_id;
    std::string target;
    std::string reason;
};

struct StageRecord {
    std::string stage;
    std::string inputs_digest;
    std::map<std::string, std::string> outputs; // path relative to output dir -> digest
    std::string outputs_digest;
    double wall_seconds = 0.0;
    bool reused = false;
    std::vector<SkippedTargetRecord> skipped;
};

struct RunLedger {
    std::vector<StageRecord> stages; // canonical stage order

    const StageRecord* find(Stage s) const {
        for (const auto& r : stages)
            if (r.stage == stage_name(s)) return &r;
        return nullptr;
    }

    void put(StageRecord rec) {
        for (auto& r : stages)
            if (r.stage == rec.stage) {
                r = std::move(rec);
                return;
            }
        stages.push_back(std::move(rec));
        std::sort(stages.begin(), stages.end(),
                  [](const auto& a, const auto& b) { return parse_stage(a.stage) < parse_stage(b.stage); });
    }

    /// Drop the outputs of `s` from every other stage record (keeps each
    /// artifact referenced once after a stage re-runs).
    void disown(const StageRecord& owner) {
        for (auto& r : stages) {
            if (r.stage == owner.stage) continue;
            for (const auto& [p, _] : owner.outputs) r.outputs.erase(p);
        }
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SkippedTargetRecord, model_id, dataset_id, target, reason)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(StageRecord, stage, inputs_digest, outputs, outputs_digest, wall_seconds, reused,
                                   skipped)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunLedger, stages)

inline constexpr const char* kLedgerFile = "ledger.json";

inline RunLedger read_ledger(const std::filesystem::path& out_dir) {
    const auto p = out_dir / kLedgerFile;
    if (!std::filesystem::exists(p)) return {};
    try {
        return nlohmann::json::parse(read_file_bytes(p)).get<RunLedger>();
    } catch (const nlohmann::json::exception&) {
        return {}; // unreadable ledger: nothing to resume from
    }
}

inline void write_ledger(const RunLedger& ledger, const std::filesystem::path& out_dir) {
    write_text_file(out_dir / kLedgerFile, nlohmann::json(ledger).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Stage artifacts

namespace artifact {
inline constexpr const char* validation = "validation.json";
inline constexpr const char* curves = "curves.csv";
inline constexpr const char* metrics = "metrics.csv";
inline constexpr const char* profiles = "profiles.csv";
inline constexpr const char* strengths = "strengths.csv";
inline constexpr const char* trajectories = "trajectories.csv";
inline constexpr const char* stats = "stats.json";
inline constexpr const char* classifier = "classifier.json";
inline constexpr const char* report_dir = "report";
} // namespace artifact

namespace detail {

/// Stable 64-bit hash of a string (FNV-1a), used to derive per-key seeds.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) {
    return CounterRng::mix(seed ^ CounterRng::mix(fnv1a(key)));
}

/// Context prefix for errors raised while handling one (model, dataset, target).
inline std::string context(const std::string& model, const std::string& dataset, const std::string& target = {}) {
    std::string s = "[model=" + model + " dataset=" + dataset;
    if (!target.empty()) s += " target=" + target;
    return s + "] ";
}

struct StageIo {
    std::vector<std::filesystem::path> inputs;
    std::string parameters; // stage-relevant config, folded into the inputs digest
};

inline std::string inputs_digest(const StageIo& io) {
    std::string text = io.parameters + "\n";
    for (const auto& p : io.inputs) text += p.filename().string() + "=" + file_digest(p) + "\n";
    return sha256_hex(text);
}

inline std::vector<std::filesystem::path> curve_sources(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    if (!cfg.curves.empty()) {
        if (!fs::exists(cfg.curves)) throw StageDependencyError("curve input missing: " + cfg.curves.string());
        if (fs::is_directory(cfg.curves)) {
            for (const auto& e : fs::directory_iterator(cfg.curves))
                if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            if (files.empty()) throw StageDependencyError("no curve files in " + cfg.curves.string());
        } else {
            files.push_back(cfg.curves);
        }
        return files;
    }
    const auto produced = cfg.output_dir / artifact::curves;
    if (!fs::exists(produced))
        throw StageDependencyError("metrics needs probe curves: run the probe stage or supply curves");
    return {produced};
}

inline std::filesystem::path profile_source(const RunConfig& cfg, Stage stage) {
    namespace fs = std::filesystem;
    if (!cfg.profiles.empty()) {
        if (!fs::exists(cfg.profiles)) throw StageDependencyError("profile file missing: " + cfg.profiles.string());
        return cfg.profiles;
    }
    const auto produced = cfg.output_dir / artifact::profiles;
    if (!fs::exists(produced))
        throw StageDependencyError(std::string(stage_name(stage)) +
                                   " needs profiles: run the metrics stage or supply a profile file");
    return produced;
}

inline std::string param_text(const RunConfig& cfg, Stage s) {
    std::ostringstream o;
    o << "stage=" << stage_name(s);
    auto seed = [&] { o << ";seed=" << (cfg.seed ? std::to_string(*cfg.seed) : "none"); };
    switch (s) {
    case Stage::Validate:
        break;
    case Stage::Probe:
        seed();
        o << ";solver=" << static_cast<int>(cfg.regression_solver);
        for (const auto& [k, v] : cfg.split_policy) o << ";split:" << k << "=" << to_string(v);
        for (const auto& t : cfg.targets) o << ";target=" << t;
        break;
    case Stage::Metrics:
        seed();
        o << ";lowess_bandwidth=" << csv::format_double(cfg.lowess_bandwidth)
          << ";lowess_resamples=" << cfg.lowess_resamples;
        for (const auto& t : cfg.targets) o << ";target=" << t;
        break;
    case Stage::Compare:
        seed();
        o << ";resamples=" << cfg.bootstrap_resamples.value_or(0) << ";family=" << cfg.bonferroni_family
          << ";subgroup=" << cfg.subgroup_prefix;
        break;
    case Stage::Classify:
    case Stage::Report:
        break;
    }
    return o.str();
}

} // namespace detail

/// Result of one stage body: files written (absolute) and skipped targets.
struct StageOutput {
    std::vector<std::filesystem::path> files;
    std::vector<SkippedTargetRecord> skipped;
    bool validation_failed = false;
    bool empty_report = false;
};

// -- validate ---------------------------------------------------------------

inline StageOutput stage_validate(const RunConfig& cfg, const Registry& reg) {
    nlohmann::json doc = nlohmann::json::array();
    StageOutput out;
    for (const auto& b : reg.bundles) {
        ValidationReport rep;
        try {
            const auto [stack, manifest] = read_stack(b.stack);
            const auto labels = read_label_table(b.labels);
            if (manifest.model_id != b.model_id)
                rep.violations.push_back("manifest model_id '" + manifest.model_id + "' differs from registry");
            if (manifest.dataset_id != b.dataset_id)
                rep.violations.push_back("manifest dataset_id '" + manifest.dataset_id + "' differs from registry");
            const auto r = validate_bundle(stack, manifest, labels);
            rep.violations.insert(rep.violations.end(), r.violations.begin(), r.violations.end());
            rep.warnings = r.warnings;
            rep.frame_rate_hz = r.frame_rate_hz;
        } catch (const Error& e) {
            rep.violations.push_back(std::string("unreadable bundle: ") + e.what());
        }
        if (!rep.ok()) out.validation_failed = true;
        doc.push_back({{"model_id", b.model_id},
                       {"dataset_id", b.dataset_id},
                       {"ok", rep.ok()},
                       {"violations", rep.violations},
                       {"warnings", rep.warnings}});
    }
    const auto path = cfg.output_dir / artifact::validation;
    write_text_file(path, doc.dump(2) + "\n");
    out.files.push_back(path);
    return out;
}

// -- probe ------------------------------------------------------------------

inline StageOutput stage_probe(const RunConfig& cfg, const Registry& reg) {
    namespace fs = std::filesystem;
    const auto vpath = cfg.output_dir / artifact::validation;
    if (!fs::exists(vpath)) throw StageDependencyError("probe needs validation results: run the validate stage first");
    for (const auto& entry : nlohmann::json::parse(read_file_bytes(vpath)))
        if (!entry.at("ok").get<bool>())
            throw StageDependencyError("probe refuses bundles that failed validation (" +
                                       entry.at("model_id").get<std::string>() + "/" +
                                       entry.at("dataset_id").get<std::string>() + ")");

    StageOutput out;
    std::vector<LayerCurve> curves;
    ProbeOptions opt;
    opt.regression_solver = cfg.regression_solver;
    opt.threads = thread_cap(cfg.threads);
    for (const auto& b : reg.bundles) {
        const auto ctx = detail::context(b.model_id, b.dataset_id);
        TensorStack stack = [&] {
            try {
                return read_stack(b.stack).first;
            } catch (const Error& e) {
                throw Error(ctx + e.what());
            }
        }();
        LabelTable labels;
        SplitAssignment split;
        try {
            labels = read_label_table(b.labels);
            split = make_splits(labels, cfg.policy_for(b.dataset_id), detail::derive_seed(*cfg.seed, b.dataset_id));
        } catch (const Error& e) {
            throw Error(ctx + e.what());
        }
        for (const auto& target : builtin_targets()) {
            if (!cfg.wants(target.name)) continue;
            opt.seed = detail::derive_seed(*cfg.seed, b.model_id + "/" + b.dataset_id + "/" + target.name);
            try {
                curves.push_back(probe_curve(stack, labels, target, split, opt, b.model_id, b.dataset_id));
            } catch (const SkippedTarget& e) {
                out.skipped.push_back({b.model_id, b.dataset_id, target.name, e.what()});
            } catch (const DegenerateTargetError& e) {
                out.skipped.push_back({b.model_id, b.dataset_id, target.name, e.what()});
            } catch (const Error& e) {
                throw Error(detail::context(b.model_id, b.dataset_id, target.name) + e.what());
            }
        }
    }
    const auto path = cfg.output_dir / artifact::curves;
    write_curves(curves, path);
    out.files.push_back(path);
    return out;
}

// -- metrics ----------------------------------------------------------------

inline StageOutput stage_metrics(const RunConfig& cfg, const Registry& reg) {
    std::vector<LayerCurve> curves;
    for (const auto& f : detail::curve_sources(cfg))
        for (auto& c : read_curves(f))
            if (cfg.wants(c.target)) curves.push_back(std::move(c));
    std::sort(curves.begin(), curves.end(), [](const auto& a, const auto& b) {
        return std::tie(a.model_id, a.dataset_id, a.target) < std::tie(b.model_id, b.dataset_id, b.target);
    });

    std::ostringstream metrics_csv;
    metrics_csv << "model_id,dataset_id,target,num_blocks,peak_position,peak_strength,peak_width,entropy\n";
    for (const auto& c : curves) {
        FingerprintMetrics m;
        try {
            m = compute_metrics(c);
        } catch (const Error& e) {
            throw Error(detail::context(c.model_id, c.dataset_id, c.target) + e.what());
        }
        metrics_csv << c.model_id << ',' << c.dataset_id << ',' << c.target << ',' << c.num_blocks() << ','
                    << csv::format_double(m.peak_position) << ',' << csv::format_double(m.peak_strength) << ','
                    << csv::format_double(m.peak_width) << ',' << (m.entropy ? csv::format_double(*m.entropy) : "")
                    << '\n';
    }

    std::set<std::string> model_ids;
    for (const auto& c : curves) model_ids.insert(c.model_id);
    std::vector<FingerprintProfile> profiles;
    for (const auto& id : model_ids) {
        const auto it = reg.models.find(id);
        if (it == reg.models.end())
            throw ConfigError("[model=" + id + "] no architecture/param_count in the registry");
        profiles.push_back(aggregate_profile(curves, id, it->second.architecture, it->second.param_count));
    }

    std::vector<TrajectoryRecord> trajectories;
    for (auto g : kGroups) {
        for (auto arch : {Architecture::Conformer, Architecture::Transformer}) {
            std::vector<TrajectoryPoint> points;
            for (const auto& c : curves) {
                const auto* spec = find_target(c.target);
                if (!spec || spec->group != g || reg.models.at(c.model_id).architecture != arch) continue;
                for (std::size_t l = 0; l < c.scores.size(); ++l)
                    points.push_back({normalized_depth(l, c.num_blocks()), c.scores[l]});
            }
            if (points.empty()) continue;
            LowessOptions lo;
            lo.bandwidth = cfg.lowess_bandwidth;
            lo.boot_n = cfg.lowess_resamples;
            lo.seed = detail::derive_seed(*cfg.seed, std::string(group_name(g)) + "/" + std::string(to_string(arch)));
            try {
                trajectories.push_back(
                    {std::string(to_string(arch)), std::string(group_name(g)), lowess_trajectory(points, lo)});
            } catch (const DegenerateFitError&) {
                // too few points for a trajectory of this group
            }
        }
    }

    StageOutput out;
    auto emit = [&](const char* name, const std::string& content) {
        const auto p = cfg.output_dir / name;
        write_text_file(p, content);
        out.files.push_back(p);
    };
    emit(artifact::metrics, metrics_csv.str());
    std::ostringstream prof, str, traj;
    write_profiles(profiles, prof);
    write_strengths(profiles, str);
    write_trajectories(trajectories, traj, false);
    emit(artifact::profiles, prof.str());
    emit(artifact::strengths, str.str());
    emit(artifact::trajectories, traj.str());
    return out;
}

// -- compare / classify -----------------------------------------------------

inline StageOutput stage_compare(const RunConfig& cfg) {
    const auto profiles = read_profiles(detail::profile_source(cfg, Stage::Compare));
    CompareOptions opt;
    opt.seed = *cfg.seed;
    opt.resamples = *cfg.bootstrap_resamples;
    opt.family_size = cfg.bonferroni_family;
    opt.threads = thread_cap(cfg.threads);
    opt.subgroup_prefix = cfg.subgroup_prefix;
    const auto rep = compare_profiles(profiles, opt);
    const auto path = cfg.output_dir / artifact::stats;
    write_text_file(path, dump_stats(rep));
    return {{path}, {}, false, false};
}

inline StageOutput stage_classify(const RunConfig& cfg) {
    const auto profiles = read_profiles(detail::profile_source(cfg, Stage::Classify));
    nlohmann::json doc;
    try {
        doc["classifier"] = summarize(loo_auc(profiles));
        doc["note"] = nullptr;
    } catch (const Error& e) {
        doc["classifier"] = nullptr;
        doc["note"] = e.what();
    }
    const auto path = cfg.output_dir / artifact::classifier;
    write_text_file(path, doc.dump(2) + "\n");
    return {{path}, {}, false, false};
}

// -- report -----------------------------------------------------------------

inline StageOutput stage_report(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    const auto spath = cfg.output_dir / artifact::stats;
    if (!fs::exists(spath)) throw StageDependencyError("report needs statistics: run the compare stage first");
    StatReport stats = parse_stats(read_file_bytes(spath));
    const auto cpath = cfg.output_dir / artifact::classifier;
    if (fs::exists(cpath)) {
        const auto doc = nlohmann::json::parse(read_file_bytes(cpath));
        if (!doc.at("classifier").is_null()) stats.classifier = doc.at("classifier").get<ClassifierSummary>();
        else if (doc.at("note").is_string()) stats.notes.push_back("classifier: " + doc.at("note").get<std::string>());
    }
    std::vector<FingerprintProfile> profiles;
    try {
        profiles = read_profiles(detail::profile_source(cfg, Stage::Report));
    } catch (const StageDependencyError&) {
    }
    std::vector<TrajectoryRecord> trajectories;
    const auto tpath = cfg.output_dir / artifact::trajectories;
    if (fs::exists(tpath)) {
        std::ifstream in(tpath);
        trajectories = parse_trajectories(in);
    }
    const auto dir = cfg.output_dir / artifact::report_dir;
    if (fs::exists(dir))
        for (const auto& e : fs::directory_iterator(dir)) fs::remove(e.path()); // no stale tables
    StageOutput out;
    out.files = emit_report(stats, profiles, trajectories, dir);
    out.empty_report = stats.empty();
    return out;
}

namespace detail {

inline StageIo stage_io(const RunConfig& cfg, const Registry& reg, Stage s) {
    namespace fs = std::filesystem;
    StageIo io;
    io.parameters = param_text(cfg, s);
    auto add_if = [&](const fs::path& p) {
        if (fs::exists(p)) io.inputs.push_back(p);
    };
    switch (s) {
    case Stage::Validate:
    case Stage::Probe:
        for (const auto& b : reg.bundles) {
            io.inputs.push_back(b.stack);
            add_if(manifest_path_for(b.stack));
            io.inputs.push_back(b.labels);
        }
        if (s == Stage::Probe) add_if(cfg.output_dir / artifact::validation);
        break;
    case Stage::Metrics:
        for (const auto& f : curve_sources(cfg)) io.inputs.push_back(f);
        for (const auto& [id, m] : reg.models)
            io.parameters += ";model:" + id + "=" + std::string(to_string(m.architecture)) + "/" +
                             std::to_string(m.param_count);
        break;
    case Stage::Compare:
    case Stage::Classify:
        io.inputs.push_back(profile_source(cfg, s));
        break;
    case Stage::Report:
        add_if(cfg.output_dir / artifact::stats);
        add_if(cfg.output_dir / artifact::classifier);
        add_if(cfg.output_dir / artifact::trajectories);
        if (!cfg.profiles.empty()) add_if(cfg.profiles);
        else add_if(cfg.output_dir / artifact::profiles);
        break;
    }
    return io;
}

inline bool outputs_intact(const StageRecord& rec, const std::filesystem::path& out_dir) {
    if (rec.outputs.empty()) return false;
    for (const auto& [rel, digest] : rec.outputs) {
        const auto p = out_dir / rel;
        if (!std::filesystem::exists(p) || file_digest(p) != digest) return false;
    }
    return true;
}

} // namespace detail

struct RunResult {
    RunLedger ledger;
    bool validation_failed = false;
    bool empty_report = false;
};

/// Run the configured stages in order. A stage whose inputs digest matches the
/// previous ledger entry and whose recorded outputs are intact is reused.
inline RunResult run(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.check();
    fs::create_directories(cfg.output_dir);
    const Registry reg = cfg.registry.empty() ? Registry{} : load_registry(cfg.registry);

    RunResult result;
    result.ledger = read_ledger(cfg.output_dir);
    for (const Stage s : cfg.stages) {
        const auto io = detail::stage_io(cfg, reg, s);
        const auto in_digest = detail::inputs_digest(io);
        if (const auto* prev = result.ledger.find(s);
            prev && prev->inputs_digest == in_digest && detail::outputs_intact(*prev, cfg.output_dir)) {
            StageRecord rec = *prev;
            rec.reused = true;
            result.ledger.put(rec);
            if (s == Stage::Report) {
                const auto doc = nlohmann::json::parse(
                    read_file_bytes(cfg.output_dir / artifact::report_dir / "report.json"));
                result.empty_report = doc.at("status") != "ok";
            }
            continue;
        }

        const auto start = std::chrono::steady_clock::now();
        StageOutput out;
        switch (s) {
        case Stage::Validate: out = stage_validate(cfg, reg); break;
        case Stage::Probe: out = stage_probe(cfg, reg); break;
        case Stage::Metrics: out = stage_metrics(cfg, reg); break;
        case Stage::Compare: out = stage_compare(cfg); break;
        case Stage::Classify: out = stage_classify(cfg); break;
        case Stage::Report: out = stage_report(cfg); break;
        }
        const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - start;

        StageRecord rec;
        rec.stage = std::string(stage_name(s));
        rec.inputs_digest = in_digest;
        std::string all;
        for (const auto& f : out.files) {
            const auto rel = fs::relative(f, cfg.output_dir).generic_string();
            rec.outputs[rel] = file_digest(f);
        }
        for (const auto& [rel, d] : rec.outputs) all += rel + "=" + d + "\n";
        rec.outputs_digest = sha256_hex(all);
        rec.wall_seconds = wall.count();
        rec.skipped = std::move(out.skipped);
        result.ledger.disown(rec);
        result.ledger.put(rec);
        write_ledger(result.ledger, cfg.output_dir);

        if (out.validation_failed) {
            result.validation_failed = true;
            throw ValidationFailure("bundle validation failed; see " + (cfg.output_dir / artifact::validation).string());
        }
        result.empty_report = result.empty_report || out.empty_report;
    }
    write_ledger(result.ledger, cfg.output_dir);
    return result;
}

} // namespace fp
