#pragma once

// Profile files, the assembled statistics report, and report emission.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "metrics.hpp"
#include "repr_store.hpp"
#include "stats.hpp"

namespace fp {

// ---------------------------------------------------------------------------
// Profile files: model_id,architecture,param_count,acoustic,gender,accent,phoneme,duration

inline const std::vector<std::string>& profile_columns() {
    static const std::vector<std::string> cols = {"model_id", "architecture", "param_count", "acoustic",
                                                  "gender",   "accent",       "phoneme",     "duration"};
    return cols;
}

inline std::vector<FingerprintProfile> parse_profiles(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("profile file: missing header");
    const auto header = csv::split(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const auto& c : profile_columns())
        if (!col.count(c)) throw FormatError("profile file: missing column " + c);

    std::vector<FingerprintProfile> out;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r" || line[0] == '#') continue;
        const auto cells = csv::split(line);
        auto get = [&](const std::string& c) -> std::string {
            const auto i = col.at(c);
            return i < cells.size() ? cells[i] : std::string{};
        };
        FingerprintProfile p;
        p.model_id = get("model_id");
        if (p.model_id.empty()) throw FormatError("profile file: empty model_id");
        p.architecture = parse_architecture(get("architecture"));
        const auto params = get("param_count");
        if (!params.empty()) {
            const double v = csv::parse_double(params, "param_count");
            if (!(v > 0.0)) throw FormatError("profile file: param_count must be positive for " + p.model_id);
            p.param_count = static_cast<std::uint64_t>(std::llround(v));
        }
        for (auto g : kGroups) {
            const auto cell = get(std::string(group_name(g)));
            if (!cell.empty()) p.position[group_index(g)] = csv::parse_double(cell, group_name(g));
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline std::vector<FingerprintProfile> read_profiles(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open profile file " + path.string());
    return parse_profiles(in);
}

inline void write_profiles(std::span<const FingerprintProfile> profiles, std::ostream& out) {
    const auto& cols = profile_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const auto& p : profiles) {
        out << p.model_id << ',' << to_string(p.architecture) << ',' << p.param_count;
        for (const auto& v : p.position) {
            out << ',';
            if (v) out << csv::format_double(*v);
        }
        out << '\n';
    }
}

inline void write_strengths(std::span<const FingerprintProfile> profiles, std::ostream& out) {
    out << "model_id";
    for (auto g : kGroups) out << ',' << group_name(g);
    out << '\n';
    for (const auto& p : profiles) {
        out << p.model_id;
        for (const auto& v : p.strength) {
            out << ',';
            if (v) out << csv::format_double(*v);
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// StatReport

struct GroupSummary {
    std::string architecture;
    std::string group;
    std::size_t n = 0;
    double mean = 0.0;
    double se = 0.0; // standard error of the mean
};

struct ClassifierSummary {
    double auc = 0.0;
    std::size_t correct = 0;
    std::size_t n = 0;
    double loo_accuracy = 0.0;
    std::array<double, kNumGroups> coefficients{};
    double intercept = 0.0;
    std::vector<std::string> ranked_groups;
    std::vector<std::string> model_ids;
    std::vector<double> loo_probability;
    std::vector<bool> is_conformer;
};

inline ClassifierSummary summarize(const ClassifierReport& r) {
    ClassifierSummary s;
    s.auc = r.auc;
    s.correct = r.correct;
    s.n = r.n;
    s.loo_accuracy = r.loo_accuracy;
    s.coefficients = r.full_fit.coefficients;
    s.intercept = r.full_fit.intercept;
    for (auto g : r.full_fit.ranked()) s.ranked_groups.emplace_back(group_name(g));
    s.model_ids = r.model_ids;
    s.loo_probability = r.loo_probability;
    s.is_conformer = r.is_conformer;
    return s;
}

struct SubgroupResult {
    std::string name;
    TTestResult result;
};

struct StatReport {
    std::size_t n_profiles = 0;
    std::uint64_t seed = 0;
    std::size_t resamples = 0;
    std::size_t family_size = 0;
    std::vector<GroupSummary> group_summary;
    std::vector<TTestResult> ttests;
    std::vector<BootstrapCI> bootstrap;
    std::vector<RegressionFit> regressions;
    std::vector<SensitivityReport> sensitivity;
    std::vector<std::pair<std::string, std::string>> paired_models; // (multilingual, english-only)
    std::vector<PairedTResult> paired;
    std::vector<SubgroupResult> subgroup;
    std::optional<ClassifierSummary> classifier;
    std::vector<std::string> notes;

    bool empty() const { return ttests.empty() && regressions.empty() && !classifier && paired.empty() && subgroup.empty(); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GroupSummary, architecture, group, n, mean, se)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TTestResult, group, n_a, n_b, mean_a, mean_b, delta, t, df, p, cohens_d,
                                   bonferroni_significant)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PairedTResult, group, n, delta, t, df, p)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BootstrapCI, group, delta, ci_low, ci_high, resamples, seed, level)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RegressionFit, group, n, df, beta, se, t, p, beta_std, r_squared)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SensitivityEntry, excluded_model, result)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SensitivityReport, group, baseline, entries, most_influential)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ClassifierSummary, auc, correct, n, loo_accuracy, coefficients, intercept,
                                   ranked_groups, model_ids, loo_probability, is_conformer)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SubgroupResult, name, result)

inline void to_json(nlohmann::json& j, const StatReport& r) {
    j = nlohmann::json{{"n_profiles", r.n_profiles},   {"seed", r.seed},
                       {"resamples", r.resamples},     {"family_size", r.family_size},
                       {"group_summary", r.group_summary}, {"ttests", r.ttests},
                       {"bootstrap", r.bootstrap},     {"regressions", r.regressions},
                       {"sensitivity", r.sensitivity}, {"paired_models", r.paired_models},
                       {"paired", r.paired},           {"subgroup", r.subgroup},
                       {"notes", r.notes}};
    j["classifier"] = r.classifier ? nlohmann::json(*r.classifier) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, StatReport& r) {
    j.at("n_profiles").get_to(r.n_profiles);
    j.at("seed").get_to(r.seed);
    j.at("resamples").get_to(r.resamples);
    j.at("family_size").get_to(r.family_size);
    j.at("group_summary").get_to(r.group_summary);
    j.at("ttests").get_to(r.ttests);
    j.at("bootstrap").get_to(r.bootstrap);
    j.at("regressions").get_to(r.regressions);
    j.at("sensitivity").get_to(r.sensitivity);
    j.at("paired_models").get_to(r.paired_models);
    j.at("paired").get_to(r.paired);
    j.at("subgroup").get_to(r.subgroup);
    j.at("notes").get_to(r.notes);
    if (j.contains("classifier") && !j.at("classifier").is_null()) r.classifier = j.at("classifier").get<ClassifierSummary>();
}

namespace detail {

// JSON has no inf/nan. Statistics documents carry them under the JavaScript
// spellings; name fields are never touched.
inline bool is_name_field(const std::string& key) {
    static const std::set<std::string> names = {"group",     "architecture",  "name",          "excluded_model",
                                                "notes",     "model_ids",     "ranked_groups", "paired_models"};
    return names.count(key) > 0;
}

inline void encode_nonfinite(nlohmann::json& j) {
    if (j.is_number_float()) {
        const double v = j.get<double>();
        if (std::isnan(v)) j = "NaN";
        else if (std::isinf(v)) j = v > 0 ? "Infinity" : "-Infinity";
    } else if (j.is_structured()) {
        for (auto& child : j) encode_nonfinite(child);
    }
}

inline void decode_nonfinite(nlohmann::json& j, const std::string& key = {}) {
    if (is_name_field(key)) return;
    if (j.is_string()) {
        const auto& s = j.get_ref<const std::string&>();
        if (s == "NaN") j = std::numeric_limits<double>::quiet_NaN();
        else if (s == "Infinity") j = std::numeric_limits<double>::infinity();
        else if (s == "-Infinity") j = -std::numeric_limits<double>::infinity();
    } else if (j.is_object()) {
        for (auto& [k, v] : j.items()) decode_nonfinite(v, k);
    } else if (j.is_array()) {
        for (auto& v : j) decode_nonfinite(v, key);
    }
}

} // namespace detail

inline std::string dump_stats(const StatReport& r) {
    nlohmann::json j = r;
    detail::encode_nonfinite(j);
    return j.dump(2) + "\n";
}

inline StatReport parse_stats(std::string_view text) {
    try {
        auto j = nlohmann::json::parse(text);
        detail::decode_nonfinite(j);
        return j.get<StatReport>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("statistics document: ") + e.what());
    }
}

struct CompareOptions {
    std::uint64_t seed = 0;
    std::size_t resamples = 10000;
    std::size_t family_size = kNumGroups;
    std::size_t threads = 1;
    /// Transformer sub-family compared against the remaining Transformers.
    std::string subgroup_prefix = "whisper";
    /// (multilingual, english-only) pairs; detected from ".en" suffixes when empty.
    std::vector<std::pair<std::string, std::string>> paired_models;
};

inline bool starts_with_ci(const std::string& s, const std::string& prefix) {
    if (prefix.empty() || s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    return true;
}

/// Pairs (X, X.en) where both models are present, sorted by X.
inline std::vector<std::pair<std::string, std::string>> detect_english_pairs(std::span<const FingerprintProfile> profiles) {
    std::map<std::string, bool> ids;
    for (const auto& p : profiles) ids[p.model_id] = true;
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [id, _] : ids) {
        if (id.size() > 3 && id.compare(id.size() - 3, 3, ".en") == 0) {
            const auto base = id.substr(0, id.size() - 3);
            if (ids.count(base)) out.emplace_back(base, id);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<GroupSummary> summarize_groups(std::span<const FingerprintProfile> profiles) {
    std::vector<GroupSummary> out;
    for (auto arch : {Architecture::Conformer, Architecture::Transformer}) {
        for (auto g : kGroups) {
            std::vector<double> v;
            for (const auto& p : profiles)
                if (p.architecture == arch && p.at(g)) v.push_back(*p.at(g));
            if (v.empty()) continue;
            GroupSummary s;
            s.architecture = std::string(to_string(arch));
            s.group = std::string(group_name(g));
            s.n = v.size();
            s.mean = detail::mean_of(v);
            s.se = v.size() > 1 ? std::sqrt(detail::sum_sq_dev(v, s.mean) / static_cast<double>(v.size() - 1)) /
                                      std::sqrt(static_cast<double>(v.size()))
                                : 0.0;
            out.push_back(s);
        }
    }
    return out;
}

/// Every architecture comparison over a profile set: t-tests with Bonferroni
/// flags, bootstrap intervals, size-controlled regressions, leave-one-model-out
/// sensitivity, the multilingual/English paired test and the sub-family test.
/// Analyses whose preconditions fail are recorded in `notes`.
inline StatReport compare_profiles(std::span<const FingerprintProfile> profiles, const CompareOptions& opt) {
    StatReport rep;
    rep.n_profiles = profiles.size();
    rep.seed = opt.seed;
    rep.resamples = opt.resamples;
    rep.family_size = opt.family_size;
    rep.group_summary = summarize_groups(profiles);

    auto attempt = [&](const std::string& what, const std::function<void()>& fn) {
        try {
            fn();
        } catch (const Error& e) {
            rep.notes.push_back(what + ": " + e.what());
        }
    };

    std::vector<TTestResult> tests;
    for (auto g : kGroups) {
        const std::string name(group_name(g));
        attempt("t-test " + name, [&] { tests.push_back(compare_architectures(profiles, g)); });
        attempt("bootstrap " + name, [&] {
            const auto [conf, trans] = split_by_architecture(profiles, g);
            if (conf.size() < 2 || trans.size() < 2) throw SampleSizeError("needs at least 2 values per architecture");
            auto ci = bootstrap_mean_diff_ci(conf, trans, opt.resamples, 0.95,
                                             CounterRng::mix(opt.seed) ^ static_cast<std::uint64_t>(g), opt.threads);
            ci.group = name;
            rep.bootstrap.push_back(ci);
        });
        attempt("regression " + name, [&] { rep.regressions.push_back(ols_arch_size(profiles, g)); });
        attempt("sensitivity " + name, [&] { rep.sensitivity.push_back(sensitivity_loo_models(profiles, g)); });
    }
    rep.ttests = bonferroni(std::move(tests), opt.family_size);

    rep.paired_models = opt.paired_models.empty() ? detect_english_pairs(profiles) : opt.paired_models;
    if (!rep.paired_models.empty()) {
        std::map<std::string, const FingerprintProfile*> by_id;
        for (const auto& p : profiles) by_id[p.model_id] = &p;
        for (auto g : kGroups) {
            attempt("paired " + std::string(group_name(g)), [&] {
                std::vector<double> a, b;
                for (const auto& [m, e] : rep.paired_models) {
                    if (!by_id.count(m) || !by_id.count(e)) throw PairingError("pair " + m + "/" + e + " not in profiles");
                    const auto va = by_id[m]->at(g), vb = by_id[e]->at(g);
                    if (!va || !vb) continue;
                    a.push_back(*va);
                    b.push_back(*vb);
                }
                rep.paired.push_back(paired_t(a, b, std::string(group_name(g))));
            });
        }
    }

    if (!opt.subgroup_prefix.empty()) {
        std::vector<FingerprintProfile> transformers;
        for (const auto& p : profiles)
            if (p.architecture == Architecture::Transformer) transformers.push_back(p);
        const auto in_sub = [&](const std::string& id) { return starts_with_ci(id, opt.subgroup_prefix); };
        if (std::any_of(transformers.begin(), transformers.end(), [&](const auto& p) { return in_sub(p.model_id); })) {
            for (auto g : kGroups)
                attempt("subgroup " + std::string(group_name(g)), [&] {
                    rep.subgroup.push_back({opt.subgroup_prefix, subgroup_compare(transformers, in_sub, g)});
                });
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Report emission (fixed 3-decimal precision)

inline std::string fixed3(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    std::string s = buf;
    if (s == "-0.000") s = "0.000";
    return s;
}

inline std::string signed3(double v) {
    std::string s = fixed3(v);
    if (s[0] != '-' && s != "0.000") s.insert(s.begin(), '+');
    return s;
}

/// Rounded to three decimals for the structured report.
inline nlohmann::json round3(double v) {
    if (!std::isfinite(v)) return nlohmann::json(fixed3(v));
    const double r = std::round(v * 1000.0) / 1000.0;
    return nlohmann::json(r == 0.0 ? 0.0 : r);
}

struct TrajectoryRecord {
    std::string architecture;
    std::string group;
    Trajectory trajectory;
};

inline void write_trajectories(std::span<const TrajectoryRecord> records, std::ostream& out, bool rounded) {
    out << "architecture,group,depth,fit,ci_lo,ci_hi\n";
    auto num = [&](double v) { return rounded ? fixed3(v) : csv::format_double(v); };
    for (const auto& r : records)
        for (std::size_t i = 0; i < r.trajectory.depth.size(); ++i)
            out << r.architecture << ',' << r.group << ',' << num(r.trajectory.depth[i]) << ','
                << num(r.trajectory.fit[i]) << ',' << num(r.trajectory.ci_low[i]) << ','
                << num(r.trajectory.ci_high[i]) << '\n';
}

inline std::vector<TrajectoryRecord> parse_trajectories(std::istream& in) {
    std::string line;
    std::getline(in, line);
    std::vector<TrajectoryRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c = csv::split(line);
        if (c.size() != 6) throw FormatError("trajectory file: expected 6 columns");
        if (out.empty() || out.back().architecture != c[0] || out.back().group != c[1])
            out.push_back({c[0], c[1], {}});
        auto& t = out.back().trajectory;
        t.depth.push_back(csv::parse_double(c[2], "depth"));
        t.fit.push_back(csv::parse_double(c[3], "fit"));
        t.ci_low.push_back(csv::parse_double(c[4], "ci_lo"));
        t.ci_high.push_back(csv::parse_double(c[5], "ci_hi"));
    }
    return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw IoError("write failed: " + path.string());
}

/// Structured report document (3-decimal numbers).
inline nlohmann::json report_document(const StatReport& s, std::span<const FingerprintProfile> profiles) {
    using nlohmann::json;
    json doc;
    doc["n_profiles"] = s.n_profiles;
    doc["seed"] = s.seed;
    doc["bootstrap_resamples"] = s.resamples;
    doc["bonferroni_family"] = s.family_size;
    if (s.empty()) {
        doc["status"] = "no comparisons run";
    } else {
        doc["status"] = "ok";
    }

    json peaks = json::array();
    for (const auto& g : s.group_summary)
        peaks.push_back({{"architecture", g.architecture}, {"group", g.group}, {"n", g.n}, {"mean", round3(g.mean)},
                         {"se", round3(g.se)}});
    doc["group_means"] = peaks;

    json t3 = json::array();
    for (const auto& t : s.ttests)
        t3.push_back({{"feature", t.group}, {"delta", round3(t.delta)}, {"t", round3(t.t)}, {"df", t.df},
                      {"p", round3(t.p)}, {"cohens_d", round3(t.cohens_d)},
                      {"bonferroni_significant", t.bonferroni_significant}});
    doc["architecture_ttests"] = t3;

    json t6 = json::array();
    for (const auto& b : s.bootstrap)
        t6.push_back({{"feature", b.group}, {"delta", round3(b.delta)}, {"ci_low", round3(b.ci_low)},
                      {"ci_high", round3(b.ci_high)}});
    doc["bootstrap_ci"] = t6;

    json t7 = json::array();
    for (const auto& r : s.regressions)
        t7.push_back({{"feature", r.group}, {"beta_arch", round3(r.beta[1])}, {"p_arch", round3(r.p[1])},
                      {"beta_size", round3(r.beta[2])}, {"p_size", round3(r.p[2])},
                      {"beta_arch_std", round3(r.beta_std[1])}, {"beta_size_std", round3(r.beta_std[2])},
                      {"df", r.df}});
    doc["size_controlled_regression"] = t7;

    json t8 = json::array();
    for (const auto& g : s.subgroup)
        t8.push_back({{"feature", g.result.group}, {"subgroup", g.name}, {"subgroup_mean", round3(g.result.mean_a)},
                      {"rest_mean", round3(g.result.mean_b)}, {"n_subgroup", g.result.n_a},
                      {"n_rest", g.result.n_b}, {"p", round3(g.result.p)}});
    doc["subfamily_comparison"] = t8;

    if (s.classifier) {
        const auto& c = *s.classifier;
        json coef;
        for (auto g : kGroups) coef[std::string(group_name(g))] = round3(c.coefficients[group_index(g)]);
        json loo = json::array();
        for (std::size_t i = 0; i < c.model_ids.size(); ++i)
            loo.push_back({{"model_id", c.model_ids[i]},
                           {"architecture", c.is_conformer[i] ? "Conformer" : "Transformer"},
                           {"p_conformer", round3(c.loo_probability[i])}});
        doc["classifier"] = {{"auc", round3(c.auc)},           {"loo_correct", c.correct},
                             {"n", c.n},                       {"loo_accuracy", round3(c.loo_accuracy)},
                             {"coefficients", coef},           {"ranked_groups", c.ranked_groups},
                             {"loo_predictions", loo}};
    } else {
        doc["classifier"] = nullptr;
    }

    json sens = json::array();
    for (const auto& r : s.sensitivity) {
        if (r.entries.empty()) continue;
        const auto& worst = r.entries[r.most_influential];
        sens.push_back({{"feature", r.group},
                        {"baseline_delta", round3(r.baseline.delta)},
                        {"baseline_p", round3(r.baseline.p)},
                        {"most_influential_model", worst.excluded_model},
                        {"delta_without", round3(worst.result.delta)},
                        {"p_without", round3(worst.result.p)}});
    }
    json paired = json::array();
    for (const auto& p : s.paired)
        paired.push_back({{"feature", p.group}, {"delta", round3(p.delta)}, {"t", round3(p.t)}, {"df", p.df},
                          {"p", round3(p.p)}});
    json pairs = json::array();
    for (const auto& [a, b] : s.paired_models) pairs.push_back({a, b});
    doc["robustness"] = {{"leave_one_model_out", sens}, {"paired_models", pairs}, {"paired_ttests", paired}};
    doc["notes"] = s.notes;

    json prof = json::array();
    for (const auto& p : profiles) {
        json row{{"model_id", p.model_id}, {"architecture", std::string(to_string(p.architecture))}};
        for (auto g : kGroups) {
            const auto v = p.at(g);
            row[std::string(group_name(g))] = v ? round3(*v) : json(nullptr);
        }
        prof.push_back(row);
    }
    doc["profiles"] = prof;
    return doc;
}

/// Write report.json, per-table CSV files and plot data into `dir`; returns
/// the written paths in a fixed order.
inline std::vector<std::filesystem::path> emit_report(const StatReport& s, std::span<const FingerprintProfile> profiles,
                                                      std::span<const TrajectoryRecord> trajectories,
                                                      const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<fs::path> written;
    auto emit = [&](const std::string& name, const std::string& content) {
        const auto path = dir / name;
        write_text_file(path, content);
        written.push_back(path);
    };

    emit("report.json", report_document(s, profiles).dump(2) + "\n");

    std::ostringstream t3, t6, t7, t8, peaks, cls, loo, sens, paired, table2;
    t3 << "feature,delta,t,df,p,cohens_d,bonferroni_significant\n";
    for (const auto& t : s.ttests)
        t3 << t.group << ',' << signed3(t.delta) << ',' << fixed3(t.t) << ',' << t.df << ',' << fixed3(t.p) << ','
           << fixed3(t.cohens_d) << ',' << (t.bonferroni_significant ? "yes" : "no") << '\n';
    t6 << "feature,delta,ci_low,ci_high\n";
    for (const auto& b : s.bootstrap)
        t6 << b.group << ',' << signed3(b.delta) << ',' << signed3(b.ci_low) << ',' << signed3(b.ci_high) << '\n';
    t7 << "feature,beta_arch,p_arch,beta_size,p_size\n";
    for (const auto& r : s.regressions)
        t7 << r.group << ',' << signed3(r.beta[1]) << ',' << fixed3(r.p[1]) << ',' << signed3(r.beta[2]) << ','
           << fixed3(r.p[2]) << '\n';
    t8 << "feature,subgroup_mean,rest_mean,p\n";
    for (const auto& g : s.subgroup)
        t8 << g.result.group << ',' << fixed3(g.result.mean_a) << ',' << fixed3(g.result.mean_b) << ','
           << fixed3(g.result.p) << '\n';
    peaks << "architecture,group,n,mean,se\n";
    for (const auto& g : s.group_summary)
        peaks << g.architecture << ',' << g.group << ',' << g.n << ',' << fixed3(g.mean) << ',' << fixed3(g.se) << '\n';
    sens << "feature,excluded_model,delta,t,p\n";
    for (const auto& r : s.sensitivity)
        for (const auto& e : r.entries)
            sens << r.group << ',' << e.excluded_model << ',' << signed3(e.result.delta) << ',' << fixed3(e.result.t)
                 << ',' << fixed3(e.result.p) << '\n';
    paired << "feature,delta,t,df,p\n";
    for (const auto& p : s.paired)
        paired << p.group << ',' << signed3(p.delta) << ',' << fixed3(p.t) << ',' << p.df << ',' << fixed3(p.p) << '\n';
    table2 << "model_id,architecture";
    for (auto g : kGroups) table2 << ',' << group_name(g);
    table2 << '\n';
    for (const auto& p : profiles) {
        table2 << p.model_id << ',' << to_string(p.architecture);
        for (auto g : kGroups) {
            table2 << ',';
            if (p.at(g)) table2 << fixed3(*p.at(g));
        }
        table2 << '\n';
    }

    emit("profiles.csv", table2.str());
    emit("group_peaks.csv", peaks.str());
    emit("ttests.csv", t3.str());
    emit("bootstrap_ci.csv", t6.str());
    emit("regression.csv", t7.str());
    emit("subfamily.csv", t8.str());
    emit("sensitivity.csv", sens.str());
    emit("paired.csv", paired.str());
    if (s.classifier) {
        const auto& c = *s.classifier;
        cls << "feature,coefficient\n";
        for (const auto& name : c.ranked_groups)
            cls << name << ',' << signed3(c.coefficients[group_index(parse_group(name))]) << '\n';
        loo << "model_id,architecture,p_conformer\n";
        for (std::size_t i = 0; i < c.model_ids.size(); ++i)
            loo << c.model_ids[i] << ',' << (c.is_conformer[i] ? "Conformer" : "Transformer") << ','
                << fixed3(c.loo_probability[i]) << '\n';
        emit("classifier_coefficients.csv", cls.str());
        emit("loo_predictions.csv", loo.str());
    }

    std::map<std::string, std::vector<TrajectoryRecord>> by_group;
    for (const auto& r : trajectories) by_group[r.group].push_back(r);
    for (const auto& [group, recs] : by_group) {
        std::ostringstream out;
        write_trajectories(recs, out, true);
        emit("trajectory_" + group + ".csv", out.str());
    }
    return written;
}

} // namespace fp
