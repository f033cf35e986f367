// fp: command-line driver for the fingerprinting pipeline.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <fp/pipeline.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitValidation = 2;
constexpr int kExitDependency = 3;
constexpr int kExitNoComparisons = 4;

struct Overrides {
    std::string config;
    std::string registry;
    std::string profiles;
    std::string curves;
    std::string out;
    std::string targets;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> boot_n;
    std::optional<std::size_t> threads;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (auto& item : fp::csv::split(s))
        if (!item.empty()) out.push_back(item);
    return out;
}

fp::RunConfig build_config(const Overrides& o, std::optional<fp::Stage> only) {
    namespace fs = std::filesystem;
    fp::RunConfig cfg = o.config.empty() ? fp::RunConfig{} : fp::load_config(o.config);
    if (!o.registry.empty()) cfg.registry = o.registry;
    if (!o.profiles.empty()) cfg.profiles = o.profiles;
    if (!o.curves.empty()) cfg.curves = o.curves;
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (!o.targets.empty()) cfg.targets = split_list(o.targets);
    if (o.seed) cfg.seed = o.seed;
    if (o.boot_n) cfg.bootstrap_resamples = o.boot_n;
    if (o.threads) cfg.threads = *o.threads;

    if (only) {
        cfg.stages = {*only};
    } else if (cfg.stages.empty()) {
        // Start from the earliest stage the supplied inputs allow.
        fp::Stage first = fp::Stage::Validate;
        if (!cfg.profiles.empty()) first = fp::Stage::Compare;
        else if (!cfg.curves.empty()) first = fp::Stage::Metrics;
        for (auto s : fp::kStageOrder)
            if (s >= first) cfg.stages.push_back(s);
    }
    return cfg;
}

void print_ledger(const fp::RunLedger& ledger, const fp::RunConfig& cfg) {
    for (const auto& rec : ledger.stages) {
        if (!cfg.runs(fp::parse_stage(rec.stage))) continue;
        std::cout << rec.stage << ": " << (rec.reused ? "reused" : "ran") << ", " << rec.outputs.size()
                  << " artifact(s), outputs " << rec.outputs_digest.substr(0, 16) << '\n';
        for (const auto& s : rec.skipped)
            std::cout << "  skipped " << s.model_id << '/' << s.dataset_id << '/' << s.target << ": " << s.reason
                      << '\n';
    }
    std::cout << "ledger: " << (cfg.output_dir / fp::kLedgerFile).string() << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-wise probing fingerprints: validate, probe, metrics, compare, classify, report"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config, "Run config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--registry", o.registry, "Bundle registry (JSON)");
    app.add_option("--profiles", o.profiles, "Profile table: model_id,architecture,param_count,<5 groups>");
    app.add_option("--curves", o.curves, "Curve file or directory of curve files");
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--targets", o.targets, "Comma-separated target or group names");
    app.add_option("--seed", o.seed, "Global seed");
    app.add_option("--boot-n", o.boot_n, "Bootstrap resamples")->check(CLI::PositiveNumber);
    app.add_option("--threads", o.threads, "Worker threads (0 = all cores; FP_THREADS caps)");

    std::optional<fp::Stage> only;
    for (auto s : fp::kStageOrder) {
        auto* sub = app.add_subcommand(std::string(fp::stage_name(s)), "Run the " + std::string(fp::stage_name(s)) + " stage");
        sub->callback([&only, s] { only = s; });
    }
    app.add_subcommand("run", "Run the configured stage list");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = build_config(o, only);
        const auto result = fp::run(cfg);
        print_ledger(result.ledger, cfg);
        if (result.empty_report) {
            std::cerr << "fp: no comparisons run; report written with an empty-statistics marker\n";
            return kExitNoComparisons;
        }
        return kExitOk;
    } catch (const fp::ValidationFailure& e) {
        std::cerr << "fp: " << e.what() << '\n';
        return kExitValidation;
    } catch (const fp::StageDependencyError& e) {
        std::cerr << "fp: missing upstream artifact: " << e.what() << '\n';
        return kExitDependency;
    } catch (const std::exception& e) {
        std::cerr << "fp: " << e.what() << '\n';
        return kExitError;
    }
}
