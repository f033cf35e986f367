#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fp/pipeline.hpp>

#include "synth.hpp"

using namespace fp;
namespace fs = std::filesystem;

namespace {

const fs::path kTable2 = fs::path(FP_DATA_DIR) / "table2_profiles.csv";

struct Outcome {
    int code = -1;
    std::string output;
};

Outcome fp_cli(const std::string& args) {
    const std::string cmd = std::string(FP_BINARY) + " " + args + " 2>&1";
    Outcome o;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return o;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) o.output.append(buf, n);
    const int status = ::pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

} // namespace

TEST(Cli, CompareTable2) {
    synth::TempDir dir("cli");
    const auto o = fp_cli("compare --profiles " + q(kTable2) + " --out " + q(dir.path()) + " --seed 1 --boot-n 1000");
    ASSERT_EQ(o.code, 0) << o.output;
    EXPECT_NE(o.output.find("compare: ran"), std::string::npos) << o.output;
    EXPECT_TRUE(fs::exists(dir / "stats.json"));
    EXPECT_FALSE(fs::exists(dir / "report"));
}

TEST(Cli, RunFromProfilesWritesReportAndReuses) {
    synth::TempDir dir("cli");
    const std::string args = "run --profiles " + q(kTable2) + " --out " + q(dir.path()) + " --seed 1 --boot-n 1000";
    const auto first = fp_cli(args);
    ASSERT_EQ(first.code, 0) << first.output;
    EXPECT_TRUE(fs::exists(dir / "report" / "report.json"));
    EXPECT_TRUE(fs::exists(dir / "report" / "classifier_coefficients.csv"));
    const auto second = fp_cli(args);
    ASSERT_EQ(second.code, 0) << second.output;
    EXPECT_NE(second.output.find("report: reused"), std::string::npos) << second.output;
}

TEST(Cli, ReportsAreByteIdenticalAcrossRuns) {
    synth::TempDir a("cli"), b("cli");
    ASSERT_EQ(fp_cli("run --profiles " + q(kTable2) + " --out " + q(a.path()) + " --seed 3 --boot-n 500").code, 0);
    ASSERT_EQ(fp_cli("run --profiles " + q(kTable2) + " --out " + q(b.path()) + " --seed 3 --boot-n 500 --threads 4")
                  .code,
              0);
    for (const auto& e : fs::directory_iterator(a / "report"))
        EXPECT_EQ(file_digest(e.path()), file_digest(b / "report" / e.path().filename().string())) << e.path();
}

TEST(Cli, ReportWithoutStatisticsExitsThree) {
    synth::TempDir dir("cli");
    const auto o = fp_cli("report --out " + q(dir.path()));
    EXPECT_EQ(o.code, 3) << o.output;
}

TEST(Cli, MissingSeedIsAnError) {
    synth::TempDir dir("cli");
    const auto o = fp_cli("compare --profiles " + q(kTable2) + " --out " + q(dir.path()) + " --boot-n 100");
    EXPECT_EQ(o.code, 1) << o.output;
    EXPECT_NE(o.output.find("seed"), std::string::npos);
}

TEST(Cli, InvalidBundleExitsTwo) {
    synth::TempDir dir("cli");
    synth::PlantedSpec spec;
    spec.utterances = 10;
    spec.num_blocks = 2;
    spec.planted_layer = 1;
    auto b = synth::planted(spec);
    b.labels.rows[3].phoneme = 77;
    write_stack(b.stack, b.manifest, dir / "m.repr");
    write_label_table(b.labels, dir / "m.labels.csv");
    write_text_file(dir / "registry.json",
                    R"({"bundles": [{"model_id": "synthetic", "dataset_id": "planted", "stack": "m.repr", "labels": "m.labels.csv"}]})");
    const auto o = fp_cli("validate --registry " + q(dir / "registry.json") + " --out " + q(dir / "out"));
    EXPECT_EQ(o.code, 2) << o.output;
    EXPECT_TRUE(fs::exists(dir / "out" / "validation.json"));
}

TEST(Cli, NoComparisonsExitsFourWithReport) {
    synth::TempDir dir("cli");
    write_text_file(dir / "p.csv", "model_id,architecture,param_count,acoustic,gender,accent,phoneme,duration\n"
                                   "a,Transformer,10,0.1,0.2,0.3,0.4,0.5\n"
                                   "b,Transformer,20,0.2,0.3,0.4,0.5,0.6\n");
    const auto o = fp_cli("run --profiles " + q(dir / "p.csv") + " --out " + q(dir / "out") + " --seed 1 --boot-n 100");
    EXPECT_EQ(o.code, 4) << o.output;
    EXPECT_TRUE(fs::exists(dir / "out" / "report" / "report.json"));
}

TEST(Cli, UnknownSubcommandIsRejected) {
    EXPECT_NE(fp_cli("frobnicate").code, 0);
    EXPECT_NE(fp_cli("").code, 0);
}
