#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "prosodyflow/eval/metrics.hpp"
#include "prosodyflow/prep/track.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("pflow_cli_") + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string at(const std::string& name) const { return (dir / name).string(); }

    CliResult run(const std::string& args) const {
        const std::string out = at("stdout.txt"), err = at("stderr.txt");
        const std::string cmd = std::string(PFLOW_CLI) + " " + args + " >" + out + " 2>" + err;
        const int status = std::system(cmd.c_str());
        CliResult r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    // Small corpus and a short, narrow training run shared by several tests.
    void make_corpus(int n = 10) const {
        ASSERT_EQ(run("gen --seed 5 --utterances " + std::to_string(n) + " --out " + at("corpus")).code, 0);
    }
    void make_run(const std::string& name, const std::string& extra = "") const {
        const CliResult r = run("train --corpus " + at("corpus") + " --out " + at(name) +
                          " --steps 20 --batch 4 --hidden 8 --checkpoint-every 10 --seed 3 " + extra);
        ASSERT_EQ(r.code, 0) << r.err;
    }
};

// sha256sum(1) as an oracle independent of the tool's digest code.
std::string sha256sum(const fs::path& p) {
    const std::string cmd = "sha256sum '" + p.string() + "'";
    FILE* f = popen(cmd.c_str(), "r");
    char buf[65] = {};
    const std::size_t n = f ? std::fread(buf, 1, 64, f) : 0;
    if (f) pclose(f);
    return std::string(buf, n);
}

std::size_t count_files(const fs::path& d, const std::string& suffix) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(d)) n += e.path().filename().string().ends_with(suffix);
    return n;
}

}  // namespace

TEST_F(Cli, GenWritesCorpusAndVerifiableManifest) {
    make_corpus(12);
    EXPECT_EQ(count_files(at("corpus"), ".track.csv"), 12u);
    EXPECT_EQ(count_files(at("corpus"), ".phonemes.json"), 12u);
    const json m = json::parse(slurp(at("corpus/manifest.json")));
    EXPECT_EQ(m["seed"], 5);
    EXPECT_EQ(m["command"], "gen");
    EXPECT_EQ(m["artifacts"].size(), 24u);
    for (const auto& a : m["artifacts"]) {
        EXPECT_EQ(a["sha256"].get<std::string>(), sha256sum(dir / "corpus" / a["path"].get<std::string>()));
    }
    EXPECT_EQ(count_files(at("corpus"), "manifest.json"), 1u);
}

TEST_F(Cli, GenRefusesToOverwriteWithoutForce) {
    make_corpus(3);
    const CliResult again = run("gen --seed 6 --utterances 3 --out " + at("corpus"));
    EXPECT_EQ(again.code, 2);
    EXPECT_NE(again.err.find("--force"), std::string::npos);
    EXPECT_EQ(run("gen --seed 6 --utterances 2 --out " + at("corpus") + " --force").code, 0);
    EXPECT_EQ(count_files(at("corpus"), ".track.csv"), 2u);
}

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("gen --utterances 3 --out " + at("x")).code, 2);  // --seed is mandatory
    EXPECT_EQ(run("train --corpus " + at("missing") + " --out " + at("run")).code, 2);
    EXPECT_EQ(run("train --corpus c --out r --coupling cubic").code, 2);
    EXPECT_EQ(run("--version").code, 0);
}

TEST_F(Cli, TrainWritesHistoryCheckpointsAndManifest) {
    make_corpus();
    make_run("run");
    for (const char* f : {"history.csv", "checkpoint_last.json", "checkpoint_best.json", "checkpoint_final.json",
                          "summary.json", "manifest.json"}) {
        EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
    }
    const std::string hist = slurp(at("run/history.csv"));
    EXPECT_EQ(hist.rfind("step,loss,monitor\n", 0), 0u);
    EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 21);
    const json m = json::parse(slurp(at("run/manifest.json")));
    EXPECT_EQ(m["config"]["train"]["steps"], 20);
    EXPECT_EQ(m["config"]["model"]["hidden"], 8);
    EXPECT_EQ(m["inputs"].size(), 20u);
    for (const auto& in : m["inputs"]) EXPECT_EQ(in["sha256"].get<std::string>(), sha256sum(in["path"].get<std::string>()));
}

TEST_F(Cli, TrainReplayAndResumeAreByteIdentical) {
    make_corpus();
    make_run("a");
    make_run("b");
    EXPECT_EQ(slurp(at("a/history.csv")), slurp(at("b/history.csv")));
    EXPECT_EQ(slurp(at("a/checkpoint_final.json")), slurp(at("b/checkpoint_final.json")));
    EXPECT_EQ(slurp(at("a/manifest.json")), slurp(at("b/manifest.json")));
    // 20 steps then resume to 32 equals one 32-step run.
    ASSERT_EQ(run("train --corpus " + at("corpus") + " --out " + at("a") + " --steps 32 --resume").code, 0);
    make_run("c", "--steps 32");
    EXPECT_EQ(slurp(at("a/history.csv")), slurp(at("c/history.csv")));
    EXPECT_EQ(slurp(at("a/checkpoint_final.json")), slurp(at("c/checkpoint_final.json")));
}

TEST_F(Cli, AgapWithDistanceFillerWarnsButRuns) {
    make_corpus();
    const CliResult r = run("train --corpus " + at("corpus") + " --out " + at("run") +
                      " --model agap --filler dtx --steps 3 --batch 2 --hidden 4 --window 8");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST_F(Cli, ConfigFileOverridesFlags) {
    make_corpus();
    std::ofstream(at("cfg.json")) << R"({"steps": 4, "coupling": "affine", "no-voiced-context": true})";
    ASSERT_EQ(run("train --corpus " + at("corpus") + " --out " + at("run") + " --steps 50 --batch 2 --hidden 4 --config " +
                  at("cfg.json"))
                  .code,
              0);
    const json m = json::parse(slurp(at("run/manifest.json")));
    EXPECT_EQ(m["config"]["train"]["steps"], 4);
    EXPECT_EQ(m["config"]["model"]["voiced_context"], false);
    for (const auto& c : m["config"]["model"]["couplings"]) EXPECT_EQ(c, "affine");
    std::ofstream(at("bad.json")) << R"({"stepz": 4})";
    const CliResult bad = run("train --corpus " + at("corpus") + " --out " + at("run2") + " --config " + at("bad.json"));
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.err.find("stepz"), std::string::npos);
}

TEST_F(Cli, SampleCountsSeedsAndZeroTemperature) {
    make_corpus();
    make_run("run");
    const std::string ck = at("run/checkpoint_final.json");
    ASSERT_EQ(run("sample --checkpoint " + ck + " --corpus " + at("corpus") + " --out " + at("s1") +
                  " --num-samples 30 --seed 4")
                  .code,
              0);
    EXPECT_EQ(count_files(at("s1"), ".track.csv"), 300u);
    ASSERT_EQ(run("sample --checkpoint " + ck + " --corpus " + at("corpus") + " --out " + at("s2") +
                  " --num-samples 30 --seed 4")
                  .code,
              0);
    for (const auto& e : fs::directory_iterator(at("s1"))) {
        EXPECT_EQ(slurp(e.path()), slurp(dir / "s2" / e.path().filename())) << e.path().filename();
    }
    ASSERT_EQ(run("sample --checkpoint " + ck + " --corpus " + at("corpus") + " --out " + at("s0") +
                  " --num-samples 3 --sigma 0 --limit 2")
                  .code,
              0);
    EXPECT_EQ(slurp(at("s0/utt0000.s000.track.csv")), slurp(at("s0/utt0000.s002.track.csv")));
    EXPECT_EQ(slurp(at("s0/utt0001.s000.track.csv")), slurp(at("s0/utt0001.s001.track.csv")));
}

TEST_F(Cli, SampleRejectsInconsistentCheckpoint) {
    make_corpus(2);
    make_run("run");
    json ck = json::parse(slurp(at("run/checkpoint_final.json")));
    ck["meta"]["model"]["hidden"] = 9;
    std::ofstream(at("bad.json")) << ck.dump();
    const CliResult r = run("sample --checkpoint " + at("bad.json") + " --corpus " + at("corpus") + " --out " + at("s"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("FormatError"), std::string::npos);
    EXPECT_EQ(run("sample --checkpoint " + at("nothing.json") + " --corpus " + at("corpus") + " --out " + at("s")).code, 2);
}

TEST_F(Cli, EvalGroundTruthAgainstItself) {
    make_corpus(4);
    ASSERT_EQ(run("eval --ref " + at("corpus") + " --samples " + at("corpus") + " --out " + at("ev")).code, 0);
    const json rep = json::parse(slurp(at("ev/report.json")));
    EXPECT_EQ(rep["metrics"]["vde"]["mean"], 0.0);
    EXPECT_EQ(rep["metrics"]["vfe"]["mean"], 0.0);
    EXPECT_EQ(rep["metrics"]["vde"]["values"].size(), 4u);
    const std::string moments = slurp(at("ev/moments.csv"));
    EXPECT_EQ(moments.rfind("source,mu1,mu2,mu3,mu4,count\n", 0), 0u);
    ASSERT_EQ(run("eval --ref " + at("corpus") + " --samples " + at("corpus") + " --out " + at("en") + " --feature energy").code, 0);
    EXPECT_EQ(json::parse(slurp(at("en/report.json")))["metrics"]["enr"]["mean"], 0.0);
}

TEST_F(Cli, EvalReportMatchesDirectMetrics) {
    make_corpus(3);
    make_run("run");
    ASSERT_EQ(run("sample --checkpoint " + at("run/checkpoint_final.json") + " --corpus " + at("corpus") + " --out " +
                  at("s") + " --num-samples 2")
                  .code,
              0);
    ASSERT_EQ(run("eval --ref " + at("corpus") + " --samples " + at("s") + " --out " + at("ev")).code, 0);
    const json rep = json::parse(slurp(at("ev/report.json")));
    double total = 0.0;
    for (const char* id : {"utt0000", "utt0001", "utt0002"}) {
        const auto ref = pflow::read_track_file(at("corpus/") + id + ".track.csv");
        double per = 0.0;
        for (int s = 0; s < 2; ++s) {
            const auto p = pflow::read_track_file(at("s/") + id + ".s00" + std::to_string(s) + ".track.csv");
            long double diff = 0;
            for (std::size_t t = 0; t < ref.length(); ++t) diff += (p.voiced[t] != ref.voiced[t]);
            per += static_cast<double>(diff / ref.length());
        }
        total += per / 2;
    }
    EXPECT_NEAR(rep["metrics"]["vde"]["mean"].get<double>(), total / 3, 1e-12);
}

TEST_F(Cli, EvalListsUnmatchedIds) {
    make_corpus(3);
    fs::create_directories(at("s"));
    fs::copy_file(at("corpus/utt0000.track.csv"), at("s/utt0000.s000.track.csv"));
    fs::copy_file(at("corpus/utt0001.track.csv"), at("s/other.s000.track.csv"));
    const CliResult r = run("eval --ref " + at("corpus") + " --samples " + at("s") + " --out " + at("ev"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("utt0001"), std::string::npos);
    EXPECT_NE(r.err.find("utt0002"), std::string::npos);
    EXPECT_NE(r.err.find("other"), std::string::npos);
}

TEST_F(Cli, CheckPassesAndInjectedFaultFails) {
    const CliResult ok = run("check --inputs 500 --parameterizations 10 --gradient-models 1 --out " + at("ck"));
    EXPECT_EQ(ok.code, 0) << ok.err;
    const json rep = json::parse(ok.out);
    EXPECT_TRUE(rep["passed"].get<bool>());
    EXPECT_EQ(rep["checks"].size(), 18u);
    for (const auto& c : rep["checks"]) EXPECT_GT(c["tolerance"].get<double>(), 0.0);
    EXPECT_TRUE(fs::exists(at("ck/manifest.json")));

    const CliResult bad = run("check --suite logdet --parameterizations 10 --inject spline-logdet-sign");
    EXPECT_EQ(bad.code, 1);
    bool spline_failed = false;
    const json bad_rep = json::parse(bad.out);
    for (const auto& c : bad_rep["checks"]) {
        if (c["name"] == "spline") spline_failed = !c["passed"].get<bool>();
        if (c["name"] == "affine" || c["name"] == "invconv") {
            EXPECT_TRUE(c["passed"].get<bool>());
        }
    }
    EXPECT_TRUE(spline_failed);
}
