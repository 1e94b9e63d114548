#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace
{

struct Result
{
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text)
{
    std::ofstream(p, std::ios::binary) << text;
}

std::vector<std::string> lines_of(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        out.push_back(line);
    return out;
}

class Cli : public ::testing::Test
{
  protected:
    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("edgeimpute_cli_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }

    void TearDown() override { fs::remove_all(dir_); }

    Result run(const std::string& args) const
    {
        const fs::path out = dir_ / "stdout.txt";
        const fs::path err = dir_ / "stderr.txt";
        const std::string cmd = std::string(EDGEIMPUTE_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    fs::path path(const std::string& name) const { return dir_ / name; }

    // 5 devices x 60 ticks x 4 dims with its schema.
    void make_trace(const std::string& name = "trace.csv", int devices = 5, int ticks = 60)
    {
        const Result r = run("synth --devices " + std::to_string(devices) + " --ticks " + std::to_string(ticks) +
                             " --dims 4 --seed 3 --out " + path(name).string() + " --schema-out " +
                             path("schema.kv").string());
        ASSERT_EQ(r.code, 0) << r.err;
    }

    fs::path dir_;
};

} // namespace

TEST_F(Cli, ImputeWritesReportAndManifest)
{
    make_trace();
    spit(path("config.kv"), "model = PBM\nV = 5\nN = 5\nM = 4\nseeds = 1,2\n");
    const Result r = run("impute " + path("trace.csv").string() + " " + path("schema.kv").string() + " " +
                         path("config.kv").string() + " --out-dir " + path("out").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(path("out/metrics.tsv")));
    EXPECT_TRUE(fs::exists(path("out/manifest.kv")));
    EXPECT_TRUE(fs::exists(path("out/report.kv")));
    const auto rows = lines_of(slurp(path("out/metrics.tsv")));
    EXPECT_EQ(rows.size(), 4u);
    EXPECT_NE(slurp(path("out/manifest.kv")).find("impute.seeds = 1,2"), std::string::npos);
}

TEST_F(Cli, MissingSchemaNamesThePath)
{
    make_trace();
    spit(path("config.kv"), "V = 5\n");
    const std::string missing = path("nope.kv").string();
    const Result r = run("impute " + path("trace.csv").string() + " " + missing + " " + path("config.kv").string() +
                         " --out-dir " + path("out").string());
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
    EXPECT_EQ(lines_of(r.err).size(), 1u);
}

TEST_F(Cli, OutOfRangeRateIsAConfigError)
{
    make_trace();
    spit(path("config.kv"), "V = 150\n");
    const Result r = run("impute " + path("trace.csv").string() + " " + path("schema.kv").string() + " " +
                         path("config.kv").string() + " --out-dir " + path("out").string());
    EXPECT_EQ(r.code, 6);
    EXPECT_NE(r.err.find("config error"), std::string::npos) << r.err;
}

TEST_F(Cli, ErrorClassesHaveDistinctExitCodes)
{
    make_trace();
    spit(path("config.kv"), "V = 5\n");
    spit(path("bad_schema.kv"), "device_column = 0\ntimestamp_column = 1\nvalue_columns = 2,2\n");
    spit(path("bad_trace.csv"), "a,1,1,2,3,4\na,1,1,2,3,4\n");
    const std::string tail = " " + path("config.kv").string() + " --out-dir " + path("out").string();
    EXPECT_EQ(run("impute " + path("trace.csv").string() + " " + path("bad_schema.kv").string() + tail).code, 4);
    EXPECT_EQ(run("impute " + path("bad_trace.csv").string() + " " + path("schema.kv").string() + tail).code, 5);
    EXPECT_EQ(run("impute " + path("absent.csv").string() + " " + path("schema.kv").string() + tail).code, 3);
    EXPECT_EQ(run("impute").code, 2);
}

TEST_F(Cli, OverrideFlagsReachTheManifest)
{
    make_trace();
    spit(path("config.kv"), "V = 5\nseeds = 1,2,3\n");
    const Result r = run("impute " + path("trace.csv").string() + " " + path("schema.kv").string() + " " +
                         path("config.kv").string() + " --out-dir " + path("out").string() +
                         " --seed 9 --feed imputed --sigma-mode absolute --wgm-weighting literal --md-mode tick_sum");
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string m = slurp(path("out/manifest.kv"));
    for (const char* needle : {"impute.seeds = 9", "impute.feed = imputed", "impute.sigma_mode = absolute",
                               "impute.wgm_weighting = literal", "impute.md_mode = tick_sum"})
        EXPECT_NE(m.find(needle), std::string::npos) << needle;
    EXPECT_EQ(run("impute " + path("trace.csv").string() + " " + path("schema.kv").string() + " " +
                  path("config.kv").string() + " --md-mode sideways")
                  .code,
              6);
}

TEST_F(Cli, SynthLineCount)
{
    ASSERT_EQ(run("synth --devices 5 --ticks 100 --dims 4 --out " + path("a.csv").string()).code, 0);
    EXPECT_EQ(lines_of(slurp(path("a.csv"))).size(), 500u);
}

TEST_F(Cli, SynthIsByteReproducible)
{
    ASSERT_EQ(run("synth --seed 11 --ticks 80 --out " + path("a.csv").string()).code, 0);
    ASSERT_EQ(run("synth --seed 11 --ticks 80 --out " + path("b.csv").string()).code, 0);
    ASSERT_EQ(run("synth --seed 12 --ticks 80 --out " + path("c.csv").string()).code, 0);
    EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
    EXPECT_NE(slurp(path("a.csv")), slurp(path("c.csv")));
}

TEST_F(Cli, NoiselessSynthRepeatsValuesPerTick)
{
    ASSERT_EQ(run("synth --noise 0 --devices 4 --ticks 30 --out " + path("a.csv").string()).code, 0);
    std::map<std::string, std::string> by_tick;
    for (const auto& line : lines_of(slurp(path("a.csv"))))
    {
        const auto first = line.find(',');
        const auto second = line.find(',', first + 1);
        const std::string tick = line.substr(first + 1, second - first - 1);
        const std::string values = line.substr(second + 1);
        auto [it, inserted] = by_tick.emplace(tick, values);
        if (!inserted)
        {
            EXPECT_EQ(it->second, values) << "tick " << tick;
        }
    }
    EXPECT_EQ(by_tick.size(), 30u);
}

TEST_F(Cli, SynthRejectsBadParams)
{
    EXPECT_EQ(run("synth --devices 0 --out " + path("a.csv").string()).code, 6);
    EXPECT_EQ(run("synth --noise -1 --out " + path("a.csv").string()).code, 6);
}

TEST_F(Cli, GridCardinalityAndManifestRerun)
{
    make_trace();
    spit(path("grid.kv"), "models = PBM,DBM,AM\nV = 1,5,10\nN = 5\nM = 4\nseeds = 1\n");
    const Result r = run("grid " + path("trace.csv").string() + " " + path("schema.kv").string() + " " +
                         path("grid.kv").string() + " --out-dir " + path("first").string());
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string first = slurp(path("first/comparison.tsv"));
    EXPECT_EQ(lines_of(first).size(), 1u + 9u);
    EXPECT_EQ(lines_of(slurp(path("first/timing.tsv"))).size(), 1u + 9u);

    const Result again = run("grid " + path("trace.csv").string() + " --manifest " +
                             path("first/manifest.kv").string() + " --out-dir " + path("second").string());
    ASSERT_EQ(again.code, 0) << again.err;
    EXPECT_EQ(slurp(path("second/comparison.tsv")), first);
}

TEST_F(Cli, ManifestRejectsAlteredTrace)
{
    make_trace();
    spit(path("config.kv"), "V = 5\n");
    ASSERT_EQ(run("impute " + path("trace.csv").string() + " " + path("schema.kv").string() + " " +
                  path("config.kv").string() + " --out-dir " + path("out").string())
                  .code,
              0);
    make_trace("other.csv", 5, 61);
    const Result r = run("impute " + path("other.csv").string() + " --manifest " + path("out/manifest.kv").string() +
                         " --out-dir " + path("out2").string());
    EXPECT_EQ(r.code, 6);
    EXPECT_NE(r.err.find("digest"), std::string::npos);
}

TEST_F(Cli, GridNamesOversizedCell)
{
    make_trace();
    spit(path("grid.kv"), "models = PBM\nV = 5\nN = 5,15\nM = 4\n");
    const Result r = run("grid " + path("trace.csv").string() + " " + path("schema.kv").string() + " " +
                         path("grid.kv").string() + " --out-dir " + path("out").string());
    EXPECT_EQ(r.code, 6);
    EXPECT_NE(r.err.find("N=15"), std::string::npos) << r.err;
}

TEST_F(Cli, ValidateReportsShape)
{
    make_trace();
    spit(path("config.kv"), "V = 5\nN = 5\nM = 4\n");
    const Result r = run("validate " + path("trace.csv").string() + " " + path("schema.kv").string() + " --config " +
                         path("config.kv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("devices=5 dims=4 reports=300"), std::string::npos) << r.out;

    spit(path("big.kv"), "N = 9\nk = 4\n");
    EXPECT_EQ(run("validate " + path("trace.csv").string() + " " + path("schema.kv").string() + " --config " +
                  path("big.kv").string())
                  .code,
              6);
}
