#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include <moment_forge/serialization.hpp>

#include "support/stat_support.hpp"

namespace fs = std::filesystem;
using namespace moment_forge;

namespace {

struct Run {
    int code;
    std::string out;
};

// runs the CLI with stderr folded into the captured output
Run cli(const std::string& args) {
    const std::string cmd = std::string(MF_CLI) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    std::string out;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof buf, p)) out.append(buf, n);
    const int st = pclose(p);
    return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::vector<double>> read_csv(const fs::path& p) {
    std::vector<std::vector<double>> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<double> r;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) r.push_back(std::stod(cell));
        rows.push_back(std::move(r));
    }
    return rows;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / ("mf_cli_" + std::to_string(getpid()));
        fs::create_directories(dir_);
        const auto r = cli("build --m 5 --seed 3 --out " + path("m5.json"));
        ASSERT_EQ(r.code, 0) << r.out;
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }
    static std::string path(const std::string& name) { return (dir_ / name).string(); }
    static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, BuildSmallestCase) {
    const auto r = cli("build --m 3 --out " + path("m3.json"));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto b = load_build(path("m3.json"));
    ASSERT_EQ(b.evolved.instance.size(), 2u);
    EXPECT_EQ(b.evolved.instance.heights[0], -b.evolved.instance.heights[1]);
    EXPECT_EQ(b.evolved.instance.centers[0], -b.evolved.instance.centers[1]);
}

TEST_F(Cli, BuildIsDeterministic) {
    ASSERT_EQ(cli("build --m 5 --seed 3 --out " + path("again.json")).code, 0);
    EXPECT_EQ(slurp(path("m5.json")), slurp(path("again.json")));
}

TEST_F(Cli, SlopeTarget) {
    const auto r = cli("build --m 5 --slope-target 1e4 --out " + path("slope.json"));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto b = load_build(path("slope.json"));
    EXPECT_TRUE(b.evolved.trace.target_reached);
    EXPECT_LE(b.evolved.instance.max_slope(), 1e4);
}

TEST_F(Cli, VerifyDefaultBuild) {
    const auto r = cli("verify " + path("m5.json") + " --n 200000 --out " + path("report.json"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("overall: PASS"), std::string::npos);
    const json j = parse_json(slurp(path("report.json")), "report");
    EXPECT_EQ(j["all_pass"], true);
    EXPECT_EQ(parse_real(j["config"]["sigma"]), 0.05);
    EXPECT_EQ(parse_real(j["config"]["nu"]), 1e-4);
    EXPECT_TRUE(j["config"].contains("w1_samples"));
}

TEST_F(Cli, CorruptedInstanceNamesTheInvariant) {
    json j = parse_json(slurp(path("m5.json")), "m5");
    j["layout"]["centers"][0] = format_real(parse_real(j["layout"]["centers"][0]) * 1.01);
    write_text(path("bad.json"), dump(j));
    const auto r = cli("verify " + path("bad.json") + " --out " + path("bad_report.json"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("stage load"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("symmetry invariant violated"), std::string::npos) << r.out;
}

TEST_F(Cli, ExitCodes) {
    EXPECT_EQ(cli("verify " + path("missing.json")).code, 4);
    EXPECT_EQ(cli("build --m 4 --out " + path("x.json")).code, 2);
    EXPECT_EQ(cli("build --no-such-flag").code, 2);
    EXPECT_EQ(cli("build --slope-target 1e3 --eps-target 1e-3").code, 2);
    const auto guard = cli("build --m 5 --sigma-floor 2 --out " + path("guard.json"));
    EXPECT_EQ(guard.code, 3) << guard.out;
    EXPECT_NE(guard.out.find("stage"), std::string::npos);
    EXPECT_EQ(cli("build --out /nonexistent/dir/x.json").code, 4);
    EXPECT_EQ(cli("distinguish " + path("m5.json") + " --algo spectral --trials 30").code, 2);
}

TEST_F(Cli, ExportedNetworkReproducesTheMarginal) {
    ASSERT_EQ(cli("export " + path("m5.json") + " --out " + path("net1.json")).code, 0);
    ASSERT_EQ(cli("export " + path("m5.json") + " --d 6 --v e1 --out " + path("lifted.json")).code, 0);
    const json n1 = parse_json(slurp(path("net1.json")), "net");
    EXPECT_EQ(n1["kind"], "relu1d");
    EXPECT_EQ(n1["units"].size(), 16u);
    const json lj = parse_json(slurp(path("lifted.json")), "lifted");
    EXPECT_EQ(lj["kind"], "lifted");
    EXPECT_EQ(lj["d"], 6);

    const std::size_t n = 50000;
    ASSERT_EQ(cli("sample " + path("lifted.json") + " --n 50000 --seed 4 --out " + path("lifted.csv")).code, 0);
    ASSERT_EQ(cli("sample " + path("m5.json") + " --n 50000 --seed 5 --out " + path("direct.csv")).code, 0);
    ASSERT_EQ(cli("sample " + path("net1.json") + " --n 50000 --seed 6 --out " + path("net.csv")).code, 0);
    const auto L = read_csv(path("lifted.csv"));
    const auto D = read_csv(path("direct.csv"));
    const auto N = read_csv(path("net.csv"));
    ASSERT_EQ(L.size(), n);
    ASSERT_EQ(L[0].size(), 6u);
    std::vector<double> a, b, c;
    for (std::size_t i = 0; i < n; ++i) {
        a.push_back(L[i][0]);
        b.push_back(D[i][0]);
        c.push_back(N[i][0]);
    }
    EXPECT_GT(test_support::ks_two_sample(a, b).p_value, 0.01);
    EXPECT_GT(test_support::ks_two_sample(c, b).p_value, 0.01);
}

TEST_F(Cli, SampleShapesAndDeterminism) {
    ASSERT_EQ(cli("sample --hypothesis null --d 4 --n 10 --seed 2 --out " + path("null.csv")).code, 0);
    const auto rows = read_csv(path("null.csv"));
    ASSERT_EQ(rows.size(), 10u);
    EXPECT_EQ(rows[0].size(), 4u);
    const auto a = cli("sample " + path("m5.json") + " --d 3 --n 5 --seed 9");
    const auto b = cli("sample " + path("m5.json") + " --d 3 --n 5 --seed 9");
    ASSERT_EQ(a.code, 0);
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 5);
    EXPECT_EQ(cli("sample --n 5").code, 2);
}

TEST_F(Cli, DistinguishWritesResults) {
    const auto r = cli("distinguish " + path("m5.json") + " --algo oracle-v --d 10 --trials 30 --out " +
                       path("exp.json"));
    ASSERT_EQ(r.code, 0) << r.out;
    const json j = parse_json(slurp(path("exp.json")), "exp");
    ASSERT_EQ(j["results"].size(), 1u);
    EXPECT_EQ(j["results"][0]["algorithm"], "oracle-v");
    EXPECT_EQ(j["results"][0]["decision"], "YES");
}
