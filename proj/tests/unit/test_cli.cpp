#include "aci/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

int run(std::initializer_list<std::string> args) {
    std::vector<std::string> owned{"aci"};
    owned.insert(owned.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : owned) argv.push_back(s.c_str());
    return aci::run_command(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / ("aci_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }
    fs::path dir;
};

}  // namespace

TEST_F(CliTest, ReportOnFullyCoveredFile) {
    std::ofstream f(dir / "t.csv");
    f << "t,label,alpha_t,err,lower,upper,local_cov\n";
    for (int i = 1; i <= 20; ++i) f << i << ",x" << i << ",0.1,0,0,1,\n";
    f.close();
    ASSERT_EQ(run({"report", "--in", (dir / "t.csv").string(), "--window", "10", "--out", (dir / "s.json").string()}), 0);
    const auto j = nlohmann::json::parse(slurp(dir / "s.json"));
    EXPECT_EQ(j["average_coverage"].get<double>(), 1.0);
    EXPECT_EQ(j["steps"].get<int>(), 20);
    EXPECT_EQ(j["window"].get<int>(), 10);
}

TEST_F(CliTest, FixedMethodEqualsZeroGamma) {
    const auto a = dir / "a", b = dir / "b";
    ASSERT_EQ(run({"volatility", "--synthetic", "400", "--window", "150", "--refit-every", "10", "--local-window", "50",
                   "--method", "fixed", "--out", a.string()}),
              0);
    ASSERT_EQ(run({"volatility", "--synthetic", "400", "--window", "150", "--refit-every", "10", "--local-window", "50",
                   "--gamma", "0", "--out", b.string()}),
              0);
    EXPECT_EQ(slurp(a / "trajectory.csv"), slurp(b / "trajectory.csv"));
    EXPECT_TRUE(fs::exists(a / "prices.csv"));
    const auto j = nlohmann::json::parse(slurp(a / "summary.json"));
    EXPECT_TRUE(j["summary"]["prop_bound_value"].is_null());
}

TEST_F(CliTest, ReportReadsConfigFromPreamble) {
    const auto out = dir / "run";
    ASSERT_EQ(run({"volatility", "--synthetic", "400", "--window", "150", "--refit-every", "10", "--local-window", "50",
                   "--gamma", "0.01", "--out", out.string()}),
              0);
    ASSERT_EQ(run({"report", "--in", (out / "trajectory.csv").string(), "--out", (dir / "r.json").string()}), 0);
    const auto r = nlohmann::json::parse(slurp(dir / "r.json"));
    const auto s = nlohmann::json::parse(slurp(out / "summary.json"));
    EXPECT_EQ(r["config"]["gamma"].get<double>(), 0.01);
    EXPECT_EQ(r["window"].get<int>(), 50);
    EXPECT_EQ(r["average_coverage"], s["summary"]["average_coverage"]);
}

TEST_F(CliTest, ElectionWritesOutputs) {
    const auto out = dir / "e";
    ASSERT_EQ(run({"election", "--synthetic", "300", "--covariates", "3", "--warmup", "200", "--refit-every", "10",
                   "--local-window", "20", "--sigma", "inf", "--out", out.string()}),
              0);
    EXPECT_TRUE(fs::exists(out / "counties.csv"));
    const auto j = nlohmann::json::parse(slurp(out / "summary.json"));
    EXPECT_EQ(j["summary"]["steps"].get<int>(), 100);
    EXPECT_TRUE(j["sigma"].is_null());
}

TEST_F(CliTest, SimulateWritesReport) {
    ASSERT_EQ(run({"simulate", "--horizon", "300", "--reps", "100", "--gamma", "0.05", "--out",
                   (dir / "sim.json").string()}),
              0);
    const auto j = nlohmann::json::parse(slurp(dir / "sim.json"));
    EXPECT_TRUE(j.contains("B_hat"));
}

TEST_F(CliTest, UsageErrorsExitTwo) {
    EXPECT_EQ(run({"frobnicate"}), 2);
    EXPECT_EQ(run({"report", "--in", (dir / "t.csv").string(), "--bogus"}), 2);
    EXPECT_EQ(run({"volatility", "--synthetic", "400"}), 2);
    EXPECT_EQ(run({}), 2);
}

TEST_F(CliTest, BadInputExitsOne) {
    std::ofstream f(dir / "bad.csv");
    f << "not,a,trajectory\n";
    f.close();
    EXPECT_EQ(run({"report", "--in", (dir / "bad.csv").string()}), 1);
    EXPECT_EQ(run({"volatility", "--synthetic", "400", "--alpha", "1.5", "--out", (dir / "x").string()}), 1);
}
