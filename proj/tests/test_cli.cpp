#include "mnum/cli.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using mnum::testing::network_path;
using mnum::testing::shipped_networks;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "mnum");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out;
    std::ostringstream err;
    const int code = mnum::cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("mnum_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::string write(const std::string& name, const std::string& content) const {
        std::ofstream(path(name)) << content;
        return path(name);
    }

    static std::string slurp(const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream s;
        s << in.rdbuf();
        return s.str();
    }

    fs::path dir_;
};

} // namespace

TEST_F(CliTest, SolveSymmetricWritesReport) {
    const auto r = run_cli({"solve", "--input", network_path("symmetric.json"), "--output", path("eq.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = mnum::io::Json::parse(slurp(path("eq.json")));
    EXPECT_NEAR(report["x"][0].get<double>(), 2.0, 1e-6);
    EXPECT_LT(report["rmnum_residual"].get<double>(), 1e-6);
    EXPECT_EQ(mnum::io::validate_report(report), "");
    std::vector<std::string> keys;
    for (const auto& item : report.items()) {
        keys.push_back(item.key());
    }
    const std::vector<std::string> leading = {"command",   "lambda",         "w",          "x", "q",
                                              "objective", "grad_norm", "rmnum_residual", "iterations"};
    EXPECT_TRUE(std::equal(leading.begin(), leading.end(), keys.begin()));
}

TEST_F(CliTest, ReportRoundTripsAtFullPrecision) {
    const auto r = run_cli({"solve", "-i", network_path("braess.json")});
    ASSERT_EQ(r.code, 0);
    const auto report = mnum::io::Json::parse(r.out);
    EXPECT_EQ(mnum::io::validate_report(report), "");
    EXPECT_EQ(mnum::io::dump(report), r.out);
    const auto file = mnum::testing::load("braess.json");
    const auto eq = mnum::solve_mnum(mnum::Model(file.network, *file.choice));
    for (std::size_t a = 0; a < eq.lambda.size(); ++a) {
        EXPECT_EQ(report["lambda"][a].get<double>(), eq.lambda[a]);
    }
}

TEST_F(CliTest, MalformedJsonIsAnInputError) {
    const auto r = run_cli({"solve", "-i", write("bad.json", "{\n  \"nodes\": [\"s\",\n  \"arcs\": ]\n}")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownFieldNamesTheField) {
    const auto r = run_cli({"solve", "-i", write("bad.json", R"({"nodes": ["s", "t"], "arcs": [
        {"id": "a", "tail": "s", "head": "t", "model": "mm1", "capacity": 2, "lambda0": 1, "speed": 3}]})")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("arcs[0].speed"), std::string::npos) << r.err;
}

TEST_F(CliTest, StructuralErrorsAndBadFlagsAreInputErrors) {
    EXPECT_EQ(run_cli({"validate", "-i", write("loop.json", R"({"nodes": ["s"], "arcs": [
        {"id": "a", "tail": "s", "head": "s", "model": "mm1", "capacity": 2, "lambda0": 1}]})")})
                  .code,
              2);
    EXPECT_EQ(run_cli({"solve", "-i", path("missing.json")}).code, 2);
    EXPECT_EQ(run_cli({"solve", "-i", network_path("symmetric.json"), "--tol", "-1"}).code, 2);
    EXPECT_EQ(run_cli({"explode", "-i", network_path("symmetric.json")}).code, 2);
    EXPECT_EQ(run_cli({"solve", "-i", network_path("wardrop2.json"), "--beta", "2"}).code, 2);
}

TEST_F(CliTest, IterationCapIsAConvergenceError) {
    const auto r = run_cli({"solve", "-i", network_path("braess.json"), "--max-iter", "1"});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("convergence"), std::string::npos);
}

TEST_F(CliTest, GradcheckPassesOnShippedNetworks) {
    for (const auto& name : shipped_networks()) {
        const auto r = run_cli({"gradcheck", "-i", network_path(name), "--points", "5"});
        EXPECT_EQ(r.code, 0) << name << "\n" << r.out;
    }
}

TEST_F(CliTest, CorruptedGradientFailsTheCheck) {
    EXPECT_EQ(run_cli({"gradcheck", "-i", network_path("braess.json"), "--corrupt-gradient"}).code, 1);
}

TEST_F(CliTest, GradcheckOnEmptySourceSetPasses) {
    const auto r = run_cli({"gradcheck", "-i", write("empty.json", R"({"nodes": ["s", "t"], "arcs": [
        {"id": "a", "tail": "s", "head": "t", "model": "mm1", "capacity": 2, "lambda0": 1}], "sources": []})")});
    EXPECT_EQ(r.code, 0) << r.out;
}

TEST_F(CliTest, SimulateIsReproducibleAndReportsASummary) {
    const std::vector<std::string> args = {"simulate", "-i", network_path("symmetric.json"), "--outer", "200",
                                           "--noise-sigma", "0.001", "--seed", "7"};
    auto a = args;
    a.insert(a.end(), {"-o", path("a.csv")});
    auto b = args;
    b.insert(b.end(), {"-o", path("b.csv")});
    const auto ra = run_cli(a);
    const auto rb = run_cli(b);
    EXPECT_EQ(ra.code, rb.code);
    EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
    EXPECT_EQ(slurp(path("a.csv")).rfind("outer_step,inner_step,source,rate,q_est,dist_to_eq\n", 0), 0u);
    const auto summary = mnum::io::Json::parse(slurp(path("a.csv") + ".summary.json"));
    EXPECT_EQ(mnum::io::validate_report(summary), "");
}

TEST_F(CliTest, SimulateSymmetricNoiseFreeSucceeds) {
    const auto r = run_cli({"simulate", "-i", network_path("symmetric.json"), "-o", path("t.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto summary = mnum::io::Json::parse(slurp(path("t.csv") + ".summary.json"));
    EXPECT_LT(summary["relative_rate_distance"].get<double>(), 0.01);
}

TEST_F(CliTest, SimulateWithLargeNoiseReportsTheDistance) {
    const auto r = run_cli({"simulate", "-i", network_path("symmetric.json"), "-o", path("n.csv"), "--outer",
                            "50", "--noise-sigma", "0.5"});
    EXPECT_TRUE(r.code == 0 || r.code == 1);
    const auto summary = mnum::io::Json::parse(slurp(path("n.csv") + ".summary.json"));
    EXPECT_TRUE(summary.contains("relative_rate_distance"));
}

TEST_F(CliTest, SimulateRejectsZeroInnerSteps) {
    EXPECT_EQ(run_cli({"simulate", "-i", network_path("symmetric.json"), "--inner", "0"}).code, 2);
}

TEST_F(CliTest, MteNumAndValidate) {
    const auto mte = run_cli({"mte", "-i", network_path("wardrop2.json")});
    ASSERT_EQ(mte.code, 0) << mte.err;
    const auto m = mnum::io::Json::parse(mte.out);
    EXPECT_EQ(mnum::io::validate_report(m), "");
    EXPECT_NEAR(m["lambda"][0].get<double>(), m["lambda"][1].get<double>(), 1e-6);

    const auto num = run_cli({"num", "-i", network_path("single_link.json")});
    ASSERT_EQ(num.code, 0);
    const auto n = mnum::io::Json::parse(num.out);
    EXPECT_EQ(mnum::io::validate_report(n), "");
    EXPECT_NEAR(n["p"][0].get<double>(), (1.0 + std::sqrt(5.0)) / 4.0, 1e-8);

    const auto v = run_cli({"validate", "-i", network_path("grid3x3.json")});
    EXPECT_EQ(v.code, 0);
    EXPECT_NE(v.out.find("arcs 14"), std::string::npos);
}

TEST_F(CliTest, SolverAndChoiceOverrides) {
    const auto fp = run_cli({"solve", "-i", network_path("chain.json"), "--solver", "fixedpoint"});
    const auto gd = run_cli({"solve", "-i", network_path("chain.json")});
    ASSERT_EQ(fp.code, 0);
    ASSERT_EQ(gd.code, 0);
    const auto a = mnum::io::Json::parse(fp.out);
    const auto b = mnum::io::Json::parse(gd.out);
    for (std::size_t i = 0; i < a["lambda"].size(); ++i) {
        EXPECT_NEAR(a["lambda"][i].get<double>(), b["lambda"][i].get<double>(), 1e-6);
    }
    EXPECT_EQ(run_cli({"solve", "-i", network_path("braess.json"), "--choice", "min"}).code, 0);
    const auto beta = run_cli({"solve", "-i", network_path("symmetric.json"), "--beta", "3"});
    EXPECT_NEAR(mnum::io::Json::parse(beta.out)["x"][0].get<double>(), 2.0, 1e-6);
}

TEST_F(CliTest, LogLevelFromEnvironment) {
    ::setenv("MNUM_LOG", "info", 1);
    const auto r = run_cli({"solve", "-i", network_path("symmetric.json")});
    ::unsetenv("MNUM_LOG");
    EXPECT_NE(r.err.find("[info] solve"), std::string::npos);
    EXPECT_EQ(run_cli({"solve", "-i", network_path("symmetric.json")}).err, "");
}

TEST_F(CliTest, ExecutableHonoursExitCodeContract) {
    auto status = [](const std::string& args) {
        const int raw = std::system((std::string(MNUM_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    EXPECT_EQ(status("solve -i " + network_path("symmetric.json")), 0);
    EXPECT_EQ(status("gradcheck -i " + network_path("braess.json") + " --corrupt-gradient"), 1);
    EXPECT_EQ(status("solve -i " + write("bad.json", "{")), 2);
    EXPECT_EQ(status("solve -i " + network_path("braess.json") + " --max-iter 1"), 3);
}
