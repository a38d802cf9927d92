#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfliq/cli/run.hpp"

using namespace mfliq;
using namespace mfliq::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("mfliq_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

RunConfig from_file(const std::string& name) { return load_config(std::string(MFLIQ_CONFIG_DIR) + "/" + name); }

}  // namespace

TEST(Cli, RejectsUnknownKeysAndMissingSections) {
    json j = json::parse(R"({"model": {"core": {"lambda1": 1}}, "grid": {"T": 1}})");
    EXPECT_NO_THROW(parse_config(j));
    j["grid"]["steps"] = 3;
    EXPECT_THROW(parse_config(j), ConfigError);
    json k = json::parse(R"({"model": {"core": {"lambda1": 1}}})");
    EXPECT_THROW(parse_config(k), ConfigError);
    json m = json::parse(R"({"model": {"core": {"lambda1": 1}}, "grid": {"T": 1}, "extra": {}})");
    EXPECT_THROW(parse_config(m), ConfigError);
    json n = json::parse(R"({"model": {"core": {"lambda1": "one"}}, "grid": {"T": 1}})");
    auto cfg = parse_config(n);
    auto out = scratch("badvalue");
    EXPECT_EQ(run("solve", cfg, out), config_error);
    EXPECT_EQ(read_json(out / "error.json")["kind"], "config_error");
}

TEST(Cli, TimeFunctionTables) {
    auto f = parse_time_function(json::parse(R"({"t": [0, 1], "v": [1, 3]})"), "x");
    EXPECT_DOUBLE_EQ(f(0.25), 1.5);
    EXPECT_THROW(parse_time_function(json::parse(R"({"t": [0, 1], "v": [1]})"), "x"), ConfigError);
    EXPECT_THROW(parse_time_function(json::parse(R"({"t": [0], "w": [1]})"), "x"), ConfigError);
}

TEST(Cli, RiccatiColumnMatchesClosedForm) {
    auto out = scratch("riccati");
    ASSERT_EQ(run("riccati", from_file("riccati_closed_form.json"), out), ok);
    std::ifstream in(out / "riccati.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "t,A,psi");
    double worst = 0.0;
    while (std::getline(in, line)) {
        double t = std::stod(line.substr(0, line.find(',')));
        std::string rest = line.substr(line.find(',') + 1);
        std::string a = rest.substr(0, rest.find(','));
        if (t >= 1.0) {
            EXPECT_EQ(a, "inf");
            continue;
        }
        worst = std::max(worst, std::abs(std::stod(a) - 1.0 / (1.0 - t)) * (1.0 - t));
    }
    EXPECT_LT(worst, 1e-8);
    auto m = read_json(out / "manifest.json");
    EXPECT_EQ(m["subcommand"], "riccati");
    EXPECT_EQ(m["exit_status"], 0);
}

TEST(Cli, CheckFeasibleExample) {
    auto out = scratch("check");
    ASSERT_EQ(run("check", from_file("check_game.json"), out), ok);
    auto j = read_json(out / "check.json");
    EXPECT_TRUE(j["feasible"].get<bool>());
    for (const auto& v : j["game"]["margins"]) EXPECT_GT(v.get<double>(), 0.0);
}

TEST(Cli, InfeasibleModelExitCode) {
    json j = json::parse(R"({"model": {"follower": {"eta": 1, "kappa": 1, "lambda": 0.1}}, "grid": {"T": 1}})");
    auto out = scratch("infeasible");
    EXPECT_EQ(run("liquidate", parse_config(j), out), infeasible);
    EXPECT_EQ(read_json(out / "error.json")["kind"], "infeasible");
    EXPECT_EQ(run("check", parse_config(j), scratch("infeasible_check")), infeasible);
}

TEST(Cli, NonConvergenceExitCode) {
    json j = json::parse(R"({"model": {"follower": {"eta": 1, "kappa": 0.1, "lambda": 1}}, "grid": {"T": 1},
                              "solver": {"max_iter": 2}})");
    auto out = scratch("nonconv");
    EXPECT_EQ(run("liquidate", parse_config(j), out), non_convergence);
    auto e = read_json(out / "error.json");
    EXPECT_EQ(e["residual_history"].size(), 2u);
}

TEST(Cli, MissingModelSection) {
    auto out = scratch("missing");
    EXPECT_EQ(run("stackelberg", from_file("riccati_closed_form.json"), out), config_error);
}

TEST(Cli, BinaryRunsAreByteIdentical) {
    const std::string bin = MFLIQ_CLI_PATH;
    const std::string cfg = std::string(MFLIQ_CONFIG_DIR) + "/solve_common_noise.json";
    auto a = scratch("det_a"), b = scratch("det_b");
    ASSERT_EQ(std::system((bin + " solve --config " + cfg + " --out " + a.string() + " --seed 5").c_str()), 0);
    ASSERT_EQ(std::system((bin + " solve --config " + cfg + " --out " + b.string() + " --seed 5").c_str()), 0);
    EXPECT_EQ(slurp(a / "solution.csv"), slurp(b / "solution.csv"));
    EXPECT_EQ(slurp(a / "solution.json"), slurp(b / "solution.json"));
    auto ma = read_json(a / "manifest.json"), mb = read_json(b / "manifest.json");
    ma.erase("wall_time");
    mb.erase("wall_time");
    EXPECT_EQ(ma, mb);
    EXPECT_EQ(ma["seed"], 5);
}
