#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "coupled/io.hpp"
#include "coupled/runner.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Exec {
  int status = -1;
  std::string err;
};

Exec cli(const std::string& args) {
  const fs::path err = fs::temp_directory_path() / "coupled_cli_stderr.txt";
  const std::string cmd = std::string(COUPLED_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int raw = std::system(cmd.c_str());
  Exec e;
  e.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(err);
  std::ostringstream s;
  s << in.rdbuf();
  e.err = s.str();
  return e;
}

std::map<std::string, std::string> read_summary(const fs::path& p) {
  std::map<std::string, std::string> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("missing scenario file exits 2 and names the path") {
    const Exec e = cli("run open-loop --scenario /nonexistent/scenario.json --out /tmp/coupled_cli_x");
    CHECK(e.status == 2);
    CHECK(e.err.find("/nonexistent/scenario.json") != std::string::npos);
  }

  TEST_CASE("usage errors exit 2") {
    const std::string sc = (test_support::kData / "scenario_nominal.json").string();
    CHECK(cli("run sideways --scenario " + sc + " --out /tmp/coupled_cli_x").status == 2);
    CHECK(cli("run open-loop --scenario " + sc).status == 2);
    CHECK(cli("run open-loop --scenario " + sc + " " + sc + " --out /tmp/coupled_cli_x").status == 2);
    CHECK(cli("").status == 2);
  }

  TEST_CASE("runner maps configuration errors to status 2") {
    coupled::RunOptions o;
    o.scenario = "/nonexistent/x.json";
    o.out_dir = fs::temp_directory_path() / "coupled_runner_x";
    const coupled::RunOutcome r = coupled::run(o);
    CHECK(r.status == coupled::exit_code::kConfig);
    CHECK(r.message.find("/nonexistent/x.json") != std::string::npos);
    CHECK_THROWS_AS(coupled::parse_mode("fast"), coupled::ConfigError);
    CHECK(coupled::mode_name(coupled::parse_mode("closed-loop")) == "closed-loop");
  }

  TEST_CASE("nominal open loop through the CLI") {
    const fs::path out = fs::temp_directory_path() / "coupled_cli_open_loop";
    fs::remove_all(out);
    const Exec e = cli("run open-loop --scenario " + (test_support::kData / "scenario_nominal.json").string() +
                       " --out " + out.string());
    REQUIRE(e.status == 0);
    for (const char* f : {"open_loop.csv", "reference.csv", "summary.txt", "report.txt"}) CHECK(fs::exists(out / f));
    std::ifstream log(out / "open_loop.csv");
    std::string first;
    std::getline(log, first);
    CHECK(first.rfind(std::string("# ") + coupled::kCsvSchema, 0) == 0);
    const auto s = read_summary(out / "summary.txt");
    REQUIRE(s.count("open_loop_avg_translational_m"));
    CHECK(std::stod(s.at("open_loop_avg_translational_m")) < 1e-5);
    CHECK(s.at("mode") == "open-loop");
    fs::remove_all(out);
  }

  TEST_CASE("number formatting is fixed") {
    CHECK(coupled::format_number(0.1) == "0.1");
    CHECK(coupled::format_number(1.0 / 3.0) == "0.333333333");
    CHECK(coupled::format_number(-2.5e-7) == "-2.5e-07");
  }
}
