// coupled run <mode> --scenario <file> --out <dir> [--seed N] [--batch]

#include <iostream>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "coupled/errors.hpp"
#include "coupled/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Simulation and adaptive MPC for rigidly coupled elastic-joint robots"};
  app.require_subcommand(1);
  CLI::App* run = app.add_subcommand("run", "Run one experiment and write its logs");
  std::string mode;
  std::vector<std::string> scenarios;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool batch = false;
  run->add_option("mode", mode, "open-loop | estimate | closed-loop | compare")->required();
  run->add_option("--scenario", scenarios, "Scenario file (several with --batch)")->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  CLI::Option* seed_opt = run->add_option("--seed", seed, "Override the scenario seed");
  run->add_flag("--batch", batch, "Run every scenario in parallel, each into <out>/<scenario name>");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : coupled::exit_code::kConfig;
  }

  coupled::RunMode run_mode;
  try {
    run_mode = coupled::parse_mode(mode);
  } catch (const coupled::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return coupled::exit_code::kConfig;
  }
  if (scenarios.size() > 1 && !batch) {
    std::cerr << "config error: several scenarios need --batch\n";
    return coupled::exit_code::kConfig;
  }

  std::vector<coupled::RunOptions> jobs;
  for (const auto& s : scenarios) {
    coupled::RunOptions o;
    o.mode = run_mode;
    o.scenario = s;
    o.out_dir = batch ? std::filesystem::path(out_dir) / std::filesystem::path(s).stem() : std::filesystem::path(out_dir);
    if (*seed_opt) o.seed = seed;
    jobs.push_back(o);
  }

  std::vector<coupled::RunOutcome> outcomes(jobs.size());
  if (jobs.size() == 1) {
    outcomes[0] = coupled::run(jobs[0]);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < jobs.size(); ++i)
      threads.emplace_back([&, i] { outcomes[i] = coupled::run(jobs[i]); });
    for (auto& t : threads) t.join();
  }

  int status = coupled::exit_code::kOk;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& o = outcomes[i];
    const std::string tag = jobs.size() > 1 ? "[" + jobs[i].scenario.string() + "] " : "";
    if (o.status != coupled::exit_code::kOk) {
      std::cerr << tag << o.message << '\n';
      status = std::max(status, o.status);
      continue;
    }
    std::cout << tag << coupled::summary_text("summary (" + jobs[i].out_dir.string() + ")", o.summary);
    if (run_mode == coupled::RunMode::Compare) std::cout << '\n' << o.message;
  }
  return status;
}
