// Command-line front end for the verification experiments.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spe/errors.hpp"
#include "spe/harness/config.hpp"
#include "spe/harness/experiments.hpp"

namespace {

constexpr int kUsageError = 1;
constexpr int kNumericError = 2;

void write_outputs(const spe::harness::CommandOutput& output) {
  for (const auto& file : output.files) {
    if (file.path.empty()) {
      std::cout << file.contents;
      continue;
    }
    std::ofstream out(file.path, std::ios::binary | std::ios::trunc);
    if (!out) throw spe::IoError("cannot open '" + file.path + "' for writing");
    out << file.contents;
    out.close();
    if (!out) throw spe::IoError("failed writing '" + file.path + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic positional encoding experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_path;
  std::optional<std::size_t> jobs;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "base seed (overrides the config file)");
  app.add_option("--out", out_path, "output path; standard output when omitted");
  app.add_option("--jobs", jobs, "worker threads for seed and sweep loops")->check(CLI::PositiveNumber);
  app.add_option("--set", overrides, "override a config key, as key=value (repeatable)");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"convergence", "kernel estimate error against R"},
      {"crossterm", "cross-dimension term ratio against R"},
      {"attention-dump", "materialize sampled or expected attention matrices"},
      {"bench", "linear path and quadratic oracle timings"},
      {"fit", "fit kernel parameters to a stationary target"},
      {"probe", "translation invariance and monotonicity scores"},
      {"r-ablation", "kernel mismatch over R_train x R_test"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    spe::harness::Config config =
        config_path.empty() ? spe::harness::Config{} : spe::harness::Config::load(config_path);
    config.apply_overrides(overrides);
    if (seed) config.set("seed", std::to_string(*seed));
    if (!out_path.empty()) config.set("out", out_path);
    if (jobs) config.set("jobs", std::to_string(*jobs));
    if (command == "attention-dump" && out_path.empty() && !config.has("out")) {
      throw spe::ParameterError("attention-dump writes several files and needs --out");
    }
    write_outputs(spe::harness::run_command(command, config));
  } catch (const spe::NumericError& e) {
    std::cerr << "spe " << command << ": numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const spe::Error& e) {
    std::cerr << "spe " << command << ": " << e.what() << '\n';
    return kUsageError;
  }
  return 0;
}
