// Command-line front end: run / report / verify.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "w2bary/errors.hpp"
#include "w2bary/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kValidation = 2, kNumerical = 3, kIo = 4 };

int run_command(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<std::string> out,
                std::optional<int> threads) {
  auto cfg = w2bary::load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (out) {
    cfg.output_dir = *out;
  } else if (const char* env = std::getenv("W2BARY_OUT"); env && *env) {
    cfg.output_dir = env;
  }
  if (threads) cfg.win.threads = *threads;
  cfg.validate();
  const auto outcome = w2bary::run_experiment(cfg, std::cout);
  std::cout << "artifacts written to " << outcome.directory.string() << "\n";
  if (!outcome.checks_passed) {
    std::cerr << "error: one or more checks failed (see checks.csv)\n";
    return kNumerical;
  }
  return kOk;
}

int report_command(const std::string& dir) {
  w2bary::print_report(std::cout, w2bary::collect_report(dir));
  return kOk;
}

int verify_command(const std::string& dir) {
  const auto checks = w2bary::verify_run(dir, std::cout);
  std::size_t failed = 0;
  for (const auto& c : checks) failed += c.passed ? 0 : 1;
  std::cout << (failed ? "verify: " + std::to_string(failed) + " check(s) failed" : std::string("verify: all checks passed"))
            << "\n";
  return failed ? kNumerical : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wasserstein-2 barycenters with iterative generative networks"};
  app.require_subcommand(1);

  std::string config_path, report_dir, verify_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;

  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config_path, "INI experiment config")->required();
  run->add_option("--seed", seed, "Override experiment.seed");
  run->add_option("--out", out, "Override the output directory (also W2BARY_OUT)");
  run->add_option("--threads", threads, "Solver-pair threads (default 1)")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Summarize one run directory or a directory of runs");
  report->add_option("dir", report_dir, "Run directory")->required();

  auto* verify = app.add_subcommand("verify", "Re-check a finished run from its stored artifacts");
  verify->add_option("dir", verify_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*run) return run_command(config_path, seed, out, threads);
    if (*report) return report_command(report_dir);
    return verify_command(verify_dir);
  } catch (const w2bary::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const w2bary::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const w2bary::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "I/O error: malformed run artifact: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  }
}
