#pragma once

// Experiment configuration, the run kinds behind `w2bary run`, and the
// report / verify passes over finished run directories.
//
// A config is an INI file with sections; see docs/config.md for every key.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "w2bary/congruent.hpp"
#include "w2bary/measures.hpp"
#include "w2bary/win.hpp"

namespace w2bary {

enum class ExperimentKind {
  kGaussianBench,
  kUniformBench,
  kToy2d,
  kCongruentDataset,
  kWinTrain,
  kInverseMaps,
  kLemmaChecks,
};

ExperimentKind parse_experiment_kind(std::string_view name);
std::string_view to_string(ExperimentKind kind);

enum class ConvexFamily { kQuadratic, kLogSumExp };

ConvexFamily parse_convex_family(std::string_view name);
std::string_view to_string(ConvexFamily family);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kGaussianBench;
  Eigen::Index dim = 2;
  Eigen::Index inputs = 4;              // N
  std::vector<double> weights;          // empty: uniform, or derived for congruent kinds
  std::uint64_t seed = 0;
  std::uint64_t population_seed = 0;    // scatter population / congruent system
  std::filesystem::path output_dir = "runs/default";

  WinConfig win;

  // [data]
  BaseKind base = BaseKind::kGaussian;  // bench kinds force their own base
  std::vector<Toy2dShape> shapes;       // toy2d
  ConvexFamily family = ConvexFamily::kLogSumExp;
  Eigen::Index components = 2;          // M, congruent kinds
  double lse_lambda = 0.2;
  double lse_epsilon = 1.0;
  int lse_planes = 8;
  double condition = 10.0;              // quadratic family eigenvalue spread
  std::filesystem::path system_file;    // win-train: reuse a stored system

  // [inverse]
  InverseMapConfig inverse;
  std::filesystem::path generator_checkpoint;  // inverse-maps: skip WIN training

  // [output]
  Eigen::Index sample_count = 2000;
  Eigen::Index check_points = 1024;
  Eigen::Index baseline_samples = 100000;

  /// Field-level checks of everything above; nothing is sampled.
  void validate() const;
  /// Weights after defaults (uniform) are applied; congruent kinds return {}.
  std::vector<double> resolved_weights() const;
  bool trains_generator() const;
};

/// Parses and validates; unknown sections or keys are a ValidationError.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);

/// INI text with every key, parseable by parse_config.
std::string to_ini(const ExperimentConfig& cfg);

struct CheckResult {
  std::string name;
  double value;
  double tolerance;
  bool passed;
};

void write_checks_csv(std::ostream& out, const std::vector<CheckResult>& checks);
std::vector<CheckResult> read_checks_csv(std::istream& in);

/// The property checks run by the lemma-checks kind: fixed point, map
/// congruence, the generator gradient identity and congruent potentials.
std::vector<CheckResult> lemma_checks(const ExperimentConfig& cfg);

/// The congruent system a config describes: loaded from data.system when
/// set, otherwise built from population_seed.
CongruentSystem build_congruent_system(const ExperimentConfig& cfg);

struct RunOutcome {
  std::filesystem::path directory;
  nlohmann::json manifest;
  bool checks_passed = true;  // false when a lemma-checks check failed
};

/// Executes one experiment and writes its artifacts to cfg.output_dir.
/// NumericalError messages are prefixed with the phase that failed.
RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream& log);

struct ReportRow {
  std::string run;
  std::string kind;
  Eigen::Index dim;
  std::string method;
  double final_uvp;  // NaN without ground truth
  long long iterations;
  double wall_seconds;
};

/// One row per method per run; `dir` is a run directory or a directory of
/// runs. Throws IoError when no run is found or files are missing.
std::vector<ReportRow> collect_report(const std::filesystem::path& dir);
void print_report(std::ostream& out, const std::vector<ReportRow>& rows);

/// Re-checks a finished run from its stored artifacts.
std::vector<CheckResult> verify_run(const std::filesystem::path& dir, std::ostream& log);

}  // namespace w2bary
