#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "w2bary/errors.hpp"
#include "w2bary/experiment.hpp"

using namespace w2bary;
namespace fs = std::filesystem;

namespace {

const char* kTinyBench = R"(
[experiment]
kind = gaussian-bench
dim = 2
inputs = 3
weights = 1/4, 1/4, 1/2
seed = 5
population_seed = 11
[network]
hidden = 8, 8
[generator]
steps = 3
batch = 32
[solver]
potential_steps = 3
map_steps = 2
batch = 32
[training]
outer_iterations = 2
eval_samples = 2000
[output]
samples = 50
baseline_samples = 2000
)";

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("w2bary-test-" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

RunOutcome run_quiet(ExperimentConfig cfg, const fs::path& out) {
  cfg.output_dir = out;
  std::ostringstream log;
  return run_experiment(cfg, log);
}

int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + W2BARY_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ParsesEverySection) {
  const auto cfg = parse(kTinyBench);
  EXPECT_EQ(cfg.kind, ExperimentKind::kGaussianBench);
  EXPECT_EQ(cfg.dim, 2);
  ASSERT_EQ(cfg.weights.size(), 3u);
  EXPECT_DOUBLE_EQ(cfg.weights[0], 0.25);
  EXPECT_EQ(cfg.win.hidden, (std::vector<Eigen::Index>{8, 8}));
  EXPECT_EQ(cfg.win.solver.map_steps, 2);
  EXPECT_EQ(cfg.win.outer_iterations, 2);
  EXPECT_EQ(cfg.sample_count, 50);
}

TEST(Config, DefaultsWhenSectionsAreMissing) {
  const auto cfg = parse("[experiment]\nkind = uniform-bench\ndim = 4\ninputs = 2\n");
  EXPECT_EQ(cfg.resolved_weights(), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(cfg.win.batch_size, WinConfig{}.batch_size);
  EXPECT_TRUE(cfg.trains_generator());
}

TEST(Config, ErrorsNameTheField) {
  auto message = [](const std::string& text) {
    try {
      parse(text);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("[experiment]\nkind = gaussian-bench\nbogus = 1\n").find("experiment.bogus"), std::string::npos);
  EXPECT_NE(message("[experiment]\nkind = gaussian-bench\ndim = two\n").find("dim"), std::string::npos);
  EXPECT_NE(message("[experiment]\nkind = nope\n").find("kind"), std::string::npos);
  EXPECT_NE(message("[experiment]\nkind = gaussian-bench\ninputs = 2\nweights = 0.5, 0.6\n").find("weights"),
            std::string::npos);
  EXPECT_NE(message("[experiment]\nkind = gaussian-bench\ninputs = 2\nweights = 1.5, -0.5\n").find("weights"),
            std::string::npos);
  EXPECT_NE(message("[experiment]\nkind = gaussian-bench\ninputs = 3\nweights = 0.5, 0.5\n").find("weights"),
            std::string::npos);
  EXPECT_NE(message("[experiment]\nkind = toy2d\ndim = 3\n").find("dim"), std::string::npos);
  EXPECT_NE(message("[unknown]\nx = 1\n").find("unknown"), std::string::npos);
}

TEST(Config, ToIniRoundTrips) {
  auto cfg = parse(kTinyBench);
  cfg.win.generator_lr.decay_every = 123;
  cfg.win.reset_solver_optimizers = true;
  const auto back = parse(to_ini(cfg));
  EXPECT_EQ(to_ini(back), to_ini(cfg));
  EXPECT_EQ(back.win.generator_lr.decay_every, 123);
  EXPECT_TRUE(back.win.reset_solver_optimizers);
}

TEST(Config, ShippedConfigsLoad) {
  const fs::path dir = fs::path(W2BARY_SOURCE_DIR) / "configs";
  int count = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".ini") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
    ++count;
  }
  EXPECT_GE(count, 8);
  EXPECT_THROW(load_config(dir / "does-not-exist.ini"), IoError);
}

TEST(Run, BenchIsDeterministicAndVerifies) {
  TempDir tmp;
  const auto cfg = parse(kTinyBench);
  const auto a = run_quiet(cfg, tmp.path() / "a");
  const auto b = run_quiet(cfg, tmp.path() / "b");
  EXPECT_EQ(slurp(a.directory / "metrics.csv"), slurp(b.directory / "metrics.csv"));
  EXPECT_EQ(slurp(a.directory / "checkpoints" / "generator.mlp"), slurp(b.directory / "checkpoints" / "generator.mlp"));
  EXPECT_EQ(a.manifest["results"]["final_uvp"], b.manifest["results"]["final_uvp"]);
  for (const char* f : {"config.ini", "manifest.json", "metrics.csv", "plot.svg", "samples/generated.csv",
                        "checkpoints/map_0.mlp", "checkpoints/potential_2.mlp", "traces/solver_1.csv"})
    EXPECT_TRUE(fs::exists(a.directory / f)) << f;

  std::ostringstream log;
  for (const auto& c : verify_run(a.directory, log)) EXPECT_TRUE(c.passed) << c.name << " " << c.value;

  // The manifest's config reproduces the run.
  const auto again = run_quiet(parse(a.manifest["config"].get<std::string>()), tmp.path() / "c");
  EXPECT_EQ(slurp(again.directory / "metrics.csv"), slurp(a.directory / "metrics.csv"));
}

TEST(Run, VerifyDetectsTamperedMetrics) {
  TempDir tmp;
  const auto out = run_quiet(parse(kTinyBench), tmp.path() / "run");
  std::string text = slurp(out.directory / "metrics.csv");
  const auto pos = text.rfind('\n', text.size() - 2);
  text = text.substr(0, pos + 1) + "2,0.5,0.5,0.5\n";
  write_file(out.directory / "metrics.csv", text);
  std::ostringstream log;
  bool any_failed = false;
  for (const auto& c : verify_run(out.directory, log)) any_failed |= !c.passed;
  EXPECT_TRUE(any_failed);
}

TEST(Report, SortsRunsAndRejectsEmptyDirectory) {
  TempDir tmp;
  auto cfg = parse(kTinyBench);
  run_quiet(cfg, tmp.path() / "z-d2");
  cfg.dim = 3;
  run_quiet(cfg, tmp.path() / "a-d3");
  const auto rows = collect_report(tmp.path());
  ASSERT_EQ(rows.size(), 4u);  // WIN and constant shift per run
  EXPECT_EQ(rows[0].dim, 2);
  EXPECT_EQ(rows[2].dim, 3);
  EXPECT_EQ(rows[0].method, "WIN");
  EXPECT_EQ(rows[0].iterations, 6);
  EXPECT_FALSE(std::isnan(rows[0].final_uvp));
  std::ostringstream table;
  print_report(table, rows);
  EXPECT_NE(table.str().find("UVP"), std::string::npos);

  const fs::path empty = tmp.path() / "empty";
  fs::create_directories(empty);
  EXPECT_THROW(collect_report(empty), IoError);
}

TEST(Run, LemmaChecksAndCongruentDatasetPass) {
  TempDir tmp;
  auto lemma = parse("[experiment]\nkind = lemma-checks\ndim = 3\ninputs = 3\n[output]\ncheck_points = 128\n");
  const auto l = run_quiet(lemma, tmp.path() / "lemma");
  EXPECT_TRUE(l.checks_passed);
  std::ifstream in(l.directory / "checks.csv");
  const auto checks = read_checks_csv(in);
  EXPECT_GE(checks.size(), 8u);
  for (const auto& c : checks) EXPECT_TRUE(c.passed) << c.name;

  auto data = parse("[experiment]\nkind = congruent-dataset\ndim = 2\ninputs = 3\n[data]\nfamily = log_sum_exp\n"
                    "[output]\nsamples = 100\ncheck_points = 256\n");
  const auto d = run_quiet(data, tmp.path() / "data");
  EXPECT_TRUE(d.checks_passed);
  EXPECT_TRUE(fs::exists(d.directory / "system.json"));
  EXPECT_TRUE(fs::exists(d.directory / "samples" / "input_2.csv"));
  std::ostringstream log;
  for (const auto& c : verify_run(d.directory, log)) EXPECT_TRUE(c.passed) << c.name;
}

TEST(ChecksCsv, RoundTrip) {
  const std::vector<CheckResult> checks{{"a", 1e-13, 1e-12, true}, {"b", 0.5, 0.1, false}};
  std::ostringstream os;
  write_checks_csv(os, checks);
  std::istringstream in(os.str());
  const auto back = read_checks_csv(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].name, "b");
  EXPECT_FALSE(back[1].passed);
  EXPECT_DOUBLE_EQ(back[0].value, 1e-13);
}

TEST(Binary, ExitCodes) {
  TempDir tmp;
  const fs::path good = tmp.path() / "good.ini";
  write_file(good, kTinyBench);
  const fs::path bad_weights = tmp.path() / "bad.ini";
  write_file(bad_weights, "[experiment]\nkind = gaussian-bench\ninputs = 2\nweights = 0.9, 0.9\n");
  const fs::path out = tmp.path() / "out";

  EXPECT_EQ(cli("run \"" + bad_weights.string() + "\" --out \"" + out.string() + "\""), 2);
  EXPECT_FALSE(fs::exists(out));  // rejected before anything is sampled or written
  EXPECT_EQ(cli("run \"" + (tmp.path() / "missing.ini").string() + "\""), 4);
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("run \"" + good.string() + "\" --out \"" + out.string() + "\""), 0);
  EXPECT_EQ(cli("verify \"" + out.string() + "\""), 0);
  EXPECT_EQ(cli("report \"" + tmp.path().string() + "\""), 0);
  EXPECT_EQ(cli("report \"" + (tmp.path() / "nothing").string() + "\""), 4);

  fs::remove(out / "checkpoints" / "generator.mlp");
  EXPECT_NE(cli("verify \"" + out.string() + "\""), 0);
}
