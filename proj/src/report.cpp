#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "w2bary/errors.hpp"
#include "w2bary/experiment.hpp"

namespace w2bary {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

std::vector<TimelineRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file '" + path.string() + "'");
  return read_timeline_csv(in);
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j.at(i).at(k).get<double>();
  return m;
}

GaussianMeasure<double> gaussian_from(const nlohmann::json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  return {Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
          matrix_from(j.at("cov"))};
}

double number_or_nan(const nlohmann::json& j, const char* key) {
  return j.contains(key) && j.at(key).is_number() ? j.at(key).get<double>() : kNaN;
}

std::vector<std::filesystem::path> find_runs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  if (std::filesystem::exists(dir / "manifest.json")) return {dir};
  std::vector<std::filesystem::path> runs;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() == "manifest.json") runs.push_back(entry.path().parent_path());
  if (runs.empty()) throw IoError("no run directories (manifest.json) found under '" + dir.string() + "'");
  std::sort(runs.begin(), runs.end());
  return runs;
}

// Largest relative increase between consecutive proxy values.
double worst_proxy_increase(const std::vector<TimelineRow>& rows) {
  double worst = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double prev = rows[i - 1].proxy_objective;
    if (prev > 0.0) worst = std::max(worst, (rows[i].proxy_objective - prev) / prev);
  }
  return worst;
}

}  // namespace

void write_checks_csv(std::ostream& out, const std::vector<CheckResult>& checks) {
  out << "# w2bary checks v1\n";
  out << "check,value,tolerance,passed\n";
  out.precision(12);
  for (const auto& c : checks) out << c.name << "," << c.value << "," << c.tolerance << "," << (c.passed ? 1 : 0) << "\n";
}

std::vector<CheckResult> read_checks_csv(std::istream& in) {
  std::vector<CheckResult> out;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "check,value,tolerance,passed") throw IoError("checks CSV: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    std::istringstream ls(line);
    std::string name, value, tol, passed;
    if (!std::getline(ls, name, ',') || !std::getline(ls, value, ',') || !std::getline(ls, tol, ',') ||
        !std::getline(ls, passed))
      throw IoError("checks CSV: malformed row '" + line + "'");
    try {
      out.push_back({name, std::stod(value), std::stod(tol), passed == "1"});
    } catch (const std::logic_error&) {
      throw IoError("checks CSV: malformed row '" + line + "'");
    }
  }
  if (!header) throw IoError("checks CSV: missing header");
  return out;
}

std::vector<CheckResult> lemma_checks(const ExperimentConfig& cfg) {
  std::vector<CheckResult> checks;
  auto add = [&](std::string name, double value, double tol) {
    checks.push_back({std::move(name), value, tol, std::isfinite(value) && value < tol});
  };
  const Eigen::Index d = cfg.dim;
  const auto weights = cfg.resolved_weights();
  const auto spec = make_scatter_population(d, cfg.inputs, cfg.population_seed, BaseKind::kGaussian, weights);

  // Fixed point of the Gaussian barycenter map.
  std::vector<GaussianMeasure<double>> members;
  std::vector<SpdMatrix<double>> covs;
  for (const auto& m : spec.members) {
    covs.push_back(symmetrize(Eigen::MatrixXd(m.scatter * m.scatter.transpose())));
    members.push_back({m.shift, covs.back()});
  }
  const auto bary = gaussian_barycenter(covs, weights);
  const auto next = barycenter_update(bary.cov, covs, weights);
  add("fixed_point_residual", (next - bary.cov).norm() / bary.cov.norm(), 1e-12);

  const GaussianMeasure<double> truth = gaussian_barycenter(members, weights);
  Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(d, d);
  std::vector<BatchMap> maps;
  for (std::size_t n = 0; n < members.size(); ++n) {
    const auto t = gaussian_ot_map(truth, members[n]);
    mix += weights[n] * t.matrix;
    maps.push_back([t](const Eigen::MatrixXd& x) { return t(x); });
  }
  add("map_congruence", (mix - Eigen::MatrixXd::Identity(d, d)).norm(), 1e-8);

  // One dimension: the barycenter standard deviation is the weighted mean.
  {
    Rng rng = make_stream(cfg.seed, "one_dim");
    std::uniform_real_distribution<double> u(0.5, 2.0);
    std::vector<SpdMatrix<double>> vars;
    double expected = 0.0;
    for (double w : weights) {
      const double s = u(rng);
      vars.push_back(SpdMatrix<double>::Constant(1, 1, s * s));
      expected += w * s;
    }
    const auto b = gaussian_barycenter(vars, weights);
    add("one_dim_barycenter", std::abs(std::sqrt(b.cov(0, 0)) - expected), 1e-12);
  }

  // Generator gradient: regression route versus per-measure route.
  {
    const auto hidden = cfg.win.hidden.empty() ? default_hidden(d) : cfg.win.hidden;
    const Mlp generator = he_init(make_layers(d, hidden, d), make_stream(cfg.seed, "lemma_generator")());
    Rng rng = make_stream(cfg.seed, "lemma_batch");
    const Eigen::MatrixXd z = standard_normal(rng, 256, d);
    // Exact maps from the Gaussian fit of G # S; maps out of the barycenter
    // itself would average to the identity and zero both gradients.
    const auto fitted = empirical_moments(generated_sampler(generator, base_sampler(BaseKind::kGaussian, d)), 20000,
                                          make_stream(cfg.seed, "lemma_moments")());
    std::vector<BatchMap> gen_maps;
    for (const auto& m : members) {
      const auto t = gaussian_ot_map(fitted, m);
      gen_maps.push_back([t](const Eigen::MatrixXd& x) { return t(x); });
    }
    const auto cmp = gradient_identity_check(generator, gen_maps, weights, z);
    add("generator_gradient_identity", cmp.relative_difference, 1e-6);

    // A zero-weight extra measure changes neither gradient.
    auto padded_maps = gen_maps;
    auto padded_weights = weights;
    padded_maps.push_back([](const Eigen::MatrixXd& x) { return Eigen::MatrixXd(2.0 * x); });
    padded_weights.push_back(0.0);
    const auto padded = gradient_identity_check(generator, padded_maps, padded_weights, z);
    add("zero_weight_invariance",
        (padded.regression_grad - cmp.regression_grad).norm() / std::max(cmp.regression_grad.norm(), 1e-300), 1e-12);
  }

  // Congruent potentials.
  {
    Rng rng = make_stream(cfg.seed, "congruent_checks");
    const Eigen::MatrixXd points = 2.0 * standard_normal(rng, cfg.check_points, d);
    const auto quad = three_way_system(SmoothConvexFunction::quadratic(random_spd<double>(d, cfg.condition, rng)),
                                       SmoothConvexFunction::quadratic(random_spd<double>(d, cfg.condition, rng)));
    add("quadratic_congruence", verify_congruence(quad, points), 1e-12);
    const auto lse = three_way_system(
        SmoothConvexFunction::random_log_sum_exp(d, rng, cfg.lse_lambda, cfg.lse_epsilon, cfg.lse_planes),
        SmoothConvexFunction::random_log_sum_exp(d, rng, cfg.lse_lambda, cfg.lse_epsilon, cfg.lse_planes));
    add("log_sum_exp_congruence", verify_congruence(lse, points), 1e-6);

    const auto ref = quad.alphas();
    add("reference_alphas",
        std::max({std::abs(ref[0] - 0.25), std::abs(ref[1] - 0.5), std::abs(ref[2] - 0.25)}), 1e-12);

    double worst = 0.0;
    std::uniform_int_distribution<int> n_dist(2, 6), m_dist(1, 4);
    for (int draw = 0; draw < 100; ++draw) {
      std::vector<SmoothConvexFunction> bases;
      const int m = m_dist(rng);
      for (int k = 0; k < m; ++k) bases.push_back(SmoothConvexFunction::quadratic(SpdMatrix<double>::Identity(1, 1)));
      const auto sys = random_system(std::move(bases), n_dist(rng), rng);
      const auto a = sys.alphas();
      worst = std::max(worst, std::abs(std::accumulate(a.begin(), a.end(), 0.0) - 1.0));
    }
    add("alpha_sum_identity", worst, 1e-12);
  }
  return checks;
}

std::vector<ReportRow> collect_report(const std::filesystem::path& dir) {
  std::vector<ReportRow> rows;
  for (const auto& run : find_runs(dir)) {
    const auto manifest = read_json(run / "manifest.json");
    const auto& results = manifest.at("results");
    const std::string kind = manifest.at("kind").get<std::string>();
    const auto dim = manifest.at("dim").get<Eigen::Index>();
    const std::string name = run.filename().string();
    if (std::filesystem::exists(run / "metrics.csv") || results.contains("final_proxy_objective")) {
      const auto metrics = read_metrics(run / "metrics.csv");
      if (metrics.empty()) throw IoError("metrics.csv in '" + run.string() + "' has no rows");
      rows.push_back({name, kind, dim, "WIN", metrics.back().uvp, results.value("generator_steps", 0LL),
                      number_or_nan(results, "training_wall_seconds")});
    }
    if (results.contains("baseline_uvp"))
      rows.push_back({name, kind, dim, "constant-shift", number_or_nan(results, "baseline_uvp"), 0,
                      number_or_nan(results, "baseline_wall_seconds")});
    if (results.contains("checks_passed")) {
      const bool ok = results.at("checks_passed").get<bool>();
      rows.push_back({name, kind, dim, ok ? "checks: all passed" : "checks: FAILED", kNaN, 0,
                      number_or_nan(results, "wall_seconds")});
    }
    if (results.contains("inverse_map_errors")) {
      const auto errors = results.at("inverse_map_errors").get<std::vector<double>>();
      std::ostringstream label;
      label << "inverse maps (max err " << std::setprecision(3)
            << (errors.empty() ? 0.0 : *std::max_element(errors.begin(), errors.end())) << ")";
      rows.push_back({name, kind, dim, label.str(), kNaN, 0, kNaN});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.dim != b.dim) return a.dim < b.dim;
    return a.run < b.run;
  });
  return rows;
}

void print_report(std::ostream& out, const std::vector<ReportRow>& rows) {
  std::size_t run_w = 3, kind_w = 4, method_w = 6;
  for (const auto& r : rows) {
    run_w = std::max(run_w, r.run.size());
    kind_w = std::max(kind_w, r.kind.size());
    method_w = std::max(method_w, r.method.size());
  }
  out << std::left << std::setw(static_cast<int>(run_w) + 2) << "run" << std::setw(static_cast<int>(kind_w) + 2)
      << "kind" << std::right << std::setw(5) << "dim" << "  " << std::left << std::setw(static_cast<int>(method_w) + 2)
      << "method" << std::right << std::setw(12) << "UVP(%)" << std::setw(12) << "iterations" << std::setw(12)
      << "wall(s)" << "\n";
  for (const auto& r : rows) {
    std::ostringstream uvp, wall;
    if (std::isfinite(r.final_uvp))
      uvp << std::fixed << std::setprecision(r.final_uvp < 1.0 ? 4 : 2) << r.final_uvp;
    else
      uvp << "-";
    if (std::isfinite(r.wall_seconds))
      wall << std::fixed << std::setprecision(1) << r.wall_seconds;
    else
      wall << "-";
    out << std::left << std::setw(static_cast<int>(run_w) + 2) << r.run << std::setw(static_cast<int>(kind_w) + 2)
        << r.kind << std::right << std::setw(5) << r.dim << "  " << std::left
        << std::setw(static_cast<int>(method_w) + 2) << r.method << std::right << std::setw(12) << uvp.str()
        << std::setw(12) << r.iterations << std::setw(12) << wall.str() << "\n";
  }
}

std::vector<CheckResult> verify_run(const std::filesystem::path& dir, std::ostream& log) {
  std::vector<CheckResult> checks;
  auto add = [&](std::string name, double value, double tol, bool passed) {
    log << (passed ? "ok     " : "FAILED ") << name << "  value " << value << "  tol " << tol << std::endl;
    checks.push_back({std::move(name), value, tol, passed});
  };
  const auto manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", std::string()) != "w2bary-manifest")
    throw IoError("'" + (dir / "manifest.json").string() + "' is not a w2bary manifest");

  std::istringstream config_text(manifest.at("config").get<std::string>());
  const ExperimentConfig cfg = parse_config(config_text);
  add("config_parses", 0.0, 0.0, true);

  double missing = 0;
  for (const auto& f : manifest.at("artifacts"))
    if (!std::filesystem::exists(dir / f.get<std::string>())) {
      log << "missing artifact " << f.get<std::string>() << std::endl;
      ++missing;
    }
  add("artifacts_present", missing, 0.0, missing == 0);

  std::map<std::string, Mlp> nets;
  double bad_nets = 0;
  for (const auto& entry : manifest.at("networks")) {
    const auto file = entry.at("file").get<std::string>();
    try {
      Mlp net = load_checkpoint((dir / file).string());
      if (net.layer_sizes() != entry.at("layers").get<std::vector<Eigen::Index>>() ||
          net.parameter_count() != entry.at("parameters").get<Eigen::Index>() ||
          !net.parameters().allFinite()) {
        log << "checkpoint " << file << " does not match its manifest entry" << std::endl;
        ++bad_nets;
      }
      nets.emplace(file, std::move(net));
    } catch (const IoError& e) {
      log << e.what() << std::endl;
      ++bad_nets;
    }
  }
  add("checkpoints_load", bad_nets, 0.0, bad_nets == 0);

  const auto weights = manifest.at("weights").get<std::vector<double>>();
  if (!weights.empty()) {
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    const bool positive = std::all_of(weights.begin(), weights.end(), [](double w) { return w > 0.0; });
    add("weights_simplex", std::abs(sum - 1.0), 1e-12, positive && std::abs(sum - 1.0) <= 1e-12);
  }

  const auto& results = manifest.at("results");
  const bool bench = cfg.kind == ExperimentKind::kGaussianBench || cfg.kind == ExperimentKind::kUniformBench ||
                     cfg.kind == ExperimentKind::kInverseMaps;
  if (bench && manifest.contains("truth")) {
    const auto base = cfg.kind == ExperimentKind::kUniformBench ? BaseKind::kUniform
                      : cfg.kind == ExperimentKind::kGaussianBench ? BaseKind::kGaussian
                                                                   : cfg.base;
    const auto spec = make_scatter_population(cfg.dim, cfg.inputs, cfg.population_seed, base, cfg.resolved_weights());
    const auto truth = location_scatter_truth(spec);
    const auto stored = gaussian_from(manifest.at("truth"));
    const double err = (truth.cov - stored.cov).norm() + (truth.mean - stored.mean).norm();
    add("truth_reproduces", err, 1e-10, err < 1e-10);
  }

  if (std::filesystem::exists(dir / "metrics.csv")) {
    const auto metrics = read_metrics(dir / "metrics.csv");
    const auto expected_rows = static_cast<double>(results.value("outer_iterations", -1) + 1);
    add("metrics_rows", static_cast<double>(metrics.size()), expected_rows,
        static_cast<double>(metrics.size()) == expected_rows);
    const double final_uvp = number_or_nan(results, "final_uvp");
    if (!metrics.empty() && std::isfinite(final_uvp)) {
      const double diff = std::abs(metrics.back().uvp - final_uvp);
      add("metrics_match_manifest", diff, 1e-9 * std::max(1.0, final_uvp), diff <= 1e-9 * std::max(1.0, final_uvp));
    }
    if (cfg.kind == ExperimentKind::kGaussianBench || cfg.kind == ExperimentKind::kUniformBench) {
      const double worst = worst_proxy_increase(metrics);
      add("proxy_descent", worst, 0.05, worst <= 0.05);
    }
    // Regenerate the final evaluation from the stored generator alone.
    const auto gen = nets.find("checkpoints/generator.mlp");
    if (gen != nets.end() && manifest.contains("truth") && std::isfinite(final_uvp)) {
      const Sampler latent = base_sampler(BaseKind::kGaussian, gen->second.input_dim());
      const auto moments = empirical_moments(generated_sampler(gen->second, latent), cfg.win.eval_samples,
                                             make_stream(cfg.seed, "eval")());
      const double uvp = bw2_uvp(moments, gaussian_from(manifest.at("truth")));
      const double diff = std::abs(uvp - final_uvp);
      add("generator_uvp_reproduces", diff, 1e-9 * std::max(1.0, final_uvp), diff <= 1e-9 * std::max(1.0, final_uvp));
    }
  }

  if (std::filesystem::exists(dir / "system.json")) {
    const auto sys = CongruentSystem::from_json(read_json(dir / "system.json"));
    const auto alphas = sys.alphas();
    double alpha_diff = alphas.size() == weights.size() ? 0.0 : 1.0;
    for (std::size_t n = 0; n < std::min(alphas.size(), weights.size()); ++n)
      alpha_diff = std::max(alpha_diff, std::abs(alphas[n] - weights[n]));
    add("system_weights_match", alpha_diff, 1e-15, alpha_diff <= 1e-15);
    Rng rng = make_stream(cfg.seed, "congruence_points");
    const Eigen::MatrixXd points = base_sampler(cfg.base, sys.dim()).sample(rng, cfg.check_points);
    const bool quadratic =
        std::all_of(sys.bases.begin(), sys.bases.end(), [](const auto& b) { return b.is_quadratic(); });
    const double tol = quadratic ? 1e-12 : 1e-6;
    const double residual = verify_congruence(sys, points);
    add("system_congruence", residual, tol, residual < tol);
  }

  if (std::filesystem::exists(dir / "checks.csv")) {
    std::ifstream in(dir / "checks.csv");
    const auto stored = read_checks_csv(in);
    double failed = 0;
    for (const auto& c : stored) failed += c.passed ? 0 : 1;
    add("stored_checks_passed", failed, 0.0, failed == 0);
    if (cfg.kind == ExperimentKind::kLemmaChecks) {
      const auto rerun = lemma_checks(cfg);
      double mismatch = rerun.size() == stored.size() ? 0.0 : 1.0;
      for (std::size_t i = 0; i < std::min(rerun.size(), stored.size()); ++i)
        if (rerun[i].passed != stored[i].passed) ++mismatch;
      add("checks_rerun_agree", mismatch, 0.0, mismatch == 0);
    }
  }
  return checks;
}

}  // namespace w2bary
