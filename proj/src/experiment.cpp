#include "w2bary/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "w2bary/errors.hpp"
#include "w2bary/svg.hpp"
#include "w2bary/version.hpp"

namespace w2bary {

namespace {

constexpr std::pair<ExperimentKind, std::string_view> kKindNames[] = {
    {ExperimentKind::kGaussianBench, "gaussian-bench"}, {ExperimentKind::kUniformBench, "uniform-bench"},
    {ExperimentKind::kToy2d, "toy2d"},                  {ExperimentKind::kCongruentDataset, "congruent-dataset"},
    {ExperimentKind::kWinTrain, "win-train"},           {ExperimentKind::kInverseMaps, "inverse-maps"},
    {ExperimentKind::kLemmaChecks, "lemma-checks"},
};

// ---------------------------------------------------------------------------
// Value parsing. Every error names the offending field.

[[noreturn]] void bad_field(const std::string& field, const std::string& text, const std::string& expected) {
  throw ValidationError("config field '" + field + "': expected " + expected + ", got '" + text + "'");
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long long parse_integer(const std::string& field, const std::string& text, long long min_value) {
  long long v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) bad_field(field, text, "an integer");
  if (v < min_value) bad_field(field, text, "an integer >= " + std::to_string(min_value));
  return v;
}

std::uint64_t parse_unsigned(const std::string& field, const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) bad_field(field, text, "a non-negative integer");
  return v;
}

// Accepts plain decimals and fractions such as 1/3.
double parse_real(const std::string& field, const std::string& text) {
  auto number = [&](const std::string& t) {
    double v = 0.0;
    const auto* end = t.data() + t.size();
    const auto [ptr, ec] = std::from_chars(t.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) bad_field(field, text, "a finite number");
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string::npos) return number(text);
  const double den = number(trim(text.substr(slash + 1)));
  if (den == 0.0) bad_field(field, text, "a non-zero denominator");
  return number(trim(text.substr(0, slash))) / den;
}

double parse_positive(const std::string& field, const std::string& text) {
  const double v = parse_real(field, text);
  if (!(v > 0.0)) bad_field(field, text, "a positive number");
  return v;
}

bool parse_bool(const std::string& field, const std::string& text) {
  if (text == "true" || text == "yes" || text == "1" || text == "on") return true;
  if (text == "false" || text == "no" || text == "0" || text == "off") return false;
  bad_field(field, text, "true or false");
}

// Shortest text that reads back to the same double.
std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += fmt(items[i]);
  }
  return out;
}

std::vector<Eigen::Index> parse_sizes(const std::string& field, const std::string& text) {
  std::vector<Eigen::Index> out;
  for (const auto& item : split_list(text)) out.push_back(static_cast<Eigen::Index>(parse_integer(field, item, 1)));
  return out;
}

std::string format_sizes(const std::vector<Eigen::Index>& sizes) {
  return join(sizes, [](Eigen::Index v) { return std::to_string(v); });
}

// ---------------------------------------------------------------------------
// Key table: one entry per accepted "section.key".

struct KeySpec {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<KeySpec>& key_table() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<KeySpec> table = {
      {"experiment.kind", [](C& c, S v) { c.kind = parse_experiment_kind(v); },
       [](const C& c) { return std::string(to_string(c.kind)); }},
      {"experiment.dim", [](C& c, S v) { c.dim = parse_integer("experiment.dim", v, 1); },
       [](const C& c) { return std::to_string(c.dim); }},
      {"experiment.inputs", [](C& c, S v) { c.inputs = parse_integer("experiment.inputs", v, 1); },
       [](const C& c) { return std::to_string(c.inputs); }},
      {"experiment.weights",
       [](C& c, S v) {
         c.weights.clear();
         for (const auto& item : split_list(v)) c.weights.push_back(parse_real("experiment.weights", item));
       },
       [](const C& c) { return join(c.weights, format_real); }},
      {"experiment.seed", [](C& c, S v) { c.seed = parse_unsigned("experiment.seed", v); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"experiment.population_seed",
       [](C& c, S v) { c.population_seed = parse_unsigned("experiment.population_seed", v); },
       [](const C& c) { return std::to_string(c.population_seed); }},
      {"experiment.output", [](C& c, S v) { c.output_dir = v; },
       [](const C& c) { return c.output_dir.string(); }},
      {"experiment.threads",
       [](C& c, S v) { c.win.threads = static_cast<int>(parse_integer("experiment.threads", v, 1)); },
       [](const C& c) { return std::to_string(c.win.threads); }},

      {"network.hidden", [](C& c, S v) { c.win.hidden = parse_sizes("network.hidden", v); },
       [](const C& c) { return format_sizes(c.win.hidden); }},
      {"network.latent_dim",
       [](C& c, S v) { c.win.latent_dim = parse_integer("network.latent_dim", v, 0); },
       [](const C& c) { return std::to_string(c.win.latent_dim); }},

      {"generator.steps",
       [](C& c, S v) { c.win.generator_steps = static_cast<int>(parse_integer("generator.steps", v, 0)); },
       [](const C& c) { return std::to_string(c.win.generator_steps); }},
      {"generator.batch", [](C& c, S v) { c.win.batch_size = parse_integer("generator.batch", v, 1); },
       [](const C& c) { return std::to_string(c.win.batch_size); }},
      {"generator.lr", [](C& c, S v) { c.win.generator_lr.initial_lr = parse_positive("generator.lr", v); },
       [](const C& c) { return format_real(c.win.generator_lr.initial_lr); }},
      {"generator.lr_decay_every",
       [](C& c, S v) { c.win.generator_lr.decay_every = parse_integer("generator.lr_decay_every", v, 1); },
       [](const C& c) { return std::to_string(c.win.generator_lr.decay_every); }},
      {"generator.lr_decay_factor",
       [](C& c, S v) { c.win.generator_lr.decay_factor = parse_positive("generator.lr_decay_factor", v); },
       [](const C& c) { return format_real(c.win.generator_lr.decay_factor); }},

      {"solver.potential_steps",
       [](C& c, S v) {
         c.win.solver.potential_steps = static_cast<int>(parse_integer("solver.potential_steps", v, 1));
       },
       [](const C& c) { return std::to_string(c.win.solver.potential_steps); }},
      {"solver.map_steps",
       [](C& c, S v) { c.win.solver.map_steps = static_cast<int>(parse_integer("solver.map_steps", v, 1)); },
       [](const C& c) { return std::to_string(c.win.solver.map_steps); }},
      {"solver.batch", [](C& c, S v) { c.win.solver.batch_size = parse_integer("solver.batch", v, 1); },
       [](const C& c) { return std::to_string(c.win.solver.batch_size); }},
      {"solver.potential_lr",
       [](C& c, S v) { c.win.solver.potential_lr.initial_lr = parse_positive("solver.potential_lr", v); },
       [](const C& c) { return format_real(c.win.solver.potential_lr.initial_lr); }},
      {"solver.map_lr", [](C& c, S v) { c.win.solver.map_lr.initial_lr = parse_positive("solver.map_lr", v); },
       [](const C& c) { return format_real(c.win.solver.map_lr.initial_lr); }},
      {"solver.potential_lr_decay_every",
       [](C& c, S v) {
         c.win.solver.potential_lr.decay_every = parse_integer("solver.potential_lr_decay_every", v, 1);
       },
       [](const C& c) { return std::to_string(c.win.solver.potential_lr.decay_every); }},
      {"solver.map_lr_decay_every",
       [](C& c, S v) { c.win.solver.map_lr.decay_every = parse_integer("solver.map_lr_decay_every", v, 1); },
       [](const C& c) { return std::to_string(c.win.solver.map_lr.decay_every); }},
      {"solver.lr_decay_factor",
       [](C& c, S v) {
         const double f = parse_positive("solver.lr_decay_factor", v);
         c.win.solver.potential_lr.decay_factor = c.win.solver.map_lr.decay_factor = f;
       },
       [](const C& c) { return format_real(c.win.solver.potential_lr.decay_factor); }},
      {"solver.reset_optimizers",
       [](C& c, S v) { c.win.reset_solver_optimizers = parse_bool("solver.reset_optimizers", v); },
       [](const C& c) { return std::string(c.win.reset_solver_optimizers ? "true" : "false"); }},

      {"training.outer_iterations",
       [](C& c, S v) {
         c.win.outer_iterations = static_cast<int>(parse_integer("training.outer_iterations", v, 0));
       },
       [](const C& c) { return std::to_string(c.win.outer_iterations); }},
      {"training.eval_samples",
       [](C& c, S v) { c.win.eval_samples = parse_integer("training.eval_samples", v, 2); },
       [](const C& c) { return std::to_string(c.win.eval_samples); }},

      {"data.base", [](C& c, S v) { c.base = parse_base_kind(v); },
       [](const C& c) { return std::string(to_string(c.base)); }},
      {"data.shapes",
       [](C& c, S v) {
         c.shapes.clear();
         for (const auto& item : split_list(v)) c.shapes.push_back(parse_toy_shape(item));
       },
       [](const C& c) {
         return join(c.shapes, [](Toy2dShape s) {
           return std::string(s == Toy2dShape::kRectangle ? "rectangle" : "swiss_roll");
         });
       }},
      {"data.family", [](C& c, S v) { c.family = parse_convex_family(v); },
       [](const C& c) { return std::string(to_string(c.family)); }},
      {"data.components", [](C& c, S v) { c.components = parse_integer("data.components", v, 1); },
       [](const C& c) { return std::to_string(c.components); }},
      {"data.lambda", [](C& c, S v) { c.lse_lambda = parse_positive("data.lambda", v); },
       [](const C& c) { return format_real(c.lse_lambda); }},
      {"data.epsilon",
       [](C& c, S v) {
         c.lse_epsilon = parse_real("data.epsilon", v);
         if (c.lse_epsilon < 0.0) bad_field("data.epsilon", v, "a non-negative number");
       },
       [](const C& c) { return format_real(c.lse_epsilon); }},
      {"data.planes", [](C& c, S v) { c.lse_planes = static_cast<int>(parse_integer("data.planes", v, 1)); },
       [](const C& c) { return std::to_string(c.lse_planes); }},
      {"data.condition",
       [](C& c, S v) {
         c.condition = parse_real("data.condition", v);
         if (!(c.condition >= 1.0)) bad_field("data.condition", v, "a number >= 1");
       },
       [](const C& c) { return format_real(c.condition); }},
      {"data.system", [](C& c, S v) { c.system_file = v; }, [](const C& c) { return c.system_file.string(); }},

      {"inverse.iterations",
       [](C& c, S v) { c.inverse.iterations = static_cast<int>(parse_integer("inverse.iterations", v, 1)); },
       [](const C& c) { return std::to_string(c.inverse.iterations); }},
      {"inverse.potential_lr_decay_every",
       [](C& c, S v) {
         c.inverse.solver.potential_lr.decay_every = parse_integer("inverse.potential_lr_decay_every", v, 1);
       },
       [](const C& c) { return std::to_string(c.inverse.solver.potential_lr.decay_every); }},
      {"inverse.map_lr_decay_every",
       [](C& c, S v) { c.inverse.solver.map_lr.decay_every = parse_integer("inverse.map_lr_decay_every", v, 1); },
       [](const C& c) { return std::to_string(c.inverse.solver.map_lr.decay_every); }},
      {"inverse.generator", [](C& c, S v) { c.generator_checkpoint = v; },
       [](const C& c) { return c.generator_checkpoint.string(); }},

      {"output.samples", [](C& c, S v) { c.sample_count = parse_integer("output.samples", v, 0); },
       [](const C& c) { return std::to_string(c.sample_count); }},
      {"output.check_points", [](C& c, S v) { c.check_points = parse_integer("output.check_points", v, 1); },
       [](const C& c) { return std::to_string(c.check_points); }},
      {"output.baseline_samples",
       [](C& c, S v) { c.baseline_samples = parse_integer("output.baseline_samples", v, 2); },
       [](const C& c) { return std::to_string(c.baseline_samples); }},
  };
  return table;
}

// ---------------------------------------------------------------------------
// Filesystem helpers.

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
  std::ostringstream os;
  writer(os);
  write_text(path, os.str());
}

void make_dirs(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

// Re-tags numerical failures with the phase they happened in.
template <typename F>
auto in_phase(const std::string& phase, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError("phase '" + phase + "': " + e.what());
  }
}

nlohmann::json to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json to_json(const GaussianMeasure<double>& g) {
  return {{"mean", std::vector<double>(g.mean.data(), g.mean.data() + g.mean.size())}, {"cov", to_json(g.cov)}};
}

// ---------------------------------------------------------------------------
// Artifact bundles shared by the run kinds.

struct Artifacts {
  std::filesystem::path dir;
  std::vector<std::string> files;

  std::filesystem::path add(const std::string& relative) {
    files.push_back(relative);
    const auto path = dir / relative;
    make_dirs(path.parent_path());
    return path;
  }
};

nlohmann::json network_entry(const std::string& file, const Mlp& net) {
  return {{"file", file}, {"layers", net.layer_sizes()}, {"parameters", net.parameter_count()}};
}

void save_net(Artifacts& art, nlohmann::json& networks, const std::string& file, const Mlp& net) {
  save_checkpoint(art.add(file).string(), net);
  networks.push_back(network_entry(file, net));
}

void save_state(Artifacts& art, nlohmann::json& networks, const WinState& state) {
  save_net(art, networks, "checkpoints/generator.mlp", state.generator.net);
  for (std::size_t n = 0; n < state.pairs.size(); ++n) {
    save_net(art, networks, "checkpoints/map_" + std::to_string(n) + ".mlp", state.pairs[n].map.net);
    save_net(art, networks, "checkpoints/potential_" + std::to_string(n) + ".mlp", state.pairs[n].potential.net);
  }
}

struct SampleSet {
  std::vector<Eigen::MatrixXd> inputs;
  Eigen::MatrixXd generated;
  std::vector<Eigen::MatrixXd> mapped;  // T_n(G(z)) on the generated samples
};

SampleSet draw_samples(const ExperimentConfig& cfg, const std::vector<Sampler>& inputs, const WinState* state) {
  SampleSet s;
  if (cfg.sample_count == 0) return s;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    Rng rng = make_stream(cfg.seed, "samples", n);
    s.inputs.push_back(inputs[n].sample(rng, cfg.sample_count));
  }
  if (state) {
    Rng rng = make_stream(cfg.seed, "samples_generated");
    s.generated = state->generator.net(state->latent.sample(rng, cfg.sample_count));
    for (const auto& pair : state->pairs) s.mapped.push_back(pair.map.net(s.generated));
  }
  return s;
}

void write_sample_files(Artifacts& art, const SampleSet& s) {
  for (std::size_t n = 0; n < s.inputs.size(); ++n)
    write_samples_csv(art.add("samples/input_" + std::to_string(n) + ".csv").string(), s.inputs[n]);
  if (s.generated.size()) write_samples_csv(art.add("samples/generated.csv").string(), s.generated);
  for (std::size_t n = 0; n < s.mapped.size(); ++n)
    write_samples_csv(art.add("samples/mapped_" + std::to_string(n) + ".csv").string(), s.mapped[n]);
}

void write_plot(Artifacts& art, const SampleSet& s, const std::string& generated_title) {
  if (s.inputs.empty() || s.inputs.front().cols() != 2) return;
  std::vector<ScatterPanel> panels;
  ScatterPanel in{"input measures", {}};
  for (std::size_t n = 0; n < s.inputs.size(); ++n)
    in.series.push_back({"P" + std::to_string(n + 1), palette_color(n), s.inputs[n]});
  panels.push_back(in);
  if (s.generated.size()) panels.push_back({generated_title, {{"G(z)", "#000000", s.generated}}});
  if (!s.mapped.empty()) {
    ScatterPanel mapped{"mapped T_n(G(z))", {}};
    for (std::size_t n = 0; n < s.mapped.size(); ++n)
      mapped.series.push_back({"T" + std::to_string(n + 1), palette_color(n), s.mapped[n]});
    panels.push_back(mapped);
  }
  write_text(art.add("plot.svg"), render_scatter_svg(panels));
}

void write_training_outputs(Artifacts& art, nlohmann::json& manifest, const TrainResult& result) {
  write_file(art.add("metrics.csv"), [&](std::ostream& os) { write_timeline_csv(os, result.timeline); });
  for (std::size_t n = 0; n < result.solver_traces.size(); ++n)
    write_file(art.add("traces/solver_" + std::to_string(n) + ".csv"),
               [&](std::ostream& os) { write_loss_trace_csv(os, result.solver_traces[n]); });
  write_file(art.add("traces/generator.csv"), [&](std::ostream& os) {
    os << "# w2bary generator-trace v1\nstep,loss_G\n";
    os.precision(12);
    for (std::size_t i = 0; i < result.generator_losses.size(); ++i)
      os << i << "," << result.generator_losses[i] << "\n";
  });
  save_state(art, manifest["networks"], result.state);
  const auto& last = result.timeline.back();
  auto& r = manifest["results"];
  r["final_uvp"] = std::isfinite(last.uvp) ? nlohmann::json(last.uvp) : nlohmann::json();
  r["final_proxy_objective"] = last.proxy_objective;
  r["outer_iterations"] = result.state.outer_iteration;
  r["generated_moments"] = to_json(result.generated_moments);
  r["training_wall_seconds"] = last.wall_seconds;
}

TrainResult train_logged(const ExperimentConfig& cfg, const std::vector<Sampler>& inputs,
                         const std::vector<double>& weights, const std::optional<GaussianMeasure<double>>& truth,
                         std::ostream& log) {
  return in_phase("training", [&] {
    return train(inputs, weights, cfg.win, cfg.seed, truth, [&](const TimelineRow& row) {
      log << "outer " << row.outer_iter << "  proxy " << row.proxy_objective;
      if (std::isfinite(row.uvp)) log << "  uvp " << row.uvp << "%";
      if (std::isfinite(row.loss_g_mean)) log << "  loss_G " << row.loss_g_mean;
      log << "  t " << row.wall_seconds << "s" << std::endl;
    });
  });
}

GaussianMeasure<double> member_moments(const ScatterMember& m) {
  return {m.shift, symmetrize(Eigen::MatrixXd(m.scatter * m.scatter.transpose()))};
}

LocationScatterSpec scatter_spec(const ExperimentConfig& cfg, BaseKind base) {
  return make_scatter_population(cfg.dim, cfg.inputs, cfg.population_seed, base, cfg.resolved_weights());
}

BaseKind bench_base(const ExperimentConfig& cfg) {
  if (cfg.kind == ExperimentKind::kGaussianBench) return BaseKind::kGaussian;
  if (cfg.kind == ExperimentKind::kUniformBench) return BaseKind::kUniform;
  return cfg.base;
}

// ---------------------------------------------------------------------------
// Run kinds.

void run_bench(const ExperimentConfig& cfg, Artifacts& art, nlohmann::json& manifest, std::ostream& log) {
  const auto spec = scatter_spec(cfg, bench_base(cfg));
  const auto inputs = population_samplers(spec);
  const auto truth = in_phase("ground truth", [&] { return location_scatter_truth(spec); });
  manifest["truth"] = to_json(truth);

  const auto cs_start = std::chrono::steady_clock::now();
  Rng cs_rng = make_stream(cfg.seed, "baseline");
  const auto cs = constant_shift_baseline(inputs, spec.weights, cfg.baseline_samples, cs_rng, truth);
  const double cs_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - cs_start).count();
  log << "constant-shift baseline uvp " << *cs.uvp << "%" << std::endl;
  manifest["results"]["baseline_uvp"] = *cs.uvp;
  manifest["results"]["baseline_wall_seconds"] = cs_seconds;

  const auto result = train_logged(cfg, inputs, spec.weights, truth, log);
  write_training_outputs(art, manifest, result);
  const auto samples = draw_samples(cfg, inputs, &result.state);
  write_sample_files(art, samples);
  write_plot(art, samples, "generated barycenter");
}

void run_toy2d(const ExperimentConfig& cfg, Artifacts& art, nlohmann::json& manifest, std::ostream& log) {
  std::vector<Sampler> inputs;
  for (auto shape : cfg.shapes) inputs.push_back(toy2d_sampler(shape));
  const auto result = train_logged(cfg, inputs, cfg.resolved_weights(), std::nullopt, log);
  write_training_outputs(art, manifest, result);
  const auto samples = draw_samples(cfg, inputs, &result.state);
  write_sample_files(art, samples);
  write_plot(art, samples, "generated barycenter");
}

std::vector<CheckResult> congruent_checks(const ExperimentConfig& cfg, const CongruentSystem& sys) {
  std::vector<CheckResult> checks;
  const auto alphas = sys.alphas();
  const double alpha_sum = std::accumulate(alphas.begin(), alphas.end(), 0.0);
  checks.push_back({"alpha_sum", std::abs(alpha_sum - 1.0), 1e-12, std::abs(alpha_sum - 1.0) <= 1e-12});

  Rng rng = make_stream(cfg.seed, "congruence_points");
  const Eigen::MatrixXd points = base_sampler(cfg.base, sys.dim()).sample(rng, cfg.check_points);
  const double residual = in_phase("congruence check", [&] { return verify_congruence(sys, points); });
  bool quadratic = std::all_of(sys.bases.begin(), sys.bases.end(), [](const auto& b) { return b.is_quadratic(); });
  const double tol = quadratic ? 1e-12 : 1e-6;
  checks.push_back({"congruence_residual", residual, tol, residual < tol});

  if (quadratic) {
    // Closed loop: the inputs A_n P have covariances A_n A_n (the base is
    // standardized), whose Gaussian barycenter must be the identity.
    const auto maps = system_linear_maps(sys);
    const Eigen::Index d = sys.dim();
    Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(d, d);
    std::vector<SpdMatrix<double>> covs;
    for (std::size_t n = 0; n < maps.size(); ++n) {
      mix += alphas[n] * maps[n];
      covs.push_back(symmetrize(Eigen::MatrixXd(maps[n] * maps[n])));
    }
    const double map_err = (mix - Eigen::MatrixXd::Identity(d, d)).norm();
    checks.push_back({"linear_map_congruence", map_err, 1e-8, map_err < 1e-8});
    const auto bary = in_phase("closed-loop barycenter", [&] { return gaussian_barycenter(covs, alphas); });
    const double cov_err = (bary.cov - Eigen::MatrixXd::Identity(d, d)).norm();
    checks.push_back({"closed_loop_covariance", cov_err, 1e-6, cov_err < 1e-6});
  }
  return checks;
}

void run_congruent_dataset(const ExperimentConfig& cfg, Artifacts& art, nlohmann::json& manifest, std::ostream& log) {
  const auto sys = build_congruent_system(cfg);
  write_text(art.add("system.json"), sys.to_json().dump(2) + "\n");
  manifest["weights"] = sys.alphas();
  const auto checks = congruent_checks(cfg, sys);
  for (const auto& c : checks) log << c.name << " " << c.value << (c.passed ? " ok" : " FAILED") << std::endl;
  write_file(art.add("checks.csv"), [&](std::ostream& os) { write_checks_csv(os, checks); });
  manifest["results"]["checks_passed"] =
      std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });

  const Sampler base = base_sampler(cfg.base, sys.dim());
  const auto data = make_known_barycenter_dataset(base, sys);
  auto samples = in_phase("sampling", [&] { return draw_samples(cfg, data.inputs, nullptr); });
  write_sample_files(art, samples);
  if (cfg.sample_count > 0) {
    Rng rng = make_stream(cfg.seed, "samples_base");
    samples.generated = base.sample(rng, cfg.sample_count);
    write_samples_csv(art.add("samples/barycenter.csv").string(), samples.generated);
  }
  write_plot(art, samples, "known barycenter");
}

void run_win_train(const ExperimentConfig& cfg, Artifacts& art, nlohmann::json& manifest, std::ostream& log) {
  const auto sys = build_congruent_system(cfg);
  write_text(art.add("system.json"), sys.to_json().dump(2) + "\n");
  const auto data = make_known_barycenter_dataset(base_sampler(cfg.base, sys.dim()), sys);
  // Both bases are standardized, and the base is the barycenter.
  const GaussianMeasure<double> truth{Eigen::VectorXd::Zero(sys.dim()),
                                      Eigen::MatrixXd::Identity(sys.dim(), sys.dim())};
  manifest["truth"] = to_json(truth);
  manifest["weights"] = data.weights;
  const auto result = train_logged(cfg, data.inputs, data.weights, truth, log);
  write_training_outputs(art, manifest, result);
  const auto samples = draw_samples(cfg, data.inputs, &result.state);
  write_sample_files(art, samples);
  write_plot(art, samples, "generated barycenter");
}

void run_inverse_maps(const ExperimentConfig& cfg, Artifacts& art, nlohmann::json& manifest, std::ostream& log) {
  const auto spec = scatter_spec(cfg, cfg.base);
  const auto inputs = population_samplers(spec);
  const auto truth = in_phase("ground truth", [&] { return location_scatter_truth(spec); });
  manifest["truth"] = to_json(truth);

  Mlp generator;
  if (!cfg.generator_checkpoint.empty()) {
    generator = load_checkpoint(cfg.generator_checkpoint.string());
    if (generator.output_dim() != cfg.dim)
      throw ValidationError("inverse.generator: checkpoint output dimension does not match experiment.dim");
  } else {
    const auto result = train_logged(cfg, inputs, spec.weights, truth, log);
    write_training_outputs(art, manifest, result);
    generator = result.state.generator.net;
  }
  const Sampler latent = base_sampler(BaseKind::kGaussian, generator.input_dim());

  InverseMapConfig inv = cfg.inverse;
  inv.hidden = cfg.win.hidden;
  std::vector<MmrPair> pairs;
  const auto traces = in_phase("inverse maps", [&] {
    return fit_inverse_maps(generator, latent, inputs, inv, pairs, make_stream(cfg.seed, "inverse")());
  });

  auto& networks = manifest["networks"];
  std::vector<double> errors;
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    save_net(art, networks, "checkpoints/inverse_map_" + std::to_string(n) + ".mlp", pairs[n].map.net);
    save_net(art, networks, "checkpoints/inverse_potential_" + std::to_string(n) + ".mlp", pairs[n].potential.net);
    write_file(art.add("traces/inverse_" + std::to_string(n) + ".csv"),
               [&](std::ostream& os) { write_loss_trace_csv(os, traces[n]); });
    // Between members of one location-scatter family the OT map is affine.
    const auto exact = gaussian_ot_map(member_moments(spec.members[n]), truth);
    Rng rng = make_stream(cfg.seed, "inverse_eval", n);
    errors.push_back(normalized_map_error(as_batch_map(pairs[n].map.net),
                                          [exact](const Eigen::MatrixXd& x) { return exact(x); }, inputs[n],
                                          cfg.win.eval_samples, rng));
    log << "inverse map " << n << " normalized error " << errors.back() << std::endl;
  }
  write_file(art.add("inverse_metrics.csv"), [&](std::ostream& os) {
    os << "# w2bary inverse-maps v1\ninput,normalized_map_error\n";
    os.precision(12);
    for (std::size_t n = 0; n < errors.size(); ++n) os << n << "," << errors[n] << "\n";
  });
  manifest["results"]["inverse_map_errors"] = errors;

  if (cfg.dim == 2 && cfg.sample_count > 0) {
    SampleSet s;
    s.inputs = draw_samples(cfg, inputs, nullptr).inputs;
    Rng rng = make_stream(cfg.seed, "samples_generated");
    s.generated = generator(latent.sample(rng, cfg.sample_count));
    // Here the maps run from each input to the barycenter.
    for (std::size_t n = 0; n < pairs.size(); ++n) s.mapped.push_back(pairs[n].map.net(s.inputs[n]));
    write_sample_files(art, s);
    write_plot(art, s, "generated barycenter");
  }
}

void run_lemma_checks(const ExperimentConfig& cfg, Artifacts& art, nlohmann::json& manifest, std::ostream& log) {
  const auto checks = lemma_checks(cfg);
  for (const auto& c : checks)
    log << c.name << " " << c.value << " (tol " << c.tolerance << ")" << (c.passed ? " ok" : " FAILED") << std::endl;
  write_file(art.add("checks.csv"), [&](std::ostream& os) { write_checks_csv(os, checks); });
  manifest["results"]["checks_passed"] =
      std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentKind parse_experiment_kind(std::string_view name) {
  for (const auto& [kind, text] : kKindNames)
    if (text == name) return kind;
  throw ValidationError("config field 'experiment.kind': unknown experiment kind '" + std::string(name) + "'");
}

std::string_view to_string(ExperimentKind kind) {
  for (const auto& [k, text] : kKindNames)
    if (k == kind) return text;
  return "unknown";
}

ConvexFamily parse_convex_family(std::string_view name) {
  if (name == "quadratic") return ConvexFamily::kQuadratic;
  if (name == "log_sum_exp") return ConvexFamily::kLogSumExp;
  throw ValidationError("config field 'data.family': unknown family '" + std::string(name) +
                        "' (expected quadratic|log_sum_exp)");
}

std::string_view to_string(ConvexFamily family) {
  return family == ConvexFamily::kQuadratic ? "quadratic" : "log_sum_exp";
}

bool ExperimentConfig::trains_generator() const {
  switch (kind) {
    case ExperimentKind::kGaussianBench:
    case ExperimentKind::kUniformBench:
    case ExperimentKind::kToy2d:
    case ExperimentKind::kWinTrain:
      return true;
    case ExperimentKind::kInverseMaps:
      return generator_checkpoint.empty();
    default:
      return false;
  }
}

std::vector<double> ExperimentConfig::resolved_weights() const {
  if (kind == ExperimentKind::kCongruentDataset || kind == ExperimentKind::kWinTrain) return {};
  if (!weights.empty()) return weights;
  return std::vector<double>(static_cast<std::size_t>(inputs), 1.0 / static_cast<double>(inputs));
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw ValidationError("config field '" + field + "': " + msg);
  };
  win.validate();
  if (output_dir.empty()) fail("experiment.output", "must not be empty");
  if (win.eval_samples <= dim) fail("training.eval_samples", "must exceed experiment.dim");

  const bool congruent = kind == ExperimentKind::kCongruentDataset || kind == ExperimentKind::kWinTrain;
  if (congruent) {
    if (!weights.empty()) fail("experiment.weights", "congruent kinds derive their weights from the system");
    if (system_file.empty() && inputs < 2) fail("experiment.inputs", "a congruent system needs N >= 2");
    if (!system_file.empty() && kind != ExperimentKind::kWinTrain)
      fail("data.system", "only win-train reads a stored system");
  } else {
    if (!weights.empty() && static_cast<Eigen::Index>(weights.size()) != inputs)
      fail("experiment.weights", "expected " + std::to_string(inputs) + " values, got " +
                                     std::to_string(weights.size()));
    const auto w = resolved_weights();
    double sum = 0.0;
    for (double v : w) {
      if (!(v > 0.0)) fail("experiment.weights", "every weight must be positive");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      std::ostringstream os;
      os.precision(17);
      os << "weights must sum to 1, got " << sum;
      fail("experiment.weights", os.str());
    }
  }

  switch (kind) {
    case ExperimentKind::kGaussianBench:
    case ExperimentKind::kUniformBench:
    case ExperimentKind::kInverseMaps:
      if (dim < 2) fail("experiment.dim", "the location-scatter population needs dim >= 2");
      break;
    case ExperimentKind::kToy2d:
      if (dim != 2) fail("experiment.dim", "toy2d is two-dimensional");
      if (static_cast<Eigen::Index>(shapes.size()) != inputs)
        fail("data.shapes", "expected one shape per input (" + std::to_string(inputs) + "), got " +
                                std::to_string(shapes.size()));
      break;
    case ExperimentKind::kLemmaChecks:
      if (dim < 2) fail("experiment.dim", "lemma-checks needs dim >= 2");
      break;
    default:
      break;
  }
  if (kind != ExperimentKind::kToy2d && !shapes.empty()) fail("data.shapes", "only toy2d uses shapes");
  if (kind == ExperimentKind::kInverseMaps && !generator_checkpoint.empty() &&
      !std::filesystem::exists(generator_checkpoint))
    fail("inverse.generator", "file '" + generator_checkpoint.string() + "' does not exist");
  if (!system_file.empty() && !std::filesystem::exists(system_file))
    fail("data.system", "file '" + system_file.string() + "' does not exist");
  if (kind != ExperimentKind::kInverseMaps && !generator_checkpoint.empty())
    fail("inverse.generator", "only inverse-maps reads a generator checkpoint");
}

ExperimentConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError(std::string("config syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  std::map<std::string, const KeySpec*> index;
  for (const auto& k : key_table()) index[k.name] = &k;

  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) throw ValidationError("config: key '" + section + "' outside of any section");
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      const auto it = index.find(name);
      if (it == index.end()) throw ValidationError("config: unknown key '" + name + "'");
      it->second->set(cfg, trim(value.data()));
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  return parse_config(in);
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream os;
  std::string current;
  for (const auto& k : key_table()) {
    const auto dot = k.name.find('.');
    const auto section = k.name.substr(0, dot);
    const auto value = k.get(cfg);
    if (value.empty()) continue;
    if (section != current) {
      os << (current.empty() ? "" : "\n") << "[" << section << "]\n";
      current = section;
    }
    os << k.name.substr(dot + 1) << " = " << value << "\n";
  }
  return os.str();
}

CongruentSystem build_congruent_system(const ExperimentConfig& cfg) {
  if (!cfg.system_file.empty()) {
    std::ifstream in(cfg.system_file);
    if (!in) throw IoError("cannot open system file '" + cfg.system_file.string() + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("system file '" + cfg.system_file.string() + "': " + e.what());
    }
    try {
      auto sys = CongruentSystem::from_json(j);
      if (sys.dim() != cfg.dim) throw ValidationError("data.system: system dimension does not match experiment.dim");
      return sys;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("system file '" + cfg.system_file.string() + "': " + e.what());
    }
  }
  Rng rng = make_stream(cfg.population_seed, "congruent_system", static_cast<std::uint64_t>(cfg.dim));
  std::vector<SmoothConvexFunction> bases;
  for (Eigen::Index m = 0; m < cfg.components; ++m) {
    if (cfg.family == ConvexFamily::kQuadratic)
      bases.push_back(SmoothConvexFunction::quadratic(random_spd<double>(cfg.dim, cfg.condition, rng)));
    else
      bases.push_back(
          SmoothConvexFunction::random_log_sum_exp(cfg.dim, rng, cfg.lse_lambda, cfg.lse_epsilon, cfg.lse_planes));
  }
  CongruentSystem sys = cfg.inputs == 3 && cfg.components == 2
                            ? three_way_system(std::move(bases[0]), std::move(bases[1]))
                            : random_system(std::move(bases), cfg.inputs, rng);
  sys.seed = cfg.population_seed;
  return sys;
}

RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Artifacts art{cfg.output_dir, {}};
  make_dirs(cfg.output_dir);

  nlohmann::json manifest;
  manifest["format"] = "w2bary-manifest";
  manifest["version"] = 1;
  manifest["kind"] = to_string(cfg.kind);
  manifest["dim"] = cfg.dim;
  manifest["seed"] = cfg.seed;
  manifest["population_seed"] = cfg.population_seed;
  manifest["threads"] = cfg.win.threads;
  manifest["weights"] = cfg.resolved_weights();
  manifest["config"] = to_ini(cfg);
  manifest["versions"] = {{"w2bary", kVersion},
                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                        "." + std::to_string(EIGEN_MINOR_VERSION)},
                          {"compiler", kCompiler}};
  manifest["networks"] = nlohmann::json::array();
  manifest["results"] = nlohmann::json::object();
  if (cfg.trains_generator())
    manifest["results"]["generator_steps"] =
        static_cast<long long>(cfg.win.outer_iterations) * cfg.win.generator_steps;
  write_text(art.add("config.ini"), to_ini(cfg));

  log << "w2bary " << to_string(cfg.kind) << " dim " << cfg.dim << " seed " << cfg.seed << " -> "
      << cfg.output_dir.string() << std::endl;
  switch (cfg.kind) {
    case ExperimentKind::kGaussianBench:
    case ExperimentKind::kUniformBench: run_bench(cfg, art, manifest, log); break;
    case ExperimentKind::kToy2d: run_toy2d(cfg, art, manifest, log); break;
    case ExperimentKind::kCongruentDataset: run_congruent_dataset(cfg, art, manifest, log); break;
    case ExperimentKind::kWinTrain: run_win_train(cfg, art, manifest, log); break;
    case ExperimentKind::kInverseMaps: run_inverse_maps(cfg, art, manifest, log); break;
    case ExperimentKind::kLemmaChecks: run_lemma_checks(cfg, art, manifest, log); break;
  }

  manifest["results"]["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  art.files.push_back("manifest.json");
  manifest["artifacts"] = art.files;
  write_text(cfg.output_dir / "manifest.json", manifest.dump(2) + "\n");

  RunOutcome out{cfg.output_dir, manifest, true};
  if (manifest["results"].contains("checks_passed")) out.checks_passed = manifest["results"]["checks_passed"];
  return out;
}

}  // namespace w2bary
