#pragma once

// The `pdegan` command line: spectrum, simulate, optimal-params, estimate,
// scan, correlate and report. Each run writes its outputs atomically next to
// a manifest.json; stdout carries the primary result.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdegan/io.hpp"
#include "pdegan/pdegan.hpp"

namespace pdegan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// Flag combinations CLI11 cannot express; exit code 2.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Options of a subcommand as strings; unset options echo their default.
inline json config_echo(const CLI::App &app) {
  json j = json::object();
  for (const auto *opt : app.get_options()) {
    const auto name = opt->get_single_name();
    if (name.empty() || name == "help")
      continue;
    const auto &res = opt->results();
    if (opt->count() > 0)
      j[name] = res.size() == 1 ? json(res[0]) : json(res);
    else
      j[name] = opt->get_default_str();
  }
  return j;
}

// Collects the inputs and outputs of one run; without a directory nothing is
// written.
class RunRecord {
public:
  RunRecord(std::string command, json config, std::uint64_t seed, std::optional<fs::path> dir)
      : command_(std::move(command)), config_(std::move(config)), seed_(seed),
        dir_(std::move(dir)) {}

  bool writes() const { return dir_.has_value(); }
  const fs::path &dir() const { return *dir_; }

  std::string read(const fs::path &path) {
    auto bytes = read_file(path);
    inputs_[path.string()] = sha256_hex(bytes);
    return bytes;
  }

  void write(const std::string &name, const std::string &bytes) {
    if (!dir_)
      return;
    atomic_write(*dir_ / name, bytes);
    outputs_.push_back(name);
  }

  void finish() {
    if (!dir_)
      return;
    json m = {{"command", command_},
              {"config", config_},
              {"seed", seed_},
              {"version", kVersion},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"timestamp", utc_timestamp()}};
    atomic_write(*dir_ / "manifest.json", m.dump(2) + "\n");
  }

private:
  std::string command_;
  json config_;
  std::uint64_t seed_;
  std::optional<fs::path> dir_;
  json inputs_ = json::object();
  std::vector<std::string> outputs_;
};

// Header-plus-rows CSV as written by this tool.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find(const std::string &name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name)
        return c;
    return std::nullopt;
  }

  std::size_t col(const std::string &name) const {
    if (auto c = find(name))
      return *c;
    fail("InvalidFile", "CSV has no column '" + name + "'");
  }

  // Empty cells read as NaN.
  std::vector<double> numbers(std::size_t c) const {
    std::vector<double> out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::string cell = c < rows[r].size() ? rows[r][c] : "";
      double v = kUnset;
      if (!cell.empty() && !detail::parse_double(cell, v))
        fail("InvalidFile", "CSV row " + std::to_string(r + 2) + ": bad number '" + cell + "'");
      out.push_back(v);
    }
    return out;
  }
};

// A first row that does not parse as numbers is the header.
inline Table parse_table(const std::string &text) {
  Table t;
  const auto ls = detail::lines(text);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    auto cells = detail::split_csv(ls[i]);
    if (i == 0) {
      double v;
      bool numeric = true;
      for (const auto &c : cells)
        numeric = numeric && detail::parse_double(c, v);
      if (!numeric) {
        t.header = std::move(cells);
        continue;
      }
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline std::string format_double(double v) {
  if (!std::isfinite(v))
    return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// --- density selection -----------------------------------------------------

struct DensityOptions {
  std::string density = "gaussian";
  double separation = 3.0;
  int dim = 1;
  std::size_t points = 0;
  double lo = kUnset, hi = kUnset;
};

inline void add_density_options(CLI::App *app, DensityOptions &o) {
  app->add_option("--density", o.density,
                  "target density: gaussian | mixture | path to a grid CSV (axis0,...,rho)");
  app->add_option("--separation", o.separation,
                  "mixture separation D between N(0,1) and N(D,1) (length units)");
  app->add_option("--dim", o.dim, "dimension of the gaussian density (1 or 2)")
      ->check(CLI::Range(1, 2));
  app->add_option("--points", o.points,
                  "grid points per axis (0: 2001 in 1D, 121 in 2D)");
  app->add_option("--lo", o.lo, "lower domain bound on every axis (length units)")
      ->default_str("auto");
  app->add_option("--hi", o.hi, "upper domain bound on every axis (length units)")
      ->default_str("auto");
}

inline GridDensity build_density(const DensityOptions &o, RunRecord &run) {
  if (o.density != "gaussian" && o.density != "mixture")
    return grid_from_csv(run.read(o.density));
  const bool gauss = o.density == "gaussian";
  if (!gauss && o.dim != 1)
    throw UsageError("the mixture density is one-dimensional");
  const std::size_t d = static_cast<std::size_t>(o.dim);
  double lo = gauss ? (d == 1 ? -10.0 : -8.0) : -8.0;
  double hi = gauss ? (d == 1 ? 10.0 : 8.0) : o.separation + 8.0;
  if (std::isfinite(o.lo))
    lo = o.lo;
  if (std::isfinite(o.hi))
    hi = o.hi;
  const std::size_t pts = o.points > 0 ? o.points : (d == 1 ? 2001 : 121);
  const std::vector<Interval> dom(d, Interval{lo, hi});
  const std::vector<std::size_t> shape(d, pts);
  if (gauss)
    return gaussian_density(std::vector<double>(d, 0.0), std::vector<double>(d, 1.0), dom, shape);
  return mixture_density(MixtureSpec::two_gaussians(o.separation), dom, shape);
}

inline EigenSolverKind parse_solver(const std::string &s) {
  if (s == "auto")
    return EigenSolverKind::automatic;
  if (s == "dense")
    return EigenSolverKind::dense;
  return EigenSolverKind::lanczos;
}

// --- estimator selection ---------------------------------------------------

struct EstimatorOptions {
  std::string kind = "graph";
  int k_neighbors = 64;
  double bandwidth = 0.0;
  std::string normalization = "random-walk";
  int centers = 64;
  double length_scale = 0.0;
  int batch = 1024;
  double step_size = 0.0;
  int iterations = 2000;
  double grid_bandwidth = 0.0;
};

inline void add_estimator_options(CLI::App *app, EstimatorOptions &o) {
  app->add_option("--estimator", o.kind, "Poincare estimator: graph | parametric | grid");
  app->add_option("--k-neighbors", o.k_neighbors, "graph: neighbours per sample");
  app->add_option("--bandwidth", o.bandwidth,
                  "graph: fixed kernel width (data units; 0 = self-tuning)");
  app->add_option("--normalization", o.normalization, "graph: random-walk | symmetric")
      ->check(CLI::IsMember({"random-walk", "symmetric"}));
  app->add_option("--centers", o.centers, "parametric: number of RBF centers");
  app->add_option("--length-scale", o.length_scale,
                  "parametric: RBF length scale (data units; 0 = median center distance)");
  app->add_option("--batch", o.batch, "parametric: minibatch size (samples)");
  app->add_option("--step-size", o.step_size, "parametric: SGD step size (0 = automatic)");
  app->add_option("--iterations", o.iterations, "parametric: SGD iterations");
  app->add_option("--grid-bandwidth", o.grid_bandwidth,
                  "grid: KDE bandwidth (data units; 0 = Silverman)");
}

inline EstimatorSpec resolve_estimator(const EstimatorOptions &o, std::uint64_t seed) {
  EstimatorSpec s;
  s.kind = parse_estimator_kind(o.kind);
  s.graph.k_neighbors = o.k_neighbors;
  s.graph.bandwidth = o.bandwidth;
  s.graph.normalization = o.normalization == "symmetric" ? GraphNormalization::symmetric
                                                         : GraphNormalization::random_walk;
  s.graph.seed = seed;
  s.parametric.n_centers = o.centers;
  s.parametric.length_scale = o.length_scale;
  s.parametric.batch_size = o.batch;
  s.parametric.step_size = o.step_size;
  s.parametric.iterations = o.iterations;
  s.parametric.seed = seed;
  s.grid_bandwidth = o.grid_bandwidth;
  return s;
}

// --- subcommands -----------------------------------------------------------

struct SpectrumOptions {
  DensityOptions density;
  int k = 6;
  std::string solver = "auto";
  int eigenfunctions = 0;
};

inline int run_spectrum(const SpectrumOptions &o, RunRecord &run, std::ostream &out) {
  const auto g = build_density(o.density, run);
  const auto op = assemble(g);
  const auto s = spectrum(op, o.k, parse_solver(o.solver));
  std::ostringstream csv;
  write_spectrum_csv(csv, s);
  out << csv.str();
  run.write("spectrum.csv", csv.str());
  run.write("summary.json", spectrum_summary(s).dump(2) + "\n");
  for (int i = 0; i < std::min<int>(o.eigenfunctions, static_cast<int>(s.count())); ++i) {
    std::ostringstream ef;
    write_eigenfunction_csv(ef, g, s.eigenfunctions.col(i));
    run.write("eigenfunction_" + std::to_string(i) + ".csv", ef.str());
  }
  return 0;
}

struct SimulateOptions {
  DensityOptions density;
  std::string scheme = "heun";
  double tau = 1e-3;
  long steps = 1000;
  long record_every = 10;
  double alpha = 0.0, beta = 1.0, gamma = 0.0;
  bool optimal = false;
  int modes = 4;
  std::uint64_t seed = 0;
  bool plot = false;
  std::string label;
};

inline int run_simulate(const SimulateOptions &o, RunRecord &run, std::ostream &out) {
  if (o.plot && !run.writes())
    throw UsageError("--plot needs --out");
  if (o.modes < 1)
    throw UsageError("--modes must be >= 1");
  const auto g = build_density(o.density, run);
  const auto op = assemble(g);
  const auto spec = spectrum(op, std::min<Eigen::Index>(o.modes + 1, op.size()));
  if (spec.count() < 2 || !(spec.xis[1] > kZeroModeThreshold))
    fail("DegenerateSpectrum", "no nonconstant mode above the zero-mode threshold");
  const double xi_min = spec.xis[1];

  LganCoefficients c{o.alpha, o.beta, o.gamma};
  if (o.optimal)
    c = optimal_parameters(o.beta, xi_min, o.alpha);
  c.validate();

  // Generic initial data in the span of the computed modes.
  std::mt19937_64 rng(derive_seed(o.seed, 1));
  std::normal_distribution<double> normal;
  const auto k = spec.count();
  Eigen::VectorXd a(k), b(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    a[i] = normal(rng);
    b[i] = i == 0 ? 0.0 : normal(rng);
  }
  const Eigen::VectorXd u0 = spec.eigenfunctions * a;
  const Eigen::VectorXd v0 = op.gradient(Eigen::VectorXd(spec.eigenfunctions * b));

  SimulationTrace tr;
  if (o.scheme == "analytic") {
    if (!(o.tau > 0.0) || o.steps < 1 || o.record_every < 1)
      throw UsageError("--tau, --steps and --record-every must be positive");
    const auto ex = project_initial_conditions(op, spec, u0, v0, c, static_cast<int>(k));
    std::vector<double> times;
    for (long s = 0; s <= o.steps; s += o.record_every)
      times.push_back(o.tau * static_cast<double>(s));
    if (o.steps % o.record_every != 0)
      times.push_back(o.tau * static_cast<double>(o.steps));
    tr = evolve_analytic(ex, times);
  } else {
    IntegratorConfig ic;
    ic.scheme = parse_scheme(o.scheme);
    ic.tau = o.tau;
    ic.steps = o.steps;
    ic.record_every = o.record_every;
    tr = evolve_numeric(op, u0, v0, c, ic);
  }

  std::ostringstream csv;
  csv << "t,u_norm,V_norm,mean_u\n";
  for (std::size_t i = 0; i < tr.times.size(); ++i)
    csv << format_double(tr.times[i]) << ',' << format_double(tr.u_norms[i]) << ','
        << format_double(tr.V_norms[i]) << ',' << format_double(tr.mean_u[i]) << '\n';
  const json summary = {{"measured_rate", std::isfinite(tr.measured_rate)
                                              ? json(tr.measured_rate)
                                              : json(nullptr)},
                        {"eta_predicted", max_real_part(c, xi_min)},
                        {"diverged", tr.diverged},
                        {"cfl_warning", tr.cfl_warning},
                        {"xi_min", xi_min},
                        {"alpha", c.alpha},
                        {"beta", c.beta},
                        {"gamma", c.gamma},
                        {"scheme", o.scheme}};
  out << summary.dump(2) << "\n";
  run.write("trace.csv", csv.str());
  run.write("summary.json", summary.dump(2) + "\n");
  if (o.plot) {
    PlotSeries s{o.label.empty() ? o.scheme : o.label, tr.times, tr.u_norms};
    PlotSeries v{"|V|", tr.times, tr.V_norms};
    run.write("trace.svg", svg_line_chart({s, v}, "convergence", "t", "norm", true));
  }
  return 0;
}

struct OptimalOptions {
  double beta = kUnset, xi_min = kUnset;
  std::optional<double> alpha;
};

// Samples xi over [xi_min, 1e6 xi_min] for complex roots.
inline bool oscillates_above(const LganCoefficients &c, double xi_min) {
  const int samples = 512;
  for (int i = 0; i <= samples; ++i) {
    const double xi = xi_min * std::pow(10.0, 6.0 * i / samples);
    if (mode_eigenvalues(c, xi).oscillatory)
      return true;
  }
  return false;
}

inline int run_optimal(const OptimalOptions &o, RunRecord &run, std::ostream &out) {
  const auto c = optimal_parameters(o.beta, o.xi_min, o.alpha);
  const json j = {{"alpha", c.alpha},
                  {"gamma", c.gamma},
                  {"eta", max_real_part(c, o.xi_min)},
                  {"oscillatory", oscillates_above(c, o.xi_min)},
                  {"beta", c.beta},
                  {"xi_min", o.xi_min}};
  out << j.dump(2) << "\n";
  run.write("optimal.json", j.dump(2) + "\n");
  return 0;
}

struct EstimateOptions {
  std::string input;
  EstimatorOptions estimator;
  std::uint64_t seed = 0;
};

inline int run_estimate(const EstimateOptions &o, RunRecord &run, std::ostream &out) {
  const auto bytes = run.read(o.input);
  SampleSet samples;
  if (bytes.compare(0, 4, "LGS1") == 0)
    samples = samples_from_lgs(bytes);
  else if (bytes.compare(0, 4, "LGI1") == 0)
    samples = images_from_lgi(bytes).flatten();
  else
    samples = samples_from_csv(bytes);
  const auto est = estimate(samples, resolve_estimator(o.estimator, o.seed));
  const json j = {{"xi_hat", est.xi_hat},
                  {"estimator", est.estimator},
                  {"n", samples.size()},
                  {"d", samples.dim()},
                  {"converged", est.converged},
                  {"config", est.config_echo}};
  out << j.dump(2) << "\n";
  run.write("estimate.json", j.dump(2) + "\n");
  if (!est.loss_curve.empty()) {
    std::ostringstream csv;
    csv << "iteration,loss\n";
    for (std::size_t i = 0; i < est.loss_curve.size(); ++i)
      csv << i << ',' << format_double(est.loss_curve[i]) << '\n';
    run.write("loss_curve.csv", csv.str());
  }
  return 0;
}

// Plan entries: {"kind": K, "lambda": s [, "rule": "uniform"|"fixed"]} or
// {"instance_selection": psi [, "features": "raw"|"external"]}.
inline std::vector<ScanConfig> parse_plan(const json &plan) {
  if (!plan.is_array() || plan.empty())
    fail("InvalidPlan", "plan must be a non-empty JSON array");
  std::vector<ScanConfig> out;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto &e = plan[i];
    const std::string where = "plan entry " + std::to_string(i);
    if (!e.is_object())
      fail("InvalidPlan", where + " is not an object");
    if (e.contains("instance_selection")) {
      if (!e["instance_selection"].is_number())
        fail("InvalidPlan", where + ": instance_selection must be a number");
      InstanceSelectionConfig c;
      c.psi = e["instance_selection"].get<double>();
      const auto src = e.value("features", std::string("raw"));
      if (src != "raw" && src != "external")
        fail("InvalidPlan", where + ": features must be raw or external");
      c.feature_source = src == "external" ? FeatureSource::external : FeatureSource::raw_flatten;
      c.validate();
      out.emplace_back(c);
    } else {
      if (!e.contains("kind") || !e["kind"].is_string() || !e.contains("lambda") ||
          !e["lambda"].is_number())
        fail("InvalidPlan", where + " needs a string kind and a numeric lambda");
      AugmentationConfig c;
      c.kind = parse_augment_kind(e["kind"].get<std::string>());
      c.strength = e["lambda"].get<double>();
      const auto rule = e.value("rule", std::string("uniform"));
      if (rule != "uniform" && rule != "fixed")
        fail("InvalidPlan", where + ": rule must be uniform or fixed");
      c.rule = rule == "fixed" ? StrengthRule::fixed : StrengthRule::uniform;
      c.validate();
      out.emplace_back(c);
    }
  }
  return out;
}

inline std::string scan_csv(const ScanReport &r) {
  std::ostringstream os;
  os << "kind,param,xi_hat,xi_norm,n,converged,error\n";
  for (const auto &row : r.rows) {
    std::string err = row.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << row.kind << ',' << format_double(row.param) << ','
       << (row.error.empty() ? format_double(row.xi_hat) : "") << ','
       << (row.error.empty() ? format_double(row.xi_norm) : "") << ',' << row.n << ','
       << (row.converged ? 1 : 0) << ',' << err << '\n';
  }
  return os.str();
}

struct ScanOptions {
  std::string images, plan, features, out;
  std::vector<double> separations;
  std::size_t n = 10000;
  EstimatorOptions estimator;
  std::uint64_t seed = 0;
};

inline int run_scan(const ScanOptions &o, RunRecord &run, std::ostream &out) {
  if (o.images.empty() == o.separations.empty())
    throw UsageError("give exactly one of --images (with --plan) or --separations");
  const auto est = resolve_estimator(o.estimator, o.seed);
  ScanReport report;
  if (!o.images.empty()) {
    if (o.plan.empty())
      throw UsageError("--images needs --plan");
    const auto images = images_from_lgi(run.read(o.images));
    json plan;
    try {
      plan = json::parse(run.read(o.plan));
    } catch (const json::parse_error &e) {
      fail("InvalidPlan", std::string("plan is not valid JSON: ") + e.what());
    }
    std::optional<SampleSet> features;
    if (!o.features.empty()) {
      const auto bytes = run.read(o.features);
      features = bytes.compare(0, 4, "LGS1") == 0 ? samples_from_lgs(bytes)
                                                  : samples_from_csv(bytes);
    }
    report = connectivity_scan(images, parse_plan(plan), est, o.seed, features);
  } else {
    report = separation_scan(o.separations, o.n, est, o.seed);
  }
  out << to_json(report).dump(2) << "\n";
  run.write(fs::path(o.out).filename().string(), scan_csv(report));
  return 0;
}

struct CorrelateOptions {
  std::string report, scores;
};

inline int run_correlate(const CorrelateOptions &o, RunRecord &run, std::ostream &out) {
  const auto rep = parse_table(run.read(o.report));
  const auto xi = rep.numbers(rep.col("xi_hat"));
  const auto err_col = rep.find("error");
  ScanReport r;
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    ScanRow row;
    row.xi_hat = xi[i];
    if (err_col && *err_col < rep.rows[i].size())
      row.error = rep.rows[i][*err_col];
    if (!std::isfinite(row.xi_hat) && row.error.empty())
      row.error = "missing xi_hat";
    r.rows.push_back(row);
  }
  const auto sc = parse_table(run.read(o.scores));
  if (sc.rows.empty())
    fail("InvalidFile", "scores CSV has no rows");
  std::size_t col = sc.rows.front().size() - 1;
  if (auto c = sc.find("score"))
    col = *c;
  const auto scores = sc.numbers(col);
  const double rho = correlate_scores(r, scores);
  std::size_t used = 0;
  for (const auto &row : r.rows)
    used += row.error.empty() ? 1 : 0;
  const json j = {{"spearman", rho}, {"n", used}};
  out << j.dump(2) << "\n";
  run.write("correlate.json", j.dump(2) + "\n");
  return 0;
}

struct ReportOptions {
  std::vector<std::string> runs;
};

inline std::string run_label(const fs::path &dir, const json &manifest) {
  const auto &cfg = manifest.value("config", json::object());
  if (cfg.contains("label") && cfg["label"].is_string() && !cfg["label"].get<std::string>().empty())
    return cfg["label"].get<std::string>();
  auto p = dir.lexically_normal();
  if (p.filename().empty())
    p = p.parent_path();
  return p.filename().string();
}

inline int run_report(const ReportOptions &o, RunRecord &run, std::ostream &out) {
  std::vector<PlotSeries> conv, scans, spectra;
  std::ostringstream conv_csv, scan_csv_out, spec_csv;
  conv_csv << "run,t,u_norm,V_norm\n";
  scan_csv_out << "run,kind,param,xi_hat,xi_norm\n";
  spec_csv << "run,index,xi\n";
  for (const auto &d : o.runs) {
    const fs::path dir(d);
    const auto mpath = dir / "manifest.json";
    if (!fs::exists(mpath))
      fail("MissingManifest", "no manifest.json in '" + d + "'");
    json m;
    try {
      m = json::parse(run.read(mpath));
    } catch (const json::parse_error &e) {
      fail("InvalidFile", "manifest in '" + d + "' is not valid JSON");
    }
    const auto command = m.value("command", std::string());
    const auto label = run_label(dir, m);
    if (command == "simulate") {
      const auto t = parse_table(run.read(dir / "trace.csv"));
      const auto ts = t.numbers(t.col("t")), un = t.numbers(t.col("u_norm")),
                 vn = t.numbers(t.col("V_norm"));
      conv.push_back({label, ts, un});
      for (std::size_t i = 0; i < ts.size(); ++i)
        conv_csv << label << ',' << format_double(ts[i]) << ',' << format_double(un[i]) << ','
                 << format_double(vn[i]) << '\n';
    } else if (command == "scan") {
      const auto outs = m.value("outputs", json::array());
      if (outs.empty())
        fail("InvalidFile", "scan manifest in '" + d + "' lists no outputs");
      const auto t = parse_table(run.read(dir / outs[0].get<std::string>()));
      const auto kc = t.col("kind");
      const auto pa = t.numbers(t.col("param")), xi = t.numbers(t.col("xi_hat")),
                 xn = t.numbers(t.col("xi_norm"));
      std::map<std::string, PlotSeries> by_kind;
      std::vector<std::string> order;
      for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto &kind = t.rows[i][kc];
        if (!by_kind.count(kind)) {
          order.push_back(kind);
          by_kind[kind].label = label + ":" + kind;
        }
        by_kind[kind].x.push_back(pa[i]);
        by_kind[kind].y.push_back(xi[i]);
        scan_csv_out << label << ',' << kind << ',' << format_double(pa[i]) << ','
                     << format_double(xi[i]) << ',' << format_double(xn[i]) << '\n';
      }
      for (const auto &k : order)
        scans.push_back(by_kind[k]);
    } else if (command == "spectrum") {
      const auto t = parse_table(run.read(dir / "spectrum.csv"));
      const auto idx = t.numbers(t.col("index")), xi = t.numbers(t.col("xi"));
      spectra.push_back({label, idx, xi});
      for (std::size_t i = 0; i < idx.size(); ++i)
        spec_csv << label << ',' << format_double(idx[i]) << ',' << format_double(xi[i]) << '\n';
    }
  }
  json written = json::array();
  if (!conv.empty()) {
    run.write("convergence.svg", svg_line_chart(conv, "convergence of |u|", "t", "|u|", true));
    run.write("convergence.csv", conv_csv.str());
    written.push_back("convergence");
  }
  if (!scans.empty()) {
    run.write("scan.svg", svg_line_chart(scans, "xi_hat vs parameter", "parameter", "xi_hat"));
    run.write("scan.csv", scan_csv_out.str());
    written.push_back("scan");
  }
  if (!spectra.empty()) {
    run.write("spectrum.svg", svg_line_chart(spectra, "spectrum", "index", "xi"));
    run.write("spectrum.csv", spec_csv.str());
    written.push_back("spectrum");
  }
  if (written.empty())
    fail("NothingToReport", "no simulate, scan or spectrum runs among the inputs");
  out << json{{"charts", written}}.dump() << "\n";
  return 0;
}

// --- entry point -----------------------------------------------------------

inline std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

inline int run(int argc, const char *const *argv, std::ostream &out = std::cout,
               std::ostream &err = std::cerr) {
  CLI::App app{"pdegan: weighted Laplace spectra, linearized GAN dynamics and Poincare "
               "constant estimation",
               "pdegan"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough(false);

  std::string out_dir;
  std::uint64_t seed = 0;
  auto add_out = [&](CLI::App *sub) {
    sub->add_option("--out", out_dir, "output directory for files and manifest.json");
  };
  auto add_seed = [&](CLI::App *sub) {
    sub->add_option("--seed", seed, "master random seed");
  };

  SpectrumOptions so;
  auto *spec = app.add_subcommand("spectrum", "eigenvalues of -Delta_mu on a grid density");
  add_density_options(spec, so.density);
  spec->add_option("--k", so.k, "number of eigenvalues (including xi_0 = 0)");
  spec->add_option("--solver", so.solver, "eigensolver: auto | dense | lanczos")
      ->check(CLI::IsMember({"auto", "dense", "lanczos"}));
  spec->add_option("--eigenfunctions", so.eigenfunctions,
                   "write this many eigenfunction CSVs (needs --out)");
  add_out(spec);

  SimulateOptions sim;
  auto *simc = app.add_subcommand("simulate", "evolve the linearized GAN dynamics");
  add_density_options(simc, sim.density);
  simc->add_option("--scheme", sim.scheme, "euler | heun | analytic")
      ->check(CLI::IsMember({"euler", "heun", "analytic"}));
  simc->add_option("--tau", sim.tau, "time step (time units)");
  simc->add_option("--steps", sim.steps, "number of time steps");
  simc->add_option("--record-every", sim.record_every, "trace row every this many steps");
  simc->add_option("--alpha", sim.alpha, "loss curvature alpha (>= 0; with --optimal, the chosen alpha)");
  simc->add_option("--beta", sim.beta, "generator coupling beta (nonzero)");
  simc->add_option("--gamma", sim.gamma, "gradient penalty gamma (>= 0)");
  simc->add_flag("--optimal", sim.optimal, "replace gamma by the optimal value for xi_min");
  simc->add_option("--modes", sim.modes, "nonconstant modes in the random initial data");
  simc->add_flag("--plot", sim.plot, "write trace.svg with log-norm curves (needs --out)");
  simc->add_option("--label", sim.label, "curve label used by report");
  add_seed(simc);
  add_out(simc);

  OptimalOptions opt;
  auto *optc = app.add_subcommand("optimal-params", "optimal (alpha, gamma) for beta and xi_min");
  optc->add_option("--beta", opt.beta, "generator coupling beta (nonzero)")->required();
  optc->add_option("--xi-min", opt.xi_min, "smallest nonzero eigenvalue xi_min (> 0)")->required();
  optc->add_option("--alpha", opt.alpha, "fixed alpha in [0, min(|beta|/sqrt(xi), |beta| sqrt(xi))]");
  add_out(optc);

  EstimateOptions eo;
  auto *estc = app.add_subcommand("estimate", "Poincare constant of a sample set");
  estc->add_option("--input", eo.input, "samples: CSV (one point per row), LGS1 or LGI1")
      ->required();
  add_estimator_options(estc, eo.estimator);
  add_seed(estc);
  add_out(estc);

  ScanOptions sc;
  auto *scanc = app.add_subcommand("scan", "xi_hat over augmentation/selection configs or separations");
  scanc->add_option("--images", sc.images, "LGI1 image tensor");
  scanc->add_option("--plan", sc.plan, "JSON list of {kind, lambda} or {instance_selection: psi}");
  scanc->add_option("--features", sc.features, "external features for instance selection (CSV or LGS1)");
  scanc->add_option("--separations", sc.separations, "mixture separations D (instead of --images)")
      ->delimiter(',');
  scanc->add_option("--n", sc.n, "samples per separation");
  add_estimator_options(scanc, sc.estimator);
  add_seed(scanc);
  scanc->add_option("--out", sc.out, "report CSV path (manifest.json goes beside it)")->required();

  CorrelateOptions co;
  auto *corc = app.add_subcommand("correlate", "Spearman correlation of scan xi_hat with scores");
  corc->add_option("--report", co.report, "scan report CSV")->required();
  corc->add_option("--scores", co.scores, "CSV with one score per report row (column 'score' or last)")
      ->required();
  add_out(corc);

  ReportOptions ro;
  auto *repc = app.add_subcommand("report", "SVG and CSV charts from run directories");
  repc->add_option("runs", ro.runs, "run directories containing manifest.json")->required();
  repc->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success))
      return app.exit(e, out, err);
    err << "error: UsageError: " << one_line(e.what()) << "\n";
    const CLI::App *shown = &app;
    for (const auto *sub : app.get_subcommands())
      shown = sub;
    err << shown->help();
    return 2;
  }

  CLI::App *sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  sim.seed = eo.seed = sc.seed = seed;
  std::optional<fs::path> dir;
  if (command == "scan")
    dir = fs::path(sc.out).parent_path().empty() ? fs::path(".") : fs::path(sc.out).parent_path();
  else if (!out_dir.empty())
    dir = fs::path(out_dir);
  RunRecord rec(command, config_echo(*sub), seed, dir);

  try {
    int code = 0;
    if (command == "spectrum")
      code = run_spectrum(so, rec, out);
    else if (command == "simulate")
      code = run_simulate(sim, rec, out);
    else if (command == "optimal-params")
      code = run_optimal(opt, rec, out);
    else if (command == "estimate")
      code = run_estimate(eo, rec, out);
    else if (command == "scan")
      code = run_scan(sc, rec, out);
    else if (command == "correlate")
      code = run_correlate(co, rec, out);
    else
      code = run_report(ro, rec, out);
    rec.finish();
    return code;
  } catch (const UsageError &e) {
    err << "error: UsageError: " << one_line(e.what()) << "\n" << sub->help();
    return 2;
  } catch (const Error &e) {
    err << "error: " << e.code() << ": " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception &e) {
    err << "error: InternalError: " << one_line(e.what()) << "\n";
    return 1;
  }
}

} // namespace pdegan::cli
