// geodesign: optimise, evaluate and compare spatial sampling designs.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "geodesign/config.hpp"
#include "geodesign/evaluation.hpp"
#include "geodesign/io.hpp"
#include "geodesign/loss.hpp"
#include "geodesign/optimizer.hpp"

namespace fs = std::filesystem;
using namespace geodesign;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kNumerical = 4,
  kNotConverged = 5,
};

struct Args {
  std::string config;
  std::string out = "geodesign-out";
  std::optional<std::uint64_t> seed;
  std::string loss;
  int n = 0;
  int reps = 0;
  int count = 100;
  std::string filter_cluster;
  std::vector<std::string> designs;
  std::string reference;
};

// Design points in output units: UTM metres for networks, config units otherwise.
struct PointOut {
  std::string station_id, cluster;
  double x = 0.0, y = 0.0;
};

PointOut to_output(const ProblemConfig& cfg, const Location& p) {
  if (!cfg.is_network()) return {"", "", p.x, p.y};
  const auto& s = cfg.station_at(p);
  const auto [x, y] = cfg.network->map.from_unit(p.x, p.y);
  return {s.station_id, s.cluster, x, y};
}

Table design_table(const ProblemConfig& cfg, const std::vector<NamedDesign>& designs) {
  Table t;
  t.columns = cfg.is_network()
                  ? std::vector<std::string>{"design", "point", "station_id", "x_utm", "y_utm", "cluster"}
                  : std::vector<std::string>{"design", "point", "x", "y"};
  for (const auto& nd : designs)
    for (std::size_t i = 0; i < nd.design.size(); ++i) {
      const auto o = to_output(cfg, nd.design[i]);
      if (cfg.is_network())
        t.add({nd.name, std::to_string(i), o.station_id, format_double(o.x), format_double(o.y), o.cluster});
      else
        t.add({nd.name, std::to_string(i), format_double(o.x), format_double(o.y)});
    }
  return t;
}

json design_json(const ProblemConfig& cfg, const Design& d) {
  json pts = json::array();
  for (const auto& p : d.points) {
    const auto o = to_output(cfg, p);
    json j{{"x", o.x}, {"y", o.y}};
    if (cfg.is_network()) {
      j["station_id"] = o.station_id;
      j["cluster"] = o.cluster;
    }
    pts.push_back(j);
  }
  return pts;
}

// Reads a design file written by `optimize` (or by hand). Network designs are
// matched by station_id when that column exists, else by UTM coordinates.
Design read_design(const ProblemConfig& cfg, const std::string& path) {
  const Table t = read_table(path);
  Design d;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (cfg.is_network()) {
      const auto has = [&](const char* c) {
        return std::find(t.columns.begin(), t.columns.end(), c) != t.columns.end();
      };
      const StationRecord* s = nullptr;
      if (has("station_id")) {
        s = &cfg.station_by_id(t.rows[r][t.column("station_id")]);
      } else {
        const double x = t.number(r, "x_utm"), y = t.number(r, "y_utm");
        for (const auto& st : cfg.network->stations)
          if (std::abs(st.x_utm - x) <= 1e-6 * std::abs(x) && std::abs(st.y_utm - y) <= 1e-6 * std::abs(y))
            s = &st;
        if (!s) throw DataError(path + ": row " + std::to_string(r + 2) + " matches no station");
      }
      d.points.push_back(station_location(*s, cfg.network->map));
    } else {
      const Location p = unit_square_location(t.number(r, "x"), t.number(r, "y"));
      const auto& box = std::get<ContinuousSpace>(cfg.space.mode).bounds;
      if (!box.contains(p))
        throw DataError(path + ": row " + std::to_string(r + 2) + " lies outside the design space");
      d.points.push_back(p);
    }
  }
  if (d.empty()) throw DataError(path + ": design has no points");
  return d;
}

std::string design_name(const std::string& path) { return fs::path(path).stem().string(); }

struct Run {
  Args args;
  ProblemConfig cfg;
  std::uint64_t seed = 0;
  fs::path out;
  std::string subcommand;
  std::vector<std::string> log;

  void write(const std::string& name, const std::string& text) const {
    write_file((out / name).string(), text);
  }
  void write_json(const std::string& name, const json& j) const { write(name, j.dump(2) + "\n"); }

  void finish(const std::vector<std::string>& outputs) {
    json args_j{{"config", args.config}};  // output dir left out: reports compare across dirs
    if (!args.loss.empty()) args_j["loss"] = args.loss;
    if (args.n) args_j["n"] = args.n;
    if (args.reps) args_j["reps"] = args.reps;
    if (!args.filter_cluster.empty()) args_j["filter_cluster"] = args.filter_cluster;
    if (!args.designs.empty()) args_j["designs"] = args.designs;
    if (!args.reference.empty()) args_j["reference"] = args.reference;
    json m{{"tool", "geodesign"},
           {"version", kVersion},
           {"subcommand", subcommand},
           {"config_hash", cfg.hash},
           {"seed", seed},
           {"arguments", args_j},
           {"outputs", outputs},
           {"versions",
            {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                           "." + std::to_string(EIGEN_MINOR_VERSION)},
             {"compiler", __VERSION__}}}};
    if (cfg.is_network()) {
      m["affine_map"] = {{"x0", cfg.network->map.x0},
                         {"y0", cfg.network->map.y0},
                         {"scale", cfg.network->map.scale}};
      m["stations"] = {{"count", cfg.network->all_stations.size()},
                       {"sampled", cfg.network->sampled_count},
                       {"candidates", cfg.network->stations.size()}};
    }
    write_json("manifest.json", m);
    std::string text;
    for (const auto& l : log) text += l + "\n";
    write("run.log", text);
  }
};

void note(Run& run, const std::string& line) {
  std::cerr << line << "\n";
  run.log.push_back(line);
}

Run prepare(const Args& args, const std::string& sub) {
  Run run;
  run.args = args;
  run.subcommand = sub;
  run.cfg = parse_config(args.config);
  run.seed = args.seed.value_or(run.cfg.seed);
  for (const auto& d : run.cfg.defaults) note(run, "default: " + d);
  if (run.cfg.is_network()) {
    const auto& net = *run.cfg.network;
    note(run, "stations: " + std::to_string(net.all_stations.size()) + " (" +
                  std::to_string(net.sampled_count) + " sampled) from " + net.path);
    for (const auto& w : net.warnings) note(run, "warning: " + w);
  }
  if (!args.filter_cluster.empty()) {
    run.cfg.filter_cluster(args.filter_cluster);
    note(run, "cluster filter " + args.filter_cluster + ": " +
                  std::to_string(run.cfg.network->stations.size()) + " candidate stations");
  }
  run.out = args.out;
  fs::create_directories(run.out);
  return run;
}

LossKind loss_flag(const std::string& s) {
  const auto k = parse_loss_kind(s);
  if (!k) throw ConfigError("--loss: unknown loss '" + s + "'");
  return *k;
}

std::size_t design_size(const Run& run) {
  if (run.args.n < 1) throw ConfigError("--n must be at least 1");
  const auto n = static_cast<std::size_t>(run.args.n);
  if (run.cfg.space.is_discrete() && !run.cfg.space.allow_replicates &&
      n > std::get<DiscreteSpace>(run.cfg.space.mode).candidates.size())
    throw ConfigError("--n exceeds the number of candidate stations");
  return n;
}

int reps_of(const Run& run) { return run.args.reps > 0 ? run.args.reps : run.cfg.budgets.reps; }

// ---------------------------------------------------------------------------

int cmd_optimize(const Args& args) {
  Run run = prepare(args, "optimize");
  const LossKind kind = loss_flag(args.loss);
  const std::size_t n = design_size(run);
  const auto& b = run.cfg.budgets;
  SearchOptions so;
  so.restarts = b.restarts;
  so.sweep_cap = b.sweep_cap;
  so.grid_levels = b.grid_levels;
  so.grid_points = b.grid_points;
  so.root_seed = derive_seed(run.seed, {1});
  const std::uint64_t loss_seed = derive_seed(run.seed, {2});
  const auto evaluator = make_loss_evaluator(run.cfg.problem, kind, b.search, loss_seed);
  const auto result = coordinate_exchange(run.cfg.space, n, evaluator, so);
  if (result.design.empty()) throw EvaluationError("every candidate design failed to evaluate");

  const LossReport report =
      expected_loss(result.design, run.cfg.problem, LossSpec{kind, b.search}, loss_seed);

  write_table((run.out / "design.tsv").string(),
              design_table(run.cfg, {{"optimal_" + to_string(kind), canonical_design(result.design)}}));
  json trace = to_json(result.trace);
  for (std::size_t i = 0; i < result.trace.iterations.size(); ++i)
    trace["iterations"][i]["design"] = design_json(run.cfg, result.trace.iterations[i].design);
  trace["loss"] = to_string(kind);
  run.write_json("trace.json", trace);
  run.write_json("loss_report.json", to_json(report, false));
  run.write_json("timings.json", {{"loss_report_wall_time", report.wall_time}});
  note(run, "expected " + to_string(kind) + " loss " + format_double(report.expected_loss) +
                " after " + std::to_string(result.trace.total_evaluations) + " evaluations");
  run.finish({"design.tsv", "trace.json", "loss_report.json", "timings.json"});
  if (!result.trace.converged) {
    std::cerr << "search stopped at the sweep cap before converging; best design written\n";
    return kNotConverged;
  }
  return kOk;
}

int cmd_evaluate(const Args& args) {
  Run run = prepare(args, "evaluate");
  if (args.designs.empty()) throw ConfigError("evaluate needs at least one --design file");
  std::vector<NamedDesign> named;
  for (const auto& path : args.designs) named.push_back({design_name(path), read_design(run.cfg, path)});
  std::vector<Design> designs;
  for (const auto& nd : named) designs.push_back(nd.design);
  std::size_t ref = 0;
  if (!args.reference.empty()) {
    const auto it = std::find_if(named.begin(), named.end(),
                                 [&](const NamedDesign& nd) { return nd.name == args.reference; });
    if (it == named.end()) throw ConfigError("--reference: no design named '" + args.reference + "'");
    ref = static_cast<std::size_t>(it - named.begin());
  }
  const int reps = reps_of(run);
  const LossBudgets budgets = run.cfg.budgets.evaluation();
  const double h0 = prior_predictive_entropy(run.cfg.problem, 20000, derive_seed(run.seed, {3}));
  const auto table = replicate_losses(designs, run.cfg.problem, budgets, reps, run.seed, h0);

  Table rows;
  rows.columns = {"design", "design_id", "replicate", "objective", "value"};
  for (std::size_t i = 0; i < named.size(); ++i)
    for (int r = 0; r < reps; ++r) {
      const auto ri = static_cast<std::size_t>(r);
      const std::pair<const char*, double> vals[] = {
          {"E", table.E[i][ri]}, {"P", table.P[i][ri]}, {"D", table.D[i][ri]}, {"pvar", table.pvar[i][ri]}};
      for (const auto& [obj, v] : vals)
        rows.add({named[i].name, table.design_ids[i], std::to_string(r), obj, format_double(v)});
    }
  write_table((run.out / "losses.tsv").string(), rows);

  std::string eff;
  for (std::size_t i = 0; i < named.size(); ++i)
    for (auto o : {Objective::E, Objective::P, Objective::D}) {
      json j = to_json(efficiency(table, i, ref, o));
      j["design"] = named[i].name;
      j["reference"] = named[ref].name;
      eff += j.dump() + "\n";
    }
  run.write("efficiency.jsonl", eff);

  // One full report per design and loss kind, under replicate 0's seed.
  EvaluateOptions eo;
  eo.kinds = {LossKind::estimation, LossKind::prediction_mvn, LossKind::prediction_variance};
  eo.budgets = budgets;
  std::string reports;
  json timings = json::object();
  for (const auto& nd : named) {
    const auto rep = evaluate_design(nd.design, run.cfg.problem, eo, replicate_seed(run.seed, 0));
    for (const auto& [kind, r] : rep) {
      json j = to_json(r, false);
      j["design"] = nd.name;
      reports += j.dump() + "\n";
    }
    timings[nd.name] = rep.begin()->second.wall_time;
  }
  run.write("loss_reports.jsonl", reports);
  run.write_json("timings.json", timings);
  write_table((run.out / "designs.tsv").string(), design_table(run.cfg, named));
  run.write_json("summary.json", {{"prior_predictive_entropy", h0}, {"reps", reps}, {"K", budgets.K}});
  run.finish({"losses.tsv", "efficiency.jsonl", "loss_reports.jsonl", "designs.tsv", "summary.json",
              "timings.json"});
  return kOk;
}

std::vector<Design> random_candidates(const Run& run, std::size_t count, std::size_t n) {
  if (!run.cfg.space.is_discrete()) {
    const auto& c = std::get<ContinuousSpace>(run.cfg.space.mode);
    return random_designs(count, n, c.bounds, c.make_location, derive_seed(run.seed, {4}));
  }
  const auto& cands = std::get<DiscreteSpace>(run.cfg.space.mode).candidates;
  std::vector<Design> out(count);
  for (std::size_t c = 0; c < count; ++c) {
    RngStream rng(derive_seed(run.seed, {4, c}));
    std::vector<std::size_t> idx(cands.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < n; ++i) {  // partial Fisher-Yates
      const std::size_t j = i + rng.index(idx.size() - i);
      std::swap(idx[i], idx[j]);
      out[c].points.push_back(cands[idx[i]]);
    }
  }
  return out;
}

int cmd_compare_approx(const Args& args) {
  Run run = prepare(args, "compare-approx");
  const std::size_t n = design_size(run);
  if (args.count < 2) throw ConfigError("--count must be at least 2");
  const auto designs = random_candidates(run, static_cast<std::size_t>(args.count), n);
  const auto study = approximation_study(designs, run.cfg.problem, run.cfg.budgets.search, run.seed);
  Table t, times;
  t.columns = {"design", "design_id", "nested", "mvn"};
  times.columns = {"design", "time_nested", "time_mvn"};
  std::vector<NamedDesign> named;
  for (std::size_t i = 0; i < study.rows.size(); ++i) {
    const auto& r = study.rows[i];
    const std::string name = "random_" + std::to_string(i);
    t.add({name, r.design_id, format_double(r.nested), format_double(r.mvn)});
    times.add({name, format_double(r.time_nested), format_double(r.time_mvn)});
    named.push_back({name, designs[i]});
  }
  write_table((run.out / "approx.tsv").string(), t);
  write_table((run.out / "timings.tsv").string(), times);
  write_table((run.out / "designs.tsv").string(), design_table(run.cfg, named));
  run.write_json("summary.json", {{"designs", study.rows.size()}, {"n", n}, {"correlation", study.correlation}});
  note(run, "correlation between nested and MVN losses: " + format_double(study.correlation));
  run.finish({"approx.tsv", "designs.tsv", "summary.json", "timings.tsv"});
  return kOk;
}

int cmd_fixed_designs(const Args& args) {
  Run run = prepare(args, "fixed-designs");
  std::vector<NamedDesign> named;
  for (const auto& path : args.designs) named.push_back({design_name(path), read_design(run.cfg, path)});
  if (args.n > 0) {
    const std::size_t n = design_size(run);
    if (!run.cfg.space.is_discrete()) {
      const auto& c = std::get<ContinuousSpace>(run.cfg.space.mode);
      named.push_back({"triangular", triangular_design(n, c.bounds, c.make_location)});
      named.push_back({"boundary", boundary_design(n, c.bounds, c.make_location)});
    }
    named.push_back({"close_pred", close_pred_design(n, run.cfg.problem.prediction)});
  }
  if (named.empty()) throw ConfigError("fixed-designs needs --n and/or --design");
  const auto study = fixed_design_study(named, run.cfg.problem, run.cfg.budgets.search, reps_of(run), run.seed);

  Table loc, par;
  loc.columns = {"design", "location", "x", "y", "response", "prior_var", "post_var"};
  for (const auto& r : study.locations) {
    double x = r.x, y = r.y;
    if (run.cfg.is_network()) std::tie(x, y) = run.cfg.network->map.from_unit(r.x, r.y);
    loc.add({r.design, std::to_string(r.location), format_double(x), format_double(y),
             std::to_string(r.response), format_double(r.prior_var), format_double(r.post_var)});
  }
  par.columns = {"design", "parameter", "prior_var", "post_var"};
  for (const auto& r : study.parameters)
    par.add({r.design, r.parameter, format_double(r.prior_var), format_double(r.post_var)});
  write_table((run.out / "location_variances.tsv").string(), loc);
  write_table((run.out / "parameter_variances.tsv").string(), par);
  write_table((run.out / "designs.tsv").string(), design_table(run.cfg, named));
  json fails = json::object();
  for (const auto& [k, v] : study.failures) fails[k] = v;
  run.write_json("summary.json", {{"reps", reps_of(run)}, {"failed_fits", fails}});
  run.finish({"location_variances.tsv", "parameter_variances.tsv", "designs.tsv", "summary.json"});
  return kOk;
}

int cmd_simulate(const Args& args) {
  Run run = prepare(args, "simulate");
  if (args.designs.size() != 1) throw ConfigError("simulate needs exactly one --design file");
  const Design d = canonical_design(read_design(run.cfg, args.designs.front()));
  const int reps = args.reps > 0 ? args.reps : 1;
  const auto& p = run.cfg.problem;
  Table data, theta;
  data.columns = {"dataset", "point", "replicate", "y1", "y2"};
  theta.columns = {"dataset", "parameter", "value"};
  for (int r = 0; r < reps; ++r) {
    const std::uint64_t seed = replicate_seed(run.seed, r);
    RngStream prior_rng(derive_seed(seed, {stream::kPriorDraw}));
    const ParameterVector th = sample_posterior(p.prior, 1, prior_rng).front();
    RngStream field_rng(derive_seed(seed, {stream::kDesignField}));
    const auto s1 = sample_gaussian_field(build_covariance(d.points, th.matern1()), field_rng);
    const auto s2 = sample_gaussian_field(build_covariance(d.points, th.matern2()), field_rng);
    RngStream data_rng(derive_seed(seed, {stream::kData}));
    const auto obs = simulate_bivariate(d, p.model, th, s1, s2, p.replicates, data_rng);
    std::map<std::size_t, int> seen;
    for (const auto& o : obs)
      data.add({std::to_string(r), std::to_string(o.location_index), std::to_string(seen[o.location_index]++),
                format_double(o.y1), std::to_string(o.y2)});
    for (int i = 0; i < kParamDim; ++i)
      theta.add({std::to_string(r), kParamNames[static_cast<std::size_t>(i)], format_double(th.values()[i])});
  }
  write_table((run.out / "data.tsv").string(), data);
  write_table((run.out / "theta.tsv").string(), theta);
  write_table((run.out / "designs.tsv").string(), design_table(run.cfg, {{"design", d}}));
  run.finish({"data.tsv", "theta.tsv", "designs.tsv"});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian design of spatial sampling networks for bivariate Normal/Poisson data"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Args args;

  auto common = [&args](CLI::App* s) {
    s->add_option("--config", args.config, "YAML run configuration")->required();
    s->add_option("--out", args.out, "output directory")->capture_default_str();
    s->add_option("--seed", args.seed, "root seed (overrides the config)");
    s->add_option("--filter-cluster", args.filter_cluster, "restrict stations to one cluster tag");
  };
  auto* opt = app.add_subcommand("optimize", "search for a design minimising expected loss");
  common(opt);
  opt->add_option("--loss", args.loss, "estimation | prediction | dual | pvar")->required();
  opt->add_option("--n", args.n, "number of design points")->required();

  auto* ev = app.add_subcommand("evaluate", "replicated expected losses and efficiencies");
  common(ev);
  ev->add_option("--design", args.designs, "design file (repeatable)")->required();
  ev->add_option("--reps", args.reps, "independent evaluations per design");
  ev->add_option("--reference", args.reference, "design name used as efficiency reference");

  auto* ca = app.add_subcommand("compare-approx", "nested vs MVN prediction loss on random designs");
  common(ca);
  ca->add_option("--n", args.n, "points per random design")->required();
  ca->add_option("--count", args.count, "number of random designs")->capture_default_str();

  auto* fd = app.add_subcommand("fixed-designs", "posterior variances for reference designs");
  common(fd);
  fd->add_option("--n", args.n, "size of generated reference designs");
  fd->add_option("--design", args.designs, "additional design file (repeatable)");
  fd->add_option("--reps", args.reps, "simulated datasets per design");

  auto* sim = app.add_subcommand("simulate", "draw parameters and data at a design");
  common(sim);
  sim->add_option("--design", args.designs, "design file")->required();
  sim->add_option("--reps", args.reps, "number of datasets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (opt->parsed()) return cmd_optimize(args);
    if (ev->parsed()) return cmd_evaluate(args);
    if (ca->parsed()) return cmd_compare_approx(args);
    if (fd->parsed()) return cmd_fixed_designs(args);
    if (sim->parsed()) return cmd_simulate(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ConditioningError& e) {
    std::cerr << "numerical failure: " << e.what() << " (closest points " << e.min_distance()
              << " apart)\n";
    return kNumerical;
  } catch (const FitError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const SimulationError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const EvaluationError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const DomainError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
