#ifndef GEODESIGN_CONFIG_HPP
#define GEODESIGN_CONFIG_HPP

// Run configuration in YAML. Requires linking yaml-cpp.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "geodesign/error.hpp"
#include "geodesign/io.hpp"
#include "geodesign/loss.hpp"
#include "geodesign/optimizer.hpp"
#include "geodesign/problem.hpp"

namespace geodesign {

struct RunBudgets {
  LossBudgets search;     // K, B, R, K_inner used inside the optimiser
  int eval_K = 100;       // outer draws when evaluating finished designs
  int reps = 100;         // independent evaluations per design
  int restarts = 4;       // search restarts
  int grid_levels = 3;    // continuous refinement levels
  int grid_points = 21;   // candidates per axis and level
  int sweep_cap = 20;
  int fit_restarts = 3;   // Laplace fit restarts

  LossBudgets evaluation() const {
    LossBudgets b = search;
    b.K = eval_K;
    return b;
  }
};

// Candidate stations and the map between UTM metres and the unit box.
struct NetworkData {
  std::string path;
  std::vector<StationRecord> stations;  // aligned with the discrete candidates
  std::vector<StationRecord> all_stations;
  AffineMap map;
  std::size_t sampled_count = 0;
  std::vector<std::string> warnings;
};

struct ProblemConfig {
  std::uint64_t seed = 1;
  std::optional<Scenario> scenario;
  Problem problem;
  DesignSpace space;
  RunBudgets budgets;
  std::optional<NetworkData> network;
  std::vector<std::string> defaults;  // "key = value" for every default that fired
  std::string hash;                   // FNV-1a of the config bytes

  bool is_network() const { return network.has_value(); }

  // Restricts candidates and prediction locations to stations carrying `tag`.
  void filter_cluster(const std::string& tag) {
    if (!network) throw ConfigError("--filter-cluster needs a station-based design space");
    std::vector<StationRecord> kept;
    for (const auto& s : network->stations)
      if (s.cluster == tag) kept.push_back(s);
    if (kept.empty()) throw DataError("no station carries cluster tag '" + tag + "'");
    network->stations = kept;
    std::vector<Location> locs;
    for (const auto& s : kept) locs.push_back(station_location(s, network->map));
    space = DesignSpace::discrete(locs, space.allow_replicates);
    problem.prediction.points = locs;
  }

  // Station whose rescaled location equals p.
  const StationRecord& station_at(const Location& p) const {
    for (const auto& s : network->stations) {
      const auto [u, v] = network->map.to_unit(s.x_utm, s.y_utm);
      if (u == p.x && v == p.y) return s;
    }
    throw DataError("design location does not match any station");
  }

  const StationRecord& station_by_id(const std::string& id) const {
    for (const auto& s : network->stations)
      if (s.station_id == id) return s;
    throw DataError("unknown station_id '" + id + "'");
  }
};

namespace detail {

inline std::string at_line(const YAML::Node& n) {
  const auto m = n.Mark();
  return m.line >= 0 ? " (line " + std::to_string(m.line + 1) + ")" : "";
}

[[noreturn]] inline void config_fail(const std::string& field, const YAML::Node& n,
                                     const std::string& msg) {
  throw ConfigError(field + at_line(n) + ": " + msg);
}

inline void only_keys(const YAML::Node& n, const std::string& where,
                      const std::set<std::string>& allowed) {
  if (!n.IsMap()) config_fail(where, n, "expected a block of key: value entries");
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key))
      config_fail(where.empty() ? key : where + "." + key, kv.first, "unknown key");
  }
}

template <class T>
T scalar(const YAML::Node& n, const std::string& field) {
  if (!n.IsScalar()) config_fail(field, n, "expected a scalar value");
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    config_fail(field, n, "cannot read '" + n.Scalar() + "'");
  }
}

template <class T>
T get_or(const YAML::Node& parent, const std::string& key, const std::string& field, T fallback,
         std::vector<std::string>& defaults) {
  if (parent && parent.IsMap() && parent[key]) return scalar<T>(parent[key], field);
  std::ostringstream os;
  os << std::boolalpha << fallback;
  defaults.push_back(field + " = " + os.str());
  return fallback;
}

inline std::vector<double> number_list(const YAML::Node& n, const std::string& field) {
  if (!n.IsSequence()) config_fail(field, n, "expected a list of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < n.size(); ++i)
    out.push_back(scalar<double>(n[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

// Accepts a 14-element list or a block keyed by parameter name.
inline ParamVec param_vector(const YAML::Node& n, const std::string& field) {
  ParamVec v;
  if (n.IsSequence()) {
    const auto xs = number_list(n, field);
    if (xs.size() != static_cast<std::size_t>(kParamDim))
      config_fail(field, n, "expected " + std::to_string(kParamDim) + " values, found " +
                                std::to_string(xs.size()));
    for (int i = 0; i < kParamDim; ++i) v[i] = xs[static_cast<std::size_t>(i)];
    return v;
  }
  if (!n.IsMap()) config_fail(field, n, "expected a list or a block keyed by parameter name");
  only_keys(n, field, {kParamNames.begin(), kParamNames.end()});
  for (int i = 0; i < kParamDim; ++i) {
    const char* name = kParamNames[static_cast<std::size_t>(i)];
    if (!n[name]) config_fail(field + "." + name, n, "missing");
    v[i] = scalar<double>(n[name], field + "." + name);
  }
  return v;
}

inline std::array<std::size_t, 2> column_pair(const YAML::Node& n, const std::string& field) {
  const auto xs = number_list(n, field);
  if (xs.size() != 2) config_fail(field, n, "expected two covariate column indices");
  std::array<std::size_t, 2> out{};
  for (std::size_t i = 0; i < 2; ++i) {
    if (xs[i] < 0 || xs[i] != std::floor(xs[i]))
      config_fail(field, n, "column indices must be non-negative integers");
    out[i] = static_cast<std::size_t>(xs[i]);
  }
  return out;
}

inline int positive_int(const YAML::Node& parent, const std::string& key, const std::string& field,
                        int fallback, std::vector<std::string>& defaults) {
  const int v = get_or<int>(parent, key, field, fallback, defaults);
  if (v < 1) config_fail(field, parent[key], "must be at least 1");
  return v;
}

}  // namespace detail

// `base_dir` resolves relative station paths.
inline ProblemConfig parse_config_text(const std::string& text, const std::string& base_dir = ".") {
  using namespace detail;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("syntax error (line " + std::to_string(e.mark.line + 1) + "): " + e.msg);
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  only_keys(root, "", {"seed", "scenario", "model", "prior", "space", "budgets"});

  ProblemConfig cfg;
  cfg.hash = fnv1a_hex(text);
  auto& defaults = cfg.defaults;
  cfg.seed = get_or<std::uint64_t>(root, "seed", "seed", 1, defaults);

  if (root["scenario"]) {
    const auto name = scalar<std::string>(root["scenario"], "scenario");
    cfg.scenario = parse_scenario(name);
    if (!cfg.scenario)
      config_fail("scenario", root["scenario"], "expected weak, moderate or strong, got '" + name + "'");
    for (const char* k : {"model", "prior"})
      if (root[k])
        config_fail(k, root[k], "conflicts with the scenario preset, which fixes this block");
  }

  const YAML::Node space = root["space"];
  if (space) only_keys(space, "space", {"type", "bounds", "stations", "allow_replicates"});
  const auto space_type = get_or<std::string>(space, "type", "space.type", "continuous", defaults);
  const bool allow_rep =
      get_or<bool>(space, "allow_replicates", "space.allow_replicates", false, defaults);

  // Model
  Problem& p = cfg.problem;
  const YAML::Node model = root["model"];
  YAML::Node prediction(YAML::NodeType::Undefined);
  if (model) {
    only_keys(model, "model", {"covariate_map1", "covariate_map2", "replicates", "prediction"});
    if (model["prediction"]) prediction = model["prediction"];
  }

  if (space_type == "continuous") {
    if (space && space["stations"])
      config_fail("space.stations", space["stations"], "only valid with type: stations");
    Rectangle box;
    if (space && space["bounds"]) {
      const auto b = number_list(space["bounds"], "space.bounds");
      if (b.size() != 4 || !(b[0] < b[1]) || !(b[2] < b[3]))
        config_fail("space.bounds", space["bounds"], "expected [xmin, xmax, ymin, ymax] with min < max");
      box = {b[0], b[1], b[2], b[3]};
    } else {
      defaults.push_back("space.bounds = [0, 1, 0, 1]");
    }
    if (cfg.scenario && (box.xmin != 0 || box.xmax != 1 || box.ymin != 0 || box.ymax != 1))
      config_fail("space.bounds", space["bounds"], "scenario presets use the unit square");
    cfg.space = DesignSpace::continuous(box, unit_square_location, allow_rep);
    p.model.covariate_dim = 2;  // covariates are the coordinates
    p.model.covariate_map1 = {0, 1};
    p.model.covariate_map2 = {0, 1};

    int grid = 5;
    if (prediction) {
      only_keys(prediction, "model.prediction", {"grid", "points"});
      if (prediction["grid"] && prediction["points"])
        config_fail("model.prediction", prediction, "give either grid or points, not both");
      if (prediction["points"]) {
        const auto& pts = prediction["points"];
        if (!pts.IsSequence() || pts.size() == 0)
          config_fail("model.prediction.points", pts, "expected a list of [x, y] pairs");
        for (std::size_t i = 0; i < pts.size(); ++i) {
          const auto xy = number_list(pts[i], "model.prediction.points[" + std::to_string(i) + "]");
          if (xy.size() != 2)
            config_fail("model.prediction.points[" + std::to_string(i) + "]", pts[i], "expected [x, y]");
          p.prediction.points.push_back(unit_square_location(xy[0], xy[1]));
        }
        grid = 0;
      } else {
        grid = positive_int(prediction, "grid", "model.prediction.grid", 5, defaults);
      }
    } else {
      defaults.push_back("model.prediction.grid = 5");
    }
    if (grid > 0) {
      if (grid < 2) config_fail("model.prediction.grid", prediction["grid"], "must be at least 2");
      for (int v = 0; v < grid; ++v)
        for (int w = 0; w < grid; ++w)
          p.prediction.points.push_back(unit_square_location(
              box.xmin + (box.xmax - box.xmin) * v / (grid - 1),
              box.ymin + (box.ymax - box.ymin) * w / (grid - 1)));
    }
  } else if (space_type == "stations") {
    if (cfg.scenario) config_fail("space.type", space["type"], "scenario presets use a continuous space");
    if (space["bounds"]) config_fail("space.bounds", space["bounds"], "only valid with type: continuous");
    if (!space["stations"]) config_fail("space.stations", space, "missing station file path");
    NetworkData net;
    std::filesystem::path path = scalar<std::string>(space["stations"], "space.stations");
    if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
    net.path = path.string();
    auto ingest = ingest_stations(net.path);
    if (ingest.records.empty()) throw DataError("station file '" + net.path + "' has no stations");
    net.all_stations = ingest.records;
    net.stations = ingest.records;
    net.sampled_count = ingest.sampled_count;
    net.warnings = ingest.warnings;
    net.map = AffineMap::fit(ingest.records);
    std::vector<Location> locs;
    for (const auto& s : net.stations) locs.push_back(station_location(s, net.map));
    cfg.space = DesignSpace::discrete(locs, allow_rep);
    p.model.covariate_dim = 3;
    p.model.covariate_map1 = {0, 1};
    p.model.covariate_map2 = {0, 2};
    if (prediction) {
      only_keys(prediction, "model.prediction", {"stations"});
      const auto which = scalar<std::string>(prediction["stations"], "model.prediction.stations");
      if (which != "all")
        config_fail("model.prediction.stations", prediction["stations"], "only 'all' is supported");
    } else {
      defaults.push_back("model.prediction.stations = all");
    }
    p.prediction.points = locs;
    cfg.network = std::move(net);
  } else {
    config_fail("space.type", space["type"], "expected continuous or stations, got '" + space_type + "'");
  }

  if (model) {
    if (model["covariate_map1"]) p.model.covariate_map1 = column_pair(model["covariate_map1"], "model.covariate_map1");
    else defaults.push_back("model.covariate_map1 = [" + std::to_string(p.model.covariate_map1[0]) + ", " + std::to_string(p.model.covariate_map1[1]) + "]");
    if (model["covariate_map2"]) p.model.covariate_map2 = column_pair(model["covariate_map2"], "model.covariate_map2");
    else defaults.push_back("model.covariate_map2 = [" + std::to_string(p.model.covariate_map2[0]) + ", " + std::to_string(p.model.covariate_map2[1]) + "]");
  }
  try {
    p.model.validate();
  } catch (const DomainError& e) {
    config_fail("model", model, e.what());
  }
  p.replicates = positive_int(model, "replicates", "model.replicates", 1, defaults);

  // Prior
  if (cfg.scenario) {
    p.prior = scenario_prior(*cfg.scenario);
  } else {
    const YAML::Node prior = root["prior"];
    if (!prior) config_fail("prior", root, "missing (give a prior block or a scenario preset)");
    only_keys(prior, "prior", {"mean", "variance", "covariance"});
    if (!prior["mean"]) config_fail("prior.mean", prior, "missing");
    const ParamVec mean = param_vector(prior["mean"], "prior.mean");
    if (prior["variance"] && prior["covariance"])
      config_fail("prior", prior, "give either variance or covariance, not both");
    if (prior["variance"]) {
      const ParamVec var = param_vector(prior["variance"], "prior.variance");
      if ((var.array() <= 0.0).any()) config_fail("prior.variance", prior["variance"], "must be positive");
      p.prior = diagonal_prior(mean, var);
    } else if (prior["covariance"]) {
      const auto& c = prior["covariance"];
      if (!c.IsSequence() || c.size() != static_cast<std::size_t>(kParamDim))
        config_fail("prior.covariance", c, "expected " + std::to_string(kParamDim) + " rows");
      ParamMat cov;
      for (int i = 0; i < kParamDim; ++i) {
        const auto row = number_list(c[static_cast<std::size_t>(i)], "prior.covariance[" + std::to_string(i) + "]");
        if (row.size() != static_cast<std::size_t>(kParamDim))
          config_fail("prior.covariance[" + std::to_string(i) + "]", c[static_cast<std::size_t>(i)],
                      "expected " + std::to_string(kParamDim) + " columns");
        for (int j = 0; j < kParamDim; ++j) cov(i, j) = row[static_cast<std::size_t>(j)];
      }
      if (!cov.isApprox(cov.transpose(), 1e-12))
        config_fail("prior.covariance", c, "matrix is not symmetric");
      if (Eigen::LLT<ParamMat>(cov).info() != Eigen::Success)
        config_fail("prior.covariance", c, "matrix is not positive definite");
      p.prior = {mean, cov};
    } else {
      config_fail("prior", prior, "missing variance or covariance");
    }
  }

  // Budgets
  const YAML::Node b = root["budgets"];
  if (b)
    only_keys(b, "budgets", {"K", "B", "R", "K_inner", "eval_K", "reps", "restarts", "grid_levels",
                             "grid_points", "sweep_cap", "fit_restarts"});
  auto& rb = cfg.budgets;
  rb.search.K = positive_int(b, "K", "budgets.K", 30, defaults);
  rb.search.B = positive_int(b, "B", "budgets.B", 200, defaults);
  rb.search.R = positive_int(b, "R", "budgets.R", 500, defaults);
  rb.search.K_inner = positive_int(b, "K_inner", "budgets.K_inner", 10, defaults);
  rb.eval_K = positive_int(b, "eval_K", "budgets.eval_K", 100, defaults);
  rb.reps = positive_int(b, "reps", "budgets.reps", 100, defaults);
  rb.restarts = positive_int(b, "restarts", "budgets.restarts", 4, defaults);
  rb.grid_levels = positive_int(b, "grid_levels", "budgets.grid_levels", 3, defaults);
  rb.grid_points = positive_int(b, "grid_points", "budgets.grid_points", 21, defaults);
  rb.sweep_cap = positive_int(b, "sweep_cap", "budgets.sweep_cap", 20, defaults);
  rb.fit_restarts = positive_int(b, "fit_restarts", "budgets.fit_restarts", 3, defaults);
  if (rb.grid_points < 2) config_fail("budgets.grid_points", b["grid_points"], "must be at least 2");
  p.fit.B = rb.search.B;
  p.fit.restarts = rb.fit_restarts;
  return cfg;
}

inline ProblemConfig parse_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot open config file '" + path + "'");
  }
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_config_text(text, dir.empty() ? "." : dir.string());
}

}  // namespace geodesign

#endif  // GEODESIGN_CONFIG_HPP
