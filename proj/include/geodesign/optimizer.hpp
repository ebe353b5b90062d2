#ifndef GEODESIGN_OPTIMIZER_HPP
#define GEODESIGN_OPTIMIZER_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodesign/error.hpp"
#include "geodesign/loss.hpp"
#include "geodesign/parallel.hpp"
#include "geodesign/random.hpp"
#include "geodesign/spatial.hpp"

namespace geodesign {

struct DiscreteSpace {
  std::vector<Location> candidates;
};

// Covariates of a continuous space are a function of the coordinates.
struct ContinuousSpace {
  Rectangle bounds;
  std::function<Location(double, double)> make_location;
};

struct DesignSpace {
  std::variant<DiscreteSpace, ContinuousSpace> mode;
  bool allow_replicates = false;

  static DesignSpace discrete(std::vector<Location> candidates, bool allow_replicates = false) {
    return {DiscreteSpace{std::move(candidates)}, allow_replicates};
  }
  static DesignSpace continuous(Rectangle bounds, std::function<Location(double, double)> make,
                                bool allow_replicates = false) {
    return {ContinuousSpace{bounds, std::move(make)}, allow_replicates};
  }

  bool is_discrete() const { return std::holds_alternative<DiscreteSpace>(mode); }

  void validate() const {
    if (const auto* d = std::get_if<DiscreteSpace>(&mode)) {
      if (d->candidates.empty()) throw DomainError("discrete design space has no candidates");
      for (std::size_t i = 0; i < d->candidates.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
          if (d->candidates[i].x == d->candidates[j].x && d->candidates[i].y == d->candidates[j].y)
            throw DomainError("candidate locations " + std::to_string(j) + " and " +
                              std::to_string(i) + " coincide");
    } else {
      const auto& c = std::get<ContinuousSpace>(mode);
      if (!(c.bounds.xmax > c.bounds.xmin) || !(c.bounds.ymax > c.bounds.ymin))
        throw DomainError("continuous design space bounds are degenerate");
      if (!c.make_location) throw DomainError("continuous design space needs a covariate map");
    }
  }
};

using DesignEvaluator = std::function<double(const Design&)>;

struct SearchStep {
  int restart = 0;
  Design design;
  double expected_loss = 0.0;
  std::string changed_coordinate;  // "start", "point 3", "point 3 x", ...
};

struct SearchTrace {
  std::vector<SearchStep> iterations;
  bool converged = false;
  int total_evaluations = 0;  // evaluator requests, cache hits included
  int cache_hits = 0;
  int failed_evaluations = 0;
};

struct SearchOptions {
  int restarts = 4;
  int sweep_cap = 20;
  int grid_levels = 3;
  int grid_points = 21;
  std::uint64_t root_seed = 0;
};

struct SearchResult {
  Design design;
  double expected_loss = std::numeric_limits<double>::infinity();
  SearchTrace trace;
};

inline nlohmann::json to_json(const Location& p) {
  return {{"x", p.x}, {"y", p.y}, {"covariates", p.covariates}};
}

inline nlohmann::json to_json(const SearchTrace& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.iterations) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : s.design.points) pts.push_back(to_json(p));
    steps.push_back({{"restart", s.restart},
                     {"expected_loss", s.expected_loss},
                     {"changed", s.changed_coordinate},
                     {"design", pts}});
  }
  return {{"converged", t.converged},
          {"total_evaluations", t.total_evaluations},
          {"cache_hits", t.cache_hits},
          {"failed_evaluations", t.failed_evaluations},
          {"iterations", steps}};
}

namespace detail {

inline std::string design_key(const Design& d) {
  const Design c = canonical_design(d);
  std::ostringstream os;
  os.precision(17);
  for (const auto& p : c.points) os << p.x << ',' << p.y << ';';
  return os.str();
}

// Memoises evaluator results by design (point set). Failures are memoised
// too so a failing design is not retried within one search.
class EvaluationCache {
 public:
  EvaluationCache(const DesignEvaluator& f, SearchTrace& trace) : f_(f), trace_(trace) {}

  // Evaluates all designs, uncached ones in parallel; results in input order.
  std::vector<std::optional<double>> batch(const std::vector<Design>& designs) {
    std::vector<std::optional<double>> out(designs.size());
    std::vector<std::string> keys(designs.size());
    std::vector<std::size_t> todo;
    std::map<std::string, std::size_t> first;
    for (std::size_t i = 0; i < designs.size(); ++i) {
      keys[i] = design_key(designs[i]);
      ++trace_.total_evaluations;
      if (cache_.count(keys[i]) || first.count(keys[i])) {
        ++trace_.cache_hits;
        continue;
      }
      first.emplace(keys[i], i);
      todo.push_back(i);
    }
    std::vector<std::optional<double>> fresh(todo.size());
    parallel_for(todo.size(), [&](std::size_t j) {
      try {
        fresh[j] = f_(designs[todo[j]]);
      } catch (const EvaluationError&) {
        fresh[j] = std::nullopt;
      }
    });
    for (std::size_t j = 0; j < todo.size(); ++j) {
      if (!fresh[j]) ++trace_.failed_evaluations;
      cache_[keys[todo[j]]] = fresh[j];
    }
    for (std::size_t i = 0; i < designs.size(); ++i) out[i] = cache_.at(keys[i]);
    return out;
  }

  std::optional<double> one(const Design& d) { return batch({d}).front(); }

 private:
  const DesignEvaluator& f_;
  SearchTrace& trace_;
  std::map<std::string, std::optional<double>> cache_;
};

// Index of the smallest value strictly below `incumbent`; ties resolve to the
// first candidate, and a tie with the incumbent is no move.
inline std::optional<std::size_t> best_strict(const std::vector<std::optional<double>>& v,
                                              double incumbent) {
  std::optional<std::size_t> best;
  double b = incumbent;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] && *v[i] < b) {
      b = *v[i];
      best = i;
    }
  return best;
}

}  // namespace detail

// Coordinate exchange over a finite candidate set. Each sweep visits design
// points in order; for each, every admissible candidate is tried and the best
// strict improvement is accepted.
inline SearchResult coordinate_exchange_discrete(const DesignSpace& space, std::size_t n,
                                                 const DesignEvaluator& evaluator,
                                                 const SearchOptions& opt) {
  space.validate();
  if (!space.is_discrete()) throw DomainError("discrete coordinate exchange needs a discrete space");
  const auto& cand = std::get<DiscreteSpace>(space.mode).candidates;
  const std::size_t M = cand.size();
  if (n < 1) throw DomainError("design size must be at least 1");
  if (!space.allow_replicates && n > M)
    throw DomainError("design size " + std::to_string(n) + " exceeds the " + std::to_string(M) +
                      " candidates and replicates are not allowed");
  if (opt.restarts < 1) throw DomainError("at least one restart is required");

  SearchResult result;
  detail::EvaluationCache cache(evaluator, result.trace);
  auto make = [&](const std::vector<std::size_t>& idx) {
    Design d;
    for (auto i : idx) d.points.push_back(cand[i]);
    return d;
  };
  bool all_converged = true;
  for (int r = 0; r < opt.restarts; ++r) {
    RngStream rng(derive_seed(opt.root_seed, {stream::kStart, static_cast<std::uint64_t>(r)}));
    std::vector<std::size_t> cur;
    std::optional<double> cur_loss;
    for (int attempt = 0; attempt < 10 && !cur_loss; ++attempt) {
      if (space.allow_replicates) {
        cur.assign(n, 0);
        for (auto& c : cur) c = rng.index(M);
      } else {
        std::vector<std::size_t> perm(M);
        for (std::size_t i = 0; i < M; ++i) perm[i] = i;
        for (std::size_t i = 0; i < n; ++i) std::swap(perm[i], perm[i + rng.index(M - i)]);
        cur.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
      }
      cur_loss = cache.one(make(cur));
    }
    if (!cur_loss) throw EvaluationError("no evaluable starting design found");
    result.trace.iterations.push_back({r, make(cur), *cur_loss, "start"});

    bool converged = false;
    for (int sweep = 0; sweep < opt.sweep_cap; ++sweep) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> options;
        for (std::size_t c = 0; c < M; ++c) {
          if (c == cur[i]) continue;
          if (!space.allow_replicates && std::find(cur.begin(), cur.end(), c) != cur.end()) continue;
          options.push_back(c);
        }
        std::vector<Design> trial;
        for (auto c : options) {
          auto idx = cur;
          idx[i] = c;
          trial.push_back(make(idx));
        }
        const auto losses = cache.batch(trial);
        if (const auto b = detail::best_strict(losses, *cur_loss)) {
          cur[i] = options[*b];
          cur_loss = losses[*b];
          changed = true;
          result.trace.iterations.push_back({r, make(cur), *cur_loss, "point " + std::to_string(i)});
        }
      }
      if (!changed) {
        converged = true;
        break;
      }
    }
    all_converged = all_converged && converged;
    if (*cur_loss < result.expected_loss) {
      result.expected_loss = *cur_loss;
      result.design = make(cur);
    }
  }
  result.trace.converged = all_converged;
  return result;
}

// Smallest grid spacing reached by the continuous search.
inline double final_grid_spacing(const Rectangle& b, const SearchOptions& opt) {
  const double w = std::min(b.xmax - b.xmin, b.ymax - b.ymin);
  return w / (opt.grid_points - 1) / std::pow(2.0, opt.grid_levels - 1);
}

// Coordinate exchange over a rectangle: each scalar coordinate is line-searched
// over a grid of grid_points values; once a resolution level stops improving,
// the grid span is halved around the incumbent, for grid_levels levels.
inline SearchResult coordinate_exchange_continuous(const DesignSpace& space, std::size_t n,
                                                   const DesignEvaluator& evaluator,
                                                   const SearchOptions& opt) {
  space.validate();
  if (space.is_discrete()) throw DomainError("continuous coordinate exchange needs a rectangle");
  if (n < 1) throw DomainError("design size must be at least 1");
  if (opt.restarts < 1 || opt.grid_levels < 1 || opt.grid_points < 2)
    throw DomainError("restarts, grid_levels must be >= 1 and grid_points >= 2");
  const auto& cs = std::get<ContinuousSpace>(space.mode);
  const Rectangle& bx = cs.bounds;
  const double min_sep = final_grid_spacing(bx, opt);

  SearchResult result;
  detail::EvaluationCache cache(evaluator, result.trace);
  auto make = [&](const std::vector<std::array<double, 2>>& c) {
    Design d;
    for (const auto& p : c) d.points.push_back(cs.make_location(p[0], p[1]));
    return d;
  };
  auto admissible = [&](const std::vector<std::array<double, 2>>& c, std::size_t i) {
    if (space.allow_replicates) return true;
    for (std::size_t j = 0; j < c.size(); ++j)
      if (j != i && std::hypot(c[i][0] - c[j][0], c[i][1] - c[j][1]) <= min_sep) return false;
    return true;
  };

  bool all_converged = true;
  for (int r = 0; r < opt.restarts; ++r) {
    RngStream rng(derive_seed(opt.root_seed, {stream::kStart, static_cast<std::uint64_t>(r)}));
    std::vector<std::array<double, 2>> cur(n);
    std::optional<double> cur_loss;
    for (int attempt = 0; attempt < 10 && !cur_loss; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) {
        for (int tries = 0; tries < 1000; ++tries) {
          cur[i] = {bx.xmin + rng.uniform() * (bx.xmax - bx.xmin),
                    bx.ymin + rng.uniform() * (bx.ymax - bx.ymin)};
          std::vector<std::array<double, 2>> head(cur.begin(),
                                                  cur.begin() + static_cast<std::ptrdiff_t>(i + 1));
          if (admissible(head, i)) break;
        }
      }
      cur_loss = cache.one(make(cur));
    }
    if (!cur_loss) throw EvaluationError("no evaluable starting design found");
    result.trace.iterations.push_back({r, make(cur), *cur_loss, "start"});

    bool converged = true;
    for (int level = 0; level < opt.grid_levels; ++level) {
      const double scale = std::pow(0.5, level);
      bool level_done = false;
      for (int sweep = 0; sweep < opt.sweep_cap; ++sweep) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
          for (int axis = 0; axis < 2; ++axis) {
            const double lo = axis == 0 ? bx.xmin : bx.ymin;
            const double hi = axis == 0 ? bx.xmax : bx.ymax;
            const double span = (hi - lo) * scale;
            double a = std::clamp(cur[i][axis] - 0.5 * span, lo, hi - span);
            if (level == 0) a = lo;
            std::vector<std::vector<std::array<double, 2>>> coords;
            for (int g = 0; g < opt.grid_points; ++g) {
              const double v = g == opt.grid_points - 1 ? a + span
                                                        : a + span * g / (opt.grid_points - 1);
              if (v == cur[i][axis]) continue;
              auto c = cur;
              c[i][axis] = v;
              if (!admissible(c, i)) continue;
              coords.push_back(std::move(c));
            }
            std::vector<Design> trial;
            for (const auto& c : coords) trial.push_back(make(c));
            const auto losses = cache.batch(trial);
            if (const auto b = detail::best_strict(losses, *cur_loss)) {
              cur = coords[*b];
              cur_loss = losses[*b];
              changed = true;
              result.trace.iterations.push_back(
                  {r, make(cur), *cur_loss,
                   "point " + std::to_string(i) + (axis == 0 ? " x" : " y")});
            }
          }
        }
        if (!changed) {
          level_done = true;
          break;
        }
      }
      converged = converged && level_done;
    }
    all_converged = all_converged && converged;
    if (*cur_loss < result.expected_loss) {
      result.expected_loss = *cur_loss;
      result.design = make(cur);
    }
  }
  result.trace.converged = all_converged;
  return result;
}

inline SearchResult coordinate_exchange(const DesignSpace& space, std::size_t n,
                                        const DesignEvaluator& evaluator, const SearchOptions& opt) {
  return space.is_discrete() ? coordinate_exchange_discrete(space, n, evaluator, opt)
                             : coordinate_exchange_continuous(space, n, evaluator, opt);
}

// Evaluator for one loss kind under fixed budgets and a fixed root seed, so
// every candidate design in a search shares common random numbers.
inline DesignEvaluator make_loss_evaluator(const Problem& problem, LossKind kind,
                                           const LossBudgets& budgets, std::uint64_t root_seed) {
  return [problem, kind, budgets, root_seed](const Design& d) {
    return expected_loss(d, problem, LossSpec{kind, budgets}, root_seed).expected_loss;
  };
}

}  // namespace geodesign

#endif  // GEODESIGN_OPTIMIZER_HPP
