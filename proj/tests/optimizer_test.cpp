#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "geodesign/optimizer.hpp"
#include "geodesign/problem.hpp"

using namespace geodesign;

namespace {

std::vector<Location> six_candidates() {
  return {unit_square_location(0.1, 0.2), unit_square_location(0.8, 0.1), unit_square_location(0.5, 0.5),
          unit_square_location(0.2, 0.9), unit_square_location(0.9, 0.8), unit_square_location(0.4, 0.3)};
}

double min_pair_distance(const Design& d) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) m = std::min(m, distance(d[i], d[j]));
  return m;
}

// Deterministic toy losses with distinct values over 3-subsets.
double spread_loss(const Design& d) {
  double s = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) s -= std::log(distance(d[i], d[j]) + 0.05);
  return s;
}

double corner_loss(const Design& d) {
  double s = 0;
  for (const auto& p : d.points) s += std::hypot(p.x - 0.85, p.y - 0.15) + 0.01 * p.y;
  return s + 0.3 * std::abs(d[0].x + d[1].x + d[2].x - 1.2);
}

std::string key(Design d) { return design_id(canonical_design(std::move(d))); }

Design best_subset(const std::vector<Location>& c, const DesignEvaluator& f) {
  double best = std::numeric_limits<double>::infinity();
  Design arg;
  for (std::size_t a = 0; a < c.size(); ++a)
    for (std::size_t b = a + 1; b < c.size(); ++b)
      for (std::size_t e = b + 1; e < c.size(); ++e) {
        const Design d{{c[a], c[b], c[e]}};
        const double v = f(d);
        if (v < best) {
          best = v;
          arg = d;
        }
      }
  return arg;
}

void expect_monotone(const SearchTrace& t) {
  std::map<int, double> last;
  for (const auto& s : t.iterations) {
    if (last.count(s.restart)) {
      EXPECT_LE(s.expected_loss, last[s.restart]);
    }
    last[s.restart] = s.expected_loss;
  }
}

}  // namespace

TEST(DiscreteExchange, MatchesExhaustiveSearchOnToyLosses) {
  const auto space = DesignSpace::discrete(six_candidates());
  SearchOptions o;
  o.root_seed = 3;
  for (const DesignEvaluator& f : {DesignEvaluator(spread_loss), DesignEvaluator(corner_loss)}) {
    const auto r = coordinate_exchange(space, 3, f, o);
    EXPECT_EQ(key(r.design), key(best_subset(six_candidates(), f)));
    EXPECT_EQ(r.expected_loss, f(r.design));
    EXPECT_TRUE(r.trace.converged);
    expect_monotone(r.trace);
  }
}

TEST(DiscreteExchange, MatchesExhaustiveSearchOnEstimationLoss) {
  Problem p = unit_square_problem(Scenario::moderate);
  p.fit.restarts = 1;
  const auto f = make_loss_evaluator(p, LossKind::estimation, {3, 40, 20, 5}, 4);
  SearchOptions o;
  o.root_seed = 5;
  const auto r = coordinate_exchange(DesignSpace::discrete(six_candidates()), 3, f, o);
  EXPECT_EQ(key(r.design), key(best_subset(six_candidates(), f)));
}

TEST(DiscreteExchange, WithoutReplicatesPointsAreDistinct) {
  // every point wants to sit on candidate 2
  auto f = [](const Design& d) {
    double s = 0;
    for (const auto& p : d.points) s += std::hypot(p.x - 0.5, p.y - 0.5);
    return s;
  };
  const auto r = coordinate_exchange(DesignSpace::discrete(six_candidates()), 4, f, {});
  EXPECT_GT(min_pair_distance(r.design), 0.0);
  const auto rep = coordinate_exchange(DesignSpace::discrete(six_candidates(), true), 4, f, {});
  EXPECT_EQ(min_pair_distance(rep.design), 0.0);
  EXPECT_NEAR(rep.expected_loss, 0.0, 1e-15);
}

TEST(DiscreteExchange, RejectsImpossibleRequests) {
  EXPECT_THROW(coordinate_exchange(DesignSpace::discrete(six_candidates()), 7, spread_loss, {}), DomainError);
  EXPECT_THROW(coordinate_exchange(DesignSpace::discrete({}), 1, spread_loss, {}), DomainError);
}

TEST(ContinuousExchange, QuadraticBowlFindsCentre) {
  SearchOptions o;
  o.root_seed = 6;
  const auto space = DesignSpace::continuous({}, unit_square_location);
  auto bowl = [](const Design& d) { return std::pow(d[0].x - 0.5, 2) + 3 * std::pow(d[0].y - 0.5, 2); };
  const auto r = coordinate_exchange(space, 1, bowl, o);
  const double h = final_grid_spacing({}, o);
  EXPECT_LE(std::abs(r.design[0].x - 0.5), h);
  EXPECT_LE(std::abs(r.design[0].y - 0.5), h);
  expect_monotone(r.trace);
}

TEST(ContinuousExchange, DistanceToTargetRecoversTarget) {
  SearchOptions o;
  o.root_seed = 7;
  const Rectangle box{-2, 3, 1, 2};
  const auto space = DesignSpace::continuous(box, unit_square_location);
  auto f = [](const Design& d) { return std::hypot(d[0].x - 1.234, d[0].y - 1.618); };
  const auto r = coordinate_exchange(space, 1, f, o);
  // the grid spacing is per axis: final_grid_spacing reports the finer one
  const double hx = 5.0 / (o.grid_points - 1) / std::pow(2.0, o.grid_levels - 1);
  EXPECT_LE(std::abs(r.design[0].x - 1.234), hx);
  EXPECT_LE(std::abs(r.design[0].y - 1.618), final_grid_spacing(box, o));
  for (const auto& p : r.design.points) EXPECT_TRUE(box.contains(p));
}

TEST(ContinuousExchange, WithoutReplicatesPointsStaySeparated) {
  SearchOptions o;
  o.root_seed = 8;
  auto f = [](const Design& d) {
    double s = 0;
    for (const auto& p : d.points) s += std::hypot(p.x - 0.3, p.y - 0.3);
    return s;
  };
  const auto r = coordinate_exchange(DesignSpace::continuous({}, unit_square_location), 3, f, o);
  EXPECT_GT(min_pair_distance(r.design), final_grid_spacing({}, o));
  expect_monotone(r.trace);
}

TEST(ContinuousExchange, SameSeedSameDesign) {
  Problem p = unit_square_problem(Scenario::weak);
  p.fit.restarts = 1;
  const auto f = make_loss_evaluator(p, LossKind::prediction_variance, {2, 30, 20, 5}, 9);
  SearchOptions o;
  o.root_seed = 10;
  o.restarts = 1;
  o.grid_levels = 1;
  o.grid_points = 5;
  o.sweep_cap = 2;
  const auto space = DesignSpace::continuous({}, unit_square_location);
  const auto a = coordinate_exchange(space, 3, f, o);
  const auto b = coordinate_exchange(space, 3, f, o);
  EXPECT_EQ(key(a.design), key(b.design));
  EXPECT_EQ(a.expected_loss, b.expected_loss);
  EXPECT_EQ(to_json(a.trace).dump(), to_json(b.trace).dump());
  expect_monotone(a.trace);
}

TEST(ContinuousExchange, CountsCacheHitsAndEvaluations) {
  std::atomic<int> calls = 0;
  auto f = [&calls](const Design& d) {
    ++calls;
    return std::hypot(d[0].x - 0.5, d[0].y - 0.5);
  };
  SearchOptions o;
  o.restarts = 2;
  const auto r = coordinate_exchange(DesignSpace::continuous({}, unit_square_location), 1, f, o);
  EXPECT_EQ(r.trace.total_evaluations - r.trace.cache_hits, calls);
  EXPECT_GT(r.trace.cache_hits, 0);
}
