#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "geodesign/evaluation.hpp"

using namespace geodesign;

namespace {

Problem small_problem(Scenario s = Scenario::moderate) {
  Problem p = unit_square_problem(s);
  p.fit.restarts = 1;
  return p;
}

LossBudgets tiny_budgets(int K = 3) {
  LossBudgets b;
  b.K = K;
  b.B = 30;
  b.R = 60;
  b.K_inner = 5;
  return b;
}

double nearest_neighbour(const Design& d, std::size_t i) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < d.size(); ++j)
    if (j != i) m = std::min(m, distance(d[i], d[j]));
  return m;
}

double sample_variance(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST(Efficiency, AgainstItselfIsExactlyOneHundred) {
  const std::vector<double> v{-3.25, -1.5, -7.125, -0.1};
  EXPECT_EQ(efficiency_percent(v, v), 100.0);
}

TEST(Efficiency, RatioOfSums) {
  EXPECT_DOUBLE_EQ(efficiency_percent({-4.0, -2.0}, {-1.0, -2.0}), 200.0);
  EXPECT_DOUBLE_EQ(efficiency_percent({-1.0, -0.5}, {-1.0, -2.0}), 50.0);
  // taken verbatim: no clamping or sign handling
  EXPECT_DOUBLE_EQ(efficiency_percent({1.0}, {-2.0}), -50.0);
}

TEST(Efficiency, ZeroReferenceIsAnError) {
  EXPECT_THROW(efficiency_percent({1.0}, {1.0, -1.0}), EvaluationError);
}

TEST(Efficiency, JsonCarriesAllFields) {
  const EfficiencyReport r{"abc", "def", Objective::P, 97.5, 20};
  const auto j = to_json(r);
  EXPECT_EQ(j.at("design_id"), "abc");
  EXPECT_EQ(j.at("reference_design_id"), "def");
  EXPECT_EQ(j.at("objective"), "P");
  EXPECT_EQ(j.at("efficiency_percent").get<double>(), 97.5);
  EXPECT_EQ(j.at("reps"), 20);
}

TEST(Correlation, KnownValues) {
  const std::vector<double> a{1, 2, 3, 4, 5};
  std::vector<double> b, c;
  for (double x : a) {
    b.push_back(3.0 * x - 1.0);
    c.push_back(-0.5 * x + 7.0);
  }
  EXPECT_NEAR(pearson_correlation(a, b), 1.0, 1e-15);
  EXPECT_NEAR(pearson_correlation(a, c), -1.0, 1e-15);
  // hand computed: cov = 1.4, var(a) = 2, var(d) = 1.36
  EXPECT_NEAR(pearson_correlation(a, {2, 1, 4, 3, 5}), 0.8, 1e-15);
  EXPECT_NEAR(pearson_correlation({0, 1, 0, 1}, {1, 1, 0, 0}), 0.0, 1e-15);
}

TEST(Correlation, RejectsBadInput) {
  EXPECT_THROW(pearson_correlation({1.0}, {2.0}), DomainError);
  EXPECT_THROW(pearson_correlation({1.0, 2.0}, {2.0}), DomainError);
}

TEST(Timing, LogLogSlopeOfPowerLaw) {
  const std::vector<double> x{50, 100, 200};
  std::vector<double> y;
  for (double v : x) y.push_back(0.3 * v * v * v);
  EXPECT_NEAR(log_log_slope(x, y), 3.0, 1e-12);
}

TEST(ReferenceDesigns, TriangularHasEqualNearestNeighbours) {
  for (std::size_t n : {5u, 10u, 16u}) {
    const Design d = triangular_design(n, {}, unit_square_location);
    ASSERT_EQ(d.size(), n);
    const double h = nearest_neighbour(d, 0);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(nearest_neighbour(d, i), h, 1e-12) << "n=" << n << " i=" << i;
      EXPECT_TRUE(Rectangle{}.contains(d[i]));
    }
  }
}

TEST(ReferenceDesigns, TriangularFillsTheBox) {
  const Rectangle box{-1, 3, 0, 1};
  const Design d = triangular_design(10, box, unit_square_location);
  double xmin = 1e9, xmax = -1e9, ymin = 1e9, ymax = -1e9;
  for (const auto& p : d.points) {
    EXPECT_TRUE(box.contains(p));
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  // one axis is tight, the slack on the other is split evenly
  const bool x_tight = std::abs(xmin - box.xmin) < 1e-12 && std::abs(xmax - box.xmax) < 1e-12;
  const bool y_tight = std::abs(ymin - box.ymin) < 1e-12 && std::abs(ymax - box.ymax) < 1e-12;
  EXPECT_TRUE(x_tight || y_tight);
  EXPECT_NEAR(xmin - box.xmin, box.xmax - xmax, 1e-12);
  EXPECT_NEAR(ymin - box.ymin, box.ymax - ymax, 1e-12);
}

TEST(ReferenceDesigns, BoundaryPointsLieOnThePerimeter) {
  const Design corners = boundary_design(4, {}, unit_square_location);
  const double expect[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(corners[static_cast<std::size_t>(i)].x, expect[i][0], 1e-15);
    EXPECT_NEAR(corners[static_cast<std::size_t>(i)].y, expect[i][1], 1e-15);
  }
  const Design d = boundary_design(10, {}, unit_square_location);
  for (const auto& p : d.points) {
    const double edge = std::min({p.x, 1 - p.x, p.y, 1 - p.y});
    EXPECT_NEAR(edge, 0.0, 1e-12);
  }
  EXPECT_NEAR(distance(d[0], d[1]), 0.4, 1e-12);  // equal arc length along an edge
}

TEST(ReferenceDesigns, ClosePredStartsAtCentreAndSpreads) {
  const PredictionSet xi = unit_square_prediction_grid();
  const Design d = close_pred_design(5, xi);
  EXPECT_EQ(d[0].x, 0.5);
  EXPECT_EQ(d[0].y, 0.5);
  // the next four are the corners, the farthest grid points
  for (std::size_t i = 1; i < 5; ++i) {
    EXPECT_TRUE(d[i].x == 0.0 || d[i].x == 1.0);
    EXPECT_TRUE(d[i].y == 0.0 || d[i].y == 1.0);
  }
  const Design all = close_pred_design(xi.size(), xi);
  EXPECT_EQ(design_id(all), design_id(Design{xi.points}));
  EXPECT_THROW(close_pred_design(xi.size() + 1, xi), DomainError);
}

TEST(ReplicateLosses, SingleReplicateEqualsExpectedLoss) {
  const Problem p = small_problem();
  const auto b = tiny_budgets();
  const Design d = triangular_design(3, {}, unit_square_location);
  const auto t = replicate_losses({d}, p, b, 1, 11, 2.5);
  const double e = expected_loss(d, p, {LossKind::estimation, b}, replicate_seed(11, 0)).expected_loss;
  const double m = expected_loss(d, p, {LossKind::prediction_mvn, b}, replicate_seed(11, 0)).expected_loss;
  EXPECT_EQ(t.E[0][0], e);
  EXPECT_EQ(t.P[0][0], m - 2.5);
  EXPECT_EQ(t.D[0][0], t.P[0][0] + t.E[0][0]);
}

TEST(ReplicateLosses, DesignsArePairedAndIdenticalDesignsAgree) {
  const Problem p = small_problem();
  const Design d = boundary_design(3, {}, unit_square_location);
  Design shuffled{{d[2], d[0], d[1]}};
  const auto t = replicate_losses({d, shuffled}, p, tiny_budgets(), 3, 5, 0.0);
  EXPECT_EQ(t.design_ids[0], t.design_ids[1]);
  for (auto o : {Objective::E, Objective::P, Objective::D}) {
    EXPECT_EQ(t.values(o)[0], t.values(o)[1]);
    EXPECT_EQ(efficiency(t, 1, 0, o).efficiency_percent, 100.0);
  }
  // replicates differ from each other
  EXPECT_NE(t.E[0][0], t.E[0][1]);
  EXPECT_THROW(replicate_losses({d}, p, tiny_budgets(), 0, 5, 0.0), DomainError);
}

TEST(LossDistribution, SpreadShrinksLikeOneOverK) {
  const Problem p = small_problem();
  const Design d{{unit_square_location(0.2, 0.3), unit_square_location(0.7, 0.8)}};
  const auto small = loss_distribution(d, p, LossKind::estimation, tiny_budgets(4), 30, 17);
  const auto large = loss_distribution(d, p, LossKind::estimation, tiny_budgets(16), 30, 18);
  const double ratio = sample_variance(small.values) / sample_variance(large.values);
  EXPECT_GT(ratio, 2.0);
  EXPECT_LT(ratio, 8.0);
  EXPECT_EQ(small.design_id, design_id(d));
}

TEST(ApproximationStudy, IdenticalDesignsGiveIdenticalRows) {
  const Problem p = small_problem();
  const Design d = triangular_design(3, {}, unit_square_location);
  const Design e = boundary_design(3, {}, unit_square_location);
  const auto s = approximation_study({d, e, Design{{d[1], d[2], d[0]}}}, p, tiny_budgets(), 3);
  ASSERT_EQ(s.rows.size(), 3u);
  EXPECT_EQ(s.rows[0].nested, s.rows[2].nested);
  EXPECT_EQ(s.rows[0].mvn, s.rows[2].mvn);
  EXPECT_NE(s.rows[0].mvn, s.rows[1].mvn);
  EXPECT_LE(std::abs(s.correlation), 1.0);
  EXPECT_THROW(approximation_study({d}, p, tiny_budgets(), 3), DomainError);
}

TEST(ApproximationStudy, RandomDesignsAreReproducibleAndInside) {
  const Rectangle box{2, 4, -1, 0};
  const auto a = random_designs(4, 6, box, unit_square_location, 9);
  const auto b = random_designs(4, 6, box, unit_square_location, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(design_id(a[i]), design_id(b[i]));
    for (const auto& q : a[i].points) EXPECT_TRUE(box.contains(q));
  }
  EXPECT_NE(design_id(a[0]), design_id(a[1]));
}

TEST(FixedDesigns, PosteriorVarianceBelowPrior) {
  const Problem p = small_problem(Scenario::strong);
  auto b = tiny_budgets();
  b.R = 400;
  const auto s = fixed_design_study({{"tri", triangular_design(5, {}, unit_square_location)}}, p, b, 4, 21);
  ASSERT_EQ(s.locations.size(), 2 * p.prediction.size());
  ASSERT_EQ(s.parameters.size(), static_cast<std::size_t>(kParamDim));
  EXPECT_EQ(s.failures.at("tri"), 0);
  // the regression and noise parameters are learned; the field parameters may
  // barely move off the prior
  for (int i = kBeta10; i <= kLogSigma1; ++i)
    EXPECT_LT(s.parameters[static_cast<std::size_t>(i)].post_var,
              s.parameters[static_cast<std::size_t>(i)].prior_var)
        << s.parameters[static_cast<std::size_t>(i)].parameter;
  double prior = 0.0, post = 0.0;
  for (const auto& r : s.locations) {
    prior += r.prior_var;
    post += r.post_var;
  }
  EXPECT_LT(post, prior);
  EXPECT_TRUE(std::isfinite(s.mean_post_var("tri", 1)));
  EXPECT_TRUE(std::isnan(s.mean_post_var("other", 1)));
}
