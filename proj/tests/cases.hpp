// Laplace-fit reference problems with independently computed answers, shared
// by the unit tests and the acceptance runner.
#ifndef GEODESIGN_TESTS_CASES_HPP
#define GEODESIGN_TESTS_CASES_HPP

#include <Eigen/Dense>

#include "geodesign/inference.hpp"
#include "geodesign/problem.hpp"

namespace cases {

using namespace geodesign;

struct FitCase {
  std::vector<BivariateObservation> data;
  Design design;
  PriorSpec prior;
  FitOptions options;
  std::uint64_t fit_seed = 0;
};

inline Design random_unit_design(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  Design d;
  for (std::size_t i = 0; i < n; ++i) d.points.push_back(unit_square_location(rng.uniform(), rng.uniform()));
  return d;
}

inline std::vector<BivariateObservation> simulate(const Design& d, const ParameterVector& theta,
                                                  int reps, std::uint64_t seed) {
  RngStream rng(seed);
  const auto s1 = sample_gaussian_field(build_covariance(d.points, theta.matern1()), rng);
  const auto s2 = sample_gaussian_field(build_covariance(d.points, theta.matern2()), rng);
  return simulate_bivariate(d, GlsmSpec{}, theta, s1, s2, reps, rng);
}

// Only beta1 is free; the fields are negligible and the copula is at
// independence, so y1 | beta1 is a Normal linear model with known sigma1 and
// the posterior of beta1 is the Normal-Normal conjugate one.
struct Conjugate {
  FitCase fit;
  Eigen::Vector3d mean;
  Eigen::Matrix3d covariance;
};

inline Conjugate conjugate_case(std::uint64_t seed) {
  Conjugate c;
  PriorSpec prior = scenario_prior(Scenario::moderate);
  prior.mean(kLogSillRatio1) = prior.mean(kLogSillRatio2) = -40.0;
  prior.mean(kLogitTau) = -20.0;
  c.fit.prior = prior;
  c.fit.design = random_unit_design(8, seed);
  ParamVec truth = prior.mean;
  truth.segment<3>(kBeta10) += Eigen::Vector3d(0.7, -0.4, 0.3);
  c.fit.data = simulate(c.fit.design, ParameterVector(truth), 3, seed + 1);
  c.fit.options.free.fill(false);
  for (int i : {kBeta10, kBeta11, kBeta12}) c.fit.options.free[static_cast<std::size_t>(i)] = true;
  c.fit.options.B = 50;
  c.fit.fit_seed = seed + 2;

  const double s2 = std::exp(2.0 * prior.mean(kLogSigma1));
  Eigen::Matrix3d XtX = Eigen::Matrix3d::Zero();
  Eigen::Vector3d Xty = Eigen::Vector3d::Zero();
  for (const auto& o : c.fit.data) {
    const auto& p = c.fit.design[o.location_index];
    const Eigen::Vector3d x(1.0, p.covariates[0], p.covariates[1]);
    XtX += x * x.transpose();
    Xty += x * o.y1;
  }
  const Eigen::Matrix3d V0 = prior.covariance.block<3, 3>(kBeta10, kBeta10);
  const Eigen::Vector3d m0 = prior.mean.segment<3>(kBeta10);
  const Eigen::Matrix3d P = V0.inverse() + XtX / s2;
  c.covariance = P.inverse();
  c.mean = c.covariance * (V0.inverse() * m0 + Xty / s2);
  return c;
}

inline GaussianApprox run(const FitCase& f) {
  RngStream rng(f.fit_seed);
  return laplace_fit(f.data, f.design, GlsmSpec{}, f.prior, f.options, rng);
}

// Two free intercepts (beta10, beta20); the mode is located by brute force on
// the same common-random-number objective: a 200 x 200 grid over the prior
// +-4 sd box, then two 41 x 41 zooms around the best cell.
struct GridOracle {
  FitCase fit;
  Eigen::Vector2d mode;
};

inline GridOracle grid_case(std::uint64_t seed, std::size_t n = 6, int B = 100) {
  GridOracle g;
  g.fit.prior = scenario_prior(Scenario::moderate);
  // low counts: with rates near 45 the count likelihood is so sharp that the
  // B-draw average is a rugged mixture of isolated peaks
  g.fit.prior.mean(kBeta20) = 0.0;
  g.fit.design = random_unit_design(n, seed);
  g.fit.data = simulate(g.fit.design, ParameterVector(g.fit.prior.mean), 2, seed + 1);
  g.fit.options.free.fill(false);
  g.fit.options.free[kBeta10] = g.fit.options.free[kBeta20] = true;
  g.fit.options.B = B;
  g.fit.fit_seed = seed + 2;

  // laplace_fit draws its innovations first from the stream it is handed
  RngStream rng(g.fit.fit_seed);
  const FieldNoise noise = draw_field_noise(static_cast<Eigen::Index>(g.fit.design.size()), g.fit.options.B, rng);
  const auto& prior = g.fit.prior;
  const double v1 = prior.covariance(kBeta10, kBeta10), v2 = prior.covariance(kBeta20, kBeta20);
  auto logpost = [&](double b1, double b2) {
    ParamVec t = prior.mean;
    t(kBeta10) = b1;
    t(kBeta20) = b2;
    const double d1 = b1 - prior.mean(kBeta10), d2 = b2 - prior.mean(kBeta20);
    return mc_loglikelihood(g.fit.data, g.fit.design.points, GlsmSpec{}, ParameterVector(t), noise) -
           0.5 * (d1 * d1 / v1 + d2 * d2 / v2);
  };
  double c1 = prior.mean(kBeta10), c2 = prior.mean(kBeta20);
  double h1 = 8.0 * std::sqrt(v1), h2 = 8.0 * std::sqrt(v2);
  int N = 200;
  for (int stage = 0; stage < 3; ++stage) {
    double best = -std::numeric_limits<double>::infinity(), b1 = c1, b2 = c2;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        const double x = c1 - h1 / 2 + h1 * i / (N - 1), y = c2 - h2 / 2 + h2 * j / (N - 1);
        const double v = logpost(x, y);
        if (v > best) {
          best = v;
          b1 = x;
          b2 = y;
        }
      }
    c1 = b1;
    c2 = b2;
    h1 = 4.0 * h1 / (N - 1);
    h2 = 4.0 * h2 / (N - 1);
    N = 41;
  }
  g.mode = {c1, c2};
  return g;
}

}  // namespace cases

#endif  // GEODESIGN_TESTS_CASES_HPP
