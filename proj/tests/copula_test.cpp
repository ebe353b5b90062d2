#include <cmath>

#include <gtest/gtest.h>

#include "geodesign/copula.hpp"
#include "geodesign/problem.hpp"
#include "oracles.hpp"

using namespace geodesign;

namespace {

// Constant-mean parameter vector with negligible fields.
ParameterVector flat_theta(double mu1, double sigma1, double log_rate, double logit_tau) {
  ParamVec v = ParamVec::Zero();
  v(kBeta10) = mu1;
  v(kBeta20) = log_rate;
  v(kLogSigma1) = std::log(sigma1);
  v(kLogSillRatio1) = v(kLogSillRatio2) = -30.0;
  v(kLogRange1) = v(kLogRange2) = std::log(0.5);
  v(kLogSmooth1) = v(kLogSmooth2) = std::log(0.5);
  v(kLogitTau) = logit_tau;
  return ParameterVector(v);
}

std::vector<BivariateObservation> simulate_iid(const ParameterVector& theta, int n, std::uint64_t seed) {
  const std::vector<Location> one{unit_square_location(0.5, 0.5)};
  RngStream rng(seed);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  return simulate_bivariate(one, GlsmSpec{}, theta, zero, zero, n, rng);
}

}  // namespace

TEST(Clayton, CdfExamples) {
  EXPECT_DOUBLE_EQ(clayton_cdf(0.3, 1.0, 2.0), 0.3);
  EXPECT_NEAR(clayton_cdf(0.5, 0.5, 2.0), 1.0 / std::sqrt(7.0), 1e-15);
  EXPECT_NEAR(clayton_cdf(0.2, 0.7, 0.001), 0.14, 2e-3);
  EXPECT_THROW(clayton_cdf(0.5, 0.5, 0.0), DomainError);
  EXPECT_THROW(clayton_cdf(0.5, 0.5, -1.0), DomainError);
}

TEST(Clayton, ConditionalCdfExamples) {
  EXPECT_DOUBLE_EQ(clayton_du1(0.4, 1.0, 3.0), 1.0);
  const double h = 1e-5;
  const double fd = (clayton_cdf(0.5 + h, 0.5, 2.0) - clayton_cdf(0.5 - h, 0.5, 2.0)) / (2 * h);
  EXPECT_NEAR(clayton_du1(0.5, 0.5, 2.0), fd, 1e-6);
  EXPECT_NEAR(clayton_du1(0.3, 0.8, 1e-9), 0.8, 1e-6);
  EXPECT_THROW(clayton_du1(0.0, 0.5, 2.0), DomainError);
}

TEST(Clayton, TwoIncreasing) {
  RngStream rng(1);
  for (int i = 0; i < 1000; ++i) {
    double a1 = rng.uniform(), b1 = rng.uniform(), a2 = rng.uniform(), b2 = rng.uniform();
    if (a1 > b1) std::swap(a1, b1);
    if (a2 > b2) std::swap(a2, b2);
    const double alpha = 0.05 + 10.0 * rng.uniform();
    const double vol = clayton_cdf(b1, b2, alpha) - clayton_cdf(a1, b2, alpha) -
                       clayton_cdf(b1, a2, alpha) + clayton_cdf(a1, a2, alpha);
    EXPECT_GE(vol, -1e-15) << a1 << " " << b1 << " " << a2 << " " << b2 << " " << alpha;
  }
}

TEST(Clayton, ConditionalCdfIsMonotoneDistribution) {
  RngStream rng(2);
  for (int i = 0; i < 200; ++i) {
    const double u1 = rng.uniform();
    const double alpha = 0.01 + 20.0 * rng.uniform();
    double prev = 0.0;
    for (int k = 0; k <= 50; ++k) {
      const double v = clayton_du1(u1, k / 50.0, alpha);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(Clayton, ClosedFormQuantileMatchesBisection) {
  RngStream rng(3);
  for (int i = 0; i < 500; ++i) {
    const double u1 = rng.uniform(), w = rng.uniform();
    const double alpha = 0.01 + 15.0 * rng.uniform();
    EXPECT_NEAR(clayton_conditional_quantile(u1, w, alpha),
                clayton_conditional_quantile_bisect(u1, w, alpha), 1e-10)
        << u1 << " " << w << " " << alpha;
  }
}

TEST(KendallTau, Mapping) {
  EXPECT_DOUBLE_EQ(kendall_tau_from_alpha(2.0), 0.5);
  EXPECT_DOUBLE_EQ(alpha_from_kendall_tau(0.5), 2.0);
  EXPECT_DOUBLE_EQ(kendall_tau_from_alpha(6.0), 0.75);
  for (int i = 0; i <= 98; ++i) {
    const double tau = 0.01 + 0.01 * i;
    EXPECT_NEAR(kendall_tau_from_alpha(alpha_from_kendall_tau(tau)), tau, 1e-12);
  }
  EXPECT_THROW(alpha_from_kendall_tau(0.0), DomainError);
  EXPECT_THROW(alpha_from_kendall_tau(1.0), DomainError);
}

TEST(MixedDensity, ZeroCountUsesLeftLimitZero) {
  const double y1 = 0.4, mu1 = 0.1, s1 = 0.8, rate = 2.5, alpha = 1.7;
  const double u1 = normal_cdf((y1 - mu1) / s1);
  const double f1 = std::exp(normal_logpdf(y1, mu1, s1));
  const double want = f1 * clayton_du1(u1, std::exp(-rate), alpha);
  EXPECT_NEAR(mixed_joint_density({y1, 0, 0}, mu1, s1, rate, alpha), want, 1e-14);
}

TEST(MixedDensity, IndependenceLimitFactorises) {
  for (long long y2 : {0LL, 1LL, 3LL, 9LL}) {
    const double got = mixed_joint_density({1.3, y2, 0}, 1.0, 0.7, 3.2, 1e-9);
    const double want = std::exp(normal_logpdf(1.3, 1.0, 0.7) + poisson_logpmf(y2, 3.2));
    EXPECT_NEAR(got / want, 1.0, 1e-6) << y2;
  }
}

TEST(MixedDensity, IntegratesToOne) {
  RngStream rng(4);
  for (int i = 0; i < 6; ++i) {
    const double mu1 = -3 + 6 * rng.uniform(), sigma1 = 0.3 + 2 * rng.uniform();
    const double rate = 0.2 + 40 * rng.uniform(), alpha = 0.05 + 8 * rng.uniform();
    EXPECT_NEAR(oracle::mixed_density_mass(mu1, sigma1, rate, alpha), 1.0, 1e-4)
        << mu1 << " " << sigma1 << " " << rate << " " << alpha;
  }
}

TEST(MixedDensity, RejectsInvalidParameters) {
  EXPECT_THROW(mixed_joint_density({0, 1, 0}, 0, 0.0, 1.0, 1.0), DomainError);
  EXPECT_THROW(mixed_joint_density({0, 1, 0}, 0, 1.0, 0.0, 1.0), DomainError);
  EXPECT_THROW(mixed_joint_density({0, 1, 0}, 0, 1.0, 1.0, 0.0), DomainError);
  EXPECT_THROW(mixed_joint_density({0, -1, 0}, 0, 1.0, 1.0, 1.0), DomainError);
}

// Analytic partial derivatives of the log density against central differences.
TEST(MixedDensity, PartialsMatchFiniteDifferences) {
  RngStream rng(5);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const double mu1 = -2 + 4 * rng.uniform(), sigma1 = 0.3 + 2 * rng.uniform();
    const double log_rate = -1 + 4 * rng.uniform(), alpha = 0.05 + 6 * rng.uniform();
    const double y1 = mu1 + sigma1 * rng.normal();
    const auto y2 = static_cast<long long>(rng.index(12));
    const auto p = log_mixed_joint_density_partials(y1, y2, mu1, sigma1, std::exp(log_rate), alpha);
    const double v = log_mixed_joint_density(y1, y2, mu1, sigma1, std::exp(log_rate), alpha);
    if (v < std::log(1e-250)) continue;
    ++checked;
    EXPECT_NEAR(p.value, v, 1e-12 * std::max(1.0, std::abs(v)));
    auto fd = [&](auto f) {
      const double h = 1e-6;
      return (f(h) - f(-h)) / (2 * h);
    };
    auto L = [&](double m, double s, double lr, double a) {
      return log_mixed_joint_density(y1, y2, m, s, std::exp(lr), a);
    };
    const double d_mu = fd([&](double h) { return L(mu1 + h, sigma1, log_rate, alpha); });
    const double d_sig = fd([&](double h) { return L(mu1, sigma1 + h, log_rate, alpha); });
    const double d_lr = fd([&](double h) { return L(mu1, sigma1, log_rate + h, alpha); });
    const double d_a = fd([&](double h) { return L(mu1, sigma1, log_rate, alpha + h); });
    EXPECT_NEAR(p.d_mu1, d_mu, 1e-5 * std::max(1.0, std::abs(d_mu)));
    EXPECT_NEAR(p.d_sigma1, d_sig, 1e-5 * std::max(1.0, std::abs(d_sig)));
    EXPECT_NEAR(p.d_log_rate, d_lr, 1e-5 * std::max(1.0, std::abs(d_lr)));
    EXPECT_NEAR(p.d_alpha, d_a, 1e-5 * std::max(1.0, std::abs(d_a)));
  }
  EXPECT_GT(checked, 250);
}

TEST(Simulation, KendallTauNearZeroAtIndependence) {
  const auto data = simulate_iid(flat_theta(0.0, 1.0, std::log(1e5), -25.0), 10000, 6);
  std::vector<double> a, b;
  for (const auto& o : data) {
    a.push_back(o.y1);
    b.push_back(static_cast<double>(o.y2));
  }
  EXPECT_NEAR(oracle::kendall_tau(a, b), 0.0, 0.03);
}

// A large Poisson rate makes ties in y2 rare, so the sample tau of (y1, y2)
// estimates the copula's tau.
TEST(Simulation, KendallTauMatchesCopula) {
  const auto data = simulate_iid(flat_theta(0.0, 1.0, std::log(1e5), 0.0), 10000, 7);  // tau = 0.5
  std::vector<double> a, b;
  for (const auto& o : data) {
    a.push_back(o.y1);
    b.push_back(static_cast<double>(o.y2));
  }
  EXPECT_NEAR(oracle::kendall_tau(a, b), 0.5, 0.03);
}

TEST(Simulation, PoissonMean) {
  const auto data = simulate_iid(flat_theta(0.0, 1.0, std::log(45.0), 0.85), 10000, 8);
  double s = 0.0;
  for (const auto& o : data) s += static_cast<double>(o.y2);
  EXPECT_NEAR(s / 10000.0, 45.0, 1.0);
}

TEST(Simulation, NormalMarginPassesKolmogorovSmirnov) {
  const auto data = simulate_iid(flat_theta(1.5, 0.7, std::log(4.0), 1.5), 10000, 9);
  std::vector<double> y1;
  for (const auto& o : data) y1.push_back(o.y1);
  const double d = oracle::ks_statistic(y1, [](double y) { return normal_cdf((y - 1.5) / 0.7); });
  EXPECT_LT(d, oracle::ks_critical_1e3(y1.size()));
}

TEST(Simulation, RateOverflowNamesLocation) {
  const auto theta = flat_theta(0.0, 1.0, 40.0, 0.0);  // exp(40) > 1e15
  RngStream rng(1);
  const std::vector<Location> pts{unit_square_location(0.1, 0.1), unit_square_location(0.2, 0.2)};
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  try {
    simulate_bivariate(pts, GlsmSpec{}, theta, zero, zero, 1, rng);
    FAIL() << "expected SimulationError";
  } catch (const SimulationError& e) {
    EXPECT_NE(std::string(e.what()).find("location 0"), std::string::npos);
  }
}

TEST(ConditionalLikelihood, EmptySingleAndFactorised) {
  const auto theta = flat_theta(0.5, 1.2, std::log(3.0), -25.0);
  Design d;
  for (int i = 0; i < 5; ++i) d.points.push_back(unit_square_location(0.2 * i, 0.1));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(5);
  EXPECT_EQ(conditional_loglikelihood({}, d, GlsmSpec{}, theta, zero, zero), 0.0);

  const BivariateObservation one{0.9, 2, 3};
  EXPECT_DOUBLE_EQ(conditional_loglikelihood({one}, d, GlsmSpec{}, theta, zero, zero),
                   std::log(mixed_joint_density(one, 0.5, 1.2, 3.0, theta.alpha())));

  RngStream rng(10);
  const auto data = simulate_bivariate(d, GlsmSpec{}, theta, zero, zero, 1, rng);
  double want = 0.0;
  for (const auto& o : data) want += normal_logpdf(o.y1, 0.5, 1.2) + poisson_logpmf(o.y2, 3.0);
  EXPECT_NEAR(conditional_loglikelihood(data, d, GlsmSpec{}, theta, zero, zero), want, 1e-6);
}

TEST(Parameters, AlphaIsTwiceOddsOfTau) {
  const auto theta = flat_theta(0, 1, 0, 0.85);
  const double tau = inv_logit(0.85);
  EXPECT_NEAR(theta.alpha(), alpha_from_kendall_tau(tau), 1e-13);
}
