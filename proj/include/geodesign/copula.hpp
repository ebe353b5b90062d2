#ifndef GEODESIGN_COPULA_HPP
#define GEODESIGN_COPULA_HPP

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geodesign/error.hpp"
#include "geodesign/numeric.hpp"
#include "geodesign/random.hpp"
#include "geodesign/spatial.hpp"

namespace geodesign {

// ---------------------------------------------------------------------------
// Parameter vector (transformed scale)
// ---------------------------------------------------------------------------

inline constexpr int kParamDim = 14;
using ParamVec = Eigen::Matrix<double, kParamDim, 1>;
using ParamMat = Eigen::Matrix<double, kParamDim, kParamDim>;

enum ParamIndex : int {
  kBeta10 = 0,
  kBeta11,
  kBeta12,
  kBeta20,
  kBeta21,
  kBeta22,
  kLogSigma1,
  kLogSillRatio1,  // log(sill1 / range1)
  kLogRange1,
  kLogSmooth1,
  kLogSillRatio2,  // log(sill2 / range2)
  kLogRange2,
  kLogSmooth2,
  kLogitTau,
};

inline constexpr std::array<const char*, kParamDim> kParamNames = {
    "beta10",          "beta11",     "beta12",      "beta20",          "beta21",
    "beta22",          "log_sigma1", "log_sill_ratio1", "log_range1", "log_smooth1",
    "log_sill_ratio2", "log_range2", "log_smooth2", "logit_tau"};

// The full model parameter on its unconstrained scale. Natural-scale
// quantities are recovered through exact inverse transforms; the copula
// parameter is stored only through logit(tau).
class ParameterVector {
 public:
  ParameterVector() : v_(ParamVec::Zero()) {}
  explicit ParameterVector(const ParamVec& v) : v_(v) {
    if (!v_.allFinite()) throw DomainError("parameter vector has non-finite entries");
  }

  const ParamVec& values() const { return v_; }
  double operator[](int i) const { return v_(i); }

  Eigen::Vector3d beta1() const { return v_.segment<3>(kBeta10); }
  Eigen::Vector3d beta2() const { return v_.segment<3>(kBeta20); }
  double sigma1() const { return std::exp(v_(kLogSigma1)); }

  MaternParams matern1() const {
    return {std::exp(v_(kLogSillRatio1) + v_(kLogRange1)), std::exp(v_(kLogRange1)),
            std::exp(v_(kLogSmooth1))};
  }
  MaternParams matern2() const {
    return {std::exp(v_(kLogSillRatio2) + v_(kLogRange2)), std::exp(v_(kLogRange2)),
            std::exp(v_(kLogSmooth2))};
  }

  double tau() const { return inv_logit(v_(kLogitTau)); }
  // alpha = 2 tau / (1 - tau) = 2 exp(logit tau)
  double alpha() const { return 2.0 * std::exp(v_(kLogitTau)); }

 private:
  ParamVec v_;
};

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

// Normal margin (identity link) and Poisson margin (log link); each linear
// predictor uses an intercept plus two covariate columns.
struct GlsmSpec {
  std::size_t covariate_dim = 2;
  std::array<std::size_t, 2> covariate_map1{0, 1};
  std::array<std::size_t, 2> covariate_map2{0, 1};

  void validate() const {
    for (auto c : covariate_map1)
      if (c >= covariate_dim)
        throw DomainError("covariate_map1 references column " + std::to_string(c) +
                          " but only " + std::to_string(covariate_dim) + " exist");
    for (auto c : covariate_map2)
      if (c >= covariate_dim)
        throw DomainError("covariate_map2 references column " + std::to_string(c) +
                          " but only " + std::to_string(covariate_dim) + " exist");
  }
};

struct BivariateObservation {
  double y1 = 0.0;
  long long y2 = 0;
  std::size_t location_index = 0;
};

// Fixed-effect parts X_i^T beta of both linear predictors at each location.
struct FixedEffects {
  Eigen::VectorXd mean1;
  Eigen::VectorXd log_rate2;
};

inline FixedEffects fixed_effects(const std::vector<Location>& points, const GlsmSpec& spec,
                                  const ParameterVector& theta) {
  const auto n = static_cast<Eigen::Index>(points.size());
  FixedEffects fe{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  const auto b1 = theta.beta1();
  const auto b2 = theta.beta2();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& x = points[static_cast<std::size_t>(i)].covariates;
    fe.mean1(i) = b1(0) + b1(1) * x[spec.covariate_map1[0]] + b1(2) * x[spec.covariate_map1[1]];
    fe.log_rate2(i) =
        b2(0) + b2(1) * x[spec.covariate_map2[0]] + b2(2) * x[spec.covariate_map2[1]];
  }
  return fe;
}

// ---------------------------------------------------------------------------
// Clayton copula
// ---------------------------------------------------------------------------

namespace detail {

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw DomainError("Clayton alpha must be finite and positive");
}

// S = u1^-a + u2^-a - 1 = u1^-a (1 + w), w = u1^a (u2^-a - 1) >= 0.
// Working with log1p(w) keeps log dC/du1 accurate when it is close to 0,
// which is where the mixed-margin difference would otherwise cancel.
struct ClaytonW {
  double log1p_w;  // log(1 + w)
  double log_w;    // -inf when w == 0
};

inline ClaytonW clayton_w(double log_u1, double log_u2, double alpha) {
  const double t = -alpha * log_u2;
  if (t <= 0.0) return {0.0, -std::numeric_limits<double>::infinity()};
  const double log_expm1_t = t > 30.0 ? t + std::log1p(-std::exp(-t)) : std::log(std::expm1(t));
  const double lw = alpha * log_u1 + log_expm1_t;
  const double l1p = lw > 0.0 ? lw + std::log1p(std::exp(-lw)) : std::log1p(std::exp(lw));
  return {l1p, lw};
}

inline double clayton_log_sum(double log_u1, double log_u2, double alpha) {
  return -alpha * log_u1 + clayton_w(log_u1, log_u2, alpha).log1p_w;
}

// log dC/du1 for u1 in (0,1], u2 in (0,1].
inline double clayton_log_du1(double log_u1, double log_u2, double alpha) {
  return -(1.0 / alpha + 1.0) * clayton_w(log_u1, log_u2, alpha).log1p_w;
}

inline double clayton_log_density(double log_u1, double log_u2, double alpha) {
  return std::log1p(alpha) - (alpha + 1.0) * (log_u1 + log_u2) -
         (1.0 / alpha + 2.0) * clayton_log_sum(log_u1, log_u2, alpha);
}

}  // namespace detail

// C(u1,u2) = (u1^-a + u2^-a - 1)^(-1/a).
inline double clayton_cdf(double u1, double u2, double alpha) {
  detail::check_alpha(alpha);
  if (!(u1 >= 0.0 && u1 <= 1.0 && u2 >= 0.0 && u2 <= 1.0))
    throw DomainError("copula arguments must lie in [0,1]");
  if (u1 == 0.0 || u2 == 0.0) return 0.0;
  if (u2 == 1.0) return u1;
  if (u1 == 1.0) return u2;
  return std::exp(-detail::clayton_log_sum(std::log(u1), std::log(u2), alpha) / alpha);
}

// dC/du1: the conditional CDF of U2 given U1 = u1.
inline double clayton_du1(double u1, double u2, double alpha) {
  detail::check_alpha(alpha);
  if (!(u1 > 0.0 && u1 <= 1.0)) throw DomainError("clayton_du1 requires u1 in (0,1]");
  if (!(u2 >= 0.0 && u2 <= 1.0)) throw DomainError("clayton_du1 requires u2 in [0,1]");
  if (u2 == 0.0) return 0.0;
  if (u2 == 1.0) return 1.0;
  return std::min(1.0, std::exp(detail::clayton_log_du1(std::log(u1), std::log(u2), alpha)));
}

// Copula density d^2C/du1du2.
inline double clayton_density(double u1, double u2, double alpha) {
  detail::check_alpha(alpha);
  if (!(u1 > 0.0 && u1 <= 1.0 && u2 > 0.0 && u2 <= 1.0))
    throw DomainError("clayton_density requires u1, u2 in (0,1]");
  return std::exp(detail::clayton_log_density(std::log(u1), std::log(u2), alpha));
}

// Solves clayton_du1(u1, u2, alpha) = w for u2 in closed form.
inline double clayton_conditional_quantile(double u1, double w, double alpha) {
  detail::check_alpha(alpha);
  if (!(u1 > 0.0 && u1 <= 1.0)) throw DomainError("conditional quantile requires u1 in (0,1]");
  if (!(w >= 0.0 && w <= 1.0)) throw DomainError("conditional quantile requires w in [0,1]");
  if (w == 0.0) return 0.0;
  if (w == 1.0) return 1.0;
  // u2^-a - 1 = expm1(b) - expm1(a1), b = -a/(1+a) log w - a log u1
  const double a1 = -alpha * std::log(u1);
  const double b = -alpha / (1.0 + alpha) * std::log(w) + a1;
  double log_u2_pow;  // log(u2^-alpha)
  if (b < 30.0) {
    log_u2_pow = std::log1p(std::expm1(b) - std::expm1(a1));
  } else {
    log_u2_pow = b + std::log1p(-std::exp(a1 - b) + std::exp(-b));
  }
  return std::clamp(std::exp(-log_u2_pow / alpha), 0.0, 1.0);
}

// Same root by bisection on u2; reference implementation for tests.
inline double clayton_conditional_quantile_bisect(double u1, double w, double alpha,
                                                  double tol = 1e-12) {
  double lo = 0.0, hi = 1.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (clayton_du1(u1, mid, alpha) < w)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

inline double kendall_tau_from_alpha(double alpha) {
  detail::check_alpha(alpha);
  return alpha / (alpha + 2.0);
}

inline double alpha_from_kendall_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("Kendall tau must lie in (0,1)");
  return 2.0 * tau / (1.0 - tau);
}

// ---------------------------------------------------------------------------
// Mixed Normal/Poisson joint density
// ---------------------------------------------------------------------------

// Number of times a density was floored at kDensityFloor.
inline std::atomic<std::uint64_t>& tail_underflow_events() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

// log f(y1, y2) = log f1(y1) + log(c1(u1,u2) - c1(u1,u2-)), floored at
// log(1e-300). mu2_rate is the Poisson rate exp(mu2).
inline double log_mixed_joint_density(double y1, long long y2, double mu1, double sigma1,
                                      double mu2_rate, double alpha) {
  const double log_floor = std::log(kDensityFloor);
  const double z = (y1 - mu1) / sigma1;
  const double log_f1 = -0.5 * z * z - std::log(sigma1) - 0.5 * kLog2Pi;
  const double u1 = std::max(normal_cdf(z), kDensityFloor);
  const double log_u1 = std::log(u1);

  const auto [u2, pmf] = poisson_cdf_pmf(y2, mu2_rate);
  double log_diff;
  if (u2 <= 0.0 || pmf <= 0.0) {
    log_diff = -std::numeric_limits<double>::infinity();
  } else if (y2 == 0) {
    log_diff = detail::clayton_log_du1(log_u1, std::log(u2), alpha);
  } else if (pmf < 1e-6 * u2) {
    // difference of two nearly equal conditional CDFs: mean-value form
    const double mid = std::max(u2 - 0.5 * pmf, kDensityFloor);
    log_diff = std::log(pmf) + detail::clayton_log_density(log_u1, std::log(mid), alpha);
  } else {
    const double u2m = u2 - pmf;
    const double l2 = detail::clayton_log_du1(log_u1, std::log(u2), alpha);
    if (u2m <= 0.0) {
      log_diff = l2;
    } else {
      const double l2m = detail::clayton_log_du1(log_u1, std::log(u2m), alpha);
      log_diff = l2m < l2 ? l2 + std::log(-std::expm1(l2m - l2))
                          : -std::numeric_limits<double>::infinity();
    }
  }
  const double out = log_f1 + log_diff;
  if (!(out > log_floor)) {
    tail_underflow_events().fetch_add(1, std::memory_order_relaxed);
    return log_floor;
  }
  return out;
}

// log f(y1, y2) and its partial derivatives with respect to mu1, sigma1,
// log(rate) and alpha. Derivatives are zero where the floor is active.
// alpha_exact is false for alpha < 1e-3, where the closed-form alpha
// derivative loses precision and callers should difference instead.
struct LogDensityPartials {
  double value = 0.0;
  double d_mu1 = 0.0;
  double d_sigma1 = 0.0;
  double d_log_rate = 0.0;
  double d_alpha = 0.0;
  bool alpha_exact = true;
};

namespace detail {

// Gradient of a log-copula quantity with respect to (u1, u2, alpha).
struct Grad3 {
  double value, du1, du2, dalpha;
};

struct ClaytonRatios {
  double log1p_w;
  double w_frac;  // w / (1 + w) = 1 - u1^-a / S
  double r2;      // u2^-a / S
};

inline ClaytonRatios clayton_ratios(double log_u1, double log_u2, double alpha) {
  const auto cw = clayton_w(log_u1, log_u2, alpha);
  const double wf = std::exp(cw.log_w - cw.log1p_w);
  return {cw.log1p_w, wf, wf + std::exp(alpha * log_u1 - cw.log1p_w)};
}

inline Grad3 clayton_log_du1_grad(double u1, double log_u1, double u2, double log_u2,
                                  double alpha) {
  const auto t = clayton_ratios(log_u1, log_u2, alpha);
  const double k = 1.0 / alpha + 1.0;
  const double dl_dalpha = log_u1 * t.w_frac - log_u2 * t.r2;
  return {-k * t.log1p_w, -(alpha + 1.0) * t.w_frac / u1, (alpha + 1.0) * t.r2 / u2,
          t.log1p_w / (alpha * alpha) - k * dl_dalpha};
}

inline Grad3 clayton_log_density_grad(double u1, double log_u1, double u2, double log_u2,
                                      double alpha) {
  const auto t = clayton_ratios(log_u1, log_u2, alpha);
  const double log_sum = -alpha * log_u1 + t.log1p_w;
  const double r1 = 1.0 - t.w_frac;
  return {std::log1p(alpha) - (alpha + 1.0) * (log_u1 + log_u2) -
              (1.0 / alpha + 2.0) * log_sum,
          (-(alpha + 1.0) + (1.0 + 2.0 * alpha) * r1) / u1,
          (-(alpha + 1.0) + (1.0 + 2.0 * alpha) * t.r2) / u2,
          1.0 / (1.0 + alpha) - (log_u1 + log_u2) + log_sum / (alpha * alpha) +
              (1.0 / alpha + 2.0) * (r1 * log_u1 + t.r2 * log_u2)};
}

}  // namespace detail

inline LogDensityPartials log_mixed_joint_density_partials(double y1, long long y2, double mu1,
                                                           double sigma1, double mu2_rate,
                                                           double alpha) {
  LogDensityPartials out;
  out.alpha_exact = alpha >= 1e-3;
  const double log_floor = std::log(kDensityFloor);
  const double z = (y1 - mu1) / sigma1;
  const double log_f1 = -0.5 * z * z - std::log(sigma1) - 0.5 * kLog2Pi;
  const double phi = std::exp(-0.5 * z * z - 0.5 * kLog2Pi);
  const double raw_u1 = normal_cdf(z);
  const bool clamped = raw_u1 < kDensityFloor;
  const double u1 = clamped ? kDensityFloor : raw_u1;
  const double log_u1 = std::log(u1);
  const double du1_dmu1 = clamped ? 0.0 : -phi / sigma1;
  const double du1_dsigma1 = clamped ? 0.0 : -phi * z / sigma1;

  const auto [u2, pmf] = poisson_cdf_pmf(y2, mu2_rate);
  const double lam = mu2_rate;
  double log_diff, g_u1, g_lograte, g_alpha;
  if (u2 <= 0.0 || pmf <= 0.0) {
    out.value = log_floor;
    return out;
  }
  const double u2m = u2 - pmf;
  if (y2 == 0 || u2m <= 0.0) {
    const auto g = detail::clayton_log_du1_grad(u1, log_u1, u2, std::log(u2), alpha);
    log_diff = g.value;
    g_u1 = g.du1;
    g_lograte = g.du2 * (-pmf * lam);
    g_alpha = g.dalpha;
  } else if (pmf < 1e-6 * u2) {
    const double mid = std::max(u2 - 0.5 * pmf, kDensityFloor);
    const auto g = detail::clayton_log_density_grad(u1, log_u1, mid, std::log(mid), alpha);
    log_diff = std::log(pmf) + g.value;
    g_u1 = g.du1;
    g_lograte = (static_cast<double>(y2) - lam) +
                g.du2 * (-0.5 * pmf * (lam + static_cast<double>(y2)));
    g_alpha = g.dalpha;
  } else {
    const double pmf_prev = pmf * static_cast<double>(y2) / lam;
    const auto g = detail::clayton_log_du1_grad(u1, log_u1, u2, std::log(u2), alpha);
    const auto gm = detail::clayton_log_du1_grad(u1, log_u1, u2m, std::log(u2m), alpha);
    if (!(gm.value < g.value)) {
      out.value = log_floor;
      return out;
    }
    const double q = std::exp(gm.value - g.value);
    const double one_minus_q = -std::expm1(gm.value - g.value);
    const double inv = 1.0 / one_minus_q;
    log_diff = g.value + std::log(one_minus_q);
    g_u1 = (g.du1 - q * gm.du1) * inv;
    g_lograte = (g.du2 * (-pmf * lam) - q * gm.du2 * (-pmf_prev * lam)) * inv;
    g_alpha = (g.dalpha - q * gm.dalpha) * inv;
  }
  out.value = log_f1 + log_diff;
  if (!(out.value > log_floor)) {
    out = LogDensityPartials{};
    out.value = log_floor;
    return out;
  }
  out.d_mu1 = z / sigma1 + g_u1 * du1_dmu1;
  out.d_sigma1 = (z * z - 1.0) / sigma1 + g_u1 * du1_dsigma1;
  out.d_log_rate = g_lograte;
  out.d_alpha = g_alpha;
  return out;
}

inline double mixed_joint_density(const BivariateObservation& obs, double mu1, double sigma1,
                                  double mu2_rate, double alpha) {
  if (!(sigma1 > 0.0)) throw DomainError("sigma1 must be positive");
  if (!(mu2_rate > 0.0)) throw DomainError("Poisson rate must be positive");
  detail::check_alpha(alpha);
  if (obs.y2 < 0) throw DomainError("count outcome must be non-negative");
  return std::exp(log_mixed_joint_density(obs.y1, obs.y2, mu1, sigma1, mu2_rate, alpha));
}

// ---------------------------------------------------------------------------
// Simulation and conditional likelihood
// ---------------------------------------------------------------------------

inline constexpr double kMaxPoissonRate = 1e15;

// One (y1, y2) draw: y1 from its Normal margin, u2 | u1 from the Clayton
// conditional law, y2 as the Poisson quantile of u2.
inline std::pair<double, long long> draw_bivariate(double mu1, double sigma1, double rate,
                                                   double alpha, RngStream& rng) {
  const double eps = rng.normal();
  const double y1 = mu1 + sigma1 * eps;
  const double u1 = std::max(normal_cdf(eps), kDensityFloor);
  const double u2 = clayton_conditional_quantile(u1, rng.uniform(), alpha);
  return {y1, poisson_quantile(u2, rate)};
}

inline std::vector<BivariateObservation> simulate_bivariate(
    const std::vector<Location>& points, const GlsmSpec& spec, const ParameterVector& theta,
    const Eigen::VectorXd& s1, const Eigen::VectorXd& s2, int n_rep, RngStream& rng) {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (s1.size() != n || s2.size() != n)
    throw DomainError("field draws must match the number of locations");
  if (n_rep < 1) throw DomainError("replicate count must be at least 1");
  const FixedEffects fe = fixed_effects(points, spec, theta);
  const double sigma1 = theta.sigma1();
  const double alpha = theta.alpha();
  std::vector<BivariateObservation> out;
  out.reserve(static_cast<std::size_t>(n * n_rep));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu1 = fe.mean1(i) + s1(i);
    const double log_rate = fe.log_rate2(i) + s2(i);
    if (!(log_rate < std::log(kMaxPoissonRate)))
      throw SimulationError("Poisson rate overflow at location " + std::to_string(i));
    const double rate = std::exp(log_rate);
    for (int j = 0; j < n_rep; ++j) {
      auto [y1, y2] = draw_bivariate(mu1, sigma1, rate, alpha, rng);
      out.push_back({y1, y2, static_cast<std::size_t>(i)});
    }
  }
  return out;
}

inline std::vector<BivariateObservation> simulate_bivariate(
    const Design& design, const GlsmSpec& spec, const ParameterVector& theta,
    const Eigen::VectorXd& s1, const Eigen::VectorXd& s2, int n_rep, RngStream& rng) {
  return simulate_bivariate(design.points, spec, theta, s1, s2, n_rep, rng);
}

// log p(y | d, theta, s1, s2) = sum of log mixed joint densities.
inline double conditional_loglikelihood(const std::vector<BivariateObservation>& data,
                                        const FixedEffects& fe, double sigma1, double alpha,
                                        const Eigen::VectorXd& s1, const Eigen::VectorXd& s2) {
  double total = 0.0;
  for (const auto& obs : data) {
    const auto i = static_cast<Eigen::Index>(obs.location_index);
    total += log_mixed_joint_density(obs.y1, obs.y2, fe.mean1(i) + s1(i), sigma1,
                                     std::exp(fe.log_rate2(i) + s2(i)), alpha);
  }
  return total;
}

inline double conditional_loglikelihood(const std::vector<BivariateObservation>& data,
                                        const Design& design, const GlsmSpec& spec,
                                        const ParameterVector& theta, const Eigen::VectorXd& s1,
                                        const Eigen::VectorXd& s2) {
  for (const auto& obs : data) {
    if (obs.location_index >= design.size())
      throw DomainError("observation references location " +
                        std::to_string(obs.location_index) + " outside the design");
    if (obs.y2 < 0) throw DomainError("count outcome must be non-negative");
  }
  if (data.empty()) return 0.0;
  const FixedEffects fe = fixed_effects(design.points, spec, theta);
  return conditional_loglikelihood(data, fe, theta.sigma1(), theta.alpha(), s1, s2);
}

}  // namespace geodesign

#endif  // GEODESIGN_COPULA_HPP
