#ifndef GEODESIGN_NUMERIC_HPP
#define GEODESIGN_NUMERIC_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace geodesign {

inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr double kDensityFloor = 1e-300;

// log(sum(exp(x))) with a max shift.
inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline double log_mean_exp(std::span<const double> x) {
  return log_sum_exp(x) - std::log(static_cast<double>(x.size()));
}

inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z * (1.0 / std::numbers::sqrt2));
}

inline double normal_logpdf(double y, double mean, double sd) {
  double z = (y - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

inline double normal_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

inline double poisson_logpmf(long long y, double rate) {
  if (y < 0) return -std::numeric_limits<double>::infinity();
  if (rate == 0.0) return y == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return static_cast<double>(y) * std::log(rate) - rate -
         std::lgamma(static_cast<double>(y) + 1.0);
}

// Regularised upper incomplete gamma Q(a, x), a > 0, x >= 0: power series
// for P = 1 - Q when x < a + 1, modified Lentz continued fraction otherwise.
inline double regularized_gamma_q(double a, double x) {
  if (x <= 0.0) return 1.0;
  const double log_pref = a * std::log(x) - x - std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, del = 1.0 / a, sum = del;
    for (int n = 0; n < 2000; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16)
        return std::max(0.0, 1.0 - sum * std::exp(log_pref));
    }
    return boost::math::gamma_q(a, x);
  }
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 2000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) return std::min(1.0, std::exp(log_pref) * h);
  }
  return boost::math::gamma_q(a, x);
}

// P(Y <= y) for Y ~ Poisson(rate). Above rate 30 the regularised upper
// incomplete gamma Q(y+1, rate) is used; below, direct summation.
inline double poisson_cdf(long long y, double rate) {
  if (y < 0) return 0.0;
  if (rate > 30.0) return regularized_gamma_q(static_cast<double>(y) + 1.0, rate);
  double term = std::exp(-rate);
  double sum = term;
  for (long long k = 1; k <= y; ++k) {
    term *= rate / static_cast<double>(k);
    sum += term;
    if (term < sum * 1e-17 && static_cast<double>(k) > rate) break;
  }
  return std::min(1.0, sum);
}

// P(Y <= y) together with P(Y = y).
struct PoissonMass {
  double cdf;
  double pmf;
};

inline PoissonMass poisson_cdf_pmf(long long y, double rate) {
  return {poisson_cdf(y, rate), std::exp(poisson_logpmf(y, rate))};
}

// Smallest y with P(Y <= y) >= u.
inline long long poisson_quantile(double u, double rate) {
  if (rate <= 0.0) return 0;
  long long y;
  double cdf;
  if (rate > 30.0) {
    double guess = rate + std::sqrt(rate) * normal_quantile(std::clamp(u, 1e-300, 1.0 - 1e-16));
    y = std::max(0LL, static_cast<long long>(std::floor(guess)));
    cdf = poisson_cdf(y, rate);
  } else {
    y = 0;
    cdf = std::exp(-rate);
  }
  double pmf = std::exp(poisson_logpmf(y, rate));
  if (cdf >= u) {
    // walk down while the previous cdf still covers u
    while (y > 0 && cdf - pmf >= u) {
      cdf -= pmf;
      pmf *= static_cast<double>(y) / rate;
      --y;
    }
    return y;
  }
  while (cdf < u) {
    ++y;
    pmf *= rate / static_cast<double>(y);
    cdf += pmf;
    if (pmf == 0.0 && static_cast<double>(y) > rate) break;
  }
  return y;
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double inv_logit(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace geodesign

#endif  // GEODESIGN_NUMERIC_HPP
