#ifndef GEODESIGN_SPATIAL_HPP
#define GEODESIGN_SPATIAL_HPP

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geodesign/error.hpp"
#include "geodesign/random.hpp"

namespace geodesign {

struct Location {
  double x = 0.0;
  double y = 0.0;
  std::vector<double> covariates;

  friend bool operator==(const Location&, const Location&) = default;
};

inline double distance(const Location& a, const Location& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

struct Rectangle {
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;

  bool contains(const Location& p, double tol = 1e-12) const {
    return p.x >= xmin - tol && p.x <= xmax + tol && p.y >= ymin - tol &&
           p.y <= ymax + tol;
  }
};

// Ordered sampling locations. Replicates (identical points) are allowed.
struct Design {
  std::vector<Location> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Location& operator[](std::size_t i) const { return points[i]; }
};

// Locations at which predictive uncertainty is scored.
struct PredictionSet {
  std::vector<Location> points;

  std::size_t size() const { return points.size(); }
  const Location& operator[](std::size_t i) const { return points[i]; }
};

inline void validate_design(const Design& d, std::size_t covariate_dim,
                            const std::optional<Rectangle>& bounds = std::nullopt) {
  if (d.empty()) throw DomainError("design must contain at least one location");
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& p = d[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw DomainError("design point " + std::to_string(i) + " has non-finite coordinates");
    if (p.covariates.size() != covariate_dim)
      throw DomainError("design point " + std::to_string(i) + " has " +
                        std::to_string(p.covariates.size()) + " covariates, expected " +
                        std::to_string(covariate_dim));
    if (bounds && !bounds->contains(p))
      throw DomainError("design point " + std::to_string(i) + " lies outside the design space");
  }
}

struct MaternParams {
  double partial_sill;
  double range;
  double smoothness;
};

namespace detail {

inline void check_matern(double range, double smoothness) {
  if (!std::isfinite(range) || range <= 0.0)
    throw DomainError("Matern range must be finite and positive");
  if (!std::isfinite(smoothness) || smoothness <= 0.0)
    throw DomainError("Matern smoothness must be finite and positive");
}

}  // namespace detail

// Modified Bessel function of the second kind, K_nu(x), x > 0.
// Half-integer orders 1/2, 3/2, 5/2 use their elementary closed forms.
inline double bessel_k(double nu, double x) {
  if (x <= 0.0) return std::numeric_limits<double>::infinity();
  const double pref = std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x);
  if (nu == 0.5) return pref;
  if (nu == 1.5) return pref * (1.0 + 1.0 / x);
  if (nu == 2.5) return pref * (1.0 + 3.0 / x + 3.0 / (x * x));
  return std::cyl_bessel_k(nu, x);
}

// Matern correlation rho(h) = (h/range)^nu K_nu(h/range) / (2^(nu-1) Gamma(nu)).
// rho(0) = 1 (continuous limit).
inline double matern_correlation(double h, double range, double smoothness) {
  detail::check_matern(range, smoothness);
  if (!(h >= 0.0)) throw DomainError("distance must be non-negative");
  if (h == 0.0) return 1.0;
  const double x = h / range;
  if (smoothness == 0.5) return std::exp(-x);
  if (smoothness == 1.5) return (1.0 + x) * std::exp(-x);
  if (smoothness == 2.5) return (1.0 + x + x * x / 3.0) * std::exp(-x);
  if (x > 700.0) return 0.0;
  const double k = std::cyl_bessel_k(smoothness, x);
  if (k == 0.0) return 0.0;
  const double log_rho = (1.0 - smoothness) * std::numbers::ln2 - std::lgamma(smoothness) +
                         smoothness * std::log(x) + std::log(k);
  return std::min(1.0, std::exp(log_rho));
}

// Symmetric positive-definite covariance plus its lower Cholesky factor.
struct CovarianceMatrix {
  Eigen::MatrixXd entries;
  Eigen::MatrixXd cholesky;  // lower triangular
  double jitter_applied = 0.0;

  Eigen::Index size() const { return entries.rows(); }
};

inline constexpr double kInitialRelativeJitter = 1e-8;
inline constexpr double kMaxRelativeJitter = 1e-4;

// Entry (i,j) = sill * rho(|p_i - p_j|) + jitter * [i == j]. If the Cholesky
// factorisation fails, the jitter is escalated x10 from 1e-8*sill up to
// 1e-4*sill before a ConditioningError is raised.
inline CovarianceMatrix build_covariance(const std::vector<Location>& points,
                                         const MaternParams& params, double jitter) {
  if (points.empty()) throw DomainError("covariance requested for an empty location set");
  if (!std::isfinite(params.partial_sill) || params.partial_sill <= 0.0)
    throw DomainError("Matern partial sill must be finite and positive");
  detail::check_matern(params.range, params.smoothness);
  if (!(jitter >= 0.0)) throw DomainError("jitter must be non-negative");

  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd base(n, n);
  double min_dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    base(i, i) = params.partial_sill;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double h = distance(points[i], points[j]);
      min_dist = std::min(min_dist, h);
      const double c = params.partial_sill * matern_correlation(h, params.range, params.smoothness);
      base(i, j) = c;
      base(j, i) = c;
    }
  }

  const double floor_jitter = kInitialRelativeJitter * params.partial_sill;
  const double max_jitter = kMaxRelativeJitter * params.partial_sill;
  double j = jitter;
  for (;;) {
    CovarianceMatrix out;
    out.entries = base;
    out.entries.diagonal().array() += j;
    Eigen::LLT<Eigen::MatrixXd> llt(out.entries);
    if (llt.info() == Eigen::Success) {
      out.cholesky = llt.matrixL();
      out.jitter_applied = j;
      return out;
    }
    if (j >= max_jitter) break;
    j = std::min(max_jitter, std::max(j * 10.0, floor_jitter));
  }
  std::ostringstream msg;
  msg << "covariance not positive definite after jitter " << max_jitter
      << "; minimum pairwise distance " << min_dist;
  throw ConditioningError(msg.str(), min_dist);
}

inline CovarianceMatrix build_covariance(const Design& design, const MaternParams& params,
                                         double jitter) {
  return build_covariance(design.points, params, jitter);
}

// Default-jitter overload: starts the escalation ladder at 1e-8 * sill.
inline CovarianceMatrix build_covariance(const std::vector<Location>& points,
                                         const MaternParams& params) {
  return build_covariance(points, params, kInitialRelativeJitter * params.partial_sill);
}

// One draw s ~ MVN(0, Sigma) as L * e with e i.i.d. standard normal.
inline Eigen::VectorXd sample_gaussian_field(const CovarianceMatrix& cov, RngStream& rng) {
  Eigen::VectorXd e = rng.normal_vector(cov.size());
  return cov.cholesky.triangularView<Eigen::Lower>() * e;
}

}  // namespace geodesign

#endif  // GEODESIGN_SPATIAL_HPP
