#ifndef GEODESIGN_INFERENCE_HPP
#define GEODESIGN_INFERENCE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "geodesign/copula.hpp"
#include "geodesign/error.hpp"
#include "geodesign/numeric.hpp"
#include "geodesign/random.hpp"
#include "geodesign/spatial.hpp"

namespace geodesign {

// Multivariate Gaussian on the transformed parameter scale. Used both for
// priors and for Laplace posteriors.
struct GaussianApprox {
  ParamVec mean = ParamVec::Zero();
  ParamMat covariance = ParamMat::Identity();

  GaussianApprox() = default;
  GaussianApprox(const ParamVec& m, const ParamMat& c) : mean(m), covariance(c) {}

  ParamMat cholesky() const {
    Eigen::LLT<ParamMat> llt(covariance);
    if (llt.info() != Eigen::Success)
      throw DomainError("Gaussian covariance is not positive definite");
    return llt.matrixL();
  }

  double log_density(const ParamVec& x) const {
    Eigen::LLT<ParamMat> llt(covariance);
    if (llt.info() != Eigen::Success)
      throw DomainError("Gaussian covariance is not positive definite");
    const ParamVec z = llt.matrixL().solve(x - mean);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * z.squaredNorm() - 0.5 * log_det - 0.5 * kParamDim * kLog2Pi;
  }
};

using PriorSpec = GaussianApprox;

inline PriorSpec diagonal_prior(const ParamVec& mean, const ParamVec& variances) {
  if ((variances.array() <= 0.0).any())
    throw DomainError("prior variances must be positive");
  return {mean, variances.asDiagonal()};
}

// ---------------------------------------------------------------------------
// Monte Carlo likelihood
// ---------------------------------------------------------------------------

// Standard-normal innovations for B paired field draws at n locations.
// Reusing the same noise across theta makes the MC likelihood a smooth,
// deterministic function of theta (common random numbers).
struct FieldNoise {
  Eigen::MatrixXd e1;  // n x B
  Eigen::MatrixXd e2;  // n x B

  int draws() const { return static_cast<int>(e1.cols()); }
};

inline FieldNoise draw_field_noise(Eigen::Index n, int B, RngStream& rng) {
  if (B < 1) throw DomainError("field draw count B must be at least 1");
  FieldNoise noise{Eigen::MatrixXd(n, B), Eigen::MatrixXd(n, B)};
  for (int b = 0; b < B; ++b) {
    for (Eigen::Index i = 0; i < n; ++i) noise.e1(i, b) = rng.normal();
    for (Eigen::Index i = 0; i < n; ++i) noise.e2(i, b) = rng.normal();
  }
  return noise;
}

// log (1/B) sum_b p(y | d, theta, s1_b, s2_b), fields s_b = L(theta) e_b.
inline double mc_loglikelihood(const std::vector<BivariateObservation>& data,
                               const std::vector<Location>& points, const GlsmSpec& spec,
                               const ParameterVector& theta, const FieldNoise& noise) {
  if (data.empty()) return 0.0;
  const auto cov1 = build_covariance(points, theta.matern1());
  const auto cov2 = build_covariance(points, theta.matern2());
  const Eigen::MatrixXd s1 = cov1.cholesky.triangularView<Eigen::Lower>() * noise.e1;
  const Eigen::MatrixXd s2 = cov2.cholesky.triangularView<Eigen::Lower>() * noise.e2;
  const FixedEffects fe = fixed_effects(points, spec, theta);
  const double sigma1 = theta.sigma1();
  const double alpha = theta.alpha();
  std::vector<double> ll(static_cast<std::size_t>(noise.draws()));
  for (int b = 0; b < noise.draws(); ++b)
    ll[static_cast<std::size_t>(b)] =
        conditional_loglikelihood(data, fe, sigma1, alpha, s1.col(b), s2.col(b));
  return log_mean_exp(ll);
}

inline double mc_loglikelihood(const std::vector<BivariateObservation>& data,
                               const Design& design, const GlsmSpec& spec,
                               const ParameterVector& theta, int B, RngStream& rng) {
  const FieldNoise noise = draw_field_noise(static_cast<Eigen::Index>(design.size()), B, rng);
  return mc_loglikelihood(data, design.points, spec, theta, noise);
}

struct LikelihoodGradient {
  double value = 0.0;
  ParamVec gradient = ParamVec::Zero();
};

namespace detail {

// d L(theta) / d p for a Cholesky factor that depends on p through Bessel
// functions; central differences of the factor itself are cheap at design
// sizes and avoid differentiating K_nu in its order.
inline Eigen::MatrixXd cholesky_derivative(const std::vector<Location>& points,
                                           const MaternParams& lo, const MaternParams& hi,
                                           double width) {
  return (build_covariance(points, hi).cholesky - build_covariance(points, lo).cholesky) / width;
}

inline double frobenius_dot(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a.array() * b.array()).sum();
}

}  // namespace detail

// Value and gradient (transformed scale) of the MC log-likelihood for fixed
// innovations. Linear-predictor and copula parts are differentiated exactly;
// range and smoothness enter through central differences of the Cholesky
// factors. The copula coordinate falls back to differencing the value when
// alpha is too small for the closed form.
inline LikelihoodGradient mc_loglikelihood_gradient(const std::vector<BivariateObservation>& data,
                                                    const std::vector<Location>& points,
                                                    const GlsmSpec& spec,
                                                    const ParameterVector& theta,
                                                    const FieldNoise& noise) {
  LikelihoodGradient out;
  if (data.empty()) return out;
  const auto n = static_cast<Eigen::Index>(points.size());
  const int B = noise.draws();
  const MaternParams m1 = theta.matern1(), m2 = theta.matern2();
  const auto cov1 = build_covariance(points, m1);
  const auto cov2 = build_covariance(points, m2);
  const Eigen::MatrixXd s1 = cov1.cholesky.triangularView<Eigen::Lower>() * noise.e1;
  const Eigen::MatrixXd s2 = cov2.cholesky.triangularView<Eigen::Lower>() * noise.e2;
  const FixedEffects fe = fixed_effects(points, spec, theta);
  const double sigma1 = theta.sigma1();
  const double alpha = theta.alpha();

  Eigen::MatrixXd p_mu = Eigen::MatrixXd::Zero(n, B);
  Eigen::MatrixXd p_rate = Eigen::MatrixXd::Zero(n, B);
  std::vector<double> ll(static_cast<std::size_t>(B), 0.0);
  Eigen::VectorXd p_sigma = Eigen::VectorXd::Zero(B), p_alpha = Eigen::VectorXd::Zero(B);
  bool alpha_exact = true;
  for (int b = 0; b < B; ++b) {
    double total = 0.0;
    for (const auto& obs : data) {
      const auto i = static_cast<Eigen::Index>(obs.location_index);
      const auto d = log_mixed_joint_density_partials(obs.y1, obs.y2, fe.mean1(i) + s1(i, b),
                                                      sigma1,
                                                      std::exp(fe.log_rate2(i) + s2(i, b)), alpha);
      total += d.value;
      p_mu(i, b) += d.d_mu1;
      p_rate(i, b) += d.d_log_rate;
      p_sigma(b) += d.d_sigma1;
      p_alpha(b) += d.d_alpha;
      alpha_exact = alpha_exact && d.alpha_exact;
    }
    ll[static_cast<std::size_t>(b)] = total;
  }
  out.value = log_mean_exp(ll);
  Eigen::VectorXd w(B);
  for (int b = 0; b < B; ++b) w(b) = std::exp(ll[static_cast<std::size_t>(b)] - out.value) / B;

  const Eigen::VectorXd pm = p_mu * w;
  const Eigen::VectorXd pr = p_rate * w;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& x = points[static_cast<std::size_t>(i)].covariates;
    out.gradient(kBeta10) += pm(i);
    out.gradient(kBeta11) += pm(i) * x[spec.covariate_map1[0]];
    out.gradient(kBeta12) += pm(i) * x[spec.covariate_map1[1]];
    out.gradient(kBeta20) += pr(i);
    out.gradient(kBeta21) += pr(i) * x[spec.covariate_map2[0]];
    out.gradient(kBeta22) += pr(i) * x[spec.covariate_map2[1]];
  }
  out.gradient(kLogSigma1) = sigma1 * p_sigma.dot(w);

  // d value / d L = P diag(w) E^T for each field
  const Eigen::MatrixXd g1 = p_mu * w.asDiagonal() * noise.e1.transpose();
  const Eigen::MatrixXd g2 = p_rate * w.asDiagonal() * noise.e2.transpose();
  // L scales with sqrt(sill): d L / d log(sill ratio) = L / 2
  out.gradient(kLogSillRatio1) = 0.5 * detail::frobenius_dot(cov1.cholesky, g1);
  out.gradient(kLogSillRatio2) = 0.5 * detail::frobenius_dot(cov2.cholesky, g2);
  constexpr double h = 1e-4;
  const double up = std::exp(h), down = std::exp(-h);
  auto range_shift = [](MaternParams m, double f) {
    m.partial_sill *= f;  // sill = ratio * range
    m.range *= f;
    return m;
  };
  auto smooth_shift = [](MaternParams m, double f) {
    m.smoothness *= f;
    return m;
  };
  out.gradient(kLogRange1) = detail::frobenius_dot(
      detail::cholesky_derivative(points, range_shift(m1, down), range_shift(m1, up), 2 * h), g1);
  out.gradient(kLogSmooth1) = detail::frobenius_dot(
      detail::cholesky_derivative(points, smooth_shift(m1, down), smooth_shift(m1, up), 2 * h), g1);
  out.gradient(kLogRange2) = detail::frobenius_dot(
      detail::cholesky_derivative(points, range_shift(m2, down), range_shift(m2, up), 2 * h), g2);
  out.gradient(kLogSmooth2) = detail::frobenius_dot(
      detail::cholesky_derivative(points, smooth_shift(m2, down), smooth_shift(m2, up), 2 * h), g2);

  if (alpha_exact) {
    out.gradient(kLogitTau) = alpha * p_alpha.dot(w);  // d alpha / d logit tau = alpha
  } else {
    ParamVec lo = theta.values(), hi = theta.values();
    lo(kLogitTau) -= h;
    hi(kLogitTau) += h;
    out.gradient(kLogitTau) =
        (mc_loglikelihood(data, points, spec, ParameterVector(hi), noise) -
         mc_loglikelihood(data, points, spec, ParameterVector(lo), noise)) /
        (2 * h);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quasi-Newton minimiser (BFGS)
// ---------------------------------------------------------------------------

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd gradient;
  int evaluations = 0;
  bool converged = false;
};

struct MinimizeOptions {
  int max_evaluations = 500;
  double gradient_tolerance = 1e-4;
  double loose_gradient_tolerance = 1e-2;
  // request the gradient together with every trial value (cheap when the
  // gradient is analytic)
  bool gradient_with_value = true;
};

template <class F>
Eigen::VectorXd forward_gradient(F& f, const Eigen::VectorXd& x, double fx, double step,
                                 int& evaluations) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x;
    xp(i) += step;
    g(i) = (f(xp) - fx) / step;
    ++evaluations;
  }
  return g;
}

// Adapts a value-only objective to the (x, grad*, cost) interface by forward
// differences; each gradient costs x.size() extra evaluations.
template <class F>
auto with_forward_gradient(F f, double step) {
  return [f = std::move(f), step](const Eigen::VectorXd& x, Eigen::VectorXd* grad,
                                  int& cost) mutable {
    const double v = f(x);
    ++cost;
    if (grad && std::isfinite(v)) *grad = forward_gradient(f, x, v, step, cost);
    return v;
  };
}

// Minimises fg from x0. fg(x, grad*, cost) returns the value, fills *grad when
// non-null and adds its own cost in objective evaluations. Non-finite values
// are treated as +inf, so the line search backs away from them.
template <class F>
MinimizeResult bfgs_minimize(F&& fg, const Eigen::VectorXd& x0, const MinimizeOptions& opt) {
  const auto n = x0.size();
  MinimizeResult r;
  auto eval = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    const double v = fg(x, g, r.evaluations);
    if (!std::isfinite(v) || (g && !g->allFinite())) return std::numeric_limits<double>::infinity();
    return v;
  };
  r.x = x0;
  r.gradient = Eigen::VectorXd::Zero(n);
  r.value = eval(x0, &r.gradient);
  if (!std::isfinite(r.value)) return r;
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);  // inverse Hessian estimate
  bool scaled = false;

  while (r.evaluations < opt.max_evaluations) {
    if (r.gradient.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) {
      r.converged = true;
      return r;
    }
    Eigen::VectorXd dir = -H * r.gradient;
    double slope = r.gradient.dot(dir);
    if (!(slope < 0.0)) {
      H.setIdentity();
      dir = -r.gradient;
      slope = -r.gradient.squaredNorm();
    }
    // cap the first step so a huge gradient cannot throw us far away
    double step = 1.0;
    const double dn = dir.lpNorm<Eigen::Infinity>();
    if (dn > 1.0) step = 1.0 / dn;

    // backtracking Armijo line search
    Eigen::VectorXd xn, gn(n);
    double fn = std::numeric_limits<double>::infinity();
    bool accepted = false, have_gn = false;
    for (int ls = 0; ls < 30 && r.evaluations < opt.max_evaluations; ++ls) {
      xn = r.x + step * dir;
      fn = eval(xn, opt.gradient_with_value ? &gn : nullptr);
      if (fn <= r.value + 1e-4 * step * slope) {
        accepted = true;
        have_gn = opt.gradient_with_value;
        break;
      }
      step *= (std::isfinite(fn) ? 0.5 : 0.1);
    }
    if (!accepted) {
      // no further progress possible at the objective's resolution
      r.converged = r.gradient.lpNorm<Eigen::Infinity>() < opt.loose_gradient_tolerance;
      return r;
    }
    if (!have_gn) fn = eval(xn, &gn);
    const Eigen::VectorXd s = xn - r.x;
    const Eigen::VectorXd y = gn - r.gradient;
    const double sy = s.dot(y);
    const double improvement = r.value - fn;
    r.x = xn;
    r.value = fn;
    r.gradient = gn;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        H *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) +
          rho * s * s.transpose();
    }
    if (improvement <= 1e-12 * (1.0 + std::abs(fn)) &&
        r.gradient.lpNorm<Eigen::Infinity>() < opt.loose_gradient_tolerance) {
      r.converged = true;
      return r;
    }
  }
  r.converged = r.gradient.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance;
  return r;
}

// ---------------------------------------------------------------------------
// Laplace approximation
// ---------------------------------------------------------------------------

enum class GradientMode {
  analytic,           // mc_loglikelihood_gradient
  finite_difference,  // forward differences of the value, step fd_step
};

struct FitOptions {
  int B = 200;              // field draws in the MC likelihood
  int restarts = 3;         // BFGS runs, started from the best screened points
  int screen = 20;          // prior draws screened for starting points (plus the mean)
  int max_evaluations = 500;  // per restart
  double fd_step = 1e-5;
  GradientMode gradient = GradientMode::analytic;
  // Parameters with free[i] == false are held at the prior mean.
  std::array<bool, kParamDim> free = [] {
    std::array<bool, kParamDim> a{};
    a.fill(true);
    return a;
  }();
};

struct FitDiagnostics {
  int evaluations = 0;
  int restarts_converged = 0;
  bool hessian_repaired = false;
};

namespace detail {

inline std::vector<int> free_indices(const FitOptions& opt) {
  std::vector<int> idx;
  for (int i = 0; i < kParamDim; ++i)
    if (opt.free[static_cast<std::size_t>(i)]) idx.push_back(i);
  return idx;
}

// Inverts the negative Hessian; eigenvalues are clamped at 1e-6 x largest
// when it is not positive definite.
inline Eigen::MatrixXd invert_precision(Eigen::MatrixXd A, bool& repaired) {
  A = 0.5 * (A + A.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  repaired = false;
  if (llt.info() == Eigen::Success) {
    Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
    cov = 0.5 * (cov + cov.transpose()).eval();
    if (Eigen::LLT<Eigen::MatrixXd>(cov).info() == Eigen::Success) return cov;
  }
  repaired = true;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  Eigen::VectorXd ev = es.eigenvalues();
  double largest = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), 1e-6 * largest);
  Eigen::MatrixXd cov =
      es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (cov + cov.transpose());
}

}  // namespace detail

// Laplace approximation N(theta*, A(theta*)^-1) to the posterior, using the
// MC likelihood with one fixed set of field innovations (common random
// numbers), so the objective is deterministic in theta.
inline GaussianApprox laplace_fit(const std::vector<BivariateObservation>& data,
                                  const std::vector<Location>& points, const GlsmSpec& spec,
                                  const PriorSpec& prior, const FitOptions& opt,
                                  RngStream& rng, FitDiagnostics* diag = nullptr) {
  if (data.empty()) return prior;
  if (opt.restarts < 1) throw DomainError("at least one fit restart is required");
  const FieldNoise noise = draw_field_noise(static_cast<Eigen::Index>(points.size()), opt.B, rng);
  RngStream restart_rng = rng.child({stream::kFitRestart});

  const std::vector<int> idx = detail::free_indices(opt);
  const auto m = static_cast<Eigen::Index>(idx.size());
  if (m == 0) return prior;

  Eigen::LLT<ParamMat> prior_llt(prior.covariance);
  if (prior_llt.info() != Eigen::Success)
    throw DomainError("prior covariance is not positive definite");

  // The search runs in prior-whitened coordinates w of the free block,
  // theta_free = mean_free + L_free w, which keeps BFGS well scaled.
  Eigen::MatrixXd free_cov(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      free_cov(a, b) = prior.covariance(idx[static_cast<std::size_t>(a)],
                                        idx[static_cast<std::size_t>(b)]);
  const Eigen::MatrixXd free_l = Eigen::LLT<Eigen::MatrixXd>(free_cov).matrixL();
  Eigen::VectorXd free_mean(m);
  for (Eigen::Index j = 0; j < m; ++j) free_mean(j) = prior.mean(idx[static_cast<std::size_t>(j)]);

  auto embed = [&](const Eigen::VectorXd& z) {
    ParamVec full = prior.mean;
    for (Eigen::Index j = 0; j < m; ++j) full(idx[static_cast<std::size_t>(j)]) = z(j);
    return full;
  };
  auto to_theta = [&](const Eigen::VectorXd& w) -> Eigen::VectorXd {
    return free_mean + free_l * w;
  };
  auto to_white = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    return free_l.triangularView<Eigen::Lower>().solve(z - free_mean);
  };
  const ParamMat prior_precision = prior_llt.solve(ParamMat::Identity());
  auto objective = [&](const Eigen::VectorXd& z) -> double {
    const ParamVec full = embed(z);
    if (!full.allFinite()) return std::numeric_limits<double>::infinity();
    const ParamVec dev = prior_llt.matrixL().solve(full - prior.mean);
    try {
      const double ll = mc_loglikelihood(data, points, spec, ParameterVector(full), noise);
      return -(ll - 0.5 * dev.squaredNorm());
    } catch (const ConditioningError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const DomainError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  // negative log posterior (up to a constant) and its gradient in z
  auto objective_grad = [&](const Eigen::VectorXd& z, Eigen::VectorXd* grad, int& cost) -> double {
    if (opt.gradient == GradientMode::finite_difference) {
      const double v = objective(z);
      ++cost;
      if (grad && std::isfinite(v)) *grad = forward_gradient(objective, z, v, opt.fd_step, cost);
      return v;
    }
    ++cost;
    const ParamVec full = embed(z);
    if (!full.allFinite()) return std::numeric_limits<double>::infinity();
    const ParamVec centred = full - prior.mean;
    const double prior_term = 0.5 * centred.dot(prior_precision * centred);
    try {
      const ParameterVector theta(full);
      if (!grad)
        return -(mc_loglikelihood(data, points, spec, theta, noise) - prior_term);
      const auto lg = mc_loglikelihood_gradient(data, points, spec, theta, noise);
      const ParamVec g = -(lg.gradient - prior_precision * centred);
      grad->resize(m);
      for (Eigen::Index j = 0; j < m; ++j) (*grad)(j) = g(idx[static_cast<std::size_t>(j)]);
      return -(lg.value - prior_term);
    } catch (const ConditioningError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const DomainError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  const ParamMat prior_l = prior_llt.matrixL();
  MinimizeOptions mopt;
  mopt.max_evaluations = opt.max_evaluations;
  mopt.gradient_with_value = opt.gradient == GradientMode::analytic;
  MinimizeResult best;
  bool have_converged = false;
  int total_evals = 0;
  int n_converged = 0;
  // The common-random-number objective can be multimodal for small B, so
  // starting points are the best of the prior mean and `screen` prior draws.
  std::vector<std::pair<double, Eigen::VectorXd>> starts;
  for (int r = 0; r <= std::max(opt.screen, opt.restarts - 1); ++r) {
    ParamVec start = prior.mean;
    if (r > 0) start = prior.mean + prior_l * restart_rng.normal_vector(kParamDim);
    Eigen::VectorXd z0(m);
    for (Eigen::Index j = 0; j < m; ++j) z0(j) = start(idx[static_cast<std::size_t>(j)]);
    int cost = 0;
    const double v = objective_grad(z0, nullptr, cost);
    starts.emplace_back(std::isfinite(v) ? v : std::numeric_limits<double>::infinity(), z0);
  }
  // stable: ties keep the prior mean first
  std::stable_sort(starts.begin(), starts.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  total_evals += static_cast<int>(starts.size());
  for (int r = 0; r < opt.restarts; ++r) {
    const Eigen::VectorXd& z0 = starts[static_cast<std::size_t>(r)].second;
    auto white = [&](const Eigen::VectorXd& w, Eigen::VectorXd* gw, int& cost) {
      const double v = objective_grad(to_theta(w), gw, cost);
      if (gw && std::isfinite(v)) *gw = free_l.transpose() * *gw;
      return v;
    };
    MinimizeResult res = bfgs_minimize(white, to_white(z0), mopt);
    res.x = to_theta(res.x);
    total_evals += res.evaluations;
    if (res.converged) ++n_converged;
    const bool better = res.converged && (!have_converged || res.value < best.value);
    const bool fallback = !have_converged && res.value < best.value;
    if (better || fallback) {
      best = res;
      have_converged = have_converged || res.converged;
    }
  }
  if (!have_converged) {
    ParamVec full = best.x.size() == m ? embed(best.x) : prior.mean;
    throw FitError("Laplace mode search did not converge in " + std::to_string(opt.restarts) +
                       " restarts",
                   std::vector<double>(full.data(), full.data() + kParamDim));
  }

  // negative Hessian by central differences of the gradient
  Eigen::MatrixXd A(m, m);
  int hess_evals = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double h = std::max(1e-4, 1e-4 * std::abs(best.x(i)));
    Eigen::VectorXd xp = best.x, xm = best.x, gp(m), gm(m);
    xp(i) += h;
    xm(i) -= h;
    const double fp = objective_grad(xp, &gp, hess_evals);
    const double fm = objective_grad(xm, &gm, hess_evals);
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      ParamVec full = embed(best.x);
      throw FitError("objective not finite next to the mode",
                     std::vector<double>(full.data(), full.data() + kParamDim));
    }
    A.col(i) = (gp - gm) / (2.0 * h);
  }
  bool repaired = false;
  const Eigen::MatrixXd cov_free = detail::invert_precision(A, repaired);
  if (!cov_free.allFinite()) {
    ParamVec full = embed(best.x);
    throw FitError("posterior covariance is not finite",
                   std::vector<double>(full.data(), full.data() + kParamDim));
  }

  GaussianApprox out;
  out.mean = embed(best.x);
  out.covariance = prior.covariance;
  for (Eigen::Index a = 0; a < m; ++a) {
    for (int j = 0; j < kParamDim; ++j) {
      out.covariance(idx[static_cast<std::size_t>(a)], j) = 0.0;
      out.covariance(j, idx[static_cast<std::size_t>(a)]) = 0.0;
    }
  }
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      out.covariance(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]) =
          cov_free(a, b);
  if (diag) {
    diag->evaluations = total_evals + hess_evals;
    diag->restarts_converged = n_converged;
    diag->hessian_repaired = repaired;
  }
  return out;
}

inline GaussianApprox laplace_fit(const std::vector<BivariateObservation>& data,
                                  const Design& design, const GlsmSpec& spec,
                                  const PriorSpec& prior, const FitOptions& opt,
                                  RngStream& rng, FitDiagnostics* diag = nullptr) {
  return laplace_fit(data, design.points, spec, prior, opt, rng, diag);
}

// ---------------------------------------------------------------------------
// Posterior and posterior-predictive sampling
// ---------------------------------------------------------------------------

inline std::vector<ParameterVector> sample_posterior(const GaussianApprox& approx,
                                                     std::size_t count, RngStream& rng) {
  const ParamMat L = approx.cholesky();
  std::vector<ParameterVector> out;
  out.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    ParamVec e;
    for (int i = 0; i < kParamDim; ++i) e(i) = rng.normal();
    out.emplace_back(approx.mean + L * e);
  }
  return out;
}

// Posterior predictive draws at a prediction set: row t holds all draws for
// location t. eta1/eta2 are the linear predictors X beta + s of each draw.
struct PredictiveSamples {
  Eigen::MatrixXd z1;
  Eigen::MatrixXd z2;
  Eigen::MatrixXd eta1;
  Eigen::MatrixXd eta2;

  Eigen::Index locations() const { return z1.rows(); }
  Eigen::Index draws() const { return z1.cols(); }
};

enum class FieldSampling {
  joint,     // one MVN field over the whole prediction set per draw
  marginal,  // independent N(0, sill) per location; same per-location law
};

inline PredictiveSamples sample_posterior_predictive(const GaussianApprox& approx,
                                                     const PredictionSet& xi,
                                                     const GlsmSpec& spec, std::size_t count,
                                                     RngStream& rng,
                                                     FieldSampling mode = FieldSampling::joint) {
  if (xi.size() == 0) throw DomainError("prediction set must be nonempty");
  const auto T = static_cast<Eigen::Index>(xi.size());
  const auto N = static_cast<Eigen::Index>(count);
  PredictiveSamples out{Eigen::MatrixXd(T, N), Eigen::MatrixXd(T, N), Eigen::MatrixXd(T, N),
                        Eigen::MatrixXd(T, N)};
  const ParamMat L = approx.cholesky();
  for (Eigen::Index c = 0; c < N; ++c) {
    ParamVec e;
    for (int i = 0; i < kParamDim; ++i) e(i) = rng.normal();
    const ParameterVector theta(approx.mean + L * e);
    Eigen::VectorXd s1, s2;
    if (mode == FieldSampling::joint) {
      s1 = sample_gaussian_field(build_covariance(xi.points, theta.matern1()), rng);
      s2 = sample_gaussian_field(build_covariance(xi.points, theta.matern2()), rng);
    } else {
      const double sd1 = std::sqrt(theta.matern1().partial_sill);
      const double sd2 = std::sqrt(theta.matern2().partial_sill);
      s1 = sd1 * rng.normal_vector(T);
      s2 = sd2 * rng.normal_vector(T);
    }
    const FixedEffects fe = fixed_effects(xi.points, spec, theta);
    const double sigma1 = theta.sigma1();
    const double alpha = theta.alpha();
    for (Eigen::Index t = 0; t < T; ++t) {
      const double eta1 = fe.mean1(t) + s1(t);
      const double eta2 = fe.log_rate2(t) + s2(t);
      if (!(eta2 < std::log(kMaxPoissonRate)))
        throw SimulationError("Poisson rate overflow at prediction location " + std::to_string(t));
      auto [z1, z2] = draw_bivariate(eta1, sigma1, std::exp(eta2), alpha, rng);
      out.z1(t, c) = z1;
      out.z2(t, c) = static_cast<double>(z2);
      out.eta1(t, c) = eta1;
      out.eta2(t, c) = eta2;
    }
  }
  return out;
}

}  // namespace geodesign

#endif  // GEODESIGN_INFERENCE_HPP
