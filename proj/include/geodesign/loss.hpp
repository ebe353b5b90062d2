#ifndef GEODESIGN_LOSS_HPP
#define GEODESIGN_LOSS_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "geodesign/copula.hpp"
#include "geodesign/error.hpp"
#include "geodesign/inference.hpp"
#include "geodesign/numeric.hpp"
#include "geodesign/parallel.hpp"
#include "geodesign/problem.hpp"
#include "geodesign/random.hpp"
#include "geodesign/spatial.hpp"

namespace geodesign {

enum class LossKind { estimation, prediction_nested, prediction_mvn, dual, prediction_variance };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::estimation: return "estimation";
    case LossKind::prediction_nested: return "prediction_nested";
    case LossKind::prediction_mvn: return "prediction_mvn";
    case LossKind::dual: return "dual";
    case LossKind::prediction_variance: return "prediction_variance";
  }
  return "estimation";
}

// Accepts the canonical names plus the short CLI spellings.
inline std::optional<LossKind> parse_loss_kind(const std::string& s) {
  if (s == "estimation" || s == "E") return LossKind::estimation;
  if (s == "prediction" || s == "prediction_mvn" || s == "P") return LossKind::prediction_mvn;
  if (s == "prediction_nested" || s == "nested") return LossKind::prediction_nested;
  if (s == "dual" || s == "D") return LossKind::dual;
  if (s == "pvar" || s == "prediction_variance") return LossKind::prediction_variance;
  return std::nullopt;
}

struct LossBudgets {
  int K = 30;        // outer prior/data draws
  int B = 200;       // field draws (fit likelihood and nested inner average)
  int R = 500;       // predictive draws
  int K_inner = 10;  // posterior draws in the nested estimator

  void validate() const {
    if (K < 1 || B < 1 || R < 1 || K_inner < 1)
      throw DomainError("loss budgets K, B, R and K_inner must all be at least 1");
  }
};

struct LossSpec {
  LossKind kind = LossKind::estimation;
  LossBudgets budgets;
};

// ---------------------------------------------------------------------------
// Loss kernels
// ---------------------------------------------------------------------------

// Negated Kullback-Leibler divergence KL(posterior || prior) between two
// Gaussians on the transformed scale. Always <= 0.
inline double loss_estimation(const PriorSpec& prior, const GaussianApprox& posterior) {
  Eigen::LLT<ParamMat> p0(prior.covariance);
  if (p0.info() != Eigen::Success) throw DomainError("prior covariance is singular");
  Eigen::LLT<ParamMat> p1(posterior.covariance);
  if (p1.info() != Eigen::Success) throw DomainError("posterior covariance is not positive definite");
  const ParamMat L0 = p0.matrixL();
  const ParamMat L1 = p1.matrixL();
  // tr(O0^-1 O) = ||L0^-1 L1||_F^2
  const ParamMat M = L0.triangularView<Eigen::Lower>().solve(L1);
  const ParamVec d = L0.triangularView<Eigen::Lower>().solve(posterior.mean - prior.mean);
  const double log_det0 = 2.0 * L0.diagonal().array().log().sum();
  const double log_det1 = 2.0 * L1.diagonal().array().log().sum();
  const double kl =
      0.5 * (M.squaredNorm() + d.squaredNorm() - kParamDim + (log_det0 - log_det1));
  return -std::max(kl, 0.0);
}

struct MvnEntropyResult {
  double value = 0.0;
  bool ridge_applied = false;
};

// Sum over locations of the bivariate Gaussian entropy
// log(2 pi e) + 1/2 log det S_t of the sample covariance of (z1, z2).
inline MvnEntropyResult loss_prediction_mvn(const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols())
    throw DomainError("predictive sample blocks have mismatched shapes");
  if (z1.cols() < 10) throw DomainError("MVN entropy needs at least 10 samples per location");
  const double N = static_cast<double>(z1.cols());
  const double c = std::log(2.0 * std::numbers::pi) + 1.0;
  MvnEntropyResult out;
  for (Eigen::Index t = 0; t < z1.rows(); ++t) {
    const double m1 = z1.row(t).mean(), m2 = z2.row(t).mean();
    const Eigen::ArrayXd a = z1.row(t).array() - m1;
    const Eigen::ArrayXd b = z2.row(t).array() - m2;
    double v11 = (a * a).sum() / (N - 1.0);
    double v22 = (b * b).sum() / (N - 1.0);
    const double v12 = (a * b).sum() / (N - 1.0);
    double det = v11 * v22 - v12 * v12;
    if (!(v11 > 0.0) || !(v22 > 0.0) || !(det > 0.0)) {
      const double ridge = 1e-8 * std::max(v11 + v22, 1e-300);
      v11 += ridge;
      v22 += ridge;
      det = v11 * v22 - v12 * v12;
      out.ridge_applied = true;
      if (!(det > 0.0)) det = ridge * ridge;
    }
    out.value += c + 0.5 * std::log(det);
  }
  return out;
}

inline MvnEntropyResult loss_prediction_mvn(const PredictiveSamples& s) {
  return loss_prediction_mvn(s.z1, s.z2);
}

inline double loss_dual(const PriorSpec& prior, const GaussianApprox& posterior,
                        const PredictiveSamples& s) {
  const double e = loss_estimation(prior, posterior);
  const double p = loss_prediction_mvn(s).value;
  return p + e;
}

struct PredictionVariance {
  double total = 0.0;      // mean of the two responses
  double response1 = 0.0;  // (1/T) sum_t Var eta1(xi_t)
  double response2 = 0.0;
};

// Spatially averaged predictive variance of the linear-predictor fields.
inline PredictionVariance loss_prediction_variance(const PredictiveSamples& s) {
  if (s.draws() < 2) throw DomainError("prediction variance needs at least 2 draws");
  const double N = static_cast<double>(s.draws());
  auto avg_var = [N](const Eigen::MatrixXd& m) {
    double acc = 0.0;
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
      const double mu = m.row(t).mean();
      acc += (m.row(t).array() - mu).square().sum() / (N - 1.0);
    }
    return acc / static_cast<double>(m.rows());
  };
  PredictionVariance out;
  out.response1 = avg_var(s.eta1);
  out.response2 = avg_var(s.eta2);
  out.total = 0.5 * (out.response1 + out.response2);
  return out;
}

// Triple-loop estimator -1/K sum_k 1/R sum_r sum_t log 1/B sum_b p(z_rt | s_bt, theta_k).
// theta_k comes from the posterior; z_r and the inner fields s_b are drawn at
// the prediction set given theta_k. Densities are evaluated location-wise.
inline double loss_prediction_nested(const GaussianApprox& posterior, const PredictionSet& xi,
                                     const GlsmSpec& spec, int K, int R, int B, RngStream& rng) {
  if (K < 1 || R < 1 || B < 1) throw DomainError("nested budgets must be at least 1");
  if (xi.size() == 0) throw DomainError("prediction set must be nonempty");
  const auto T = static_cast<Eigen::Index>(xi.size());
  const auto thetas = sample_posterior(posterior, static_cast<std::size_t>(K), rng);
  std::vector<double> lw(static_cast<std::size_t>(B));
  double total = 0.0;
  for (const auto& theta : thetas) {
    const auto c1 = build_covariance(xi.points, theta.matern1());
    const auto c2 = build_covariance(xi.points, theta.matern2());
    const FixedEffects fe = fixed_effects(xi.points, spec, theta);
    const double sigma1 = theta.sigma1(), alpha = theta.alpha();
    // inner field draws, stored as linear predictors
    const FieldNoise inner = draw_field_noise(T, B, rng);
    const Eigen::MatrixXd mu1 =
        (c1.cholesky.triangularView<Eigen::Lower>() * inner.e1).colwise() + fe.mean1;
    Eigen::MatrixXd rate2 =
        (c2.cholesky.triangularView<Eigen::Lower>() * inner.e2).colwise() + fe.log_rate2;
    rate2 = rate2.array().exp().matrix();
    for (int r = 0; r < R; ++r) {
      const Eigen::VectorXd s1 = sample_gaussian_field(c1, rng);
      const Eigen::VectorXd s2 = sample_gaussian_field(c2, rng);
      for (Eigen::Index t = 0; t < T; ++t) {
        const double eta2 = fe.log_rate2(t) + s2(t);
        if (!(eta2 < std::log(kMaxPoissonRate)))
          throw SimulationError("Poisson rate overflow at prediction location " + std::to_string(t));
        const auto [z1, z2] = draw_bivariate(fe.mean1(t) + s1(t), sigma1, std::exp(eta2), alpha, rng);
        for (int b = 0; b < B; ++b)
          lw[static_cast<std::size_t>(b)] =
              log_mixed_joint_density(z1, z2, mu1(t, b), sigma1, rate2(t, b), alpha);
        total += log_mean_exp(lw);
      }
    }
  }
  return -total / (static_cast<double>(K) * R);
}

// ---------------------------------------------------------------------------
// Algorithm 1: expected loss of a design
// ---------------------------------------------------------------------------

struct LossReport {
  std::string design_id;
  LossKind kind = LossKind::estimation;
  int K = 0;
  double expected_loss = 0.0;
  std::vector<double> per_draw_losses;  // one per successful k, in k order
  int failure_count = 0;
  double wall_time = 0.0;
  bool ridge_applied = false;
  // prediction_variance only
  std::optional<PredictionVariance> variance_breakdown;
};

inline nlohmann::json to_json(const LossReport& r, bool include_timing = true) {
  nlohmann::json j{{"design_id", r.design_id},
                   {"kind", to_string(r.kind)},
                   {"K", r.K},
                   {"expected_loss", r.expected_loss},
                   {"failure_count", r.failure_count},
                   {"ridge_applied", r.ridge_applied},
                   {"per_draw_losses", r.per_draw_losses}};
  if (r.variance_breakdown)
    j["variance_breakdown"] = {{"response1", r.variance_breakdown->response1},
                               {"response2", r.variance_breakdown->response2}};
  if (include_timing) j["wall_time"] = r.wall_time;
  return j;
}

inline LossReport loss_report_from_json(const nlohmann::json& j) {
  LossReport r;
  r.design_id = j.at("design_id").get<std::string>();
  const auto kind = parse_loss_kind(j.at("kind").get<std::string>());
  if (!kind) throw DataError("unknown loss kind in report");
  r.kind = *kind;
  r.K = j.at("K").get<int>();
  r.expected_loss = j.at("expected_loss").get<double>();
  r.failure_count = j.at("failure_count").get<int>();
  r.ridge_applied = j.value("ridge_applied", false);
  r.per_draw_losses = j.at("per_draw_losses").get<std::vector<double>>();
  if (j.contains("variance_breakdown")) {
    PredictionVariance v;
    v.response1 = j["variance_breakdown"].at("response1").get<double>();
    v.response2 = j["variance_breakdown"].at("response2").get<double>();
    v.total = 0.5 * (v.response1 + v.response2);
    r.variance_breakdown = v;
  }
  r.wall_time = j.value("wall_time", 0.0);
  return r;
}

// Points sorted lexicographically by (x, y); expected losses are evaluated on
// this order so that they are functions of the point set alone.
inline Design canonical_design(Design d) {
  std::stable_sort(d.points.begin(), d.points.end(), [](const Location& a, const Location& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  return d;
}

// Stable 64-bit FNV-1a over the canonical coordinates, as 16 hex digits.
inline std::string design_id(const Design& d) {
  const Design c = canonical_design(d);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](double v) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char byte : bytes) {
      h ^= byte;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : c.points) {
    feed(p.x);
    feed(p.y);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Per-k outcome of one Algorithm 1 iteration, holding every loss that the
// fitted posterior supports so several kinds share one fit.
struct DrawLosses {
  bool ok = false;
  double estimation = 0.0;
  double prediction_mvn = 0.0;
  double prediction_nested = 0.0;
  PredictionVariance variance;
  bool ridge = false;
};

struct EvaluateOptions {
  std::vector<LossKind> kinds{LossKind::estimation};
  LossBudgets budgets;
  // field sampling for predictive draws used by MVN and variance losses
  FieldSampling predictive_fields = FieldSampling::marginal;
};

namespace detail {

inline DrawLosses evaluate_draw(const Design& design, const Problem& problem,
                                const EvaluateOptions& opt, std::uint64_t root_seed, int k) {
  DrawLosses out;
  const auto seed = [&](std::uint64_t tag) {
    return derive_seed(root_seed, {static_cast<std::uint64_t>(k), tag});
  };
  bool need_pred = false, need_nested = false, need_est = false;
  for (auto kind : opt.kinds) {
    need_est |= kind == LossKind::estimation || kind == LossKind::dual;
    need_pred |= kind == LossKind::prediction_mvn || kind == LossKind::dual ||
                 kind == LossKind::prediction_variance;
    need_nested |= kind == LossKind::prediction_nested;
  }
  try {
    RngStream prior_rng(seed(stream::kPriorDraw));
    const ParameterVector theta = sample_posterior(problem.prior, 1, prior_rng).front();
    RngStream field_rng(seed(stream::kDesignField));
    const auto s1 = sample_gaussian_field(build_covariance(design.points, theta.matern1()), field_rng);
    const auto s2 = sample_gaussian_field(build_covariance(design.points, theta.matern2()), field_rng);
    RngStream data_rng(seed(stream::kData));
    const auto data = simulate_bivariate(design, problem.model, theta, s1, s2,
                                         problem.replicates, data_rng);
    RngStream fit_rng(seed(stream::kFitNoise));
    FitOptions fo = problem.fit;
    fo.B = opt.budgets.B;
    const GaussianApprox post = laplace_fit(data, design, problem.model, problem.prior, fo, fit_rng);
    if (need_est) out.estimation = loss_estimation(problem.prior, post);
    if (need_pred) {
      RngStream pred_rng(seed(stream::kPredictive));
      const auto samples = sample_posterior_predictive(post, problem.prediction, problem.model,
                                                       static_cast<std::size_t>(opt.budgets.R),
                                                       pred_rng, opt.predictive_fields);
      const auto mvn = loss_prediction_mvn(samples);
      out.prediction_mvn = mvn.value;
      out.ridge = mvn.ridge_applied;
      out.variance = loss_prediction_variance(samples);
    }
    if (need_nested) {
      RngStream nested_rng(seed(stream::kNested));
      out.prediction_nested =
          loss_prediction_nested(post, problem.prediction, problem.model, opt.budgets.K_inner,
                                 opt.budgets.R, opt.budgets.B, nested_rng);
    }
    out.ok = true;
  } catch (const FitError&) {
  } catch (const SimulationError&) {
  } catch (const ConditioningError&) {
  }
  return out;
}

inline double pick(const DrawLosses& d, LossKind kind) {
  switch (kind) {
    case LossKind::estimation: return d.estimation;
    case LossKind::prediction_mvn: return d.prediction_mvn;
    case LossKind::prediction_nested: return d.prediction_nested;
    case LossKind::dual: return d.prediction_mvn + d.estimation;
    case LossKind::prediction_variance: return d.variance.total;
  }
  return 0.0;
}

}  // namespace detail

// Runs Algorithm 1 for every requested kind from one shared set of K fits.
// Per-k seeds depend only on (root_seed, k), so designs evaluated under the
// same root seed share their prior, field and data draws, and doubling K
// keeps the first K per-draw losses. Failed fits are skipped and counted;
// more than 20% failures is an EvaluationError.
inline std::map<LossKind, LossReport> evaluate_design(const Design& design_in,
                                                      const Problem& problem,
                                                      const EvaluateOptions& opt,
                                                      std::uint64_t root_seed) {
  opt.budgets.validate();
  if (opt.kinds.empty()) throw DomainError("no loss kinds requested");
  validate_design(design_in, problem.model.covariate_dim);
  problem.model.validate();
  const Design design = canonical_design(design_in);
  const auto t0 = std::chrono::steady_clock::now();
  const int K = opt.budgets.K;
  std::vector<DrawLosses> draws(static_cast<std::size_t>(K));
  parallel_for(draws.size(), [&](std::size_t k) {
    draws[k] = detail::evaluate_draw(design, problem, opt, root_seed, static_cast<int>(k));
  });
  int failures = 0;
  bool ridge = false;
  for (const auto& d : draws) {
    failures += d.ok ? 0 : 1;
    ridge = ridge || d.ridge;
  }
  if (failures * 5 > K)
    throw EvaluationError(std::to_string(failures) + " of " + std::to_string(K) +
                          " inner fits failed (limit 20%)");
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string id = design_id(design);
  std::map<LossKind, LossReport> out;
  for (auto kind : opt.kinds) {
    LossReport r;
    r.design_id = id;
    r.kind = kind;
    r.K = K;
    r.failure_count = failures;
    r.wall_time = elapsed;
    r.ridge_applied = ridge && kind != LossKind::estimation;
    PredictionVariance v;
    for (const auto& d : draws) {
      if (!d.ok) continue;
      r.per_draw_losses.push_back(detail::pick(d, kind));
      v.response1 += d.variance.response1;
      v.response2 += d.variance.response2;
    }
    double sum = 0.0;
    for (double x : r.per_draw_losses) sum += x;
    r.expected_loss = sum / static_cast<double>(r.per_draw_losses.size());
    if (kind == LossKind::prediction_variance) {
      const double m = static_cast<double>(r.per_draw_losses.size());
      v.response1 /= m;
      v.response2 /= m;
      v.total = r.expected_loss;
      r.variance_breakdown = v;
    }
    out.emplace(kind, std::move(r));
  }
  return out;
}

inline LossReport expected_loss(const Design& design, const Problem& problem, const LossSpec& spec,
                                std::uint64_t root_seed) {
  EvaluateOptions opt;
  opt.kinds = {spec.kind};
  opt.budgets = spec.budgets;
  return evaluate_design(design, problem, opt, root_seed).at(spec.kind);
}

// Entropy of the prior predictive at the prediction set (MVN form). It does
// not depend on the design; evaluation reports subtract it from prediction
// losses so that they read as entropy reductions.
inline double prior_predictive_entropy(const Problem& problem, int draws, std::uint64_t root_seed,
                                       FieldSampling mode = FieldSampling::marginal) {
  RngStream rng(derive_seed(root_seed, {stream::kBaseline}));
  const auto s = sample_posterior_predictive(problem.prior, problem.prediction, problem.model,
                                             static_cast<std::size_t>(draws), rng, mode);
  return loss_prediction_mvn(s).value;
}

}  // namespace geodesign

#endif  // GEODESIGN_LOSS_HPP
