#ifndef GEODESIGN_EVALUATION_HPP
#define GEODESIGN_EVALUATION_HPP

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geodesign/error.hpp"
#include "geodesign/inference.hpp"
#include "geodesign/loss.hpp"
#include "geodesign/parallel.hpp"
#include "geodesign/problem.hpp"
#include "geodesign/random.hpp"
#include "geodesign/spatial.hpp"

namespace geodesign {

// Seed of replicate r; replicate r of every design shares it (paired designs).
inline std::uint64_t replicate_seed(std::uint64_t root, int r) {
  return derive_seed(root, {stream::kReplicate, static_cast<std::uint64_t>(r)});
}

inline double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw DomainError("correlation needs two equally long samples of size >= 2");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Replicated evaluation and efficiencies
// ---------------------------------------------------------------------------

enum class Objective { E, P, D };

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::E: return "E";
    case Objective::P: return "P";
    case Objective::D: return "D";
  }
  return "E";
}

// Expected losses of several designs over `reps` paired replicates. Prediction
// values have the prior predictive entropy subtracted, so all three objectives
// are reported as (negative) information gains.
struct ReplicateTable {
  std::vector<std::string> design_ids;
  // [design][rep]
  std::vector<std::vector<double>> E, P, D, pvar;
  double prior_entropy = 0.0;
  int reps = 0;

  const std::vector<std::vector<double>>& values(Objective o) const {
    return o == Objective::E ? E : o == Objective::P ? P : D;
  }
};

inline ReplicateTable replicate_losses(const std::vector<Design>& designs, const Problem& problem,
                                       const LossBudgets& budgets, int reps,
                                       std::uint64_t root_seed, double prior_entropy) {
  if (reps < 1) throw DomainError("reps must be at least 1");
  ReplicateTable t;
  t.reps = reps;
  t.prior_entropy = prior_entropy;
  const std::size_t nd = designs.size();
  for (auto* v : {&t.E, &t.P, &t.D, &t.pvar}) v->assign(nd, std::vector<double>(reps));
  EvaluateOptions opt;
  opt.kinds = {LossKind::estimation, LossKind::prediction_mvn, LossKind::prediction_variance};
  opt.budgets = budgets;
  for (const auto& d : designs) t.design_ids.push_back(design_id(d));
  parallel_for(nd * static_cast<std::size_t>(reps), [&](std::size_t job) {
    const std::size_t i = job / static_cast<std::size_t>(reps);
    const int r = static_cast<int>(job % static_cast<std::size_t>(reps));
    const auto rep = evaluate_design(designs[i], problem, opt, replicate_seed(root_seed, r));
    const double e = rep.at(LossKind::estimation).expected_loss;
    const double p = rep.at(LossKind::prediction_mvn).expected_loss - prior_entropy;
    t.E[i][static_cast<std::size_t>(r)] = e;
    t.P[i][static_cast<std::size_t>(r)] = p;
    t.D[i][static_cast<std::size_t>(r)] = p + e;
    t.pvar[i][static_cast<std::size_t>(r)] = rep.at(LossKind::prediction_variance).expected_loss;
  });
  return t;
}

struct EfficiencyReport {
  std::string design_id;
  std::string reference_design_id;
  Objective objective = Objective::E;
  double efficiency_percent = 0.0;
  int reps = 0;
};

// 100 * sum(design) / sum(reference), the ratio taken exactly as written.
inline double efficiency_percent(const std::vector<double>& design,
                                 const std::vector<double>& reference) {
  double a = 0.0, b = 0.0;
  for (double v : design) a += v;
  for (double v : reference) b += v;
  if (b == 0.0) throw EvaluationError("efficiency undefined: reference loss sum is zero");
  return 100.0 * (a / b);  // exactly 100 when the sums agree
}

inline EfficiencyReport efficiency(const ReplicateTable& t, std::size_t design,
                                   std::size_t reference, Objective o) {
  return {t.design_ids.at(design), t.design_ids.at(reference), o,
          efficiency_percent(t.values(o).at(design), t.values(o).at(reference)), t.reps};
}

inline EfficiencyReport efficiency(const Design& d, const Design& d_ref, Objective o,
                                   const Problem& problem, const LossBudgets& budgets, int reps,
                                   std::uint64_t root_seed, double prior_entropy) {
  const auto t = replicate_losses({d, d_ref}, problem, budgets, reps, root_seed, prior_entropy);
  return efficiency(t, 0, 1, o);
}

inline nlohmann::json to_json(const EfficiencyReport& r) {
  return {{"design_id", r.design_id},
          {"reference_design_id", r.reference_design_id},
          {"objective", to_string(r.objective)},
          {"efficiency_percent", r.efficiency_percent},
          {"reps", r.reps}};
}

struct LossDistribution {
  std::string design_id;
  LossKind objective = LossKind::estimation;
  std::vector<double> values;
};

// `reps` independent expected-loss replicates (distinct derived seeds).
inline LossDistribution loss_distribution(const Design& d, const Problem& problem, LossKind kind,
                                          const LossBudgets& budgets, int reps,
                                          std::uint64_t root_seed) {
  if (reps < 1) throw DomainError("reps must be at least 1");
  LossDistribution out{design_id(d), kind, std::vector<double>(static_cast<std::size_t>(reps))};
  parallel_for(out.values.size(), [&](std::size_t r) {
    out.values[r] = expected_loss(d, problem, LossSpec{kind, budgets},
                                  replicate_seed(root_seed, static_cast<int>(r)))
                        .expected_loss;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Nested vs MVN prediction loss
// ---------------------------------------------------------------------------

struct ApproximationRow {
  std::string design_id;
  double nested = 0.0;
  double mvn = 0.0;
  double time_nested = 0.0;
  double time_mvn = 0.0;
};

struct ApproximationStudy {
  std::vector<ApproximationRow> rows;
  double correlation = 0.0;
  double mean_time_nested = 0.0;
  double mean_time_mvn = 0.0;
};

namespace detail {

// Posterior for `design` under the dataset draw identified by `seed`; the same
// seed gives every design the same parameter, field and data streams.
inline GaussianApprox shared_draw_posterior(const Design& design, const Problem& problem, int B,
                                            std::uint64_t seed) {
  auto s = [&](std::uint64_t tag) { return derive_seed(seed, {tag}); };
  RngStream prior_rng(s(stream::kPriorDraw));
  const ParameterVector theta = sample_posterior(problem.prior, 1, prior_rng).front();
  RngStream field_rng(s(stream::kDesignField));
  const auto s1 = sample_gaussian_field(build_covariance(design.points, theta.matern1()), field_rng);
  const auto s2 = sample_gaussian_field(build_covariance(design.points, theta.matern2()), field_rng);
  RngStream data_rng(s(stream::kData));
  const auto data =
      simulate_bivariate(design, problem.model, theta, s1, s2, problem.replicates, data_rng);
  RngStream fit_rng(s(stream::kFitNoise));
  FitOptions fo = problem.fit;
  fo.B = B;
  return laplace_fit(data, design, problem.model, problem.prior, fo, fit_rng);
}

}  // namespace detail

// Both prediction losses for each design on a shared dataset draw: nested
// with (K_inner, R, B) and MVN with R predictive draws.
inline ApproximationStudy approximation_study(const std::vector<Design>& designs,
                                              const Problem& problem, const LossBudgets& budgets,
                                              std::uint64_t root_seed) {
  if (designs.size() < 2) throw DomainError("approximation study needs at least 2 designs");
  budgets.validate();
  ApproximationStudy out;
  out.rows.resize(designs.size());
  const std::uint64_t data_seed = derive_seed(root_seed, {stream::kData});
  parallel_for(designs.size(), [&](std::size_t i) {
    const Design d = canonical_design(designs[i]);
    const auto post = detail::shared_draw_posterior(d, problem, budgets.B, data_seed);
    auto& row = out.rows[i];
    row.design_id = design_id(d);
    auto t0 = std::chrono::steady_clock::now();
    RngStream nested_rng(derive_seed(root_seed, {stream::kNested}));
    row.nested = loss_prediction_nested(post, problem.prediction, problem.model, budgets.K_inner,
                                        budgets.R, budgets.B, nested_rng);
    auto t1 = std::chrono::steady_clock::now();
    RngStream pred_rng(derive_seed(root_seed, {stream::kPredictive}));
    const auto s = sample_posterior_predictive(post, problem.prediction, problem.model,
                                               static_cast<std::size_t>(budgets.R), pred_rng,
                                               FieldSampling::marginal);
    row.mvn = loss_prediction_mvn(s).value;
    auto t2 = std::chrono::steady_clock::now();
    row.time_nested = std::chrono::duration<double>(t1 - t0).count();
    row.time_mvn = std::chrono::duration<double>(t2 - t1).count();
  });
  std::vector<double> a, b;
  for (const auto& r : out.rows) {
    a.push_back(r.nested);
    b.push_back(r.mvn);
    out.mean_time_nested += r.time_nested;
    out.mean_time_mvn += r.time_mvn;
  }
  out.mean_time_nested /= static_cast<double>(out.rows.size());
  out.mean_time_mvn /= static_cast<double>(out.rows.size());
  out.correlation = pearson_correlation(a, b);
  return out;
}

// `count` designs of n uniform points in a rectangle.
inline std::vector<Design> random_designs(std::size_t count, std::size_t n, const Rectangle& box,
                                          const std::function<Location(double, double)>& make,
                                          std::uint64_t root_seed) {
  std::vector<Design> out(count);
  for (std::size_t c = 0; c < count; ++c) {
    RngStream rng(derive_seed(root_seed, {stream::kRandomDesign, c}));
    for (std::size_t i = 0; i < n; ++i)
      out[c].points.push_back(make(box.xmin + rng.uniform() * (box.xmax - box.xmin),
                                   box.ymin + rng.uniform() * (box.ymax - box.ymin)));
  }
  return out;
}

struct TimingPoint {
  int N = 0;
  double nested_seconds = 0.0;
  double mvn_seconds = 0.0;
};

// Wall time of each prediction loss at matched sample budget N: nested with
// K_inner = R = B = N, MVN with N predictive draws (repeated until at least
// min_seconds have elapsed, then averaged, to resolve short runs).
inline std::vector<TimingPoint> loss_timing(const GaussianApprox& posterior, const Problem& problem,
                                            const std::vector<int>& Ns, std::uint64_t root_seed,
                                            double min_seconds = 0.2) {
  std::vector<TimingPoint> out;
  for (int N : Ns) {
    TimingPoint tp{N, 0.0, 0.0};
    RngStream rng(derive_seed(root_seed, {stream::kNested, static_cast<std::uint64_t>(N)}));
    auto t0 = std::chrono::steady_clock::now();
    volatile double sink =
        loss_prediction_nested(posterior, problem.prediction, problem.model, N, N, N, rng);
    tp.nested_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    int reps = 0;
    t0 = std::chrono::steady_clock::now();
    double elapsed = 0.0;
    do {
      RngStream prng(derive_seed(root_seed, {stream::kPredictive, static_cast<std::uint64_t>(N)}));
      const auto s = sample_posterior_predictive(posterior, problem.prediction, problem.model,
                                                 static_cast<std::size_t>(N), prng,
                                                 FieldSampling::marginal);
      sink = loss_prediction_mvn(s).value;
      ++reps;
      elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } while (elapsed < min_seconds);
    (void)sink;
    tp.mvn_seconds = elapsed / reps;
    out.push_back(tp);
  }
  return out;
}

// Least-squares slope of log(y) on log(x).
inline double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (double v : x) lx.push_back(std::log(v));
  for (double v : y) ly.push_back(std::log(v));
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Fixed-design comparison
// ---------------------------------------------------------------------------

struct NamedDesign {
  std::string name;
  Design design;
};

struct LocationVarianceRow {
  std::string design;
  std::size_t location = 0;
  double x = 0.0, y = 0.0;
  int response = 1;
  double prior_var = 0.0;
  double post_var = 0.0;
};

struct ParameterVarianceRow {
  std::string design;
  std::string parameter;
  double prior_var = 0.0;
  double post_var = 0.0;
};

struct FixedDesignStudy {
  std::vector<LocationVarianceRow> locations;
  std::vector<ParameterVarianceRow> parameters;
  std::map<std::string, int> failures;

  // Mean over prediction locations of the averaged posterior predictive
  // variance for one design and response.
  double mean_post_var(const std::string& design, int response) const {
    double acc = 0.0;
    int n = 0;
    for (const auto& r : locations)
      if (r.design == design && r.response == response) {
        acc += r.post_var;
        ++n;
      }
    return n ? acc / n : std::numeric_limits<double>::quiet_NaN();
  }
};

namespace detail {

inline void predictive_variances(const PredictiveSamples& s, Eigen::VectorXd& v1,
                                 Eigen::VectorXd& v2) {
  const double N = static_cast<double>(s.draws());
  v1.resize(s.locations());
  v2.resize(s.locations());
  for (Eigen::Index t = 0; t < s.locations(); ++t) {
    v1(t) = (s.z1.row(t).array() - s.z1.row(t).mean()).square().sum() / (N - 1.0);
    v2(t) = (s.z2.row(t).array() - s.z2.row(t).mean()).square().sum() / (N - 1.0);
  }
}

}  // namespace detail

// For each design: `reps` simulated datasets, Laplace posteriors, and R
// posterior predictive draws each; per-location predictive variances and
// per-parameter posterior variances are averaged over successful replicates.
// Replicate r uses the same seeds for every design.
inline FixedDesignStudy fixed_design_study(const std::vector<NamedDesign>& designs,
                                           const Problem& problem, const LossBudgets& budgets,
                                           int reps, std::uint64_t root_seed) {
  if (reps < 1) throw DomainError("reps must be at least 1");
  budgets.validate();
  const auto T = static_cast<Eigen::Index>(problem.prediction.size());
  // prior predictive, computed once
  RngStream prior_rng(derive_seed(root_seed, {stream::kBaseline}));
  const auto prior_s = sample_posterior_predictive(
      problem.prior, problem.prediction, problem.model,
      static_cast<std::size_t>(budgets.R) * static_cast<std::size_t>(std::min(reps, 20)), prior_rng,
      FieldSampling::marginal);
  Eigen::VectorXd pv1, pv2;
  detail::predictive_variances(prior_s, pv1, pv2);

  FixedDesignStudy out;
  for (const auto& nd : designs) {
    struct Slot {
      bool ok = false;
      Eigen::VectorXd v1, v2;
      ParamVec pvar;
    };
    std::vector<Slot> slots(static_cast<std::size_t>(reps));
    const Design d = canonical_design(nd.design);
    parallel_for(slots.size(), [&](std::size_t r) {
      const std::uint64_t seed = replicate_seed(root_seed, static_cast<int>(r));
      try {
        const auto post = detail::shared_draw_posterior(d, problem, budgets.B, seed);
        RngStream pred_rng(derive_seed(seed, {stream::kPredictive}));
        const auto s = sample_posterior_predictive(post, problem.prediction, problem.model,
                                                   static_cast<std::size_t>(budgets.R), pred_rng,
                                                   FieldSampling::marginal);
        detail::predictive_variances(s, slots[r].v1, slots[r].v2);
        slots[r].pvar = post.covariance.diagonal();
        slots[r].ok = true;
      } catch (const FitError&) {
      } catch (const SimulationError&) {
      } catch (const ConditioningError&) {
      }
    });
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(T), m2 = Eigen::VectorXd::Zero(T);
    ParamVec mp = ParamVec::Zero();
    int ok = 0;
    for (const auto& s : slots) {
      if (!s.ok) continue;
      m1 += s.v1;
      m2 += s.v2;
      mp += s.pvar;
      ++ok;
    }
    out.failures[nd.name] = reps - ok;
    if (ok * 5 < reps * 4)
      throw EvaluationError("design '" + nd.name + "': " + std::to_string(reps - ok) + " of " +
                            std::to_string(reps) + " fits failed (limit 20%)");
    m1 /= ok;
    m2 /= ok;
    mp /= ok;
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto& p = problem.prediction[static_cast<std::size_t>(t)];
      out.locations.push_back({nd.name, static_cast<std::size_t>(t), p.x, p.y, 1, pv1(t), m1(t)});
      out.locations.push_back({nd.name, static_cast<std::size_t>(t), p.x, p.y, 2, pv2(t), m2(t)});
    }
    for (int i = 0; i < kParamDim; ++i)
      out.parameters.push_back({nd.name, kParamNames[static_cast<std::size_t>(i)],
                                problem.prior.covariance(i, i), mp(i)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference designs
// ---------------------------------------------------------------------------

// n points of an equilateral triangular lattice, filled row by row, scaled
// to the largest spacing that fits the rectangle and centred in it. Every
// point's nearest neighbour is at the lattice spacing.
inline Design triangular_design(std::size_t n, const Rectangle& box,
                                const std::function<Location(double, double)>& make) {
  if (n < 1) throw DomainError("design size must be at least 1");
  const std::size_t per_row = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const double h = std::sqrt(3.0) / 2.0;
  std::vector<std::array<double, 2>> unit;  // spacing 1
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = i / per_row, c = i % per_row;
    unit.push_back({static_cast<double>(c) + (r % 2 ? 0.5 : 0.0), static_cast<double>(r) * h});
  }
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : unit) {
    xmin = std::min(xmin, p[0]);
    xmax = std::max(xmax, p[0]);
    ymin = std::min(ymin, p[1]);
    ymax = std::max(ymax, p[1]);
  }
  const double w = box.xmax - box.xmin, hgt = box.ymax - box.ymin;
  double s = std::numeric_limits<double>::infinity();
  if (xmax > xmin) s = std::min(s, w / (xmax - xmin));
  if (ymax > ymin) s = std::min(s, hgt / (ymax - ymin));
  if (!std::isfinite(s)) s = 0.0;
  const double ox = box.xmin + 0.5 * (w - s * (xmax - xmin)) - s * xmin;
  const double oy = box.ymin + 0.5 * (hgt - s * (ymax - ymin)) - s * ymin;
  Design d;
  for (const auto& p : unit) d.points.push_back(make(ox + s * p[0], oy + s * p[1]));
  return d;
}

// n points equally spaced along the perimeter, starting at the lower-left
// corner and running anticlockwise.
inline Design boundary_design(std::size_t n, const Rectangle& box,
                              const std::function<Location(double, double)>& make) {
  if (n < 1) throw DomainError("design size must be at least 1");
  const double w = box.xmax - box.xmin, h = box.ymax - box.ymin;
  const double per = 2.0 * (w + h);
  Design d;
  for (std::size_t i = 0; i < n; ++i) {
    double s = per * static_cast<double>(i) / static_cast<double>(n);
    double x, y;
    if (s < w) {
      x = box.xmin + s;
      y = box.ymin;
    } else if ((s -= w) < h) {
      x = box.xmax;
      y = box.ymin + s;
    } else if ((s -= h) < w) {
      x = box.xmax - s;
      y = box.ymax;
    } else {
      s -= w;
      x = box.xmin;
      y = box.ymax - s;
    }
    d.points.push_back(make(x, y));
  }
  return d;
}

// Greedy maximin over the prediction locations: start at the location
// nearest the centroid, then repeatedly add the location farthest from those
// already chosen (first in order on ties).
inline Design close_pred_design(std::size_t n, const PredictionSet& xi) {
  if (n < 1) throw DomainError("design size must be at least 1");
  if (n > xi.size()) throw DomainError("close.pred design cannot exceed the prediction set size");
  double cx = 0.0, cy = 0.0;
  for (const auto& p : xi.points) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(xi.size());
  cy /= static_cast<double>(xi.size());
  std::vector<bool> used(xi.size(), false);
  std::size_t first = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < xi.size(); ++t) {
    const double dd = std::hypot(xi[t].x - cx, xi[t].y - cy);
    if (dd < best) {
      best = dd;
      first = t;
    }
  }
  Design d;
  d.points.push_back(xi[first]);
  used[first] = true;
  while (d.size() < n) {
    std::size_t pick = 0;
    double far = -1.0;
    for (std::size_t t = 0; t < xi.size(); ++t) {
      if (used[t]) continue;
      double m = std::numeric_limits<double>::infinity();
      for (const auto& p : d.points) m = std::min(m, distance(p, xi[t]));
      if (m > far) {
        far = m;
        pick = t;
      }
    }
    used[pick] = true;
    d.points.push_back(xi[pick]);
  }
  return d;
}

}  // namespace geodesign

#endif  // GEODESIGN_EVALUATION_HPP
