#ifndef GEODESIGN_PROBLEM_HPP
#define GEODESIGN_PROBLEM_HPP

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "geodesign/copula.hpp"
#include "geodesign/error.hpp"
#include "geodesign/inference.hpp"
#include "geodesign/spatial.hpp"

namespace geodesign {

// Everything that defines a design problem except the design itself.
struct Problem {
  GlsmSpec model;
  PriorSpec prior;
  PredictionSet prediction;
  FitOptions fit;
  int replicates = 1;  // observations per design location
};

enum class Scenario { weak, moderate, strong };

inline double scenario_range(Scenario s) {
  switch (s) {
    case Scenario::weak: return 0.2;
    case Scenario::moderate: return 0.5;
    case Scenario::strong: return 0.8;
  }
  return 0.5;
}

inline std::optional<Scenario> parse_scenario(const std::string& name) {
  if (name == "weak") return Scenario::weak;
  if (name == "moderate") return Scenario::moderate;
  if (name == "strong") return Scenario::strong;
  return std::nullopt;
}

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::weak: return "weak";
    case Scenario::moderate: return "moderate";
    case Scenario::strong: return "strong";
  }
  return "moderate";
}

// Independent Normal priors on the transformed scale for the simulated
// unit-square study; `a` is the prior mean of both range parameters.
inline PriorSpec scenario_prior(double a) {
  ParamVec mean, var;
  mean << 5.0, -2.8, 8.0,                          // beta1
      3.8, -0.5, -0.7,                              // beta2
      std::log(1.2),                                // log sigma1
      std::log(0.7 / a), std::log(a), std::log(1.5),  // field 1
      std::log(0.6 / a), std::log(a), std::log(0.25),  // field 2
      0.85;                                         // logit tau
  var << 4.0, 4.0, 4.0,                             //
      0.125, 0.125, 0.125,                          //
      0.25,                                         //
      0.25, 0.25, 0.25,                             //
      0.125, 0.125, 0.25,                           //
      0.25;
  return diagonal_prior(mean, var);
}

inline PriorSpec scenario_prior(Scenario s) { return scenario_prior(scenario_range(s)); }

// Covariates of the unit-square study are the coordinates themselves.
inline Location unit_square_location(double x, double y) { return {x, y, {x, y}}; }

// xi_vw = (0.25 v, 0.25 w), v, w = 0..4
inline PredictionSet unit_square_prediction_grid() {
  PredictionSet xi;
  for (int v = 0; v <= 4; ++v)
    for (int w = 0; w <= 4; ++w) xi.points.push_back(unit_square_location(0.25 * v, 0.25 * w));
  return xi;
}

inline Problem unit_square_problem(Scenario s) {
  Problem p;
  p.model.covariate_dim = 2;
  p.model.covariate_map1 = {0, 1};
  p.model.covariate_map2 = {0, 1};
  p.prior = scenario_prior(s);
  p.prediction = unit_square_prediction_grid();
  return p;
}

}  // namespace geodesign

#endif  // GEODESIGN_PROBLEM_HPP
