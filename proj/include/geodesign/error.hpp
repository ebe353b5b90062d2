#ifndef GEODESIGN_ERROR_HPP
#define GEODESIGN_ERROR_HPP

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace geodesign {

// Invalid parameter value handed to a numerical kernel (non-positive range,
// alpha <= 0, tau outside (0,1), ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Covariance matrix could not be factorised even after jitter escalation.
class ConditioningError : public std::runtime_error {
 public:
  ConditioningError(const std::string& what, double min_distance)
      : std::runtime_error(what), min_distance_(min_distance) {}
  double min_distance() const noexcept { return min_distance_; }

 private:
  double min_distance_;
};

// Forward simulation left its numerical domain (e.g. Poisson rate overflow).
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Laplace fit did not converge within its restart budget.
class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, std::vector<double> best_iterate)
      : std::runtime_error(what), best_(std::move(best_iterate)) {}
  const std::vector<double>& best_iterate() const noexcept { return best_; }

 private:
  std::vector<double> best_;
};

// Expected-loss evaluation aborted (too many failed inner fits, undefined
// efficiency ratio, ...).
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration file problems; the message names the field and line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Station file / table ingestion problems; the message names the row.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace geodesign

#endif  // GEODESIGN_ERROR_HPP
