#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "smartdtr/estimators.hpp"

// Influence-curve-based inference: Wald intervals, simultaneous intervals via
// the max-|Z| quantile of a correlated Gaussian vector, and contrasts.

namespace smartdtr {

// Inverse standard-normal CDF (Wichura's PPND16, full double precision).
double normal_quantile(double p);

// Efficient influence curve of record i evaluated at a targeted stack, on the
// original outcome scale.
double assemble_eic(const IceStack& stack, std::size_t i, double psi_hat);

struct RegimeValueVector {
  std::vector<std::string> regime_ids;
  Eigen::VectorXd psi_hats;  // length D
  Eigen::MatrixXd ic;        // n x D

  std::size_t n() const { return static_cast<std::size_t>(ic.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(ic.cols()); }
  Eigen::MatrixXd sigma_n() const;  // D x D, (1/n) IC'IC
  Eigen::MatrixXd rho() const;      // correlation; degenerate columns get rho=0 off-diagonal

  // Collects estimates carrying influence curves; throws on a G-comp entry.
  static RegimeValueVector from_results(const std::vector<EstimateResult>& results);
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double width() const { return upper - lower; }
};

struct IntervalSet {
  std::vector<std::string> ids;
  std::vector<Interval> intervals;
  double level = 0.95;
  std::string kind;           // "individual" | "simultaneous"
  double critical_value = 0;  // z or q
  bool psd_repaired = false;
  std::vector<std::size_t> degenerate;  // zero-variance columns
};

// sigma^2 = mean of squared ICs; interval psi +/- z * sigma / sqrt(n).
Interval wald_ci(double psi_hat, const Eigen::VectorXd& ic_values, double level,
                 bool* zero_variance = nullptr);

// Empirical `level`-quantile of max_j |Z(j)|, Z ~ N(0, rho), by Monte Carlo.
// Indefinite rho is repaired by clipping negative eigenvalues.
double max_abs_z_quantile(const Eigen::MatrixXd& rho, double level, int mc_draws,
                          std::uint64_t seed, bool* repaired = nullptr);

IntervalSet individual_cis(const RegimeValueVector& vec, double level);
IntervalSet simultaneous_ci(const RegimeValueVector& vec, double level, int mc_draws,
                            std::uint64_t seed);

struct ContrastResult {
  std::size_t i = 0, j = 0;
  double estimate = 0.0;
  Interval interval;
  double critical_value = 0.0;
};

ContrastResult contrast(const RegimeValueVector& vec, std::size_t i, std::size_t j, double level);

IntervalSet simultaneous_contrasts(const RegimeValueVector& vec,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                   double level, int mc_draws, std::uint64_t seed);

}  // namespace smartdtr
