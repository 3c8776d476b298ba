#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "smartdtr/data.hpp"

// Regression learners: GLMs fit by IRLS, saturated stratum-mean models, and
// a V-fold cross-validated discrete ensemble.

namespace smartdtr {

enum class Family { Binomial, Gaussian };

struct Term {
  enum class Kind { Intercept, Main, Interaction, Square, LogAbs, Stratify };
  Kind kind = Kind::Main;
  std::vector<std::string> columns;  // Main/Square/LogAbs: 1, Interaction: 2, Stratify: >=1
};

struct DesignSpec {
  std::string name;
  std::vector<Term> terms;
  std::string response;  // optional; estimators pass responses explicitly
  Family family = Family::Binomial;

  bool pure_stratification() const;

  static DesignSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Per-row replacement values used when predicting at counterfactual
// treatment assignments.
struct ColumnOverrides {
  std::map<std::string, std::vector<int>> codes;
  std::map<std::string, std::vector<double>> numerics;

  bool has(const std::string& col) const {
    return codes.count(col) > 0 || numerics.count(col) > 0;
  }
};

struct FitDiagnostics {
  bool converged = true;
  int iterations = 0;
  double deviance = 0.0;
  bool separation_capped = false;
  std::vector<std::string> dropped_columns;  // aliased after pivoting
};

class FittedModel {
 public:
  virtual ~FittedModel() = default;
  // Predictions on the response scale for the given rows.
  virtual Eigen::VectorXd predict(const TrialDataset& data, const ColumnOverrides& overrides,
                                  const std::vector<std::size_t>& rows) const = 0;
  virtual nlohmann::json coefficients_json() const = 0;
  const FitDiagnostics& diagnostics() const { return diag_; }
  const std::string& name() const { return name_; }

 protected:
  FitDiagnostics diag_;
  std::string name_;
};

// Design-matrix construction (shared by fitting and prediction).
Eigen::MatrixXd build_design(const TrialDataset& data, const std::vector<Term>& terms,
                             const ColumnOverrides& overrides, const std::vector<std::size_t>& rows,
                             std::vector<std::string>* colnames = nullptr);

// Weighted maximum-likelihood GLM via IRLS. `offset` is on the link scale and
// may be empty. Fractional binomial responses in [0,1] are accepted.
std::unique_ptr<FittedModel> fit_glm(const DesignSpec& spec, const TrialDataset& data,
                                     const std::vector<std::size_t>& rows,
                                     const Eigen::VectorXd& response,
                                     const Eigen::VectorXd& weights,
                                     const Eigen::VectorXd& offset = Eigen::VectorXd());

// Weighted per-stratum means over a finite categorical cross-classification.
// Prediction for an unseen stratum throws.
std::unique_ptr<FittedModel> fit_saturated(const std::vector<std::string>& strata_columns,
                                           const TrialDataset& data,
                                           const std::vector<std::size_t>& rows,
                                           const Eigen::VectorXd& response,
                                           const Eigen::VectorXd& weights);

// Dispatches to fit_saturated for pure stratification designs, fit_glm
// otherwise.
std::unique_ptr<FittedModel> fit_design(const DesignSpec& spec, const TrialDataset& data,
                                        const std::vector<std::size_t>& rows,
                                        const Eigen::VectorXd& response,
                                        const Eigen::VectorXd& weights);

struct CvEnsembleSpec {
  std::vector<DesignSpec> candidates;
  int folds = 10;
  std::uint64_t seed = 0;

  static CvEnsembleSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct CvSelection {
  std::unique_ptr<FittedModel> fit;
  std::size_t chosen = 0;
  std::vector<double> cv_losses;  // +inf marks candidates that failed a fold
};

// Discrete super learner: each candidate scored by V-fold cross-validated
// loss (negative binomial log-likelihood or squared error) over identical
// fold splits; the winner is refit on the full data. Ties break to the
// earliest candidate. Fold assignment is stratified on a binary response.
CvSelection cv_select(const CvEnsembleSpec& ensemble, const TrialDataset& data,
                      const std::vector<std::size_t>& rows, const Eigen::VectorXd& response,
                      Family family);

}  // namespace smartdtr
