#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "smartdtr/data.hpp"
#include "smartdtr/learners.hpp"

// Regime-value estimators: IPW (unstabilized and Horvitz-Thompson), ICE
// G-computation, and longitudinal TMLE with logistic fluctuation.

namespace smartdtr {

enum class GSource { Known, Saturated, Modeled };

// Per-stage treatment-assignment probabilities. Known reads the design
// constants off the allowable rules; Saturated uses within-stratum
// proportions; Modeled fits one-vs-rest logistic regressions per
// non-deterministic rule stratum.
class TreatmentMechanism {
 public:
  GSource source = GSource::Known;
  std::vector<AllowableSetRule> rules;
  std::vector<std::string> adjust_stage1;  // adjustment columns beyond the rule conditions
  std::vector<std::string> adjust_stage2;
  double truncation = 0.01;

  void fit(const TrialDataset& data);  // no-op for Known
  bool fitted() const { return fitted_; }

  // Probability that record i is assigned `level` at `stage` given its
  // history. Deterministic rules return exactly 1.
  double prob(const TrialDataset& data, std::size_t i, int stage, const std::string& level) const;

 private:
  struct LevelCounts {
    std::map<std::string, double> count;
    double total = 0.0;
  };
  std::vector<std::string> strata_columns(const TrialDataset& data, int stage) const;
  bool fitted_ = false;
  std::map<int, std::map<std::string, LevelCounts>> saturated_;  // stage -> stratum key -> counts
  // rule index -> per-allowed-level one-vs-rest fits (Modeled)
  std::map<std::size_t, std::vector<std::unique_ptr<FittedModel>>> modeled_;
};

struct CumulativeG {
  double g1 = 1.0;   // stage-1 factor, truncated below
  double g12 = 1.0;  // two-stage product, truncated below
  bool truncated = false;
};

// Product of regime-assigned-level probabilities through stage 2.
// Deterministic rules and absorbing-event-voided stages contribute factor 1.
CumulativeG cumulative_g(const TrialDataset& data, std::size_t i, const EmbeddedRegime& regime,
                         const TreatmentMechanism& mech);

// Triggered rows receive their observed outcome as the ICE prediction.
struct DeterministicQRule {
  std::vector<Condition> when;
};

struct EstimatorDiagnostics {
  std::size_t n_following = 0;
  double min_weight = 0.0;
  double max_weight = 0.0;
  std::size_t truncation_events = 0;
  bool fluctuation_converged = true;
  std::vector<std::string> learner_names;  // chosen per stage (ICE/TMLE)
};

// Per-record state of the two-stage ICE/TMLE pass on the (0,1) scale.
struct IceStack {
  double scale_a = 0.0, scale_b = 1.0;
  Eigen::VectorXd y_scaled;
  Eigen::VectorXd q2;       // stage-2 prediction at regime assignments (targeted for TMLE)
  Eigen::VectorXd q1;       // stage-1 prediction at regime assignment (targeted for TMLE)
  Eigen::VectorXd ind1;     // I[A(1)=d1]
  Eigen::VectorXd ind2;     // I[Abar(2)=dbar2]
  Eigen::VectorXd g1;       // truncated cumulative g through stage 1
  Eigen::VectorXd g12;      // truncated cumulative g through stage 2
  double eps2 = 0.0, eps1 = 0.0;  // fluctuation intercepts (TMLE)
  bool targeted = false;
};

struct EstimateResult {
  std::string regime_id;
  std::string estimator;
  double psi_hat = 0.0;
  bool has_ic = false;
  Eigen::VectorXd ic_values;  // empty for G-comp
  double variance = 0.0;      // sigma^2 / n; 0 for G-comp
  EstimatorDiagnostics diagnostics;
  std::shared_ptr<const IceStack> stack;  // ICE/TMLE only
};

double scale_outcome(double y, double a, double b);    // clips to [0,1]
double unscale_outcome(double s, double a, double b);

struct IceConfig {
  CvEnsembleSpec stage2;  // candidates over (X(1),A(1),X(2),A(2))
  CvEnsembleSpec stage1;  // candidates over (X(1),A(1))
  std::vector<DeterministicQRule> deterministic_q;
};

// Pre-fitted regime-independent stage-2 regression, shareable across regimes.
struct SharedStage2 {
  std::shared_ptr<const FittedModel> fit;
  std::string learner_name;
};

SharedStage2 fit_stage2(const TrialDataset& data, const IceConfig& cfg);

EstimateResult ipw_estimate(const TrialDataset& data, const EmbeddedRegime& regime,
                            const TreatmentMechanism& mech, bool stabilized);

EstimateResult ice_gcomp_estimate(const TrialDataset& data, const EmbeddedRegime& regime,
                                  const IceConfig& cfg, const SharedStage2* shared = nullptr);

EstimateResult tmle_estimate(const TrialDataset& data, const EmbeddedRegime& regime,
                             const IceConfig& cfg, const TreatmentMechanism& mech,
                             const SharedStage2* shared = nullptr);

}  // namespace smartdtr
