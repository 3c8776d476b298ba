#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "smartdtr/data.hpp"
#include "smartdtr/estimators.hpp"
#include "smartdtr/simulation.hpp"

// JSON configuration documents and artifact serialization for the CLI.

namespace smartdtr {

struct ArmSpec {
  std::string tag;
  std::string estimator;          // ipw_known | ipw_saturated | ipw_adjusted | gcomp | tmle
  std::string adjustment = "minimal";  // minimal | full
  bool stabilized = false;
  std::string g_source = "saturated";  // tmle only: known | saturated | adjusted
};

struct InferenceOptions {
  double level = 0.95;
  bool simultaneous = true;
  int mc_draws = 100000;
  std::uint64_t seed = 0;
};

struct AnalysisConfig {
  std::string dataset_path;
  NodeSchema schema;
  std::vector<AllowableSetRule> rules;
  bool enumerate_regimes = true;
  std::vector<EmbeddedRegime> regimes;  // used when enumerate_regimes is false
  std::vector<ArmSpec> arms;
  InferenceOptions inference;
  double truncation = 0.01;
  int cv_folds = 10;
  std::vector<std::pair<std::string, std::string>> contrasts;  // regime id pairs
  std::string output_dir = ".";

  static AnalysisConfig from_json(const nlohmann::json& j);
};

AnalysisConfig load_analysis_config(const std::string& path);
ExperimentGrid load_experiment_grid(const std::string& path);
Dgp1Config load_dgp1_config(const std::string& path);

// Candidate libraries derived from a schema (used when the config omits an
// explicit learner block).
IceConfig default_ice_config(const NodeSchema& schema, std::uint64_t cv_seed, int folds);

// Adjustment columns for estimated treatment mechanisms.
void apply_adjustment(TreatmentMechanism& mech, const NodeSchema& schema,
                      const std::string& adjustment);

// Atomic file write: temp file in the target directory, then rename.
void write_text_atomic(const std::string& path, const std::string& content);

std::string format_double(double v);  // fixed "%.12g" layout, "" for NaN

void write_metrics_csv(const MetricsTable& table, const std::string& path);
nlohmann::json metrics_to_plotdata(const MetricsTable& table);

}  // namespace smartdtr
