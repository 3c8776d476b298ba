#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "smartdtr/data.hpp"
#include "smartdtr/estimators.hpp"

// Data-generating processes, brute-force truth oracles, and the replicate
// experiment runner.

namespace smartdtr {

// Counter-based 64-bit seed derivation (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t replicate, std::uint64_t stream);

// ---------------------------------------------------------------------------
// DGP 1: a simple two-stage SMART with 8 embedded regimes.

struct Dgp1Config {
  std::size_t n = 1692;
  std::uint64_t seed = 0;
  // per-regime intercept constants, indexed by the (A(1), A(2)) cell
  std::array<double, 8> c = {1 - .28, 1 - .26, 1 - .28, 1 - .30,
                             1 - .29, 1 - .30, 1 - .21, 1 - .20};
};

NodeSchema dgp1_schema();
std::vector<AllowableSetRule> dgp1_rules();

TrialDataset dgp1_sample(const Dgp1Config& config);

// Monte-Carlo counterfactual mean for regime index 0..7 (enumeration order).
double dgp1_truth(std::size_t regime_index, const Dgp1Config& config, std::size_t mc_size,
                  std::uint64_t seed, double* std_error = nullptr);

// ---------------------------------------------------------------------------
// DGP-2-style: three-arm first stage, lapse-dependent second stage, death and
// transfer as absorbing events, with a synthetic covariate source.

struct Dgp2StyleConfig {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  // linear predictors over (intercept, alcohol, sex, age, ttr)
  std::array<double, 5> lapse_coef = {0.0, 0.4, -0.2, 0.3, 0.1};
  double p_death = 0.02;
  double p_transfer = 0.03;
  std::array<double, 5> q1_coef = {0.5, 0.1, 0.0, -0.1, 0.0};  // transfer branch
  std::array<double, 5> q2_coef = {0.0, 0.3, -0.1, 0.2, 0.1};  // main branch slopes
  // cell-indexed intercept constants: 9 lapse cells (A(1) x {SMS+CCT,Nav,SOC}),
  // then 4 no-lapse cells ({SMS,CCT} x {Continue,Discontinue}), then the
  // deterministic SOC/no-lapse cell
  std::array<double, 14> c = {.7, .7, .7, .7, .7, .7, .7, .7, .7, .7, .7, .7, .7, .7};
};

NodeSchema dgp2_style_schema();
std::vector<AllowableSetRule> dgp2_style_rules();

TrialDataset dgp2_style_sample(const Dgp2StyleConfig& config);

double dgp2_style_truth(const EmbeddedRegime& regime, const Dgp2StyleConfig& config,
                        std::size_t mc_size, std::uint64_t seed, double* std_error = nullptr);

// ---------------------------------------------------------------------------
// Replicate experiment runner (DGP 1 grid).

struct EstimatorArm {
  std::string tag;                  // row label
  std::string kind;                 // "ipw" | "gcomp" | "tmle"
  GSource g_source = GSource::Known;
  std::string adjustment = "minimal";  // "minimal" | "full" (estimated g)
  bool stabilized = false;             // Horvitz-Thompson form for IPW
};

struct ExperimentGrid {
  Dgp1Config dgp;
  std::size_t replicates = 300;
  std::vector<EstimatorArm> arms;
  double level = 0.95;
  int mc_draws = 100000;
  std::uint64_t master_seed = 0;
  std::vector<double> truths;    // per regime; computed via dgp1_truth if empty
  std::size_t truth_mc = 2'000'000;
  double truncation = 0.01;
  int cv_folds = 10;
};

// Default estimator grid: IPW with known g, estimated-g IPW with
// minimal and full adjustment, G-computation, and TMLE.
std::vector<EstimatorArm> default_arms();

struct MetricsRow {
  std::string regime_id;
  std::string estimator;
  double truth = 0.0;
  double abs_bias = 0.0;
  double variance = 0.0;        // MC variance of psi-hat
  double mean_width = 0.0;      // NaN for G-comp
  double coverage = 0.0;        // individual, percent; NaN for G-comp
  double sim_coverage = 0.0;    // simultaneous (all-cover), percent; NaN for G-comp
  std::size_t failures = 0;     // excluded replicates
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  // per-arm largest |mean(EIC)| seen across replicates (TMLE arms)
  std::map<std::string, double> max_abs_mean_eic;
  std::size_t replicates = 0;
};

MetricsTable run_experiment(const ExperimentGrid& grid);

// Per-stage CV candidate libraries used by the runner and the CLI defaults.
IceConfig dgp1_default_ice_config(std::uint64_t cv_seed, int folds);

}  // namespace smartdtr
