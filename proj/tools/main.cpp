#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "smartdtr/configio.hpp"
#include "smartdtr/data.hpp"
#include "smartdtr/estimators.hpp"
#include "smartdtr/inference.hpp"
#include "smartdtr/simulation.hpp"

using nlohmann::json;
namespace sd = smartdtr;

namespace {

struct GlobalOpts {
  std::string out_dir;
  int threads = 1;
  bool quiet = false;
};

void info(const GlobalOpts& g, const std::string& msg) {
  if (!g.quiet) std::cout << msg << "\n";
}

std::string join_path(const std::string& dir, const std::string& name) {
  if (dir.empty() || dir == ".") return name;
  return dir + "/" + name;
}

sd::GSource g_source_from(const std::string& s) {
  if (s == "known") return sd::GSource::Known;
  if (s == "saturated") return sd::GSource::Saturated;
  if (s == "adjusted") return sd::GSource::Modeled;
  throw std::invalid_argument("unknown g source '" + s + "'");
}

struct ValueRow {
  std::string regime, tag;
  double estimate = 0.0;
  double variance = std::numeric_limits<double>::quiet_NaN();
  double lo = std::numeric_limits<double>::quiet_NaN();
  double hi = std::numeric_limits<double>::quiet_NaN();
  double slo = std::numeric_limits<double>::quiet_NaN();
  double shi = std::numeric_limits<double>::quiet_NaN();
  double z = std::numeric_limits<double>::quiet_NaN();
  double q = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_following = 0;
};

int run_analyze(const std::string& config_path, const GlobalOpts& g) {
  sd::AnalysisConfig cfg = sd::load_analysis_config(config_path);
  const std::string out_dir = g.out_dir.empty() ? cfg.output_dir : g.out_dir;

  sd::LoadReport load_report;
  sd::TrialDataset raw = sd::load_csv(cfg.dataset_path, cfg.schema, &load_report);
  sd::FilterReport filter_report;
  sd::TrialDataset data = sd::complete_case_filter(raw, &filter_report);
  data.validate();
  sd::check_allowability(data, cfg.rules);
  info(g, "loaded " + std::to_string(load_report.rows) + " rows (" +
              std::to_string(filter_report.dropped) + " dropped for missing outcomes)");

  std::vector<sd::EmbeddedRegime> regimes =
      cfg.enumerate_regimes ? sd::enumerate_embedded_regimes(cfg.rules, cfg.schema) : cfg.regimes;
  if (regimes.empty()) throw std::runtime_error("no regimes to evaluate");
  std::map<std::string, std::size_t> regime_index;
  for (std::size_t j = 0; j < regimes.size(); ++j) regime_index[regimes[j].id] = j;

  const sd::IceConfig ice =
      sd::default_ice_config(cfg.schema, sd::derive_seed(cfg.inference.seed, 0, 5), cfg.cv_folds);
  std::optional<sd::SharedStage2> shared;

  std::vector<ValueRow> values;
  std::ostringstream contrasts_csv;
  contrasts_csv << "pair,estimator,estimate,ci_lower,ci_upper\n";
  json diagnostics;
  diagnostics["load"] = {{"rows", load_report.rows},
                         {"missing_outcomes", load_report.missing_outcomes},
                         {"dropped", filter_report.dropped}};
  diagnostics["arms"] = json::object();
  json warnings = json::array();

  for (std::size_t a = 0; a < cfg.arms.size(); ++a) {
    const sd::ArmSpec& arm = cfg.arms[a];
    std::vector<sd::EstimateResult> results;
    if (arm.estimator == "gcomp" || arm.estimator == "tmle") {
      if (!shared) shared = sd::fit_stage2(data, ice);
    }
    if (arm.estimator == "gcomp") {
      for (const auto& reg : regimes)
        results.push_back(sd::ice_gcomp_estimate(data, reg, ice, &*shared));
    } else {
      sd::TreatmentMechanism mech;
      mech.rules = cfg.rules;
      mech.truncation = cfg.truncation;
      if (arm.estimator == "ipw_known")
        mech.source = sd::GSource::Known;
      else if (arm.estimator == "ipw_saturated")
        mech.source = sd::GSource::Saturated;
      else if (arm.estimator == "ipw_adjusted")
        mech.source = sd::GSource::Modeled;
      else
        mech.source = g_source_from(arm.g_source);  // tmle
      sd::apply_adjustment(mech, cfg.schema, arm.adjustment);
      if (mech.source != sd::GSource::Known) mech.fit(data);
      for (const auto& reg : regimes) {
        if (arm.estimator == "tmle")
          results.push_back(sd::tmle_estimate(data, reg, ice, mech, &*shared));
        else
          results.push_back(sd::ipw_estimate(data, reg, mech, arm.stabilized));
      }
    }

    json arm_diag;
    arm_diag["estimator"] = arm.estimator;
    json per_regime = json::object();
    for (const auto& r : results) {
      per_regime[r.regime_id] = {{"n_following", r.diagnostics.n_following},
                                 {"min_weight", r.diagnostics.min_weight},
                                 {"max_weight", r.diagnostics.max_weight},
                                 {"truncation_events", r.diagnostics.truncation_events},
                                 {"fluctuation_converged", r.diagnostics.fluctuation_converged},
                                 {"learners", r.diagnostics.learner_names}};
      if (r.diagnostics.truncation_events > 0)
        warnings.push_back(arm.tag + "/" + r.regime_id + ": cumulative-g truncation applied");
      if (!r.diagnostics.fluctuation_converged)
        warnings.push_back(arm.tag + "/" + r.regime_id + ": fluctuation did not converge");
    }
    arm_diag["regimes"] = per_regime;
    diagnostics["arms"][arm.tag] = arm_diag;

    const bool with_ic = results.front().has_ic;
    if (with_ic) {
      sd::RegimeValueVector vec = sd::RegimeValueVector::from_results(results);
      sd::IntervalSet ind = sd::individual_cis(vec, cfg.inference.level);
      std::optional<sd::IntervalSet> sim;
      if (cfg.inference.simultaneous) {
        sim = sd::simultaneous_ci(vec, cfg.inference.level, cfg.inference.mc_draws,
                                  sd::derive_seed(cfg.inference.seed, a, 11));
        if (sim->psd_repaired)
          warnings.push_back(arm.tag + ": correlation matrix repaired before factorization");
      }
      for (std::size_t j = 0; j < results.size(); ++j) {
        ValueRow row;
        row.regime = results[j].regime_id;
        row.tag = arm.tag;
        row.estimate = results[j].psi_hat;
        row.variance = results[j].variance;
        row.lo = ind.intervals[j].lower;
        row.hi = ind.intervals[j].upper;
        row.z = ind.critical_value;
        row.n_following = results[j].diagnostics.n_following;
        if (sim) {
          row.slo = sim->intervals[j].lower;
          row.shi = sim->intervals[j].upper;
          row.q = sim->critical_value;
        }
        values.push_back(std::move(row));
      }
      for (const auto& [id_i, id_j] : cfg.contrasts) {
        if (!regime_index.count(id_i) || !regime_index.count(id_j))
          throw std::runtime_error("contrast references unknown regime id");
        sd::ContrastResult cr =
            sd::contrast(vec, regime_index[id_i], regime_index[id_j], cfg.inference.level);
        contrasts_csv << id_i << "-" << id_j << ',' << arm.tag << ','
                      << sd::format_double(cr.estimate) << ','
                      << sd::format_double(cr.interval.lower) << ','
                      << sd::format_double(cr.interval.upper) << '\n';
      }
    } else {
      for (const auto& r : results) {
        ValueRow row;
        row.regime = r.regime_id;
        row.tag = arm.tag;
        row.estimate = r.psi_hat;
        row.n_following = r.diagnostics.n_following;
        values.push_back(std::move(row));
      }
    }
  }
  diagnostics["warnings"] = warnings;

  std::ostringstream values_csv;
  values_csv << "regime,estimator,estimate,variance,ci_lower,ci_upper,sim_lower,sim_upper,"
                "z_value,q_value,n_following\n";
  for (const auto& r : values)
    values_csv << r.regime << ',' << r.tag << ',' << sd::format_double(r.estimate) << ','
               << sd::format_double(r.variance) << ',' << sd::format_double(r.lo) << ','
               << sd::format_double(r.hi) << ',' << sd::format_double(r.slo) << ','
               << sd::format_double(r.shi) << ',' << sd::format_double(r.z) << ','
               << sd::format_double(r.q) << ',' << r.n_following << '\n';

  json plot;
  for (const auto& r : values) {
    if (!plot["values"].contains(r.tag))
      plot["values"][r.tag] = {{"x", json::array()},
                               {"y", json::array()},
                               {"lo", json::array()},
                               {"hi", json::array()}};
    auto& s = plot["values"][r.tag];
    s["x"].push_back(r.regime);
    s["y"].push_back(r.estimate);
    s["lo"].push_back(std::isnan(r.lo) ? json() : json(r.lo));
    s["hi"].push_back(std::isnan(r.hi) ? json() : json(r.hi));
  }

  sd::write_text_atomic(join_path(out_dir, "values.csv"), values_csv.str());
  sd::write_text_atomic(join_path(out_dir, "contrasts.csv"), contrasts_csv.str());
  sd::write_text_atomic(join_path(out_dir, "diagnostics.json"), diagnostics.dump(2) + "\n");
  sd::write_text_atomic(join_path(out_dir, "plotdata.json"), plot.dump(2) + "\n");
  info(g, "wrote values.csv, contrasts.csv, diagnostics.json, plotdata.json");
  return 0;
}

int run_simulate(const std::string& grid_path, const GlobalOpts& g) {
  sd::ExperimentGrid grid = sd::load_experiment_grid(grid_path);
  const std::string out_dir = g.out_dir.empty() ? "." : g.out_dir;
  sd::MetricsTable table = sd::run_experiment(grid);
  sd::write_metrics_csv(table, join_path(out_dir, "metrics.csv"));
  sd::write_text_atomic(join_path(out_dir, "plotdata.json"),
                        sd::metrics_to_plotdata(table).dump(2) + "\n");
  std::size_t failures = 0;
  for (const auto& r : table.rows) failures += r.failures;
  info(g, "wrote metrics.csv, plotdata.json (" + std::to_string(table.replicates) +
              " replicates, " + std::to_string(failures) + " excluded estimates)");
  return 0;
}

int run_truths(const std::string& dgp_path, std::size_t mc_size, std::uint64_t seed,
               const GlobalOpts& g) {
  sd::Dgp1Config cfg = sd::load_dgp1_config(dgp_path);
  const std::string out_dir = g.out_dir.empty() ? "." : g.out_dir;
  json out;
  out["dgp"] = "dgp1";
  out["mc_size"] = mc_size;
  out["seed"] = seed;
  out["truths"] = json::array();
  for (std::size_t k = 0; k < 8; ++k) {
    double se = 0.0;
    const double v = sd::dgp1_truth(k, cfg, mc_size, sd::derive_seed(seed, k, 3), &se);
    out["truths"].push_back(
        {{"regime", "regime_" + std::to_string(k + 1)}, {"value", v}, {"std_error", se}});
  }
  sd::write_text_atomic(join_path(out_dir, "truths.json"), out.dump(2) + "\n");
  info(g, "wrote truths.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regime-value estimation for two-stage sequentially randomized trials"};
  app.require_subcommand(1);
  GlobalOpts g;
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--threads", g.threads, "worker threads (current build is single-threaded)");
  app.add_flag("--quiet", g.quiet, "suppress progress output");

  std::string analyze_config, grid_path, dgp_path;
  std::size_t mc_size = 10'000'000;
  std::uint64_t seed = 1;

  CLI::App* analyze = app.add_subcommand("analyze", "estimate regime values on a dataset");
  analyze->add_option("config", analyze_config, "analysis config JSON")->required();

  CLI::App* simulate = app.add_subcommand("simulate", "run a replicate experiment grid");
  simulate->add_option("grid", grid_path, "experiment grid JSON")->required();

  CLI::App* truths = app.add_subcommand("truths", "Monte-Carlo regime truths for a DGP");
  truths->add_option("dgp", dgp_path, "DGP config JSON")->required();
  truths->add_option("--mc-size", mc_size, "Monte-Carlo draws");
  truths->add_option("--seed", seed, "Monte-Carlo seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (analyze->parsed()) return run_analyze(analyze_config, g);
    if (simulate->parsed()) return run_simulate(grid_path, g);
    if (truths->parsed()) return run_truths(dgp_path, mc_size, seed, g);
  } catch (const std::exception& e) {
    json err{{"error", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 2;
}
