#include "smartdtr/configio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace smartdtr {

using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  json j;
  in >> j;
  return j;
}

}  // namespace

AnalysisConfig AnalysisConfig::from_json(const json& j) {
  AnalysisConfig c;
  c.dataset_path = j.at("dataset").get<std::string>();
  c.schema = NodeSchema::from_json(j.at("schema"));
  for (const auto& r : j.at("rules")) c.rules.push_back(AllowableSetRule::from_json(r));
  if (j.contains("regimes") && j["regimes"].is_array()) {
    c.enumerate_regimes = false;
    for (const auto& r : j["regimes"]) c.regimes.push_back(EmbeddedRegime::from_json(r));
  }
  if (!j.contains("arms") || j["arms"].empty())
    throw std::invalid_argument("analysis config: at least one estimator arm required");
  for (const auto& a : j["arms"]) {
    ArmSpec arm;
    arm.estimator = a.at("estimator").get<std::string>();
    arm.tag = a.value("tag", arm.estimator);
    arm.adjustment = a.value("adjustment", std::string{"minimal"});
    arm.stabilized = a.value("stabilized", false);
    arm.g_source = a.value("g", std::string{"saturated"});
    static const std::vector<std::string> known = {"ipw_known", "ipw_saturated", "ipw_adjusted",
                                                   "gcomp", "tmle"};
    if (std::find(known.begin(), known.end(), arm.estimator) == known.end())
      throw std::invalid_argument("analysis config: unknown estimator '" + arm.estimator + "'");
    c.arms.push_back(std::move(arm));
  }
  if (j.contains("inference")) {
    const auto& inf = j["inference"];
    c.inference.level = inf.value("level", 0.95);
    c.inference.simultaneous = inf.value("simultaneous", true);
    c.inference.mc_draws = inf.value("mc_draws", 100000);
    if (!inf.contains("seed"))
      throw std::invalid_argument("analysis config: inference.seed is required");
    c.inference.seed = inf["seed"].get<std::uint64_t>();
  } else {
    throw std::invalid_argument("analysis config: inference block with seed is required");
  }
  if (!(c.inference.level > 0.0 && c.inference.level < 1.0))
    throw std::invalid_argument("analysis config: level outside (0,1)");
  c.truncation = j.value("truncation", 0.01);
  c.cv_folds = j.value("cv_folds", 10);
  if (j.contains("contrasts"))
    for (const auto& p : j["contrasts"]) {
      if (!p.is_array() || p.size() != 2)
        throw std::invalid_argument("analysis config: contrast entries are [id, id] pairs");
      c.contrasts.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
    }
  c.output_dir = j.value("output_dir", std::string{"."});
  return c;
}

AnalysisConfig load_analysis_config(const std::string& path) {
  return AnalysisConfig::from_json(read_json_file(path));
}

ExperimentGrid load_experiment_grid(const std::string& path) {
  const json j = read_json_file(path);
  ExperimentGrid g;
  if (j.contains("dgp")) {
    const auto& d = j["dgp"];
    if (d.value("name", std::string{"dgp1"}) != "dgp1")
      throw std::invalid_argument("experiment grid: only dgp1 is runnable");
    g.dgp.n = d.value("n", g.dgp.n);
    if (d.contains("c")) {
      const auto& cv = d["c"];
      if (cv.size() != 8) throw std::invalid_argument("experiment grid: dgp1 c vector needs 8 entries");
      for (std::size_t k = 0; k < 8; ++k) g.dgp.c[k] = cv[k].get<double>();
    }
  }
  g.replicates = j.at("replicates").get<std::size_t>();
  if (g.replicates < 1) throw std::invalid_argument("experiment grid: replicates must be >= 1");
  if (j.contains("arms")) {
    for (const auto& a : j["arms"]) {
      EstimatorArm arm;
      arm.tag = a.at("tag").get<std::string>();
      arm.kind = a.at("kind").get<std::string>();
      const std::string src = a.value("g", std::string{"known"});
      if (src == "known")
        arm.g_source = GSource::Known;
      else if (src == "saturated")
        arm.g_source = GSource::Saturated;
      else if (src == "adjusted")
        arm.g_source = GSource::Modeled;
      else
        throw std::invalid_argument("experiment grid: unknown g source '" + src + "'");
      arm.adjustment = a.value("adjustment", std::string{"minimal"});
      arm.stabilized = a.value("stabilized", false);
      g.arms.push_back(std::move(arm));
    }
  } else {
    g.arms = default_arms();
  }
  g.level = j.value("level", 0.95);
  g.mc_draws = j.value("mc_draws", 100000);
  g.master_seed = j.at("master_seed").get<std::uint64_t>();
  if (j.contains("truths")) g.truths = j["truths"].get<std::vector<double>>();
  g.truth_mc = j.value("truth_mc", g.truth_mc);
  g.truncation = j.value("truncation", 0.01);
  g.cv_folds = j.value("cv_folds", 10);
  return g;
}

Dgp1Config load_dgp1_config(const std::string& path) {
  const json j = read_json_file(path);
  if (j.value("name", std::string{"dgp1"}) != "dgp1")
    throw std::invalid_argument("dgp config: only dgp1 truths are computable");
  Dgp1Config c;
  c.n = j.value("n", c.n);
  c.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("c")) {
    const auto& cv = j["c"];
    if (cv.size() != 8) throw std::invalid_argument("dgp config: c vector needs 8 entries");
    for (std::size_t k = 0; k < 8; ++k) c.c[k] = cv[k].get<double>();
  }
  return c;
}

IceConfig default_ice_config(const NodeSchema& schema, std::uint64_t cv_seed, int folds) {
  std::vector<std::string> stage2_cols, stage1_cols;
  std::vector<std::string> stage2_numeric, stage1_numeric, stage2_categorical;
  for (const auto& c : schema.baseline) {
    stage2_cols.push_back(c.name);
    stage1_cols.push_back(c.name);
    if (c.kind == ColumnKind::Numeric) {
      stage2_numeric.push_back(c.name);
      stage1_numeric.push_back(c.name);
    }
  }
  stage2_cols.push_back(schema.stage1_treatment.name);
  stage1_cols.push_back(schema.stage1_treatment.name);
  stage2_categorical.push_back(schema.stage1_treatment.name);
  for (const auto& c : schema.timevarying) {
    // absorbing indicators are constant on the stage-2 fitting rows
    bool absorbing = false;
    for (const auto& a : schema.absorbing_columns) absorbing |= a == c.name;
    if (absorbing) continue;
    stage2_cols.push_back(c.name);
    if (c.kind == ColumnKind::Numeric) stage2_numeric.push_back(c.name);
  }
  stage2_cols.push_back(schema.stage2_treatment.name);
  stage2_categorical.push_back(schema.stage2_treatment.name);
  if (schema.find(schema.response_column) &&
      schema.find(schema.response_column)->kind == ColumnKind::Categorical)
    stage2_categorical.push_back(schema.response_column);

  auto make_candidates = [](const std::vector<std::string>& cols,
                            const std::vector<std::string>& numeric) {
    std::vector<DesignSpec> out;
    {
      DesignSpec d;
      d.name = "intercept";
      d.terms = {{Term::Kind::Intercept, {}}};
      out.push_back(std::move(d));
    }
    {
      DesignSpec d;
      d.name = "main";
      for (const auto& c : cols) d.terms.push_back({Term::Kind::Main, {c}});
      out.push_back(std::move(d));
    }
    {
      DesignSpec d;
      d.name = "main+sq";
      for (const auto& c : cols) d.terms.push_back({Term::Kind::Main, {c}});
      for (const auto& c : numeric) d.terms.push_back({Term::Kind::Square, {c}});
      out.push_back(std::move(d));
    }
    return out;
  };

  IceConfig cfg;
  cfg.stage2.candidates = make_candidates(stage2_cols, stage2_numeric);
  {
    DesignSpec d;
    d.name = "saturated";
    // order-stable unique
    std::vector<std::string> cols;
    for (const auto& c : stage2_categorical)
      if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
    d.terms = {{Term::Kind::Stratify, cols}};
    cfg.stage2.candidates.push_back(std::move(d));
  }
  cfg.stage1.candidates = make_candidates(stage1_cols, stage1_numeric);
  cfg.stage2.folds = cfg.stage1.folds = folds;
  cfg.stage2.seed = cv_seed;
  cfg.stage1.seed = derive_seed(cv_seed, 0, 7);
  return cfg;
}

void apply_adjustment(TreatmentMechanism& mech, const NodeSchema& schema,
                      const std::string& adjustment) {
  if (adjustment == "minimal") return;
  if (adjustment != "full")
    throw std::invalid_argument("unknown adjustment set '" + adjustment + "'");
  for (const auto& c : schema.baseline)
    if (c.kind == ColumnKind::Numeric) {
      mech.adjust_stage1.push_back(c.name);
      mech.adjust_stage2.push_back(c.name);
    }
  for (const auto& c : schema.timevarying) {
    bool absorbing = false;
    for (const auto& a : schema.absorbing_columns) absorbing |= a == c.name;
    if (!absorbing && c.kind == ColumnKind::Numeric) mech.adjust_stage2.push_back(c.name);
  }
}

void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void write_metrics_csv(const MetricsTable& table, const std::string& path) {
  std::ostringstream out;
  out << "regime,estimator,truth,abs_bias,variance,mean_ci_width,coverage_pct,"
         "sim_coverage_pct,failures\n";
  for (const auto& r : table.rows) {
    out << r.regime_id << ',' << r.estimator << ',' << format_double(r.truth) << ','
        << format_double(r.abs_bias) << ',' << format_double(r.variance) << ','
        << format_double(r.mean_width) << ',' << format_double(r.coverage) << ','
        << format_double(r.sim_coverage) << ',' << r.failures << '\n';
  }
  write_text_atomic(path, out.str());
}

nlohmann::json metrics_to_plotdata(const MetricsTable& table) {
  json panels;
  for (const char* metric : {"abs_bias", "variance", "mean_ci_width", "coverage_pct"}) {
    json series = json::object();
    for (const auto& r : table.rows) {
      double v = metric == std::string{"abs_bias"}       ? r.abs_bias
                 : metric == std::string{"variance"}     ? r.variance
                 : metric == std::string{"mean_ci_width"} ? r.mean_width
                                                          : r.coverage;
      if (!series.contains(r.estimator)) {
        series[r.estimator] = {{"x", json::array()}, {"y", json::array()}};
      }
      series[r.estimator]["x"].push_back(r.regime_id);
      series[r.estimator]["y"].push_back(std::isnan(v) ? json() : json(v));
    }
    panels[metric] = series;
  }
  for (const auto& [tag, eic] : table.max_abs_mean_eic) panels["max_abs_mean_eic"][tag] = eic;
  return panels;
}

}  // namespace smartdtr
