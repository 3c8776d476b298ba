#include "smartdtr/simulation.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "smartdtr/inference.hpp"

namespace smartdtr {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double expit1(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double logit1(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t replicate, std::uint64_t stream) {
  return splitmix64(splitmix64(master ^ 0x5851f42d4c957f2dULL) ^
                    splitmix64(replicate * 0x14057b7ef767814fULL + stream));
}

// ---------------------------------------------------------------------------
// DGP 1

NodeSchema dgp1_schema() {
  NodeSchema s;
  s.baseline = {{"x1", ColumnKind::Numeric, {}}};
  s.stage1_treatment = {"a1", ColumnKind::Categorical, {"0", "1"}};
  s.timevarying = {{"l2", ColumnKind::Categorical, {"0", "1"}},
                   {"s2", ColumnKind::Numeric, {}}};
  s.stage2_treatment = {"a2", ColumnKind::Categorical, {"1", "2", "3", "4"}};
  s.outcome = "y";
  s.outcome_min = 0.0;
  s.outcome_max = 1.0;
  s.response_column = "l2";
  s.tailoring_stage1 = {};
  s.tailoring_stage2 = {"l2"};
  return s;
}

std::vector<AllowableSetRule> dgp1_rules() {
  std::vector<AllowableSetRule> rules;
  rules.push_back({1, {}, {"0", "1"}, {0.5, 0.5}});
  rules.push_back({2, {{"l2", {"1"}}}, {"1", "2"}, {0.5, 0.5}});
  rules.push_back({2, {{"l2", {"0"}}}, {"3", "4"}, {0.5, 0.5}});
  return rules;
}

namespace {

// (A(1), A(2)) cell index into the c vector: lapse cells first.
std::size_t dgp1_cell(int a1, int a2) {
  return a2 <= 2 ? static_cast<std::size_t>(a1 + 2 * (a2 - 1))
                 : static_cast<std::size_t>(4 + a1 + 2 * (a2 - 3));
}

double dgp1_outcome_prob(const Dgp1Config& cfg, int a1, int a2, double x, double s2) {
  const double c = cfg.c[dgp1_cell(a1, a2)];
  return expit1(logit1(c) + s2 + 0.5 * x * x + std::log(std::fabs(x) + 0.01));
}

}  // namespace

TrialDataset dgp1_sample(const Dgp1Config& config) {
  TrialDataset data(dgp1_schema(), config.n);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < config.n; ++i) {
    const double x = gauss(rng);
    const int a1 = unif(rng) < 0.5 ? 1 : 0;
    const int l2 = unif(rng) < expit1(x + a1) ? 1 : 0;
    const double s2 = x + 2.0 * a1 + gauss(rng);
    const int a2 = l2 == 1 ? (unif(rng) < 0.5 ? 1 : 2) : (unif(rng) < 0.5 ? 3 : 4);
    const double p = dgp1_outcome_prob(config, a1, a2, x, s2);
    const double y = unif(rng) < p ? 1.0 : 0.0;
    data.set_numeric("x1", i, x);
    data.set_code("a1", i, a1);
    data.set_code("l2", i, l2);
    data.set_numeric("s2", i, s2);
    data.set_code("a2", i, a2 - 1);
    data.set_numeric("y", i, y);
  }
  return data;
}

double dgp1_truth(std::size_t regime_index, const Dgp1Config& config, std::size_t mc_size,
                  std::uint64_t seed, double* std_error) {
  if (regime_index >= 8) throw std::invalid_argument("dgp1_truth: regime index out of range");
  const int d1 = static_cast<int>(regime_index % 2);
  const int a2_lapse = 1 + static_cast<int>((regime_index / 2) % 2);
  const int a2_nolapse = 3 + static_cast<int>(regime_index / 4);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t t = 0; t < mc_size; ++t) {
    const double x = gauss(rng);
    const int l2 = unif(rng) < expit1(x + d1) ? 1 : 0;
    const double s2 = x + 2.0 * d1 + gauss(rng);
    const int a2 = l2 == 1 ? a2_lapse : a2_nolapse;
    const double p = dgp1_outcome_prob(config, d1, a2, x, s2);
    sum += p;
    sumsq += p * p;
  }
  const double m = sum / static_cast<double>(mc_size);
  if (std_error) {
    const double var = sumsq / static_cast<double>(mc_size) - m * m;
    *std_error = std::sqrt(std::max(var, 0.0) / static_cast<double>(mc_size));
  }
  return m;
}

// ---------------------------------------------------------------------------
// DGP-2-style

NodeSchema dgp2_style_schema() {
  NodeSchema s;
  s.baseline = {{"alcohol", ColumnKind::Numeric, {}},
                {"sex", ColumnKind::Categorical, {"0", "1"}},
                {"age", ColumnKind::Numeric, {}},
                {"ttr", ColumnKind::Numeric, {}}};
  s.stage1_treatment = {"a1", ColumnKind::Categorical, {"SMS", "CCT", "SOC"}};
  s.timevarying = {{"l2", ColumnKind::Categorical, {"0", "1"}},
                   {"d2", ColumnKind::Categorical, {"0", "1"}},
                   {"m2", ColumnKind::Categorical, {"0", "1"}}};
  s.stage2_treatment = {"a2", ColumnKind::Categorical,
                        {"SMS+CCT", "Nav", "SOC", "Continue", "Discontinue"}};
  s.outcome = "y";
  s.outcome_min = 0.0;
  s.outcome_max = 1.0;
  s.response_column = "l2";
  s.absorbing_columns = {"d2", "m2"};
  s.tailoring_stage1 = {};
  s.tailoring_stage2 = {"a1", "l2"};
  return s;
}

std::vector<AllowableSetRule> dgp2_style_rules() {
  std::vector<AllowableSetRule> rules;
  const double third = 1.0 / 3.0;
  rules.push_back({1, {}, {"SMS", "CCT", "SOC"}, {third, third, third}});
  rules.push_back({2, {{"l2", {"1"}}}, {"SMS+CCT", "Nav", "SOC"}, {third, third, third}});
  rules.push_back({2, {{"l2", {"0"}}, {"a1", {"SMS", "CCT"}}},
                   {"Continue", "Discontinue"}, {0.5, 0.5}});
  rules.push_back({2, {{"l2", {"0"}}, {"a1", {"SOC"}}}, {"Continue"}, {1.0}});
  return rules;
}

namespace {

struct Dgp2Covariates {
  double alcohol, age, ttr;
  int sex;
};

double dot5(const std::array<double, 5>& b, const Dgp2Covariates& w) {
  return b[0] + b[1] * w.alcohol + b[2] * w.sex + b[3] * w.age + b[4] * w.ttr;
}

// a1 code 0..2 (SMS,CCT,SOC); a2 code 0..4.
std::size_t dgp2_cell(int a1, int a2, int l2) {
  if (l2 == 1) return static_cast<std::size_t>(a1 * 3 + a2);  // a2 in {0,1,2}
  if (a1 <= 1) return static_cast<std::size_t>(9 + a1 * 2 + (a2 == 4 ? 1 : 0));
  return 13;  // SOC continuers
}

}  // namespace

TrialDataset dgp2_style_sample(const Dgp2StyleConfig& config) {
  TrialDataset data(dgp2_style_schema(), config.n);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < config.n; ++i) {
    Dgp2Covariates w{gauss(rng), gauss(rng), gauss(rng), unif(rng) < 0.5 ? 1 : 0};
    const int a1 = static_cast<int>(unif(rng) * 3.0) % 3;
    const int l2 = unif(rng) < expit1(dot5(config.lapse_coef, w)) ? 1 : 0;
    const int d2 = unif(rng) < config.p_death ? 1 : 0;
    const int m2 = (d2 == 0 && unif(rng) < config.p_transfer) ? 1 : 0;
    data.set_numeric("alcohol", i, w.alcohol);
    data.set_code("sex", i, w.sex);
    data.set_numeric("age", i, w.age);
    data.set_numeric("ttr", i, w.ttr);
    data.set_code("a1", i, a1);
    data.set_code("l2", i, l2);
    data.set_code("d2", i, d2);
    data.set_code("m2", i, m2);
    if (d2 == 1) {
      data.set_missing("a2", i);
      data.set_numeric("y", i, 0.0);  // death forces the null outcome
      continue;
    }
    if (m2 == 1) {
      data.set_missing("a2", i);
      const double p = expit1(dot5(config.q1_coef, w));
      data.set_numeric("y", i, unif(rng) < p ? 1.0 : 0.0);
      continue;
    }
    int a2;
    if (l2 == 1) {
      a2 = static_cast<int>(unif(rng) * 3.0) % 3;
    } else if (a1 <= 1) {
      a2 = unif(rng) < 0.5 ? 3 : 4;
    } else {
      a2 = 3;  // SOC no-lapse continues deterministically
    }
    data.set_code("a2", i, a2);
    const double c = config.c[dgp2_cell(a1, a2, l2)];
    const double p = expit1(logit1(c) + dot5(config.q2_coef, w) - config.q2_coef[0]);
    data.set_numeric("y", i, unif(rng) < p ? 1.0 : 0.0);
  }
  return data;
}

double dgp2_style_truth(const EmbeddedRegime& regime, const Dgp2StyleConfig& config,
                        std::size_t mc_size, std::uint64_t seed, double* std_error) {
  const NodeSchema schema = dgp2_style_schema();
  const std::string d1 = regime.rule1.decide(Stratum{});
  const int a1 = schema.stage1_treatment.level_index(d1);
  if (a1 < 0) throw std::invalid_argument("dgp2_style_truth: unknown stage-1 level " + d1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t t = 0; t < mc_size; ++t) {
    Dgp2Covariates w{gauss(rng), gauss(rng), gauss(rng), unif(rng) < 0.5 ? 1 : 0};
    const int l2 = unif(rng) < expit1(dot5(config.lapse_coef, w)) ? 1 : 0;
    const int d2 = unif(rng) < config.p_death ? 1 : 0;
    const int m2 = (d2 == 0 && unif(rng) < config.p_transfer) ? 1 : 0;
    double p;
    if (d2 == 1) {
      p = 0.0;
    } else if (m2 == 1) {
      p = expit1(dot5(config.q1_coef, w));
    } else {
      Stratum s{{"a1", d1}, {"l2", l2 == 1 ? "1" : "0"}};
      const std::string d2lvl = regime.rule2.decide(s);
      const int a2 = schema.stage2_treatment.level_index(d2lvl);
      const double c = config.c[dgp2_cell(a1, a2, l2)];
      p = expit1(logit1(c) + dot5(config.q2_coef, w) - config.q2_coef[0]);
    }
    sum += p;
    sumsq += p * p;
  }
  const double m = sum / static_cast<double>(mc_size);
  if (std_error) {
    const double var = sumsq / static_cast<double>(mc_size) - m * m;
    *std_error = std::sqrt(std::max(var, 0.0) / static_cast<double>(mc_size));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Experiment runner

std::vector<EstimatorArm> default_arms() {
  return {
      {"ipw_g0", "ipw", GSource::Known, "minimal", false},
      {"ipw_gn_min", "ipw", GSource::Saturated, "minimal", false},
      {"ipw_gn_full", "ipw", GSource::Modeled, "full", false},
      {"gcomp", "gcomp", GSource::Known, "minimal", false},
      {"tmle", "tmle", GSource::Saturated, "minimal", false},
  };
}

IceConfig dgp1_default_ice_config(std::uint64_t cv_seed, int folds) {
  auto main_terms = [] {
    std::vector<Term> t;
    for (const char* c : {"x1", "a1", "l2", "s2", "a2"}) t.push_back({Term::Kind::Main, {c}});
    return t;
  };
  IceConfig cfg;
  {
    DesignSpec d;
    d.name = "intercept";
    d.terms = {{Term::Kind::Intercept, {}}};
    cfg.stage2.candidates.push_back(d);
  }
  {
    DesignSpec d;
    d.name = "main";
    d.terms = main_terms();
    cfg.stage2.candidates.push_back(d);
  }
  {
    DesignSpec d;
    d.name = "main+inter";
    d.terms = main_terms();
    const std::vector<std::string> cols = {"x1", "a1", "l2", "s2", "a2"};
    for (std::size_t i = 0; i < cols.size(); ++i)
      for (std::size_t j = i + 1; j < cols.size(); ++j)
        d.terms.push_back({Term::Kind::Interaction, {cols[i], cols[j]}});
    cfg.stage2.candidates.push_back(d);
  }
  {
    DesignSpec d;
    d.name = "main+sq";
    d.terms = main_terms();
    d.terms.push_back({Term::Kind::Square, {"x1"}});
    d.terms.push_back({Term::Kind::Square, {"s2"}});
    cfg.stage2.candidates.push_back(d);
  }
  {
    DesignSpec d;
    d.name = "saturated";
    d.terms = {{Term::Kind::Stratify, {"a1", "l2", "a2"}}};
    cfg.stage2.candidates.push_back(d);
  }
  {
    DesignSpec d;
    d.name = "flex";
    d.terms = main_terms();
    d.terms.push_back({Term::Kind::Interaction, {"a1", "a2"}});
    d.terms.push_back({Term::Kind::Square, {"x1"}});
    d.terms.push_back({Term::Kind::LogAbs, {"x1"}});
    cfg.stage2.candidates.push_back(d);
  }
  cfg.stage2.folds = folds;
  cfg.stage2.seed = cv_seed;

  {
    DesignSpec d;
    d.name = "intercept";
    d.terms = {{Term::Kind::Intercept, {}}};
    cfg.stage1.candidates.push_back(d);
  }
  {
    DesignSpec d;
    d.name = "main";
    d.terms = {{Term::Kind::Main, {"x1"}}, {Term::Kind::Main, {"a1"}}};
    cfg.stage1.candidates.push_back(d);
  }
  {
    DesignSpec d;
    d.name = "flex";
    d.terms = {{Term::Kind::Main, {"x1"}},
               {Term::Kind::Main, {"a1"}},
               {Term::Kind::Interaction, {"x1", "a1"}},
               {Term::Kind::Square, {"x1"}},
               {Term::Kind::LogAbs, {"x1"}}};
    cfg.stage1.candidates.push_back(d);
  }
  cfg.stage1.folds = folds;
  cfg.stage1.seed = splitmix64(cv_seed ^ 0xa5a5a5a5a5a5a5a5ULL);
  return cfg;
}

namespace {

TreatmentMechanism make_mechanism(const EstimatorArm& arm, double truncation) {
  TreatmentMechanism mech;
  mech.source = arm.g_source;
  mech.rules = dgp1_rules();
  mech.truncation = truncation;
  if (arm.adjustment == "full") {
    mech.adjust_stage1 = {"x1"};
    mech.adjust_stage2 = {"x1", "a1", "s2"};
  } else if (arm.g_source != GSource::Known) {
    // minimal set still conditions on the full treatment history
    mech.adjust_stage2 = {"a1"};
  }
  return mech;
}

struct Accum {
  double sum_psi = 0.0, sumsq_psi = 0.0, sum_width = 0.0;
  std::size_t count = 0, cover = 0, sim_cover = 0, width_count = 0;
  std::size_t failures = 0;
};

}  // namespace

MetricsTable run_experiment(const ExperimentGrid& grid) {
  if (grid.replicates < 1) throw std::invalid_argument("run_experiment: replicates must be >= 1");
  if (grid.arms.empty()) throw std::invalid_argument("run_experiment: no estimator arms");
  const NodeSchema schema = dgp1_schema();
  const std::vector<AllowableSetRule> rules = dgp1_rules();
  const std::vector<EmbeddedRegime> regimes = enumerate_embedded_regimes(rules, schema);
  const std::size_t D = regimes.size();

  std::vector<double> truths = grid.truths;
  if (truths.empty()) {
    for (std::size_t j = 0; j < D; ++j)
      truths.push_back(dgp1_truth(j, grid.dgp, grid.truth_mc, derive_seed(grid.master_seed, 0, 999)));
  }
  if (truths.size() != D) throw std::invalid_argument("run_experiment: truths length mismatch");

  std::vector<std::vector<Accum>> acc(grid.arms.size(), std::vector<Accum>(D));
  MetricsTable table;
  table.replicates = grid.replicates;
  for (const auto& arm : grid.arms)
    if (arm.kind == "tmle") table.max_abs_mean_eic[arm.tag] = 0.0;

  for (std::size_t r = 0; r < grid.replicates; ++r) {
    Dgp1Config dcfg = grid.dgp;
    dcfg.seed = derive_seed(grid.master_seed, r + 1, 1);
    const TrialDataset data = dgp1_sample(dcfg);
    const IceConfig ice = dgp1_default_ice_config(derive_seed(grid.master_seed, r + 1, 2),
                                                  grid.cv_folds);
    // stage-2 regression is regime-independent; share across gcomp/tmle arms
    SharedStage2 shared;
    bool shared_ready = false, shared_failed = false;

    for (std::size_t a = 0; a < grid.arms.size(); ++a) {
      const EstimatorArm& arm = grid.arms[a];
      try {
        std::vector<EstimateResult> results;
        if (arm.kind == "ipw" || arm.kind == "tmle") {
          TreatmentMechanism mech = make_mechanism(arm, grid.truncation);
          if (mech.source != GSource::Known) mech.fit(data);
          if (arm.kind == "ipw") {
            for (const auto& reg : regimes)
              results.push_back(ipw_estimate(data, reg, mech, arm.stabilized));
          } else {
            if (!shared_ready) {
              shared = fit_stage2(data, ice);
              shared_ready = true;
            }
            double max_eic = table.max_abs_mean_eic[arm.tag];
            for (const auto& reg : regimes) {
              auto res = tmle_estimate(data, reg, ice, mech, &shared);
              max_eic = std::max(max_eic, std::fabs(res.ic_values.mean()));
              results.push_back(std::move(res));
            }
            table.max_abs_mean_eic[arm.tag] = max_eic;
          }
        } else if (arm.kind == "gcomp") {
          if (!shared_ready) {
            shared = fit_stage2(data, ice);
            shared_ready = true;
          }
          for (const auto& reg : regimes)
            results.push_back(ice_gcomp_estimate(data, reg, ice, &shared));
        } else {
          throw std::invalid_argument("unknown estimator kind '" + arm.kind + "'");
        }

        const bool with_ci = results.front().has_ic;
        std::vector<char> ind_cover(D, 1);
        std::vector<Interval> ind_intervals(D);
        bool all_sim_cover = true;
        if (with_ci) {
          RegimeValueVector vec = RegimeValueVector::from_results(results);
          IntervalSet ind = individual_cis(vec, grid.level);
          IntervalSet sim = simultaneous_ci(vec, grid.level, grid.mc_draws,
                                            derive_seed(grid.master_seed, r + 1, 100 + a));
          for (std::size_t j = 0; j < D; ++j) {
            ind_intervals[j] = ind.intervals[j];
            ind_cover[j] = ind.intervals[j].lower <= truths[j] &&
                           truths[j] <= ind.intervals[j].upper;
            all_sim_cover &= sim.intervals[j].lower <= truths[j] &&
                             truths[j] <= sim.intervals[j].upper;
          }
        }
        for (std::size_t j = 0; j < D; ++j) {
          Accum& ac = acc[a][j];
          ac.sum_psi += results[j].psi_hat;
          ac.sumsq_psi += results[j].psi_hat * results[j].psi_hat;
          ++ac.count;
          if (with_ci) {
            ac.sum_width += ind_intervals[j].width();
            ++ac.width_count;
            if (ind_cover[j]) ++ac.cover;
            if (all_sim_cover) ++ac.sim_cover;
          }
        }
      } catch (const std::exception&) {
        if (arm.kind != "ipw" && !shared_ready) shared_failed = true;
        for (std::size_t j = 0; j < D; ++j) ++acc[a][j].failures;
      }
    }
    (void)shared_failed;
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t a = 0; a < grid.arms.size(); ++a)
    for (std::size_t j = 0; j < D; ++j) {
      const Accum& ac = acc[a][j];
      MetricsRow row;
      row.regime_id = regimes[j].id;
      row.estimator = grid.arms[a].tag;
      row.truth = truths[j];
      row.failures = ac.failures;
      if (ac.count > 0) {
        const double m = ac.sum_psi / static_cast<double>(ac.count);
        row.abs_bias = std::fabs(m - truths[j]);
        row.variance = ac.sumsq_psi / static_cast<double>(ac.count) - m * m;
      } else {
        row.abs_bias = row.variance = nan;
      }
      if (ac.width_count > 0) {
        row.mean_width = ac.sum_width / static_cast<double>(ac.width_count);
        row.coverage = 100.0 * static_cast<double>(ac.cover) / static_cast<double>(ac.width_count);
        row.sim_coverage =
            100.0 * static_cast<double>(ac.sim_cover) / static_cast<double>(ac.width_count);
      } else {
        row.mean_width = row.coverage = row.sim_coverage = nan;
      }
      table.rows.push_back(std::move(row));
    }
  return table;
}

}  // namespace smartdtr
