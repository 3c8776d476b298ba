#include "smartdtr/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "smartdtr/kernels.hpp"

namespace smartdtr {

namespace {

std::vector<std::string> condition_columns(const std::vector<AllowableSetRule>& rules, int stage) {
  std::set<std::string> cols;
  for (const auto& r : rules)
    if (r.stage == stage)
      for (const auto& c : r.when) cols.insert(c.column);
  return {cols.begin(), cols.end()};
}

std::string stratum_label_key(const TrialDataset& data, std::size_t i,
                              const std::vector<std::string>& cols) {
  std::string key;
  for (const auto& c : cols) key += c + "=" + data.label(c, i) + "|";
  return key;
}

const std::string& treatment_column(const TrialDataset& data, int stage) {
  return stage == 1 ? data.schema().stage1_treatment.name : data.schema().stage2_treatment.name;
}

}  // namespace

std::vector<std::string> TreatmentMechanism::strata_columns(const TrialDataset& data,
                                                            int stage) const {
  std::vector<std::string> cols = condition_columns(rules, stage);
  const auto& extra = stage == 1 ? adjust_stage1 : adjust_stage2;
  for (const auto& c : extra)
    if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
  return cols;
}

void TreatmentMechanism::fit(const TrialDataset& data) {
  saturated_.clear();
  modeled_.clear();
  if (source == GSource::Known) {
    fitted_ = true;
    return;
  }
  for (int stage : {1, 2}) {
    const std::string& acol = treatment_column(data, stage);
    const std::vector<std::string> cond_cols = condition_columns(rules, stage);
    if (source == GSource::Saturated) {
      auto& table = saturated_[stage];
      const std::vector<std::string> key_cols = strata_columns(data, stage);
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (stage == 2 && data.absorbed(i)) continue;
        Stratum s = record_stratum(data, i, cond_cols);
        const AllowableSetRule& rule = matching_rule(rules, stage, s);
        if (rule.deterministic()) continue;
        auto& lc = table[stratum_label_key(data, i, key_cols)];
        lc.count[data.label(acol, i)] += 1.0;
        lc.total += 1.0;
      }
    } else {
      // Modeled: one-vs-rest logistic per non-deterministic rule
      for (std::size_t r = 0; r < rules.size(); ++r) {
        const AllowableSetRule& rule = rules[r];
        if (rule.stage != stage || rule.deterministic()) continue;
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < data.size(); ++i) {
          if (stage == 2 && data.absorbed(i)) continue;
          if (matches(rule.when, record_stratum(data, i, cond_cols))) rows.push_back(i);
        }
        if (rows.empty())
          throw std::runtime_error("treatment mechanism: no records match a stage " +
                                   std::to_string(stage) + " rule");
        const auto& extra = stage == 1 ? adjust_stage1 : adjust_stage2;
        DesignSpec spec;
        spec.name = "g_stage" + std::to_string(stage);
        for (const auto& c : extra) {
          spec.terms.push_back({Term::Kind::Main, {c}});
          const ColumnSpec* cs = data.schema().find(c);
          if (cs && cs->kind == ColumnKind::Numeric) {
            spec.terms.push_back({Term::Kind::Square, {c}});
            spec.terms.push_back({Term::Kind::LogAbs, {c}});
          }
        }
        std::vector<std::unique_ptr<FittedModel>> fits;
        for (const auto& level : rule.allowed) {
          Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
          for (std::size_t k = 0; k < rows.size(); ++k)
            y[static_cast<Eigen::Index>(k)] = data.label(acol, rows[k]) == level ? 1.0 : 0.0;
          fits.push_back(fit_glm(spec, data, rows, y,
                                 Eigen::VectorXd::Ones(static_cast<Eigen::Index>(rows.size()))));
        }
        modeled_[r] = std::move(fits);
      }
    }
  }
  fitted_ = true;
}

double TreatmentMechanism::prob(const TrialDataset& data, std::size_t i, int stage,
                                const std::string& level) const {
  const std::vector<std::string> cond_cols = condition_columns(rules, stage);
  Stratum s = record_stratum(data, i, cond_cols);
  const AllowableSetRule& rule = matching_rule(rules, stage, s);
  if (rule.deterministic()) return 1.0;
  if (source == GSource::Known) return rule.probability_of(level);
  if (!fitted_) throw std::runtime_error("treatment mechanism queried before fit()");
  if (source == GSource::Saturated) {
    const auto& table = saturated_.at(stage);
    auto it = table.find(stratum_label_key(data, i, strata_columns(data, stage)));
    if (it == table.end() || it->second.total == 0.0)
      throw std::runtime_error("treatment mechanism: empty stratum at stage " +
                               std::to_string(stage));
    auto jt = it->second.count.find(level);
    double c = jt == it->second.count.end() ? 0.0 : jt->second;
    return c / it->second.total;
  }
  // Modeled
  std::size_t ridx = 0;
  bool found = false;
  for (std::size_t r = 0; r < rules.size(); ++r)
    if (rules[r].stage == stage && matches(rules[r].when, s)) {
      ridx = r;
      found = true;
      break;
    }
  if (!found || modeled_.count(ridx) == 0)
    throw std::runtime_error("treatment mechanism: no fitted model for stage " +
                             std::to_string(stage));
  const auto& fits = modeled_.at(ridx);
  const auto& allowed = rules[ridx].allowed;
  std::vector<std::size_t> one{i};
  double total = 0.0, hit = 0.0;
  for (std::size_t k = 0; k < allowed.size(); ++k) {
    double p = fits[k]->predict(data, ColumnOverrides{}, one)[0];
    total += p;
    if (allowed[k] == level) hit = p;
  }
  if (total <= 0.0) throw std::runtime_error("treatment mechanism: degenerate fitted probabilities");
  return hit / total;
}

CumulativeG cumulative_g(const TrialDataset& data, std::size_t i, const EmbeddedRegime& regime,
                         const TreatmentMechanism& mech) {
  CumulativeG out;
  const std::string d1 = regime_stage1_level(data, i, regime);
  double g1 = mech.prob(data, i, 1, d1);
  double g2 = 1.0;
  // stage 2 contributes only when reachable: non-absorbed and still following
  if (!data.absorbed(i) && follows_regime(data, i, regime, 1)) {
    const std::string d2 = regime_stage2_level(data, i, regime);
    g2 = mech.prob(data, i, 2, d2);
  }
  out.g1 = std::max(g1, mech.truncation);
  out.g12 = std::max(g1 * g2, mech.truncation);
  out.truncated = g1 < mech.truncation || g1 * g2 < mech.truncation;
  return out;
}

double scale_outcome(double y, double a, double b) {
  if (!(a < b)) throw std::invalid_argument("scale_outcome: degenerate range");
  return std::clamp((y - a) / (b - a), 0.0, 1.0);
}

double unscale_outcome(double s, double a, double b) {
  if (!(a < b)) throw std::invalid_argument("unscale_outcome: degenerate range");
  return a + s * (b - a);
}

EstimateResult ipw_estimate(const TrialDataset& data, const EmbeddedRegime& regime,
                            const TreatmentMechanism& mech, bool stabilized) {
  if (mech.source != GSource::Known && !mech.fitted())
    throw std::runtime_error("ipw_estimate: mechanism not fitted");
  const std::size_t n = data.size();
  Eigen::VectorXd iw = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));  // I * w
  EstimatorDiagnostics diag;
  double min_w = 0.0, max_w = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!follows_regime(data, i, regime, 2)) continue;
    CumulativeG g = cumulative_g(data, i, regime, mech);
    double w = 1.0 / g.g12;
    iw[static_cast<Eigen::Index>(i)] = w;
    if (g.truncated) ++diag.truncation_events;
    if (diag.n_following == 0) {
      min_w = max_w = w;
    } else {
      min_w = std::min(min_w, w);
      max_w = std::max(max_w, w);
    }
    ++diag.n_following;
  }
  if (diag.n_following == 0)
    throw std::runtime_error("ipw_estimate: no records follow regime " + regime.id);
  diag.min_weight = min_w;
  diag.max_weight = max_w;

  EstimateResult res;
  res.regime_id = regime.id;
  res.estimator = stabilized ? "ipw_ht" : "ipw";
  res.ic_values.resize(static_cast<Eigen::Index>(n));
  double swy = 0.0, sw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double w = iw[static_cast<Eigen::Index>(i)];
    if (w > 0.0) {
      swy += w * data.y(i);
      sw += w;
    }
  }
  if (stabilized) {
    res.psi_hat = swy / sw;
    for (std::size_t i = 0; i < n; ++i) {
      double w = iw[static_cast<Eigen::Index>(i)];
      res.ic_values[static_cast<Eigen::Index>(i)] = w > 0.0 ? w * (data.y(i) - res.psi_hat) : 0.0;
    }
  } else {
    res.psi_hat = swy / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      double w = iw[static_cast<Eigen::Index>(i)];
      res.ic_values[static_cast<Eigen::Index>(i)] = (w > 0.0 ? w * data.y(i) : 0.0) - res.psi_hat;
    }
  }
  res.has_ic = true;
  const double ss = kernels::dot(res.ic_values.data(), res.ic_values.data(), n);
  res.variance = ss / static_cast<double>(n) / static_cast<double>(n);
  res.diagnostics = diag;
  return res;
}

namespace {

struct IcePrep {
  std::vector<std::size_t> fit_rows;          // stage-2 regression rows
  std::vector<char> deterministic;            // per row: prediction forced to observed Y
  Eigen::VectorXd y_scaled;                   // length n
  double a = 0.0, b = 1.0;
};

IcePrep prepare_ice(const TrialDataset& data, const IceConfig& cfg) {
  IcePrep p;
  const std::size_t n = data.size();
  p.a = data.schema().outcome_min;
  p.b = data.schema().outcome_max;
  p.y_scaled.resize(static_cast<Eigen::Index>(n));
  p.deterministic.assign(n, 0);
  std::set<std::string> det_cols;
  for (const auto& r : cfg.deterministic_q)
    for (const auto& c : r.when) det_cols.insert(c.column);
  std::vector<std::string> det_cols_v(det_cols.begin(), det_cols.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (data.y_missing(i))
      throw std::runtime_error("ICE estimators require complete outcomes (row " +
                               std::to_string(i) + ")");
    p.y_scaled[static_cast<Eigen::Index>(i)] = scale_outcome(data.y(i), p.a, p.b);
    bool det = data.absorbed(i);
    if (!det && !cfg.deterministic_q.empty()) {
      Stratum s = record_stratum(data, i, det_cols_v);
      for (const auto& r : cfg.deterministic_q) det |= matches(r.when, s);
    }
    p.deterministic[i] = det ? 1 : 0;
    if (!det) p.fit_rows.push_back(i);
  }
  if (p.fit_rows.empty()) throw std::runtime_error("ICE: no rows available for stage-2 fit");
  return p;
}

// Regime-assigned treatment codes for prediction overrides.
ColumnOverrides regime_overrides(const TrialDataset& data, const EmbeddedRegime& regime,
                                 const IcePrep& p) {
  const std::size_t n = data.size();
  const ColumnSpec& a1spec = data.schema().stage1_treatment;
  const ColumnSpec& a2spec = data.schema().stage2_treatment;
  std::vector<int> a1(n, 0), a2(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string d1 = regime_stage1_level(data, i, regime);
    a1[i] = a1spec.level_index(d1);
    if (!p.deterministic[i]) {
      const std::string d2 = regime_stage2_level(data, i, regime);
      a2[i] = a2spec.level_index(d2);
      if (a2[i] < 0)
        throw std::runtime_error("regime assigns unknown stage-2 level '" + d2 + "'");
    }
    if (a1[i] < 0) throw std::runtime_error("regime assigns unknown stage-1 level '" + d1 + "'");
  }
  ColumnOverrides ov;
  ov.codes[a1spec.name] = std::move(a1);
  ov.codes[a2spec.name] = std::move(a2);
  return ov;
}

Eigen::VectorXd clipped_logit(const Eigen::VectorXd& p) {
  Eigen::VectorXd out(p.size());
  kernels::logit(p.data(), out.data(), static_cast<std::size_t>(p.size()), 1e-12);
  return out;
}

// Intercept-only logistic fluctuation: response y, offset logit(q), weight w,
// restricted to rows with w > 0. Returns epsilon; sets `converged`.
double fluctuate(const TrialDataset& data, const std::vector<std::size_t>& rows,
                 const Eigen::VectorXd& y, const Eigen::VectorXd& offset,
                 const Eigen::VectorXd& w, bool* converged) {
  DesignSpec spec;
  spec.name = "fluctuation";
  spec.terms.push_back({Term::Kind::Intercept, {}});
  spec.family = Family::Binomial;
  auto fit = fit_glm(spec, data, rows, y, w, offset);
  *converged = fit->diagnostics().converged;
  const auto j = fit->coefficients_json();
  return j.at("coefficients").begin().value().get<double>();
}

}  // namespace

SharedStage2 fit_stage2(const TrialDataset& data, const IceConfig& cfg) {
  IcePrep p = prepare_ice(data, cfg);
  Eigen::VectorXd resp(static_cast<Eigen::Index>(p.fit_rows.size()));
  for (std::size_t k = 0; k < p.fit_rows.size(); ++k)
    resp[static_cast<Eigen::Index>(k)] = p.y_scaled[static_cast<Eigen::Index>(p.fit_rows[k])];
  SharedStage2 out;
  if (cfg.stage2.candidates.size() == 1) {
    DesignSpec spec = cfg.stage2.candidates[0];
    spec.family = Family::Binomial;
    out.fit = fit_design(spec, data, p.fit_rows, resp,
                         Eigen::VectorXd::Ones(static_cast<Eigen::Index>(p.fit_rows.size())));
    out.learner_name = spec.name;
  } else {
    CvSelection sel = cv_select(cfg.stage2, data, p.fit_rows, resp, Family::Binomial);
    out.learner_name = cfg.stage2.candidates[sel.chosen].name;
    out.fit = std::shared_ptr<const FittedModel>(std::move(sel.fit));
  }
  return out;
}

namespace {

std::unique_ptr<FittedModel> fit_stage1_model(const TrialDataset& data, const IceConfig& cfg,
                                              const Eigen::VectorXd& pseudo,
                                              std::string* learner_name) {
  const std::size_t n = data.size();
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  if (cfg.stage1.candidates.size() == 1) {
    DesignSpec spec = cfg.stage1.candidates[0];
    spec.family = Family::Binomial;
    *learner_name = spec.name;
    return fit_design(spec, data, rows, pseudo,
                      Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n)));
  }
  CvSelection sel = cv_select(cfg.stage1, data, rows, pseudo, Family::Binomial);
  *learner_name = cfg.stage1.candidates[sel.chosen].name;
  return std::move(sel.fit);
}

}  // namespace

EstimateResult ice_gcomp_estimate(const TrialDataset& data, const EmbeddedRegime& regime,
                                  const IceConfig& cfg, const SharedStage2* shared) {
  IcePrep p = prepare_ice(data, cfg);
  const std::size_t n = data.size();
  SharedStage2 local;
  if (!shared) {
    local = fit_stage2(data, cfg);
    shared = &local;
  }
  ColumnOverrides ov = regime_overrides(data, regime, p);

  Eigen::VectorXd q2(static_cast<Eigen::Index>(n));
  {
    Eigen::VectorXd pred = shared->fit->predict(data, ov, p.fit_rows);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      q2[static_cast<Eigen::Index>(i)] = p.deterministic[i]
                                             ? p.y_scaled[static_cast<Eigen::Index>(i)]
                                             : pred[static_cast<Eigen::Index>(k++)];
  }

  std::string name1;
  auto q1fit = fit_stage1_model(data, cfg, q2, &name1);
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  Eigen::VectorXd q1 = q1fit->predict(data, ov, all);

  auto stack = std::make_shared<IceStack>();
  stack->scale_a = p.a;
  stack->scale_b = p.b;
  stack->y_scaled = p.y_scaled;
  stack->q2 = q2;
  stack->q1 = q1;
  stack->targeted = false;

  EstimateResult res;
  res.regime_id = regime.id;
  res.estimator = "gcomp";
  res.psi_hat = unscale_outcome(q1.mean(), p.a, p.b);
  res.diagnostics.learner_names = {shared->learner_name, name1};
  for (std::size_t i = 0; i < n; ++i)
    if (follows_regime(data, i, regime, 2)) ++res.diagnostics.n_following;
  res.stack = std::move(stack);
  return res;
}

EstimateResult tmle_estimate(const TrialDataset& data, const EmbeddedRegime& regime,
                             const IceConfig& cfg, const TreatmentMechanism& mech,
                             const SharedStage2* shared) {
  if (mech.source != GSource::Known && !mech.fitted())
    throw std::runtime_error("tmle_estimate: mechanism not fitted");
  IcePrep p = prepare_ice(data, cfg);
  const std::size_t n = data.size();
  SharedStage2 local;
  if (!shared) {
    local = fit_stage2(data, cfg);
    shared = &local;
  }
  ColumnOverrides ov = regime_overrides(data, regime, p);

  // indicators and cumulative probabilities
  Eigen::VectorXd ind1(static_cast<Eigen::Index>(n)), ind2(static_cast<Eigen::Index>(n));
  Eigen::VectorXd g1(static_cast<Eigen::Index>(n)), g12(static_cast<Eigen::Index>(n));
  EstimatorDiagnostics diag;
  for (std::size_t i = 0; i < n; ++i) {
    ind1[static_cast<Eigen::Index>(i)] = follows_regime(data, i, regime, 1) ? 1.0 : 0.0;
    ind2[static_cast<Eigen::Index>(i)] = follows_regime(data, i, regime, 2) ? 1.0 : 0.0;
    CumulativeG g = cumulative_g(data, i, regime, mech);
    g1[static_cast<Eigen::Index>(i)] = g.g1;
    g12[static_cast<Eigen::Index>(i)] = g.g12;
    if (g.truncated && ind2[static_cast<Eigen::Index>(i)] > 0.0) ++diag.truncation_events;
    if (ind2[static_cast<Eigen::Index>(i)] > 0.0) ++diag.n_following;
  }
  if (diag.n_following == 0)
    throw std::runtime_error("tmle_estimate: no records follow regime " + regime.id);
  {
    bool first = true;
    for (std::size_t i = 0; i < n; ++i)
      if (ind2[static_cast<Eigen::Index>(i)] > 0.0) {
        double w = 1.0 / g12[static_cast<Eigen::Index>(i)];
        if (first) {
          diag.min_weight = diag.max_weight = w;
          first = false;
        } else {
          diag.min_weight = std::min(diag.min_weight, w);
          diag.max_weight = std::max(diag.max_weight, w);
        }
      }
  }

  // stage-2 initial predictions at regime assignments
  Eigen::VectorXd q2_0(static_cast<Eigen::Index>(n));
  {
    Eigen::VectorXd pred = shared->fit->predict(data, ov, p.fit_rows);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      q2_0[static_cast<Eigen::Index>(i)] = p.deterministic[i]
                                               ? p.y_scaled[static_cast<Eigen::Index>(i)]
                                               : pred[static_cast<Eigen::Index>(k++)];
  }

  // stage-2 fluctuation among non-deterministic followers
  bool conv2 = true;
  double eps2 = 0.0;
  {
    std::vector<std::size_t> rows;
    std::vector<double> yv, offv, wv;
    for (std::size_t i = 0; i < n; ++i) {
      if (p.deterministic[i] || ind2[static_cast<Eigen::Index>(i)] == 0.0) continue;
      rows.push_back(i);
      yv.push_back(p.y_scaled[static_cast<Eigen::Index>(i)]);
      double q = std::clamp(q2_0[static_cast<Eigen::Index>(i)], 1e-12, 1.0 - 1e-12);
      offv.push_back(std::log(q / (1.0 - q)));
      wv.push_back(1.0 / g12[static_cast<Eigen::Index>(i)]);
    }
    if (!rows.empty()) {
      Eigen::Map<Eigen::VectorXd> y(yv.data(), static_cast<Eigen::Index>(yv.size()));
      Eigen::Map<Eigen::VectorXd> off(offv.data(), static_cast<Eigen::Index>(offv.size()));
      Eigen::Map<Eigen::VectorXd> w(wv.data(), static_cast<Eigen::Index>(wv.size()));
      eps2 = fluctuate(data, rows, y, off, w, &conv2);
    }
  }
  Eigen::VectorXd q2 = q2_0;
  if (eps2 != 0.0) {
    Eigen::VectorXd lo = clipped_logit(q2_0);
    for (std::size_t i = 0; i < n; ++i)
      if (!p.deterministic[i]) {
        double e = lo[static_cast<Eigen::Index>(i)] + eps2;
        q2[static_cast<Eigen::Index>(i)] = 1.0 / (1.0 + std::exp(-e));
      }
  }

  // stage-1 initial fit on the targeted pseudo-outcome
  std::string name1;
  auto q1fit = fit_stage1_model(data, cfg, q2, &name1);
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  Eigen::VectorXd q1_0 = q1fit->predict(data, ov, all);

  // stage-1 fluctuation among stage-1 followers
  bool conv1 = true;
  double eps1 = 0.0;
  {
    std::vector<std::size_t> rows;
    std::vector<double> yv, offv, wv;
    for (std::size_t i = 0; i < n; ++i) {
      if (ind1[static_cast<Eigen::Index>(i)] == 0.0) continue;
      rows.push_back(i);
      yv.push_back(q2[static_cast<Eigen::Index>(i)]);
      double q = std::clamp(q1_0[static_cast<Eigen::Index>(i)], 1e-12, 1.0 - 1e-12);
      offv.push_back(std::log(q / (1.0 - q)));
      wv.push_back(1.0 / g1[static_cast<Eigen::Index>(i)]);
    }
    if (rows.empty()) throw std::runtime_error("tmle_estimate: no stage-1 followers");
    Eigen::Map<Eigen::VectorXd> y(yv.data(), static_cast<Eigen::Index>(yv.size()));
    Eigen::Map<Eigen::VectorXd> off(offv.data(), static_cast<Eigen::Index>(offv.size()));
    Eigen::Map<Eigen::VectorXd> w(wv.data(), static_cast<Eigen::Index>(wv.size()));
    eps1 = fluctuate(data, rows, y, off, w, &conv1);
  }
  Eigen::VectorXd q1 = q1_0;
  if (eps1 != 0.0) {
    Eigen::VectorXd lo = clipped_logit(q1_0);
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      double e = lo[i] + eps1;
      q1[i] = 1.0 / (1.0 + std::exp(-e));
    }
  }

  const double psi_s = q1.mean();
  auto stack = std::make_shared<IceStack>();
  stack->scale_a = p.a;
  stack->scale_b = p.b;
  stack->y_scaled = p.y_scaled;
  stack->q2 = q2;
  stack->q1 = q1;
  stack->ind1 = ind1;
  stack->ind2 = ind2;
  stack->g1 = g1;
  stack->g12 = g12;
  stack->eps2 = eps2;
  stack->eps1 = eps1;
  stack->targeted = true;

  EstimateResult res;
  res.regime_id = regime.id;
  res.estimator = "tmle";
  res.psi_hat = unscale_outcome(psi_s, p.a, p.b);
  res.has_ic = true;
  res.ic_values.resize(static_cast<Eigen::Index>(n));
  const double span = p.b - p.a;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    double ic = ind2[i] * (p.y_scaled[i] - q2[i]) / g12[i] + ind1[i] * (q2[i] - q1[i]) / g1[i] +
                q1[i] - psi_s;
    res.ic_values[i] = span * ic;
  }
  res.variance = kernels::dot(res.ic_values.data(), res.ic_values.data(), n) /
                 static_cast<double>(n) / static_cast<double>(n);
  diag.fluctuation_converged = conv1 && conv2;
  diag.learner_names = {shared->learner_name, name1};
  res.diagnostics = diag;
  res.stack = std::move(stack);
  return res;
}

}  // namespace smartdtr
