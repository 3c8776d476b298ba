#include "smartdtr/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "smartdtr/kernels.hpp"

namespace smartdtr {

using nlohmann::json;

namespace {

constexpr double kCoefCap = 40.0;
constexpr double kIrlsTol = 1e-8;
constexpr int kIrlsMaxIter = 100;

std::string term_kind_name(Term::Kind k) {
  switch (k) {
    case Term::Kind::Intercept: return "intercept";
    case Term::Kind::Main: return "main";
    case Term::Kind::Interaction: return "interaction";
    case Term::Kind::Square: return "square";
    case Term::Kind::LogAbs: return "log_abs";
    case Term::Kind::Stratify: return "stratify";
  }
  return "?";
}

Term::Kind term_kind_from_name(const std::string& s) {
  if (s == "intercept") return Term::Kind::Intercept;
  if (s == "main") return Term::Kind::Main;
  if (s == "interaction") return Term::Kind::Interaction;
  if (s == "square") return Term::Kind::Square;
  if (s == "log_abs") return Term::Kind::LogAbs;
  if (s == "stratify") return Term::Kind::Stratify;
  throw std::invalid_argument("unknown design term kind '" + s + "'");
}

double cell_numeric(const TrialDataset& data, const ColumnOverrides& ov, const std::string& col,
                    std::size_t i) {
  auto itn = ov.numerics.find(col);
  if (itn != ov.numerics.end()) return itn->second[i];
  double v = data.numeric(col, i);
  if (std::isnan(v)) throw std::runtime_error("missing value in numeric column '" + col + "'");
  return v;
}

int cell_code(const TrialDataset& data, const ColumnOverrides& ov, const std::string& col,
              std::size_t i) {
  auto itc = ov.codes.find(col);
  int c = itc != ov.codes.end() ? itc->second[i] : data.code(col, i);
  if (c < 0) throw std::runtime_error("missing value in categorical column '" + col + "'");
  return c;
}

// Encodes one column as design columns: numeric -> itself, categorical ->
// dummies for levels 1..L-1.
void encode_main(const TrialDataset& data, const ColumnOverrides& ov, const std::string& col,
                 const std::vector<std::size_t>& rows, std::vector<Eigen::VectorXd>& out,
                 std::vector<std::string>* names) {
  const ColumnSpec* spec = data.schema().find(col);
  if (!spec) throw std::invalid_argument("design references unknown column '" + col + "'");
  const std::size_t m = rows.size();
  if (spec->kind == ColumnKind::Numeric) {
    Eigen::VectorXd v(m);
    for (std::size_t r = 0; r < m; ++r) v[static_cast<Eigen::Index>(r)] = cell_numeric(data, ov, col, rows[r]);
    out.push_back(std::move(v));
    if (names) names->push_back(col);
    return;
  }
  for (std::size_t lvl = 1; lvl < spec->levels.size(); ++lvl) {
    Eigen::VectorXd v(m);
    for (std::size_t r = 0; r < m; ++r)
      v[static_cast<Eigen::Index>(r)] =
          cell_code(data, ov, col, rows[r]) == static_cast<int>(lvl) ? 1.0 : 0.0;
    out.push_back(std::move(v));
    if (names) names->push_back(col + "=" + spec->levels[lvl]);
  }
}

}  // namespace

bool DesignSpec::pure_stratification() const {
  return terms.size() == 1 && terms[0].kind == Term::Kind::Stratify;
}

DesignSpec DesignSpec::from_json(const json& j) {
  DesignSpec s;
  s.name = j.value("name", std::string{});
  for (const auto& t : j.at("terms")) {
    Term term;
    term.kind = term_kind_from_name(t.at("kind").get<std::string>());
    term.columns = t.value("columns", std::vector<std::string>{});
    s.terms.push_back(std::move(term));
  }
  s.response = j.value("response", std::string{});
  s.family = j.value("family", std::string{"binomial"}) == "gaussian" ? Family::Gaussian
                                                                      : Family::Binomial;
  return s;
}

json DesignSpec::to_json() const {
  json j;
  j["name"] = name;
  j["terms"] = json::array();
  for (const auto& t : terms)
    j["terms"].push_back({{"kind", term_kind_name(t.kind)}, {"columns", t.columns}});
  if (!response.empty()) j["response"] = response;
  j["family"] = family == Family::Gaussian ? "gaussian" : "binomial";
  return j;
}

Eigen::MatrixXd build_design(const TrialDataset& data, const std::vector<Term>& terms,
                             const ColumnOverrides& ov, const std::vector<std::size_t>& rows,
                             std::vector<std::string>* colnames) {
  const std::size_t m = rows.size();
  std::vector<Eigen::VectorXd> cols;
  bool has_stratify = false;
  for (const auto& t : terms) has_stratify |= (t.kind == Term::Kind::Stratify);
  bool explicit_intercept = false;
  for (const auto& t : terms) explicit_intercept |= (t.kind == Term::Kind::Intercept);
  // implicit intercept unless the design is stratified
  if (!has_stratify || explicit_intercept) {
    cols.emplace_back(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(m)));
    if (colnames) colnames->push_back("(intercept)");
  }

  for (const auto& t : terms) {
    switch (t.kind) {
      case Term::Kind::Intercept:
        break;  // handled above
      case Term::Kind::Main:
        encode_main(data, ov, t.columns.at(0), rows, cols, colnames);
        break;
      case Term::Kind::Interaction: {
        std::vector<Eigen::VectorXd> a, b;
        std::vector<std::string> an, bn;
        encode_main(data, ov, t.columns.at(0), rows, a, &an);
        encode_main(data, ov, t.columns.at(1), rows, b, &bn);
        for (std::size_t p = 0; p < a.size(); ++p)
          for (std::size_t q = 0; q < b.size(); ++q) {
            cols.push_back(a[p].cwiseProduct(b[q]));
            if (colnames) colnames->push_back(an[p] + ":" + bn[q]);
          }
        break;
      }
      case Term::Kind::Square: {
        const std::string& c = t.columns.at(0);
        Eigen::VectorXd v(m);
        for (std::size_t r = 0; r < m; ++r) {
          double x = cell_numeric(data, ov, c, rows[r]);
          v[static_cast<Eigen::Index>(r)] = x * x;
        }
        cols.push_back(std::move(v));
        if (colnames) colnames->push_back(c + "^2");
        break;
      }
      case Term::Kind::LogAbs: {
        const std::string& c = t.columns.at(0);
        Eigen::VectorXd v(m);
        for (std::size_t r = 0; r < m; ++r)
          v[static_cast<Eigen::Index>(r)] = std::log(std::fabs(cell_numeric(data, ov, c, rows[r])) + 0.01);
        cols.push_back(std::move(v));
        if (colnames) colnames->push_back("log|" + c + "|");
        break;
      }
      case Term::Kind::Stratify: {
        // one indicator per level combination across the stratify columns
        std::vector<const ColumnSpec*> specs;
        for (const auto& c : t.columns) {
          const ColumnSpec* s = data.schema().find(c);
          if (!s || s->kind != ColumnKind::Categorical)
            throw std::invalid_argument("stratification requires categorical column '" + c + "'");
          specs.push_back(s);
        }
        std::size_t combos = 1;
        for (const auto* s : specs) combos *= s->levels.size();
        std::vector<int> codes(m * specs.size());
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t k = 0; k < specs.size(); ++k)
            codes[r * specs.size() + k] = cell_code(data, ov, t.columns[k], rows[r]);
        for (std::size_t combo = 0; combo < combos; ++combo) {
          std::vector<std::size_t> want(specs.size());
          std::size_t rem = combo;
          for (std::size_t k = 0; k < specs.size(); ++k) {
            want[k] = rem % specs[k]->levels.size();
            rem /= specs[k]->levels.size();
          }
          Eigen::VectorXd v(m);
          for (std::size_t r = 0; r < m; ++r) {
            bool hit = true;
            for (std::size_t k = 0; k < specs.size(); ++k)
              hit &= codes[r * specs.size() + k] == static_cast<int>(want[k]);
            v[static_cast<Eigen::Index>(r)] = hit ? 1.0 : 0.0;
          }
          cols.push_back(std::move(v));
          if (colnames) {
            std::string nm = "stratum";
            for (std::size_t k = 0; k < specs.size(); ++k)
              nm += "[" + t.columns[k] + "=" + specs[k]->levels[want[k]] + "]";
            colnames->push_back(nm);
          }
        }
        break;
      }
    }
  }

  Eigen::MatrixXd X(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) X.col(static_cast<Eigen::Index>(c)) = cols[c];
  return X;
}

namespace {

class GlmFit final : public FittedModel {
 public:
  GlmFit(DesignSpec spec, Eigen::VectorXd beta, std::vector<std::string> colnames,
         FitDiagnostics diag) : spec_(std::move(spec)), beta_(std::move(beta)),
                                colnames_(std::move(colnames)) {
    diag_ = std::move(diag);
    name_ = spec_.name;
  }

  Eigen::VectorXd predict(const TrialDataset& data, const ColumnOverrides& ov,
                          const std::vector<std::size_t>& rows) const override {
    Eigen::MatrixXd X = build_design(data, spec_.terms, ov, rows);
    Eigen::VectorXd eta = X * beta_;
    if (spec_.family == Family::Gaussian) return eta;
    Eigen::VectorXd mu(eta.size());
    kernels::expit(eta.data(), mu.data(), static_cast<std::size_t>(eta.size()));
    return mu;
  }

  json coefficients_json() const override {
    json j;
    j["model"] = "glm";
    j["name"] = spec_.name;
    json coefs = json::object();
    for (Eigen::Index k = 0; k < beta_.size(); ++k)
      coefs[colnames_[static_cast<std::size_t>(k)]] = beta_[k];
    j["coefficients"] = coefs;
    j["converged"] = diag_.converged;
    j["iterations"] = diag_.iterations;
    j["deviance"] = diag_.deviance;
    if (!diag_.dropped_columns.empty()) j["dropped"] = diag_.dropped_columns;
    return j;
  }

  const Eigen::VectorXd& beta() const { return beta_; }

 private:
  DesignSpec spec_;
  Eigen::VectorXd beta_;
  std::vector<std::string> colnames_;
};

class SaturatedFit final : public FittedModel {
 public:
  SaturatedFit(std::vector<std::string> columns, std::map<std::string, double> means)
      : columns_(std::move(columns)), means_(std::move(means)) {
    name_ = "saturated";
  }

  Eigen::VectorXd predict(const TrialDataset& data, const ColumnOverrides& ov,
                          const std::vector<std::size_t>& rows) const override {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::string key = stratum_key(data, ov, columns_, rows[r]);
      auto it = means_.find(key);
      if (it == means_.end())
        throw std::runtime_error("saturated model: prediction requested for empty stratum " + key);
      out[static_cast<Eigen::Index>(r)] = it->second;
    }
    return out;
  }

  json coefficients_json() const override {
    json j;
    j["model"] = "saturated";
    j["columns"] = columns_;
    j["stratum_means"] = means_;
    return j;
  }

  static std::string stratum_key(const TrialDataset& data, const ColumnOverrides& ov,
                                 const std::vector<std::string>& columns, std::size_t i) {
    std::string key;
    for (const auto& c : columns) {
      const ColumnSpec* spec = data.schema().find(c);
      if (spec && spec->kind == ColumnKind::Categorical) {
        int code = cell_code(data, ov, c, i);
        key += c + "=" + spec->levels[static_cast<std::size_t>(code)] + "|";
      } else {
        key += c + "=" + data.label(c, i) + "|";
      }
    }
    return key;
  }

 private:
  std::vector<std::string> columns_;
  std::map<std::string, double> means_;
};

}  // namespace

std::unique_ptr<FittedModel> fit_glm(const DesignSpec& spec, const TrialDataset& data,
                                     const std::vector<std::size_t>& rows,
                                     const Eigen::VectorXd& response,
                                     const Eigen::VectorXd& weights, const Eigen::VectorXd& offset) {
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  if (response.size() != m || weights.size() != m)
    throw std::invalid_argument("fit_glm: response/weights length mismatch");
  if ((weights.array() > 0.0).count() == 0)
    throw std::invalid_argument("fit_glm: all weights are zero");

  std::vector<std::string> colnames;
  Eigen::MatrixXd X = build_design(data, spec.terms, ColumnOverrides{}, rows, &colnames);
  const Eigen::Index p = X.cols();
  Eigen::VectorXd off = offset.size() == m ? offset : Eigen::VectorXd::Zero(m);

  FitDiagnostics diag;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);

  auto solve_wls = [&](const Eigen::VectorXd& sw, const Eigen::VectorXd& z,
                       Eigen::VectorXd& out) {
    Eigen::MatrixXd Xw = sw.asDiagonal() * X;
    Eigen::VectorXd zw = sw.cwiseProduct(z);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    qr.setThreshold(1e-10);
    out = qr.solve(zw);
    if (qr.rank() < p && diag.dropped_columns.empty()) {
      const auto& perm = qr.colsPermutation().indices();
      for (Eigen::Index k = qr.rank(); k < p; ++k)
        diag.dropped_columns.push_back(colnames[static_cast<std::size_t>(perm[k])]);
    }
  };

  if (spec.family == Family::Gaussian) {
    Eigen::VectorXd sw = weights.array().sqrt();
    solve_wls(sw, response - off, beta);
    Eigen::VectorXd resid = response - off - X * beta;
    diag.deviance = kernels::weighted_sumsq(weights.data(), resid.data(),
                                            static_cast<std::size_t>(m));
    diag.converged = true;
    diag.iterations = 1;
  } else {
    Eigen::VectorXd eta(m), mu(m);
    for (int iter = 1; iter <= kIrlsMaxIter; ++iter) {
      diag.iterations = iter;
      eta = X * beta + off;
      kernels::expit(eta.data(), mu.data(), static_cast<std::size_t>(m));
      Eigen::VectorXd irls_w(m), z(m), sw(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        double mui = std::clamp(mu[i], 1e-10, 1.0 - 1e-10);
        double d = mui * (1.0 - mui);
        irls_w[i] = weights[i] * d;
        z[i] = (eta[i] - off[i]) + (response[i] - mui) / d;
        sw[i] = std::sqrt(irls_w[i]);
      }
      Eigen::VectorXd next;
      solve_wls(sw, z, next);
      // separation guard: bounded coefficients on the link scale
      for (Eigen::Index k = 0; k < p; ++k) {
        if (std::fabs(next[k]) > kCoefCap) {
          next[k] = std::copysign(kCoefCap, next[k]);
          diag.separation_capped = true;
        }
      }
      Eigen::VectorXd delta = next - beta;
      beta = next;
      if (kernels::max_abs(delta.data(), static_cast<std::size_t>(p)) < kIrlsTol) {
        diag.converged = true;
        break;
      }
      diag.converged = false;
    }
    eta = X * beta + off;
    kernels::expit(eta.data(), mu.data(), static_cast<std::size_t>(m));
    double dev = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      double mui = std::clamp(mu[i], 1e-12, 1.0 - 1e-12);
      double yi = response[i];
      double ll = yi * std::log(mui) + (1.0 - yi) * std::log(1.0 - mui);
      dev += -2.0 * weights[i] * ll;
    }
    diag.deviance = dev;
  }

  return std::make_unique<GlmFit>(spec, std::move(beta), std::move(colnames), std::move(diag));
}

std::unique_ptr<FittedModel> fit_saturated(const std::vector<std::string>& strata_columns,
                                           const TrialDataset& data,
                                           const std::vector<std::size_t>& rows,
                                           const Eigen::VectorXd& response,
                                           const Eigen::VectorXd& weights) {
  if (static_cast<Eigen::Index>(rows.size()) != response.size())
    throw std::invalid_argument("fit_saturated: response length mismatch");
  std::map<std::string, std::pair<double, double>> acc;  // key -> (sum wy, sum w)
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double w = weights.size() ? weights[static_cast<Eigen::Index>(r)] : 1.0;
    if (w <= 0.0) continue;
    std::string key = SaturatedFit::stratum_key(data, ColumnOverrides{}, strata_columns, rows[r]);
    auto& a = acc[key];
    a.first += w * response[static_cast<Eigen::Index>(r)];
    a.second += w;
  }
  std::map<std::string, double> means;
  for (const auto& [k, a] : acc) means[k] = a.first / a.second;
  if (means.empty()) throw std::invalid_argument("fit_saturated: all weights are zero");
  return std::make_unique<SaturatedFit>(strata_columns, std::move(means));
}

std::unique_ptr<FittedModel> fit_design(const DesignSpec& spec, const TrialDataset& data,
                                        const std::vector<std::size_t>& rows,
                                        const Eigen::VectorXd& response,
                                        const Eigen::VectorXd& weights) {
  if (spec.pure_stratification())
    return fit_saturated(spec.terms[0].columns, data, rows, response, weights);
  return fit_glm(spec, data, rows, response, weights);
}

CvEnsembleSpec CvEnsembleSpec::from_json(const json& j) {
  CvEnsembleSpec s;
  for (const auto& c : j.at("candidates")) s.candidates.push_back(DesignSpec::from_json(c));
  s.folds = j.value("folds", 10);
  s.seed = j.value("seed", std::uint64_t{0});
  if (s.candidates.empty()) throw std::invalid_argument("cv ensemble: empty candidate list");
  if (s.folds < 2) throw std::invalid_argument("cv ensemble: folds must be >= 2");
  return s;
}

json CvEnsembleSpec::to_json() const {
  json j;
  j["candidates"] = json::array();
  for (const auto& c : candidates) j["candidates"].push_back(c.to_json());
  j["folds"] = folds;
  j["seed"] = seed;
  return j;
}

CvSelection cv_select(const CvEnsembleSpec& ensemble, const TrialDataset& data,
                      const std::vector<std::size_t>& rows, const Eigen::VectorXd& response,
                      Family family) {
  if (ensemble.candidates.empty()) throw std::invalid_argument("cv_select: no candidates");
  const std::size_t m = rows.size();
  if (m < static_cast<std::size_t>(ensemble.folds))
    throw std::invalid_argument("cv_select: fewer rows than folds");

  // fold assignment, stratified when the response is binary
  std::vector<int> fold(m);
  {
    std::mt19937_64 rng(ensemble.seed);
    bool binary = true;
    for (std::size_t k = 0; k < m; ++k) {
      double y = response[static_cast<Eigen::Index>(k)];
      binary &= (y == 0.0 || y == 1.0);
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    if (binary) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return response[static_cast<Eigen::Index>(a)] < response[static_cast<Eigen::Index>(b)];
      });
      // shuffle within class, then deal round-robin
      auto cls_begin = order.begin();
      while (cls_begin != order.end()) {
        auto cls_end = cls_begin;
        double y0 = response[static_cast<Eigen::Index>(*cls_begin)];
        while (cls_end != order.end() &&
               response[static_cast<Eigen::Index>(*cls_end)] == y0)
          ++cls_end;
        std::shuffle(cls_begin, cls_end, rng);
        cls_begin = cls_end;
      }
    } else {
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t k = 0; k < m; ++k)
      fold[order[k]] = static_cast<int>(k % static_cast<std::size_t>(ensemble.folds));
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> losses(ensemble.candidates.size(), 0.0);
  for (std::size_t c = 0; c < ensemble.candidates.size(); ++c) {
    DesignSpec spec = ensemble.candidates[c];
    spec.family = family;
    for (int f = 0; f < ensemble.folds && std::isfinite(losses[c]); ++f) {
      std::vector<std::size_t> train_rows, test_rows;
      std::vector<double> ytr, yte;
      for (std::size_t k = 0; k < m; ++k) {
        if (fold[k] == f) {
          test_rows.push_back(rows[k]);
          yte.push_back(response[static_cast<Eigen::Index>(k)]);
        } else {
          train_rows.push_back(rows[k]);
          ytr.push_back(response[static_cast<Eigen::Index>(k)]);
        }
      }
      try {
        Eigen::VectorXd ytrain = Eigen::Map<Eigen::VectorXd>(ytr.data(),
                                                             static_cast<Eigen::Index>(ytr.size()));
        auto fit = fit_design(spec, data, train_rows, ytrain,
                              Eigen::VectorXd::Ones(static_cast<Eigen::Index>(ytr.size())));
        Eigen::VectorXd pred = fit->predict(data, ColumnOverrides{}, test_rows);
        for (std::size_t k = 0; k < yte.size(); ++k) {
          double y = yte[k], p = pred[static_cast<Eigen::Index>(k)];
          if (family == Family::Binomial) {
            p = std::clamp(p, 1e-12, 1.0 - 1e-12);
            losses[c] -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
          } else {
            losses[c] += (y - p) * (y - p);
          }
        }
      } catch (const std::exception&) {
        losses[c] = inf;  // candidate failed on this fold
      }
    }
  }

  std::size_t best = 0;
  for (std::size_t c = 1; c < losses.size(); ++c)
    if (losses[c] < losses[best]) best = c;
  if (!std::isfinite(losses[best]))
    throw std::runtime_error("cv_select: every candidate failed cross-validation");

  DesignSpec winner = ensemble.candidates[best];
  winner.family = family;
  CvSelection sel;
  sel.fit = fit_design(winner, data, rows, response,
                       Eigen::VectorXd::Ones(static_cast<Eigen::Index>(m)));
  sel.chosen = best;
  sel.cv_losses = std::move(losses);
  return sel;
}

}  // namespace smartdtr
