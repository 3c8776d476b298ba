#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "smartdtr/learners.hpp"
#include "smartdtr/simulation.hpp"

using namespace smartdtr;

namespace {

TrialDataset sample(std::size_t n, std::uint64_t seed) {
  Dgp1Config cfg;
  cfg.n = n;
  cfg.seed = seed;
  return dgp1_sample(cfg);
}

std::vector<std::size_t> all_rows(const TrialDataset& d) {
  std::vector<std::size_t> r(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) r[i] = i;
  return r;
}

Eigen::VectorXd column(const TrialDataset& d, const std::string& c) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) v[static_cast<Eigen::Index>(i)] = d.numeric(c, i);
  return v;
}

DesignSpec spec_of(std::string name, std::vector<Term> terms,
                   Family family = Family::Binomial) {
  DesignSpec s;
  s.name = std::move(name);
  s.terms = std::move(terms);
  s.family = family;
  return s;
}

}  // namespace

TEST_CASE("intercept-only logistic fit recovers logit of the mean") {
  TrialDataset d = sample(400, 21);
  auto rows = all_rows(d);
  Eigen::VectorXd y = column(d, "y");
  auto fit = fit_glm(spec_of("icpt", {{Term::Kind::Intercept, {}}}), d, rows, y,
                     Eigen::VectorXd::Ones(400));
  const double m = y.mean();
  Eigen::VectorXd pred = fit->predict(d, {}, rows);
  CHECK(pred[0] == doctest::Approx(m).epsilon(1e-9));
  CHECK(fit->diagnostics().converged);
}

TEST_CASE("IRLS fixed point: weighted score has max-norm below 1e-6") {
  TrialDataset d = sample(600, 22);
  auto rows = all_rows(d);
  Eigen::VectorXd y = column(d, "y");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> wdist(0.2, 3.0);
  Eigen::VectorXd w(600);
  for (Eigen::Index i = 0; i < 600; ++i) w[i] = wdist(rng);
  std::vector<Term> terms = {{Term::Kind::Main, {"x1"}},
                             {Term::Kind::Main, {"a1"}},
                             {Term::Kind::Main, {"s2"}}};
  auto fit = fit_glm(spec_of("main", terms), d, rows, y, w);
  REQUIRE(fit->diagnostics().converged);
  Eigen::VectorXd mu = fit->predict(d, {}, rows);
  Eigen::MatrixXd X = build_design(d, terms, {}, rows);
  Eigen::VectorXd score = X.transpose() * (w.cwiseProduct(y - mu));
  CHECK(score.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("gaussian family solves weighted least squares exactly") {
  TrialDataset d = sample(300, 23);
  auto rows = all_rows(d);
  Eigen::VectorXd y = column(d, "s2");
  Eigen::VectorXd w = Eigen::VectorXd::Ones(300);
  std::vector<Term> terms = {{Term::Kind::Main, {"x1"}}, {Term::Kind::Main, {"a1"}}};
  auto fit = fit_glm(spec_of("ols", terms, Family::Gaussian), d, rows, y, w);
  Eigen::MatrixXd X = build_design(d, terms, {}, rows);
  Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  Eigen::VectorXd pred = fit->predict(d, {}, rows);
  CHECK((pred - X * beta).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("complete separation is capped, flagged and bounded") {
  // a1 alone perfectly separates this synthetic response
  TrialDataset d = sample(200, 24);
  auto rows = all_rows(d);
  Eigen::VectorXd y(200);
  for (std::size_t i = 0; i < 200; ++i) y[static_cast<Eigen::Index>(i)] = d.a1(i) ? 1.0 : 0.0;
  auto fit = fit_glm(spec_of("sep", {{Term::Kind::Main, {"a1"}}}), d, rows, y,
                     Eigen::VectorXd::Ones(200));
  CHECK(fit->diagnostics().separation_capped);
  Eigen::VectorXd pred = fit->predict(d, {}, rows);
  CHECK(pred.minCoeff() >= 0.0);
  CHECK(pred.maxCoeff() <= 1.0);
}

TEST_CASE("aliased columns are dropped deterministically") {
  TrialDataset d = sample(150, 25);
  auto rows = all_rows(d);
  Eigen::VectorXd y = column(d, "y");
  // l2 is a function of a2's branch, so the two terms are collinear
  std::vector<Term> terms = {{Term::Kind::Main, {"a2"}}, {Term::Kind::Main, {"l2"}}};
  auto fit = fit_glm(spec_of("alias", terms), d, rows, y, Eigen::VectorXd::Ones(150));
  CHECK_FALSE(fit->diagnostics().dropped_columns.empty());
  auto fit2 = fit_glm(spec_of("alias", terms), d, rows, y, Eigen::VectorXd::Ones(150));
  CHECK(fit->diagnostics().dropped_columns == fit2->diagnostics().dropped_columns);
}

TEST_CASE("all-zero weights are rejected") {
  TrialDataset d = sample(10, 26);
  auto rows = all_rows(d);
  Eigen::VectorXd y = column(d, "y");
  CHECK_THROWS(fit_glm(spec_of("z", {{Term::Kind::Intercept, {}}}), d, rows, y,
                       Eigen::VectorXd::Zero(10)));
}

TEST_CASE("saturated fit returns stratum means; unseen stratum is an error") {
  TrialDataset d(dgp1_schema(), 3);
  for (std::size_t i = 0; i < 3; ++i) {
    d.set_numeric("x1", i, 0.0);
    d.set_code("a1", i, i < 2 ? 0 : 1);
    d.set_code("l2", i, 1);
    d.set_numeric("s2", i, 0.0);
    d.set_code("a2", i, 0);
  }
  d.set_numeric("y", 0, 1.0);
  d.set_numeric("y", 1, 0.0);
  d.set_numeric("y", 2, 1.0);
  Eigen::Vector3d y(1.0, 0.0, 1.0);
  auto fit = fit_saturated({"a1"}, d, {0, 1, 2}, y, Eigen::Vector3d::Ones());
  Eigen::VectorXd pred = fit->predict(d, {}, {0, 1, 2});
  CHECK(pred[0] == doctest::Approx(0.5));
  CHECK(pred[1] == doctest::Approx(0.5));
  CHECK(pred[2] == doctest::Approx(1.0));
  // unseen stratum: override a1 to a level absent from the fit
  ColumnOverrides ov;
  ov.codes["a1"] = {0, 0, 0};
  CHECK_NOTHROW(fit->predict(d, ov, {0, 1, 2}));
  auto only0 = fit_saturated({"a1"}, d, {0, 1}, y.head(2), Eigen::Vector2d::Ones());
  CHECK_THROWS(only0->predict(d, {}, {2}));
}

TEST_CASE("saturated model equals a fully stratified GLM") {
  TrialDataset d = sample(500, 27);
  auto rows = all_rows(d);
  Eigen::VectorXd y = column(d, "s2");  // continuous response avoids separation
  Eigen::VectorXd w = Eigen::VectorXd::Ones(500);
  auto sat = fit_saturated({"a1", "l2"}, d, rows, y, w);
  auto glm = fit_glm(spec_of("strat", {{Term::Kind::Stratify, {"a1", "l2"}}}, Family::Gaussian),
                     d, rows, y, w);
  Eigen::VectorXd ps = sat->predict(d, {}, rows);
  Eigen::VectorXd pg = glm->predict(d, {}, rows);
  CHECK((ps - pg).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("cv_select prefers the main-effects model under a strong main effect") {
  TrialDataset d = sample(500, 28);
  auto rows = all_rows(d);
  // response driven strongly by x1
  Eigen::VectorXd y(500);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < 500; ++i) {
    double p = 1.0 / (1.0 + std::exp(-2.0 * d.numeric("x1", i)));
    y[static_cast<Eigen::Index>(i)] = u(rng) < p ? 1.0 : 0.0;
  }
  CvEnsembleSpec ens;
  ens.candidates = {spec_of("icpt", {{Term::Kind::Intercept, {}}}),
                    spec_of("main", {{Term::Kind::Main, {"x1"}}})};
  ens.folds = 10;
  ens.seed = 99;
  CvSelection sel = cv_select(ens, d, rows, y, Family::Binomial);
  CHECK(sel.chosen == 1);
  CHECK(sel.cv_losses[1] < sel.cv_losses[0]);

  // duplication invariance: adding a copy never changes predictions
  CvEnsembleSpec dup = ens;
  dup.candidates.insert(dup.candidates.begin(), ens.candidates[0]);
  CvSelection sel2 = cv_select(dup, d, rows, y, Family::Binomial);
  Eigen::VectorXd p1 = sel.fit->predict(d, {}, rows);
  Eigen::VectorXd p2 = sel2.fit->predict(d, {}, rows);
  CHECK((p1 - p2).cwiseAbs().maxCoeff() == 0.0);

  // determinism: same seed, same losses
  CvSelection sel3 = cv_select(ens, d, rows, y, Family::Binomial);
  CHECK(sel3.chosen == sel.chosen);
  CHECK(sel3.cv_losses == sel.cv_losses);
}

TEST_CASE("cv_select with a single candidate refits it on the full data") {
  TrialDataset d = sample(120, 29);
  auto rows = all_rows(d);
  Eigen::VectorXd y = column(d, "y");
  CvEnsembleSpec ens;
  ens.candidates = {spec_of("icpt", {{Term::Kind::Intercept, {}}})};
  ens.folds = 10;
  ens.seed = 1;
  CvSelection sel = cv_select(ens, d, rows, y, Family::Binomial);
  CHECK(sel.chosen == 0);
  Eigen::VectorXd pred = sel.fit->predict(d, {}, rows);
  CHECK(pred[0] == doctest::Approx(y.mean()).epsilon(1e-9));
}

TEST_CASE("a candidate failing a fold gets infinite loss but selection continues") {
  // hand-built data with a singleton stratum: the saturated candidate must
  // fail on the fold holding that row out
  TrialDataset d(dgp1_schema(), 20);
  for (std::size_t i = 0; i < 20; ++i) {
    d.set_numeric("x1", i, 0.1 * static_cast<double>(i));
    d.set_code("a1", i, i == 0 ? 1 : 0);
    d.set_code("l2", i, 1);
    d.set_numeric("s2", i, 0.0);
    d.set_code("a2", i, 0);
    d.set_numeric("y", i, i % 2 ? 1.0 : 0.0);
  }
  auto rows = all_rows(d);
  Eigen::VectorXd y = column(d, "y");
  CvEnsembleSpec ens;
  ens.candidates = {spec_of("sat", {{Term::Kind::Stratify, {"a1"}}}),
                    spec_of("icpt", {{Term::Kind::Intercept, {}}})};
  ens.folds = 10;
  ens.seed = 2;
  CvSelection sel = cv_select(ens, d, rows, y, Family::Binomial);
  CHECK(sel.chosen == 1);
  CHECK(std::isinf(sel.cv_losses[0]));
}
