#include "smartdtr/inference.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "smartdtr/kernels.hpp"

namespace smartdtr {

double normal_quantile(double p) {
  // Wichura's algorithm AS 241 (PPND16).
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p outside (0,1)");
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

double assemble_eic(const IceStack& s, std::size_t i, double psi_hat) {
  if (!s.targeted) throw std::invalid_argument("assemble_eic: stack is not targeted");
  const Eigen::Index k = static_cast<Eigen::Index>(i);
  const double psi_s = scale_outcome(psi_hat, s.scale_a, s.scale_b);
  const double ic = s.ind2[k] * (s.y_scaled[k] - s.q2[k]) / s.g12[k] +
                    s.ind1[k] * (s.q2[k] - s.q1[k]) / s.g1[k] + s.q1[k] - psi_s;
  return (s.scale_b - s.scale_a) * ic;
}

Eigen::MatrixXd RegimeValueVector::sigma_n() const {
  return ic.transpose() * ic / static_cast<double>(ic.rows());
}

Eigen::MatrixXd RegimeValueVector::rho() const {
  Eigen::MatrixXd s = sigma_n();
  const Eigen::Index d = s.rows();
  Eigen::VectorXd sd = s.diagonal().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) {
      if (a == b) continue;
      if (sd[a] > 0.0 && sd[b] > 0.0)
        r(a, b) = std::clamp(s(a, b) / (sd[a] * sd[b]), -1.0, 1.0);
      else
        r(a, b) = 0.0;  // degenerate column
    }
  return r;
}

RegimeValueVector RegimeValueVector::from_results(const std::vector<EstimateResult>& results) {
  if (results.empty()) throw std::invalid_argument("from_results: empty");
  RegimeValueVector v;
  const Eigen::Index n = results.front().ic_values.size();
  v.psi_hats.resize(static_cast<Eigen::Index>(results.size()));
  v.ic.resize(n, static_cast<Eigen::Index>(results.size()));
  for (std::size_t j = 0; j < results.size(); ++j) {
    const auto& r = results[j];
    if (!r.has_ic)
      throw std::invalid_argument("from_results: estimator '" + r.estimator +
                                  "' carries no influence curve");
    if (r.ic_values.size() != n)
      throw std::invalid_argument("from_results: influence-curve length mismatch");
    v.regime_ids.push_back(r.regime_id);
    v.psi_hats[static_cast<Eigen::Index>(j)] = r.psi_hat;
    v.ic.col(static_cast<Eigen::Index>(j)) = r.ic_values;
  }
  return v;
}

Interval wald_ci(double psi_hat, const Eigen::VectorXd& ic_values, double level,
                 bool* zero_variance) {
  const std::size_t n = static_cast<std::size_t>(ic_values.size());
  if (n < 2) throw std::invalid_argument("wald_ci: n < 2");
  const double sigma2 =
      kernels::dot(ic_values.data(), ic_values.data(), n) / static_cast<double>(n);
  if (zero_variance) *zero_variance = sigma2 == 0.0;
  const double z = normal_quantile(0.5 + level / 2.0);
  const double hw = z * std::sqrt(sigma2 / static_cast<double>(n));
  return {psi_hat - hw, psi_hat + hw};
}

double max_abs_z_quantile(const Eigen::MatrixXd& rho, double level, int mc_draws,
                          std::uint64_t seed, bool* repaired) {
  const Eigen::Index d = rho.rows();
  if (d == 0 || rho.cols() != d) throw std::invalid_argument("max_abs_z_quantile: bad rho");
  if (mc_draws < 100) throw std::invalid_argument("max_abs_z_quantile: mc_draws too small");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(rho);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("max_abs_z_quantile: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  bool rep = ev.minCoeff() < -1e-8;
  if (repaired) *repaired = rep;
  Eigen::MatrixXd A =
      es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();  // A A' = clipped rho
  if (rep) {
    // renormalize rows so the implied diagonal is 1 (degenerate rows stay 0)
    for (Eigen::Index j = 0; j < d; ++j) {
      double nrm = A.row(j).norm();
      if (nrm > 0.0) A.row(j) /= nrm;
    }
  }
  // Latin-hypercube-stratified normals: each latent coordinate gets one draw
  // per probability stratum, which sharpens the empirical quantile markedly
  // compared to plain iid sampling at the same draw count.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t m = static_cast<std::size_t>(mc_draws);
  Eigen::MatrixXd eps(static_cast<Eigen::Index>(m), d);
  std::vector<std::size_t> perm(m);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (std::size_t t = 0; t < m; ++t) perm[t] = t;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t t = 0; t < m; ++t) {
      const double u = std::clamp(
          (static_cast<double>(perm[t]) + unif(rng)) / static_cast<double>(m), 1e-12,
          1.0 - 1e-12);
      eps(static_cast<Eigen::Index>(t), j) = normal_quantile(u);
    }
  }
  std::vector<double> maxima(m);
  for (std::size_t t = 0; t < m; ++t)
    maxima[t] = (A * eps.row(static_cast<Eigen::Index>(t)).transpose()).cwiseAbs().maxCoeff();
  std::sort(maxima.begin(), maxima.end());
  auto idx = static_cast<std::size_t>(std::ceil(level * mc_draws)) - 1;
  idx = std::min(idx, maxima.size() - 1);
  return maxima[idx];
}

namespace {

IntervalSet interval_set_from(const std::vector<std::string>& ids, const Eigen::VectorXd& psi,
                              const Eigen::MatrixXd& sigma, std::size_t n, double level,
                              double crit, const std::string& kind, bool repaired) {
  IntervalSet out;
  out.ids = ids;
  out.level = level;
  out.kind = kind;
  out.critical_value = crit;
  out.psd_repaired = repaired;
  for (Eigen::Index j = 0; j < psi.size(); ++j) {
    double v = sigma(j, j) / static_cast<double>(n);
    if (sigma(j, j) == 0.0) out.degenerate.push_back(static_cast<std::size_t>(j));
    double hw = crit * std::sqrt(std::max(v, 0.0));
    out.intervals.push_back({psi[j] - hw, psi[j] + hw});
  }
  return out;
}

}  // namespace

IntervalSet individual_cis(const RegimeValueVector& vec, double level) {
  const double z = normal_quantile(0.5 + level / 2.0);
  return interval_set_from(vec.regime_ids, vec.psi_hats, vec.sigma_n(), vec.n(), level, z,
                           "individual", false);
}

IntervalSet simultaneous_ci(const RegimeValueVector& vec, double level, int mc_draws,
                            std::uint64_t seed) {
  bool rep = false;
  const double q = max_abs_z_quantile(vec.rho(), level, mc_draws, seed, &rep);
  return interval_set_from(vec.regime_ids, vec.psi_hats, vec.sigma_n(), vec.n(), level, q,
                           "simultaneous", rep);
}

ContrastResult contrast(const RegimeValueVector& vec, std::size_t i, std::size_t j, double level) {
  if (i >= vec.d() || j >= vec.d()) throw std::out_of_range("contrast: regime index out of range");
  ContrastResult r;
  r.i = i;
  r.j = j;
  const Eigen::Index ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
  r.estimate = vec.psi_hats[ii] - vec.psi_hats[jj];
  Eigen::VectorXd icd = vec.ic.col(ii) - vec.ic.col(jj);
  r.interval = wald_ci(r.estimate, icd, level);
  r.critical_value = normal_quantile(0.5 + level / 2.0);
  return r;
}

IntervalSet simultaneous_contrasts(const RegimeValueVector& vec,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                   double level, int mc_draws, std::uint64_t seed) {
  if (pairs.empty()) throw std::invalid_argument("simultaneous_contrasts: no pairs");
  RegimeValueVector diff;
  diff.psi_hats.resize(static_cast<Eigen::Index>(pairs.size()));
  diff.ic.resize(vec.ic.rows(), static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    auto [i, j] = pairs[k];
    if (i >= vec.d() || j >= vec.d())
      throw std::out_of_range("simultaneous_contrasts: regime index out of range");
    const Eigen::Index kk = static_cast<Eigen::Index>(k);
    diff.regime_ids.push_back(vec.regime_ids[i] + "-" + vec.regime_ids[j]);
    diff.psi_hats[kk] = vec.psi_hats[static_cast<Eigen::Index>(i)] -
                        vec.psi_hats[static_cast<Eigen::Index>(j)];
    diff.ic.col(kk) = vec.ic.col(static_cast<Eigen::Index>(i)) -
                      vec.ic.col(static_cast<Eigen::Index>(j));
  }
  return simultaneous_ci(diff, level, mc_draws, seed);
}

}  // namespace smartdtr
