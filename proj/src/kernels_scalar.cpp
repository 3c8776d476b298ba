#include "smartdtr/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace smartdtr::kernels {
namespace {

void expit_scalar(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    if (v >= 0.0) {
      const double e = std::exp(-v);
      y[i] = 1.0 / (1.0 + e);
    } else {
      const double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
}

void logit_scalar(const double* p, double* y, std::size_t n, double eps) {
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(p[i], eps, 1.0 - eps);
    y[i] = std::log(q / (1.0 - q));
  }
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double weighted_sumsq_scalar(const double* w, const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += w[i] * x[i] * x[i];
  return acc;
}

double max_abs_scalar(const double* x, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

}  // namespace

namespace detail {
const Ops& scalar_ops() {
  static const Ops ops{expit_scalar, logit_scalar,          dot_scalar,
                       sum_scalar,   weighted_sumsq_scalar, max_abs_scalar};
  return ops;
}
}  // namespace detail

}  // namespace smartdtr::kernels
