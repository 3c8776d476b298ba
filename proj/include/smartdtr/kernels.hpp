#pragma once

#include <cstddef>

// Data-parallel arithmetic kernels used in the estimation and simulation
// inner loops. A scalar reference implementation always exists; on x86 an
// AVX2 variant is selected at runtime when the CPU supports it. Both
// backends are equivalence-tested against each other.

namespace smartdtr::kernels {

enum class Backend { Scalar, Avx2 };

Backend active_backend();
bool avx2_available();
// Force a backend (tests); throws if the backend is unavailable on this CPU.
void set_backend(Backend b);

// y[i] = 1 / (1 + exp(-x[i]))
void expit(const double* x, double* y, std::size_t n);
// y[i] = log(p[i] / (1 - p[i])), p clipped into [eps, 1-eps]
void logit(const double* p, double* y, std::size_t n, double eps = 1e-12);
// sum_i a[i] * b[i]
double dot(const double* a, const double* b, std::size_t n);
// sum_i x[i]
double sum(const double* x, std::size_t n);
// sum_i w[i] * x[i] * x[i]
double weighted_sumsq(const double* w, const double* x, std::size_t n);
// max_i |x[i]| (0 for n == 0)
double max_abs(const double* x, std::size_t n);

namespace detail {
struct Ops {
  void (*expit)(const double*, double*, std::size_t);
  void (*logit)(const double*, double*, std::size_t, double);
  double (*dot)(const double*, const double*, std::size_t);
  double (*sum)(const double*, std::size_t);
  double (*weighted_sumsq)(const double*, const double*, std::size_t);
  double (*max_abs)(const double*, std::size_t);
};
const Ops& scalar_ops();
#ifdef SMARTDTR_HAVE_AVX2
const Ops& avx2_ops();
#endif
}  // namespace detail

}  // namespace smartdtr::kernels
