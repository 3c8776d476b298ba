#include "smartdtr/kernels.hpp"

#include <stdexcept>

namespace smartdtr::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(SMARTDTR_HAVE_AVX2) && defined(__GNUC__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

struct State {
  Backend backend;
  const detail::Ops* ops;
  State() {
#ifdef SMARTDTR_HAVE_AVX2
    if (cpu_has_avx2()) {
      backend = Backend::Avx2;
      ops = &detail::avx2_ops();
      return;
    }
#endif
    backend = Backend::Scalar;
    ops = &detail::scalar_ops();
  }
};

State& state() {
  static State s;
  return s;
}

}  // namespace

Backend active_backend() { return state().backend; }

bool avx2_available() { return cpu_has_avx2(); }

void set_backend(Backend b) {
  if (b == Backend::Avx2) {
#ifdef SMARTDTR_HAVE_AVX2
    if (!cpu_has_avx2()) throw std::runtime_error("AVX2 not supported on this CPU");
    state().backend = Backend::Avx2;
    state().ops = &detail::avx2_ops();
    return;
#else
    throw std::runtime_error("AVX2 backend not compiled in");
#endif
  }
  state().backend = Backend::Scalar;
  state().ops = &detail::scalar_ops();
}

void expit(const double* x, double* y, std::size_t n) { state().ops->expit(x, y, n); }
void logit(const double* p, double* y, std::size_t n, double eps) {
  state().ops->logit(p, y, n, eps);
}
double dot(const double* a, const double* b, std::size_t n) { return state().ops->dot(a, b, n); }
double sum(const double* x, std::size_t n) { return state().ops->sum(x, n); }
double weighted_sumsq(const double* w, const double* x, std::size_t n) {
  return state().ops->weighted_sumsq(w, x, n);
}
double max_abs(const double* x, std::size_t n) { return state().ops->max_abs(x, n); }

}  // namespace smartdtr::kernels
