#include "pecon/kernels.hpp"

// AVX2+FMA kernels. This translation unit is compiled with -mavx2 -mfma on
// x86-64; dispatch stays in kernels_dispatch.cpp so nothing here runs on a
// CPU without the features.

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace pecon::kernels {
namespace {

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(std::span<const double> a, std::span<const double> b) {
  const double* pa = a.data();
  const double* pb = b.data();
  const std::size_t n = a.size();
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + i), _mm256_loadu_pd(pb + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + i + 4), _mm256_loadu_pd(pb + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + i), _mm256_loadu_pd(pb + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += pa[i] * pb[i];
  return acc;
}

void axpy_avx2(double alpha, std::span<const double> x, std::span<double> y) {
  const double* px = x.data();
  double* py = y.data();
  const std::size_t n = x.size();
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(py + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(px + i), vy);
    _mm256_storeu_pd(py + i, vy);
  }
  for (; i < n; ++i) py[i] += alpha * px[i];
}

void scale_avx2(double alpha, std::span<double> x) {
  double* px = x.data();
  const std::size_t n = x.size();
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(px + i, _mm256_mul_pd(va, _mm256_loadu_pd(px + i)));
  }
  for (; i < n; ++i) px[i] *= alpha;
}

double sum_avx2(std::span<const double> x) {
  const double* px = x.data();
  const std::size_t n = x.size();
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(px + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += px[i];
  return s;
}

double max_avx2(std::span<const double> x) {
  const double* px = x.data();
  const std::size_t n = x.size();
  std::size_t i = 0;
  double m = px[0];
  if (n >= 4) {
    __m256d vm = _mm256_loadu_pd(px);
    for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(px + i));
    __m128d lo = _mm256_castpd256_pd128(vm);
    __m128d hi = _mm256_extractf128_pd(vm, 1);
    lo = _mm_max_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    m = _mm_cvtsd_f64(_mm_max_sd(lo, shuf));
  }
  for (; i < n; ++i) m = px[i] > m ? px[i] : m;
  return m;
}

}  // namespace

const Ops* avx2_ops() {
  static const Ops ops{"avx2", dot_avx2, axpy_avx2, scale_avx2, sum_avx2,
                       max_avx2};
  return &ops;
}

}  // namespace pecon::kernels

#else

namespace pecon::kernels {
const Ops* avx2_ops() { return nullptr; }
}  // namespace pecon::kernels

#endif
