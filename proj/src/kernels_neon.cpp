#include "pecon/kernels.hpp"

// NEON kernels for aarch64 (float64x2). Compiled away elsewhere.

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

namespace pecon::kernels {
namespace {

double dot_neon(std::span<const double> a, std::span<const double> b) {
  const double* pa = a.data();
  const double* pb = b.data();
  const std::size_t n = a.size();
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(pa + i), vld1q_f64(pb + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(pa + i + 2), vld1q_f64(pb + i + 2));
  }
  for (; i + 2 <= n; i += 2) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(pa + i), vld1q_f64(pb + i));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += pa[i] * pb[i];
  return acc;
}

void axpy_neon(double alpha, std::span<const double> x, std::span<double> y) {
  const double* px = x.data();
  double* py = y.data();
  const std::size_t n = x.size();
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(py + i, vfmaq_f64(vld1q_f64(py + i), va, vld1q_f64(px + i)));
  }
  for (; i < n; ++i) py[i] += alpha * px[i];
}

void scale_neon(double alpha, std::span<double> x) {
  double* px = x.data();
  const std::size_t n = x.size();
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(px + i, vmulq_f64(va, vld1q_f64(px + i)));
  }
  for (; i < n; ++i) px[i] *= alpha;
}

double sum_neon(std::span<const double> x) {
  const double* px = x.data();
  const std::size_t n = x.size();
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(px + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += px[i];
  return s;
}

double max_neon(std::span<const double> x) {
  const double* px = x.data();
  const std::size_t n = x.size();
  std::size_t i = 0;
  double m = px[0];
  if (n >= 2) {
    float64x2_t vm = vld1q_f64(px);
    for (i = 2; i + 2 <= n; i += 2) vm = vmaxq_f64(vm, vld1q_f64(px + i));
    m = vmaxvq_f64(vm);
  }
  for (; i < n; ++i) m = px[i] > m ? px[i] : m;
  return m;
}

}  // namespace

const Ops* neon_ops() {
  static const Ops ops{"neon", dot_neon, axpy_neon, scale_neon, sum_neon,
                       max_neon};
  return &ops;
}

}  // namespace pecon::kernels

#else

namespace pecon::kernels {
const Ops* neon_ops() { return nullptr; }
}  // namespace pecon::kernels

#endif
