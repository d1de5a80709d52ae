#include <algorithm>

#include "pecon/kernels.hpp"

// Reference kernels. Plain loops, one accumulator, left-to-right order;
// the SIMD variants are checked against these.

namespace pecon::kernels {
namespace {

double dot_scalar(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale_scalar(double alpha, std::span<double> x) {
  for (double& v : x) v *= alpha;
}

double sum_scalar(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc;
}

double max_scalar(std::span<const double> x) {
  double m = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) m = std::max(m, x[i]);
  return m;
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops{"scalar", dot_scalar, axpy_scalar, scale_scalar,
                       sum_scalar, max_scalar};
  return ops;
}

}  // namespace pecon::kernels
