#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace pecon::kernels {

// The hot inner loops of the whole pipeline. Every variant computes the
// same mathematical result; variants may differ in summation order, so
// cross-variant comparisons are tolerance-based, not bit-based. Within one
// process the active variant never changes, which keeps reruns bit-identical.
struct Ops {
  const char* name;
  double (*dot)(std::span<const double> a, std::span<const double> b);
  // y += alpha * x
  void (*axpy)(double alpha, std::span<const double> x, std::span<double> y);
  // x *= alpha
  void (*scale)(double alpha, std::span<double> x);
  double (*sum)(std::span<const double> x);
  // maximum element; precondition: x nonempty
  double (*max)(std::span<const double> x);
};

const Ops& scalar_ops();
const Ops* avx2_ops();  // null when the build or CPU lacks AVX2+FMA
const Ops* neon_ops();  // null off aarch64

// Active variant: picked once per process from CPU features; the
// PECON_KERNELS environment variable (scalar|avx2|neon|auto) overrides.
const Ops& active();

// Force a variant by name; throws on unknown or unavailable names.
// Intended for tests and benchmarking.
void select(const std::string& name);

}  // namespace pecon::kernels
