#include <cstdlib>
#include <string>

#include "pecon/error.hpp"
#include "pecon/kernels.hpp"

namespace pecon::kernels {
namespace {

const Ops* pick_auto() {
#if defined(__x86_64__) || defined(_M_X64)
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
    if (const Ops* ops = avx2_ops()) return ops;
  }
#endif
  if (const Ops* ops = neon_ops()) return ops;
  return &scalar_ops();
}

const Ops* lookup(const std::string& name) {
  if (name == "auto") return pick_auto();
  if (name == "scalar") return &scalar_ops();
  if (name == "avx2") {
#if defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
      if (const Ops* ops = avx2_ops()) return ops;
    }
#endif
    fail(ErrorKind::config, "kernel variant 'avx2' is not available on this machine");
  }
  if (name == "neon") {
    if (const Ops* ops = neon_ops()) return ops;
    fail(ErrorKind::config, "kernel variant 'neon' is not available on this machine");
  }
  fail(ErrorKind::config, "unknown kernel variant '" + name +
                              "' (expected scalar|avx2|neon|auto)");
}

const Ops* g_active = nullptr;

}  // namespace

const Ops& active() {
  if (g_active == nullptr) {
    const char* env = std::getenv("PECON_KERNELS");
    g_active = env != nullptr ? lookup(env) : pick_auto();
  }
  return *g_active;
}

void select(const std::string& name) { g_active = lookup(name); }

}  // namespace pecon::kernels
