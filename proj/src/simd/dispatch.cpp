#include <atomic>
#include <cstdlib>
#include <string>

#include "attnsteg/errors.hpp"
#include "attnsteg/simd/kernels.hpp"
#include "kernel_table.hpp"

namespace attnsteg::simd {
namespace {

bool cpu_has_avx2() {
#if defined(ATTNSTEG_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const detail::KernelTable* table_for(Isa isa) {
  switch (isa) {
#if defined(ATTNSTEG_HAVE_AVX2)
    case Isa::Avx2:
      return &detail::avx2_kernels;
#endif
#if defined(ATTNSTEG_HAVE_NEON)
    case Isa::Neon:
      return &detail::neon_kernels;
#endif
    default:
      return &detail::scalar_kernels;
  }
}

Isa detect_best() {
  if (const char* env = std::getenv("ATTNSTEG_ISA"); env && std::string(env) == "scalar") {
    return Isa::Scalar;
  }
  if (isa_supported(Isa::Avx2)) return Isa::Avx2;
  if (isa_supported(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

struct State {
  std::atomic<Isa> isa;
  std::atomic<const detail::KernelTable*> table;
  State() {
    Isa best = detect_best();
    isa.store(best);
    table.store(table_for(best));
  }
};

State& state() {
  static State s;
  return s;
}

const detail::KernelTable& kernels() { return *state().table.load(std::memory_order_relaxed); }

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                         std::to_string(b));
  }
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
    case Isa::Neon:
      return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
      return cpu_has_avx2();
    case Isa::Neon:
#if defined(ATTNSTEG_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return state().isa.load(); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw ContractError("instruction set not available: " + std::string(isa_name(isa)));
  }
  state().isa.store(isa);
  state().table.store(table_for(isa));
}

float dot(std::span<const float> a, std::span<const float> b) {
  check_lengths(a.size(), b.size(), "dot");
  return kernels().dot_f32(a.data(), b.data(), a.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_lengths(a.size(), b.size(), "dot");
  return kernels().dot_f64(a.data(), b.data(), a.size());
}

void axpy(float alpha, std::span<const float> x, std::span<float> y) {
  check_lengths(x.size(), y.size(), "axpy");
  kernels().axpy_f32(alpha, x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_lengths(x.size(), y.size(), "axpy");
  kernels().axpy_f64(alpha, x.data(), y.data(), x.size());
}

}  // namespace attnsteg::simd
