#pragma once

// Inner-loop kernels behind matmul, convolution and their gradients.
//
// Each kernel has a portable scalar reference and, where the build target
// allows, a vector variant (AVX2+FMA on x86-64, NEON on AArch64). The variant
// is chosen once at startup from CPU feature detection; the environment
// variable ATTNSTEG_ISA=scalar forces the reference path.
//
// Vector variants reassociate sums, so results agree with the scalar path to
// rounding, not bitwise. Within one process and one ISA every kernel is
// deterministic.

#include <cstddef>
#include <span>
#include <string_view>

namespace attnsteg::simd {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa active_isa();
/// Throws ContractError when the ISA is not available on this machine/build.
void set_active_isa(Isa isa);

/// Sum of a[i] * b[i]. Spans must have equal length.
float dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);

/// y[i] += alpha * x[i].
void axpy(float alpha, std::span<const float> x, std::span<float> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Restores the previously active ISA on scope exit.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : saved_(active_isa()) { set_active_isa(isa); }
  ~ScopedIsa() { set_active_isa(saved_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa saved_;
};

}  // namespace attnsteg::simd
