#pragma once

#include <cstddef>

namespace attnsteg::simd::detail {

struct KernelTable {
  float (*dot_f32)(const float*, const float*, std::size_t);
  double (*dot_f64)(const double*, const double*, std::size_t);
  void (*axpy_f32)(float, const float*, float*, std::size_t);
  void (*axpy_f64)(double, const double*, double*, std::size_t);
};

extern const KernelTable scalar_kernels;
#if defined(ATTNSTEG_HAVE_AVX2)
extern const KernelTable avx2_kernels;
#endif
#if defined(ATTNSTEG_HAVE_NEON)
extern const KernelTable neon_kernels;
#endif

}  // namespace attnsteg::simd::detail
