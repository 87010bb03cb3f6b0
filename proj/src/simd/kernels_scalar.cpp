#include "kernel_table.hpp"

namespace attnsteg::simd::detail {
namespace {

template <typename T>
T dot_ref(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy_ref(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable scalar_kernels = {
    &dot_ref<float>,
    &dot_ref<double>,
    &axpy_ref<float>,
    &axpy_ref<double>,
};

}  // namespace attnsteg::simd::detail
