#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "attnsteg/rng.hpp"
#include "attnsteg/tensor.hpp"

namespace testutil {

using attnsteg::Rng;
using attnsteg::Shape;
using attnsteg::Tensor;

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = true) {
  std::vector<T> v(attnsteg::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-scale, scale));
  return Tensor<T>::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

/// sum(out * weights) with fixed weights, so every output component matters.
template <typename T>
Tensor<T> probe_loss(const Tensor<T>& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<T> w(out.size());
  for (auto& x : w) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return attnsteg::sum(attnsteg::mul(out, Tensor<T>::from(out.shape(), std::move(w))));
}

/// ||a - b|| / max(||a||, ||b||, floor); the floor keeps gradients that are
/// zero in exact arithmetic from turning rounding noise into a ratio near 1.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 0.0) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(std::max(na, nb)), floor);
  return denom == 0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

/// Central differences of a double-valued function of the given leaves.
inline std::vector<std::vector<double>> numeric_grads(const std::vector<Tensor<double>>& leaves,
                                                      const std::function<double()>& f, double eps = 1e-6) {
  std::vector<std::vector<double>> out;
  for (auto leaf : leaves) {
    auto values = leaf.mutable_values();
    std::vector<double> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f();
      values[i] = saved - eps;
      const double down = f();
      values[i] = saved;
      g[i] = (up - down) / (2 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

template <typename T>
std::vector<double> grad_of(const Tensor<T>& t) {
  std::vector<double> g(t.size(), 0.0);
  auto src = t.grad();
  for (std::size_t i = 0; i < src.size(); ++i) g[i] = static_cast<double>(src[i]);
  return g;
}

template <typename T>
std::vector<double> values_of(const Tensor<T>& t) {
  std::vector<double> v;
  for (T x : t.values()) v.push_back(static_cast<double>(x));
  return v;
}

}  // namespace testutil
