#include <algorithm>
#include <cmath>
#include <limits>

#include "attnsteg/errors.hpp"
#include "attnsteg/simd/kernels.hpp"
#include "attnsteg/tensor.hpp"

namespace attnsteg {

using detail::make_result;
using detail::parent_grad;

namespace {

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                       shape_to_string(b));
}

template <typename T>
std::span<const T> row(std::span<const T> data, std::size_t r, std::size_t width) {
  return data.subspan(r * width, width);
}

template <typename T>
std::span<T> row(std::span<T> data, std::size_t r, std::size_t width) {
  return data.subspan(r * width, width);
}

enum class BinaryOp { Add, Sub, Mul };

template <typename T>
Tensor<T> binary(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b, const char* name) {
  const bool same = a.shape() == b.shape();
  const bool bias = !same && b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.shape().back();
  if (!same && !bias) mismatch(name, a.shape(), b.shape());

  const std::size_t n = a.size();
  const std::size_t width = b.size();
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T y = bv[same ? i : i % width];
    switch (op) {
      case BinaryOp::Add: out[i] = av[i] + y; break;
      case BinaryOp::Sub: out[i] = av[i] - y; break;
      case BinaryOp::Mul: out[i] = av[i] * y; break;
    }
  }
  return make_result<T>(a.shape(), std::move(out), {a, b}, name, [op, same, width](Node<T>& self) {
    auto g = std::span<const T>(self.grad);
    auto ga = parent_grad(self, 0);
    auto gb = parent_grad(self, 1);
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t j = same ? i : i % width;
      switch (op) {
        case BinaryOp::Add:
          if (!ga.empty()) ga[i] += g[i];
          if (!gb.empty()) gb[j] += g[i];
          break;
        case BinaryOp::Sub:
          if (!ga.empty()) ga[i] += g[i];
          if (!gb.empty()) gb[j] -= g[i];
          break;
        case BinaryOp::Mul:
          if (!ga.empty()) ga[i] += g[i] * bv[j];
          if (!gb.empty()) gb[j] += g[i] * av[i];
          break;
      }
    }
  });
}

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
T clamp_exp_input(T x) {
  const T bound = static_cast<T>(kActivationClamp);
  return std::clamp(x, -bound, bound);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  std::vector<T> out(m * p, T(0));
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    auto out_row = row(std::span<T>(out), i, p);
    for (std::size_t k = 0; k < n; ++k) simd::axpy(av[i * n + k], row(bv, k, p), out_row);
  }
  return make_result<T>({m, p}, std::move(out), {a, b}, "matmul", [m, n, p](Node<T>& self) {
    auto g = std::span<const T>(self.grad);
    auto av = std::span<const T>(self.parents[0]->value);
    auto bv = std::span<const T>(self.parents[1]->value);
    auto ga = parent_grad(self, 0);
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < m; ++i) {
      auto g_row = row(g, i, p);
      for (std::size_t k = 0; k < n; ++k) {
        if (!ga.empty()) ga[i * n + k] += simd::dot(g_row, row(bv, k, p));
        if (!gb.empty()) simd::axpy(av[i * n + k], g_row, row(gb, k, p));
      }
    }
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) mismatch("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(0);
  std::vector<T> out(m * p);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) out[i * p + j] = simd::dot(row(av, i, n), row(bv, j, n));
  }
  return make_result<T>({m, p}, std::move(out), {a, b}, "matmul_nt", [m, n, p](Node<T>& self) {
    auto g = std::span<const T>(self.grad);
    auto av = std::span<const T>(self.parents[0]->value);
    auto bv = std::span<const T>(self.parents[1]->value);
    auto ga = parent_grad(self, 0);
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        const T gij = g[i * p + j];
        if (gij == T(0)) continue;
        if (!ga.empty()) simd::axpy(gij, row(bv, j, n), row(ga, i, n));
        if (!gb.empty()) simd::axpy(gij, row(av, i, n), row(gb, j, n));
      }
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinaryOp::Add, a, b, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinaryOp::Sub, a, b, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinaryOp::Mul, a, b, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (T& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), {a}, "scale", [factor](Node<T>& self) {
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() < 1) mismatch("scale_rows", x.shape(), s.shape());
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  if (s.size() != rows) mismatch("scale_rows", x.shape(), s.shape());
  std::vector<T> out(x.size());
  auto xv = x.values();
  auto sv = s.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = xv[r * width + c] * sv[r];
  }
  return make_result<T>(x.shape(), std::move(out), {x, s}, "scale_rows", [rows, width](Node<T>& self) {
    auto g = std::span<const T>(self.grad);
    auto xv = std::span<const T>(self.parents[0]->value);
    auto sv = std::span<const T>(self.parents[1]->value);
    auto gx = parent_grad(self, 0);
    auto gs = parent_grad(self, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!gx.empty()) simd::axpy(sv[r], row(g, r, width), row(gx, r, width));
      if (!gs.empty()) gs[r] += simd::dot(row(g, r, width), row(xv, r, width));
    }
  });
}

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  std::vector<T> out(x.values().begin(), x.values().end());
  const char* name = "identity";
  switch (kind) {
    case Activation::None:
      break;
    case Activation::Sigmoid:
      name = "sigmoid";
      for (T& v : out) v = T(1) / (T(1) + std::exp(-clamp_exp_input(v)));
      break;
    case Activation::Tanh:
      name = "tanh";
      for (T& v : out) v = std::tanh(clamp_exp_input(v));
      break;
    case Activation::Relu:
      name = "relu";
      for (T& v : out) v = v > T(0) ? v : T(0);
      break;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, name, [kind](Node<T>& self) {
    auto gx = parent_grad(self, 0);
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      switch (kind) {
        case Activation::None: gx[i] += g[i]; break;
        case Activation::Sigmoid: gx[i] += g[i] * y[i] * (T(1) - y[i]); break;
        case Activation::Tanh: gx[i] += g[i] * (T(1) - y[i] * y[i]); break;
        case Activation::Relu: gx[i] += y[i] > T(0) ? g[i] : T(0); break;
      }
    }
  });
}

namespace {

template <typename T>
void softmax_row(std::span<const T> in, std::span<T> out) {
  const T peak = *std::max_element(in.begin(), in.end());
  T total = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - peak);
    total += out[i];
  }
  for (T& v : out) v /= total;
}

template <typename T>
void softmax_row_backward(std::span<const T> y, std::span<const T> g, std::span<T> gx) {
  T inner = 0;
  for (std::size_t i = 0; i < y.size(); ++i) inner += g[i] * y[i];
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (g[i] - inner);
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) softmax_row(row(x.values(), r, width), row(std::span<T>(out), r, width));
  return make_result<T>(x.shape(), std::move(out), {x}, "softmax", [rows, width](Node<T>& self) {
    auto gx = parent_grad(self, 0);
    if (gx.empty()) return;
    auto y = std::span<const T>(self.value);
    auto g = std::span<const T>(self.grad);
    for (std::size_t r = 0; r < rows; ++r) softmax_row_backward(row(y, r, width), row(g, r, width), row(gx, r, width));
  });
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::size_t> lengths) {
  if (x.rank() != 2 || lengths.size() != x.dim(0)) {
    throw DimensionError("masked_softmax: expected [B,T] scores with B lengths, got " + shape_to_string(x.shape()) +
                         " and " + std::to_string(lengths.size()) + " lengths");
  }
  const std::size_t rows = x.dim(0), width = x.dim(1);
  for (std::size_t len : lengths) {
    if (len == 0 || len > width) {
      throw ContractError("masked_softmax: length " + std::to_string(len) + " outside [1," + std::to_string(width) + "]");
    }
  }
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  std::vector<T> out(x.size(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row(row(x.values(), r, width).first(lens[r]), row(std::span<T>(out), r, width).first(lens[r]));
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "masked_softmax", [lens, width](Node<T>& self) {
    auto gx = parent_grad(self, 0);
    if (gx.empty()) return;
    auto y = std::span<const T>(self.value);
    auto g = std::span<const T>(self.grad);
    for (std::size_t r = 0; r < lens.size(); ++r) {
      softmax_row_backward(row(y, r, width).first(lens[r]), row(g, r, width).first(lens[r]),
                           row(gx, r, width).first(lens[r]));
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_to_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& part : parts) {
    const Shape& s = part.shape();
    if (s.size() != first.size()) mismatch("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) mismatch("concat", first, s);
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit split = split_at(out_shape, axis);
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto src = parts[p].values();
    const std::size_t chunk = extents[p] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src.begin() + o * chunk, chunk, out.begin() + o * split.extent * split.inner + offset);
    }
    offset += chunk;
  }
  return make_result<T>(out_shape, std::move(out), parts, "concat", [extents, split](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      const std::size_t chunk = extents[p] * split.inner;
      auto gp = parent_grad(self, p);
      if (!gp.empty()) {
        for (std::size_t o = 0; o < split.outer; ++o) {
          const T* src = self.grad.data() + o * split.extent * split.inner + offset;
          for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += src[i];
        }
      }
      offset += chunk;
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for " + shape_to_string(x.shape()));
  }
  const AxisSplit split = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * split.inner;
  const std::size_t skip = begin * split.inner;
  std::vector<T> out(shape_numel(out_shape));
  auto src = x.values();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(src.begin() + o * split.extent * split.inner + skip, chunk, out.begin() + o * chunk);
  }
  return make_result<T>(out_shape, std::move(out), {x}, "slice", [split, chunk, skip](Node<T>& self) {
    auto gx = parent_grad(self, 0);
    if (gx.empty()) return;
    for (std::size_t o = 0; o < split.outer; ++o) {
      T* dst = gx.data() + o * split.extent * split.inner + skip;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += self.grad[o * chunk + i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) mismatch("reshape", x.shape(), shape);
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, "reshape", [](Node<T>& self) {
    auto gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  return make_result<T>({1}, {total}, {x}, "sum", [](Node<T>& self) {
    auto gx = parent_grad(self, 0);
    for (T& v : gx) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be rank 2, got " + shape_to_string(table.shape()));
  if (ids.empty()) throw DimensionError("gather_rows: no ids");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  std::vector<T> out(rows.size() * width);
  auto tv = table.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw OutOfVocabularyError("token id " + std::to_string(rows[i]) + " outside vocabulary of size " +
                                 std::to_string(vocab));
    }
    std::copy_n(tv.begin() + rows[i] * width, width, out.begin() + i * width);
  }
  return make_result<T>({rows.size(), width}, std::move(out), {table}, "gather_rows", [rows, width](Node<T>& self) {
    auto gt = parent_grad(self, 0);
    if (gt.empty()) return;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      T* dst = gt.data() + rows[i] * width;
      for (std::size_t c = 0; c < width; ++c) dst[c] += self.grad[i * width + c];
    }
  });
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  for (T v : x.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

#define ATTNSTEG_INSTANTIATE_OPS(T)                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                        \
  template Tensor<T> scale_rows(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> activation(Activation, const Tensor<T>&);                          \
  template Tensor<T> softmax(const Tensor<T>&);                                         \
  template Tensor<T> masked_softmax(const Tensor<T>&, std::span<const std::size_t>);    \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                  \
  template Tensor<T> sum(const Tensor<T>&);                                             \
  template Tensor<T> mean(const Tensor<T>&);                                            \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int32_t>);      \
  template bool all_finite(const Tensor<T>&);

ATTNSTEG_INSTANTIATE_OPS(float)
ATTNSTEG_INSTANTIATE_OPS(double)

#undef ATTNSTEG_INSTANTIATE_OPS

}  // namespace attnsteg
