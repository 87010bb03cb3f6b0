#include "attnsteg/layers.hpp"

#include <algorithm>
#include <cmath>

#include "attnsteg/errors.hpp"
#include "attnsteg/simd/kernels.hpp"

namespace attnsteg {

using detail::make_result;
using detail::parent_grad;

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

void check_lengths(std::span<const std::size_t> lengths, std::size_t batch, std::size_t seq_len, const char* where) {
  require(lengths.size() == batch, std::string(where) + ": expected " + std::to_string(batch) + " lengths, got " +
                                       std::to_string(lengths.size()));
  for (std::size_t len : lengths) {
    if (len == 0) throw ContractError(std::string(where) + ": zero-length sequence");
    if (len > seq_len) {
      throw ContractError(std::string(where) + ": length " + std::to_string(len) + " exceeds T=" + std::to_string(seq_len));
    }
  }
}

template <typename T>
Tensor<T> time_step(const Tensor<T>& x, std::size_t t) {
  const std::size_t batch = x.dim(0), width = x.dim(2);
  return reshape(slice(x, 1, t, t + 1), {batch, width});
}

/// 1 where t < lengths[b], else 0; empty when every row is valid.
template <typename T>
Tensor<T> step_mask(std::span<const std::size_t> lengths, std::size_t t) {
  std::vector<T> mask(lengths.size());
  bool all_valid = true;
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    mask[b] = t < lengths[b] ? T(1) : T(0);
    all_valid = all_valid && t < lengths[b];
  }
  if (all_valid) return {};
  return Tensor<T>::from({lengths.size()}, std::move(mask));
}

template <typename T>
Tensor<T> stack_steps(const std::vector<Tensor<T>>& steps) {
  const std::size_t batch = steps.front().dim(0), width = steps.front().dim(1);
  std::vector<Tensor<T>> expanded;
  expanded.reserve(steps.size());
  for (const auto& s : steps) expanded.push_back(reshape(s, {batch, 1, width}));
  return concat(expanded, 1);
}

template <typename T>
void check_lstm_input(const LstmParams<T>& params, const Tensor<T>& x, std::span<const std::size_t> lengths,
                      const char* where) {
  require(x.rank() == 3, std::string(where) + ": input must be [B,T,d], got " + shape_to_string(x.shape()));
  require(x.dim(2) == params.input_dim(), std::string(where) + ": input width " + std::to_string(x.dim(2)) +
                                              " does not match LSTM input " + std::to_string(params.input_dim()));
  check_lengths(lengths, x.dim(0), x.dim(1), where);
}

}  // namespace

template <typename T>
Tensor<T> embed(const EmbeddingParams<T>& params, std::span<const std::int32_t> ids, std::size_t batch,
                std::size_t seq_len) {
  require(ids.size() == batch * seq_len, "embed: id count " + std::to_string(ids.size()) + " does not match [" +
                                             std::to_string(batch) + "," + std::to_string(seq_len) + "]");
  const std::size_t width = params.table.dim(1);
  return reshape(gather_rows(params.table, ids), {batch, seq_len, width});
}

template <typename T>
LstmState<T> lstm_cell_step(const LstmParams<T>& params, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                            const Tensor<T>& x_t) {
  const std::size_t k = params.hidden();
  const std::size_t d = params.input_dim();
  require(h_prev.rank() == 2 && h_prev.dim(1) == k && c_prev.shape() == h_prev.shape() && x_t.rank() == 2 &&
              x_t.dim(1) == d && x_t.dim(0) == h_prev.dim(0),
          "lstm_cell_step: shapes h=" + shape_to_string(h_prev.shape()) + " c=" + shape_to_string(c_prev.shape()) +
              " x=" + shape_to_string(x_t.shape()) + " do not fit k=" + std::to_string(k) + ", d=" + std::to_string(d));

  const Tensor<T> hx = concat<T>({h_prev, x_t}, 1);
  auto gate = [&](const Tensor<T>& w, const Tensor<T>& b, Activation act) {
    return activation(act, add(matmul_nt(hx, w), b));
  };
  const Tensor<T> i = gate(params.w_input, params.b_input, Activation::Sigmoid);
  const Tensor<T> f = gate(params.w_forget, params.b_forget, Activation::Sigmoid);
  const Tensor<T> q = gate(params.w_cell, params.b_cell, Activation::Tanh);
  const Tensor<T> o = gate(params.w_output, params.b_output, Activation::Sigmoid);
  Tensor<T> c = add(mul(f, c_prev), mul(i, q));
  Tensor<T> h = mul(o, tanh(c));
  return {std::move(h), std::move(c)};
}

template <typename T>
Tensor<T> lstm_forward(const LstmParams<T>& params, const Tensor<T>& x, std::span<const std::size_t> lengths) {
  check_lstm_input(params, x, lengths, "lstm_forward");
  const std::size_t batch = x.dim(0), steps = x.dim(1), k = params.hidden();
  LstmState<T> state{Tensor<T>::zeros({batch, k}), Tensor<T>::zeros({batch, k})};
  std::vector<Tensor<T>> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    state = lstm_cell_step(params, state.h, state.c, time_step(x, t));
    const Tensor<T> mask = step_mask<T>(lengths, t);
    outputs.push_back(mask ? scale_rows(state.h, mask) : state.h);
  }
  return stack_steps(outputs);
}

template <typename T>
Tensor<T> lstm_backward_direction(const LstmParams<T>& params, const Tensor<T>& x,
                                  std::span<const std::size_t> lengths) {
  check_lstm_input(params, x, lengths, "lstm_backward_direction");
  const std::size_t batch = x.dim(0), steps = x.dim(1), k = params.hidden();
  LstmState<T> state{Tensor<T>::zeros({batch, k}), Tensor<T>::zeros({batch, k})};
  std::vector<Tensor<T>> outputs(steps);
  for (std::size_t t = steps; t-- > 0;) {
    state = lstm_cell_step(params, state.h, state.c, time_step(x, t));
    // Rows still inside their padding keep a zero state, so each row's
    // recurrence effectively starts at its last valid token.
    if (const Tensor<T> mask = step_mask<T>(lengths, t)) {
      state.h = scale_rows(state.h, mask);
      state.c = scale_rows(state.c, mask);
    }
    outputs[t] = state.h;
  }
  return stack_steps(outputs);
}

template <typename T>
Tensor<T> bilstm_forward(const LstmParams<T>& fwd, const LstmParams<T>& bwd, const Tensor<T>& x,
                         std::span<const std::size_t> lengths) {
  return concat<T>({lstm_forward(fwd, x, lengths), lstm_backward_direction(bwd, x, lengths)}, 2);
}

template <typename T>
AttentionOutput<T> attention_forward(const AttentionParams<T>& params, const Tensor<T>& h,
                                     std::span<const std::size_t> lengths) {
  require(h.rank() == 3, "attention_forward: input must be [B,T,C], got " + shape_to_string(h.shape()));
  const std::size_t batch = h.dim(0), steps = h.dim(1), width = h.dim(2);
  require(params.w.size() == width && params.b.size() == 1,
          "attention_forward: parameters w=" + shape_to_string(params.w.shape()) + " b=" +
              shape_to_string(params.b.shape()) + " do not fit width " + std::to_string(width));
  check_lengths(lengths, batch, steps, "attention_forward");

  const Tensor<T> m = tanh(reshape(h, {batch * steps, width}));
  const Tensor<T> scores = add(matmul_nt(m, reshape(params.w, {1, width})), params.b);
  Tensor<T> alpha = masked_softmax(reshape(scores, {batch, steps}), lengths);
  Tensor<T> r = scale_rows(h, alpha);
  return {std::move(r), std::move(alpha)};
}

template <typename T>
Tensor<T> conv1d_bank(const ConvBank<T>& bank, const Tensor<T>& r) {
  require(r.rank() == 3, "conv1d: input must be [B,T,C], got " + shape_to_string(r.shape()));
  const std::size_t batch = r.dim(0), steps = r.dim(1), channels = r.dim(2);
  const std::size_t width = bank.width;
  require(bank.filters.rank() == 3 && bank.filters.dim(1) == width && bank.filters.dim(2) == channels,
          "conv1d: filters " + shape_to_string(bank.filters.shape()) + " do not fit width " + std::to_string(width) +
              " over " + std::to_string(channels) + " channels");
  const std::size_t maps = bank.filters.dim(0);
  require(bank.bias.size() == maps, "conv1d: bias " + shape_to_string(bank.bias.shape()) + " for " +
                                        std::to_string(maps) + " feature maps");
  if (steps < width) {
    throw SequenceTooShortError("conv1d: sequence length T=" + std::to_string(steps) + " is shorter than kernel width " +
                                std::to_string(width));
  }
  const std::size_t out_len = steps - width + 1;
  const std::size_t window = width * channels;

  auto rv = r.values();
  auto fv = bank.filters.values();
  auto bv = bank.bias.values();
  std::vector<T> out(batch * out_len * maps);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < out_len; ++j) {
      // A window of consecutive positions is contiguous in [B,T,C] layout.
      auto win = rv.subspan((b * steps + j) * channels, window);
      T* dst = out.data() + (b * out_len + j) * maps;
      for (std::size_t f = 0; f < maps; ++f) {
        const T pre = simd::dot(win, fv.subspan(f * window, window)) + bv[f];
        dst[f] = pre > T(0) ? pre : T(0);
      }
    }
  }
  return make_result<T>(
      {batch, out_len, maps}, std::move(out), {r, bank.filters, bank.bias}, "conv1d",
      [=](Node<T>& self) {
        auto rv = std::span<const T>(self.parents[0]->value);
        auto fv = std::span<const T>(self.parents[1]->value);
        auto gr = parent_grad(self, 0);
        auto gf = parent_grad(self, 1);
        auto gb = parent_grad(self, 2);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < out_len; ++j) {
            const std::size_t base = (b * out_len + j) * maps;
            const std::size_t win_off = (b * steps + j) * channels;
            for (std::size_t f = 0; f < maps; ++f) {
              if (self.value[base + f] <= T(0)) continue;
              const T g = self.grad[base + f];
              if (g == T(0)) continue;
              if (!gb.empty()) gb[f] += g;
              if (!gf.empty()) simd::axpy(g, rv.subspan(win_off, window), gf.subspan(f * window, window));
              if (!gr.empty()) simd::axpy(g, fv.subspan(f * window, window), gr.subspan(win_off, window));
            }
          }
        }
      });
}

template <typename T>
std::vector<Tensor<T>> conv1d_forward(const ConvParams<T>& params, const Tensor<T>& r) {
  std::vector<Tensor<T>> maps;
  maps.reserve(params.banks.size());
  for (const auto& bank : params.banks) maps.push_back(conv1d_bank(bank, r));
  return maps;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x, std::span<const std::size_t> valid_len) {
  require(x.rank() == 3, "global_avg_pool: input must be [B,L,C], got " + shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0), steps = x.dim(1), channels = x.dim(2);
  check_lengths(valid_len, batch, steps, "global_avg_pool");
  std::vector<std::size_t> lens(valid_len.begin(), valid_len.end());
  std::vector<T> out(batch * channels, T(0));
  auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    T* dst = out.data() + b * channels;
    for (std::size_t t = 0; t < lens[b]; ++t) {
      const T* src = xv.data() + (b * steps + t) * channels;
      for (std::size_t c = 0; c < channels; ++c) dst[c] += src[c];
    }
    const T inv = T(1) / static_cast<T>(lens[b]);
    for (std::size_t c = 0; c < channels; ++c) dst[c] *= inv;
  }
  return make_result<T>({batch, channels}, std::move(out), {x}, "global_avg_pool", [=](Node<T>& self) {
    auto gx = parent_grad(self, 0);
    if (gx.empty()) return;
    for (std::size_t b = 0; b < batch; ++b) {
      const T inv = T(1) / static_cast<T>(lens[b]);
      const T* g = self.grad.data() + b * channels;
      for (std::size_t t = 0; t < lens[b]; ++t) {
        T* dst = gx.data() + (b * steps + t) * channels;
        for (std::size_t c = 0; c < channels; ++c) dst[c] += g[c] * inv;
      }
    }
  });
}

template <typename T>
Tensor<T> dense(const DenseParams<T>& params, const Tensor<T>& x, Activation act) {
  require(x.rank() == 2 && params.weight.rank() == 2 && params.weight.dim(1) == x.dim(1) &&
              params.bias.size() == params.weight.dim(0),
          "dense: x=" + shape_to_string(x.shape()) + " W=" + shape_to_string(params.weight.shape()) +
              " b=" + shape_to_string(params.bias.shape()));
  Tensor<T> y = add(matmul_nt(x, params.weight), params.bias);
  return act == Activation::None ? y : activation(act, y);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  if (mode == Mode::Infer || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  for (T& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
  return mul(x, Tensor<T>::from(x.shape(), std::move(mask)));
}

namespace {

// Running statistics are updated through copies of the tensor handles; only
// the Mode::Train entry point, which holds the parameters mutably, asks for it.
template <typename T>
Tensor<T> batch_norm_impl(const BatchNormParams<T>& params, const Tensor<T>& x, Mode mode) {
  require(x.rank() == 2 && params.gamma.size() == x.dim(1) && params.beta.size() == x.dim(1) &&
              params.running_mean.size() == x.dim(1) && params.running_var.size() == x.dim(1),
          "batch_norm: input " + shape_to_string(x.shape()) + " does not fit parameters of width " +
              std::to_string(params.gamma.size()));
  const std::size_t batch = x.dim(0), width = x.dim(1);
  if (mode == Mode::Train && batch < 2) throw ContractError("batch_norm: train mode needs at least 2 rows");

  auto xv = x.values();
  std::vector<T> mu(width, T(0)), inv_std(width);
  if (mode == Mode::Train) {
    std::vector<T> var(width, T(0));
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < width; ++c) mu[c] += xv[b * width + c];
    for (T& m : mu) m /= static_cast<T>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < width; ++c) {
        const T d = xv[b * width + c] - mu[c];
        var[c] += d * d;
      }
    }
    for (T& v : var) v /= static_cast<T>(batch);
    Tensor<T> running_mean = params.running_mean;
    Tensor<T> running_var = params.running_var;
    auto rm = running_mean.mutable_values();
    auto rvar = running_var.mutable_values();
    // Running variance uses the unbiased batch estimate.
    const T unbias = static_cast<T>(batch) / static_cast<T>(batch - 1);
    for (std::size_t c = 0; c < width; ++c) {
      inv_std[c] = T(1) / std::sqrt(var[c] + params.epsilon);
      rm[c] = params.momentum * rm[c] + (T(1) - params.momentum) * mu[c];
      rvar[c] = params.momentum * rvar[c] + (T(1) - params.momentum) * var[c] * unbias;
    }
  } else {
    auto rm = params.running_mean.values();
    auto rvar = params.running_var.values();
    for (std::size_t c = 0; c < width; ++c) {
      mu[c] = rm[c];
      inv_std[c] = T(1) / std::sqrt(rvar[c] + params.epsilon);
    }
  }

  auto gamma = params.gamma.values();
  auto beta = params.beta.values();
  std::vector<T> xhat(x.size()), out(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = b * width + c;
      xhat[i] = (xv[i] - mu[c]) * inv_std[c];
      out[i] = gamma[c] * xhat[i] + beta[c];
    }
  }
  const bool batch_stats = mode == Mode::Train;
  return make_result<T>(
      x.shape(), std::move(out), {x, params.gamma, params.beta}, batch_stats ? "batch_norm_train" : "batch_norm_infer",
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto gamma = std::span<const T>(self.parents[1]->value);
        auto gx = parent_grad(self, 0);
        auto gg = parent_grad(self, 1);
        auto gbeta = parent_grad(self, 2);
        const auto& g = self.grad;
        std::vector<T> sum_g(width, T(0)), sum_g_xhat(width, T(0));
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < width; ++c) {
            const std::size_t i = b * width + c;
            sum_g[c] += g[i];
            sum_g_xhat[c] += g[i] * xhat[i];
          }
        }
        for (std::size_t c = 0; c < width; ++c) {
          if (!gg.empty()) gg[c] += sum_g_xhat[c];
          if (!gbeta.empty()) gbeta[c] += sum_g[c];
        }
        if (gx.empty()) return;
        const T n = static_cast<T>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < width; ++c) {
            const std::size_t i = b * width + c;
            if (batch_stats) {
              gx[i] += gamma[c] * inv_std[c] / n * (n * g[i] - sum_g[c] - xhat[i] * sum_g_xhat[c]);
            } else {
              gx[i] += g[i] * gamma[c] * inv_std[c];
            }
          }
        }
      });
}

}  // namespace

template <typename T>
Tensor<T> batch_norm(BatchNormParams<T>& params, const Tensor<T>& x, Mode mode) {
  return batch_norm_impl(params, x, mode);
}

template <typename T>
Tensor<T> batch_norm(const BatchNormParams<T>& params, const Tensor<T>& x) {
  return batch_norm_impl(params, x, Mode::Infer);
}

#define ATTNSTEG_INSTANTIATE_LAYERS(T)                                                                         \
  template Tensor<T> embed(const EmbeddingParams<T>&, std::span<const std::int32_t>, std::size_t, std::size_t); \
  template LstmState<T> lstm_cell_step(const LstmParams<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                       const Tensor<T>&);                                                      \
  template Tensor<T> lstm_forward(const LstmParams<T>&, const Tensor<T>&, std::span<const std::size_t>);       \
  template Tensor<T> lstm_backward_direction(const LstmParams<T>&, const Tensor<T>&,                           \
                                             std::span<const std::size_t>);                                    \
  template Tensor<T> bilstm_forward(const LstmParams<T>&, const LstmParams<T>&, const Tensor<T>&,              \
                                    std::span<const std::size_t>);                                             \
  template AttentionOutput<T> attention_forward(const AttentionParams<T>&, const Tensor<T>&,                   \
                                                std::span<const std::size_t>);                                \
  template Tensor<T> conv1d_bank(const ConvBank<T>&, const Tensor<T>&);                                        \
  template std::vector<Tensor<T>> conv1d_forward(const ConvParams<T>&, const Tensor<T>&);                      \
  template Tensor<T> global_avg_pool(const Tensor<T>&, std::span<const std::size_t>);                          \
  template Tensor<T> dense(const DenseParams<T>&, const Tensor<T>&, Activation);                               \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, Rng&);                                            \
  template Tensor<T> batch_norm(BatchNormParams<T>&, const Tensor<T>&, Mode);                               \
  template Tensor<T> batch_norm(const BatchNormParams<T>&, const Tensor<T>&);

ATTNSTEG_INSTANTIATE_LAYERS(float)
ATTNSTEG_INSTANTIATE_LAYERS(double)

#undef ATTNSTEG_INSTANTIATE_LAYERS

}  // namespace attnsteg
