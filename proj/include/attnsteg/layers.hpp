#pragma once

// Neural building blocks as functions over Tensors and parameter records.
//
// Shapes use B for batch, T for sequence length, d for embedding width,
// k for LSTM hidden width and F for convolution feature maps. Sequences carry
// their true lengths; positions at or beyond a length are padding and are
// masked wherever they could leak into valid outputs.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "attnsteg/batch.hpp"
#include "attnsteg/rng.hpp"
#include "attnsteg/tensor.hpp"

namespace attnsteg {

enum class Mode { Train, Infer };

template <typename T>
struct EmbeddingParams {
  Tensor<T> table;  // [V, d], row 0 is PAD
};

/// One LSTM direction. Every weight multiplies the concatenation [h_{t-1}, x_t].
template <typename T>
struct LstmParams {
  Tensor<T> w_input, w_forget, w_cell, w_output;  // [k, k + d]
  Tensor<T> b_input, b_forget, b_cell, b_output;  // [k]

  std::size_t hidden() const { return w_input.dim(0); }
  std::size_t input_dim() const { return w_input.dim(1) - w_input.dim(0); }
};

template <typename T>
struct AttentionParams {
  Tensor<T> w;  // [2k]
  Tensor<T> b;  // [1]
};

template <typename T>
struct ConvBank {
  std::size_t width = 0;  // kernel width in tokens
  Tensor<T> filters;      // [F, width, C]
  Tensor<T> bias;         // [F]
};

template <typename T>
struct ConvParams {
  std::vector<ConvBank<T>> banks;
};

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma, beta;                 // learnable, [W]
  Tensor<T> running_mean, running_var;   // statistics, [W]
  T momentum = T(0.9);
  T epsilon = T(1e-5);
};

template <typename T>
struct DenseParams {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct LstmState {
  Tensor<T> h;  // [B, k]
  Tensor<T> c;  // [B, k]
};

template <typename T>
struct AttentionOutput {
  Tensor<T> r;      // [B, T, 2k], position-wise rescaled inputs
  Tensor<T> alpha;  // [B, T], zero at padding
};

/// Row lookup: ids [B, T] -> [B, T, d].
template <typename T>
Tensor<T> embed(const EmbeddingParams<T>& params, std::span<const std::int32_t> ids, std::size_t batch,
                std::size_t seq_len);

template <typename T>
LstmState<T> lstm_cell_step(const LstmParams<T>& params, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                            const Tensor<T>& x_t);

/// Left-to-right LSTM from a zero state; outputs at padding are zero.
template <typename T>
Tensor<T> lstm_forward(const LstmParams<T>& params, const Tensor<T>& x, std::span<const std::size_t> lengths);

/// Right-to-left LSTM over each sequence's valid prefix, starting at its last
/// valid token from a zero state; outputs at padding are zero.
template <typename T>
Tensor<T> lstm_backward_direction(const LstmParams<T>& params, const Tensor<T>& x,
                                  std::span<const std::size_t> lengths);

/// [forward; backward] per position: [B, T, 2k].
template <typename T>
Tensor<T> bilstm_forward(const LstmParams<T>& fwd, const LstmParams<T>& bwd, const Tensor<T>& x,
                         std::span<const std::size_t> lengths);

/// Scores tanh(h_i) . w + b, softmax over valid positions, r_i = alpha_i h_i.
template <typename T>
AttentionOutput<T> attention_forward(const AttentionParams<T>& params, const Tensor<T>& h,
                                     std::span<const std::size_t> lengths);

/// Valid 1-D convolution plus ReLU for one bank: [B, T, C] -> [B, T-width+1, F].
template <typename T>
Tensor<T> conv1d_bank(const ConvBank<T>& bank, const Tensor<T>& r);

template <typename T>
std::vector<Tensor<T>> conv1d_forward(const ConvParams<T>& params, const Tensor<T>& r);

/// Per-channel mean over the first valid_len[b] positions: [B, L, C] -> [B, C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x, std::span<const std::size_t> valid_len);

template <typename T>
Tensor<T> dense(const DenseParams<T>& params, const Tensor<T>& x, Activation act);

/// Inverted dropout in train mode; identity in infer mode.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng);

/// Batch normalization over [B, W]. Train mode updates the running statistics.
template <typename T>
Tensor<T> batch_norm(BatchNormParams<T>& params, const Tensor<T>& x, Mode mode);

/// Infer-mode batch normalization with the running statistics.
template <typename T>
Tensor<T> batch_norm(const BatchNormParams<T>& params, const Tensor<T>& x);

}  // namespace attnsteg
