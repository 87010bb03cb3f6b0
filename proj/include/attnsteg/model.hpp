#pragma once

// The attentional LSTM-CNN detector and its ablation variants.
//
// Full pipeline (BiLstmCnnAttCl):
//   embed -> Bi-LSTM -> attention -> conv banks -> per-bank average pooling
//   -> concat with pooled attended Bi-LSTM features -> batch norm
//   -> FC + ReLU -> dropout (train) -> output layer -> softmax.
//
// Variants drop components from the end of that list: BiLstmCnnAtt has no
// recurrent branch in the fused vector, BiLstmCnn also has no attention, and
// LstmCnn runs a single left-to-right LSTM.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attnsteg/batch.hpp"
#include "attnsteg/layers.hpp"
#include "attnsteg/rng.hpp"
#include "attnsteg/tensor.hpp"

namespace attnsteg {

enum class Variant : std::uint32_t {
  LstmCnn = 0,
  BiLstmCnn = 1,
  BiLstmCnnAtt = 2,
  BiLstmCnnAttCl = 3,
};

inline constexpr Variant kAllVariants[] = {Variant::LstmCnn, Variant::BiLstmCnn, Variant::BiLstmCnnAtt,
                                           Variant::BiLstmCnnAttCl};

/// "LSTM+CNN", "Bi-LSTM+CNN", "Bi-LSTM+CNN+ATT", "Bi-LSTM+CNN+ATT+CL".
std::string_view variant_name(Variant v);
/// Accepts the display name (case-insensitive), the index 0-3, or #0-#3.
Variant parse_variant(std::string_view text);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 256;
  std::size_t hidden = 200;
  std::vector<std::size_t> kernel_widths{3, 4, 5};
  std::size_t feature_maps = 128;
  std::size_t fc_dim = 100;
  std::size_t n_classes = 2;
  double dropout_rate = 0.5;
  Variant variant = Variant::BiLstmCnnAttCl;
  std::size_t max_seq_len = 30;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  bool bidirectional() const { return variant != Variant::LstmCnn; }
  bool has_attention() const { return variant == Variant::BiLstmCnnAtt || variant == Variant::BiLstmCnnAttCl; }
  bool fuses_recurrent() const { return variant == Variant::BiLstmCnnAttCl; }
  std::size_t recurrent_width() const { return bidirectional() ? 2 * hidden : hidden; }
  std::size_t fused_dim() const;
  /// Shortest usable sequence: the widest kernel.
  std::size_t min_seq_len() const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ModelParams {
  EmbeddingParams<T> embedding;
  LstmParams<T> lstm_fwd;
  std::optional<LstmParams<T>> lstm_bwd;
  std::optional<AttentionParams<T>> attention;
  ConvParams<T> conv;
  BatchNormParams<T> bn;
  DenseParams<T> fc;
  DenseParams<T> out;

  /// Every learnable tensor with a stable dotted name, in serialization order.
  std::vector<std::pair<std::string, Tensor<T>>> learnable() const;
  /// learnable() plus the batch-norm running statistics.
  std::vector<std::pair<std::string, Tensor<T>>> state() const;
  std::size_t parameter_count() const;
  void zero_grad();
  /// Independent copy of every tensor (values only, no lineage).
  ModelParams clone() const;

  template <typename U>
  ModelParams<U> cast() const;
};

template <typename T>
struct ForwardResult {
  Tensor<T> probs;  // [B, n_classes]
  Tensor<T> alpha;  // [B, T]
};

/// Names and shapes of ModelParams::state() for a config, in the same order,
/// without allocating any tensor.
std::vector<std::pair<std::string, Shape>> state_layout(const ModelConfig& config);

/// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases
/// except the LSTM forget-gate bias, which starts at 1.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, Rng& rng);

/// Throws NumericError naming the layer when an activation turns non-finite.
template <typename T>
ForwardResult<T> forward(const ModelConfig& config, ModelParams<T>& params, const EncodedBatch& batch, Mode mode,
                         Rng& rng);

/// Infer-mode forward over read-only parameters.
template <typename T>
ForwardResult<T> forward_infer(const ModelConfig& config, const ModelParams<T>& params, const EncodedBatch& batch);

struct Prediction {
  std::vector<int> labels;
  std::vector<float> probs;  // [B, n_classes]
  std::vector<float> alpha;  // [B, T]
  std::size_t n_classes = 0;
  std::size_t seq_len = 0;

  float prob(std::size_t b, std::size_t cls) const { return probs[b * n_classes + cls]; }
};

/// Argmax of the infer-mode probabilities; ties go to the lower class index.
int argmax_label(std::span<const float> probs);

Prediction predict(const ModelConfig& config, const ModelParams<float>& params, const EncodedBatch& batch);

}  // namespace attnsteg
