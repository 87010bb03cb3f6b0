#include "attnsteg/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "attnsteg/errors.hpp"

namespace attnsteg {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::LstmCnn:
      return "LSTM+CNN";
    case Variant::BiLstmCnn:
      return "Bi-LSTM+CNN";
    case Variant::BiLstmCnnAtt:
      return "Bi-LSTM+CNN+ATT";
    case Variant::BiLstmCnnAttCl:
      return "Bi-LSTM+CNN+ATT+CL";
  }
  return "unknown";
}

namespace {

std::string squash(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c == '-' || c == '_' || c == '+' || c == ' ' || c == '#') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

Variant parse_variant(std::string_view text) {
  const std::string key = squash(text);
  for (Variant v : kAllVariants) {
    if (key == squash(variant_name(v)) || key == std::to_string(static_cast<unsigned>(v))) return v;
  }
  throw ConfigError("unknown model variant '" + std::string(text) +
                    "' (expected LSTM+CNN, Bi-LSTM+CNN, Bi-LSTM+CNN+ATT, Bi-LSTM+CNN+ATT+CL or 0-3)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (vocab_size < 2) fail("vocab_size must be at least 2 (PAD and UNK), got " + std::to_string(vocab_size));
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (hidden == 0) fail("hidden must be positive");
  if (feature_maps == 0) fail("feature_maps must be positive");
  if (fc_dim == 0) fail("fc_dim must be positive");
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (kernel_widths.empty()) fail("kernel_widths must not be empty");
  for (std::size_t w : kernel_widths) {
    if (w == 0) fail("kernel widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0,1)");
  if (static_cast<std::uint32_t>(variant) > static_cast<std::uint32_t>(Variant::BiLstmCnnAttCl)) {
    fail("variant out of range");
  }
  if (max_seq_len < min_seq_len()) {
    fail("max_seq_len " + std::to_string(max_seq_len) + " is shorter than the widest kernel " +
         std::to_string(min_seq_len()));
  }
}

std::size_t ModelConfig::fused_dim() const {
  const std::size_t conv = kernel_widths.size() * feature_maps;
  return fuses_recurrent() ? recurrent_width() + conv : conv;
}

std::size_t ModelConfig::min_seq_len() const {
  return kernel_widths.empty() ? 1 : *std::max_element(kernel_widths.begin(), kernel_widths.end());
}

namespace {

template <typename T, typename U, typename F>
LstmParams<U> map_lstm(const LstmParams<T>& p, F&& f) {
  return {f(p.w_input), f(p.w_forget), f(p.w_cell), f(p.w_output),
          f(p.b_input), f(p.b_forget), f(p.b_cell), f(p.b_output)};
}

template <typename U, typename T, typename F>
ModelParams<U> map_params(const ModelParams<T>& p, F&& f) {
  ModelParams<U> out;
  out.embedding.table = f(p.embedding.table);
  out.lstm_fwd = map_lstm<T, U>(p.lstm_fwd, f);
  if (p.lstm_bwd) out.lstm_bwd = map_lstm<T, U>(*p.lstm_bwd, f);
  if (p.attention) out.attention = AttentionParams<U>{f(p.attention->w), f(p.attention->b)};
  for (const auto& bank : p.conv.banks) out.conv.banks.push_back({bank.width, f(bank.filters), f(bank.bias)});
  out.bn.gamma = f(p.bn.gamma);
  out.bn.beta = f(p.bn.beta);
  out.bn.running_mean = f(p.bn.running_mean);
  out.bn.running_var = f(p.bn.running_var);
  out.bn.momentum = static_cast<U>(p.bn.momentum);
  out.bn.epsilon = static_cast<U>(p.bn.epsilon);
  out.fc = {f(p.fc.weight), f(p.fc.bias)};
  out.out = {f(p.out.weight), f(p.out.bias)};
  return out;
}

template <typename T>
void push_lstm(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& prefix,
               const LstmParams<T>& p) {
  out.emplace_back(prefix + ".w_input", p.w_input);
  out.emplace_back(prefix + ".w_forget", p.w_forget);
  out.emplace_back(prefix + ".w_cell", p.w_cell);
  out.emplace_back(prefix + ".w_output", p.w_output);
  out.emplace_back(prefix + ".b_input", p.b_input);
  out.emplace_back(prefix + ".b_forget", p.b_forget);
  out.emplace_back(prefix + ".b_cell", p.b_cell);
  out.emplace_back(prefix + ".b_output", p.b_output);
}

}  // namespace

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::learnable() const {
  std::vector<std::pair<std::string, Tensor<T>>> list;
  list.emplace_back("embedding.table", embedding.table);
  push_lstm(list, "lstm_fwd", lstm_fwd);
  if (lstm_bwd) push_lstm(list, "lstm_bwd", *lstm_bwd);
  if (attention) {
    list.emplace_back("attention.w", attention->w);
    list.emplace_back("attention.b", attention->b);
  }
  for (std::size_t i = 0; i < conv.banks.size(); ++i) {
    const std::string prefix = "conv." + std::to_string(i);
    list.emplace_back(prefix + ".filters", conv.banks[i].filters);
    list.emplace_back(prefix + ".bias", conv.banks[i].bias);
  }
  list.emplace_back("bn.gamma", bn.gamma);
  list.emplace_back("bn.beta", bn.beta);
  list.emplace_back("fc.weight", fc.weight);
  list.emplace_back("fc.bias", fc.bias);
  list.emplace_back("out.weight", out.weight);
  list.emplace_back("out.bias", out.bias);
  return list;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::state() const {
  auto out = learnable();
  out.emplace_back("bn.running_mean", bn.running_mean);
  out.emplace_back("bn.running_var", bn.running_var);
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : learnable()) n += t.size();
  return n;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& [name, t] : learnable()) t.zero_grad();
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  return map_params<T>(*this, [](const Tensor<T>& t) { return t.detach(t.requires_grad()); });
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  return map_params<U>(*this, [](const Tensor<T>& t) {
    std::vector<U> values(t.values().begin(), t.values().end());
    return Tensor<U>::from(t.shape(), std::move(values), t.requires_grad());
  });
}

std::vector<std::pair<std::string, Shape>> state_layout(const ModelConfig& config) {
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t k = config.hidden, d = config.embed_dim, width = config.recurrent_width();
  out.emplace_back("embedding.table", Shape{config.vocab_size, d});
  auto lstm = [&](const std::string& prefix) {
    for (const char* w : {".w_input", ".w_forget", ".w_cell", ".w_output"}) out.emplace_back(prefix + w, Shape{k, k + d});
    for (const char* b : {".b_input", ".b_forget", ".b_cell", ".b_output"}) out.emplace_back(prefix + b, Shape{k});
  };
  lstm("lstm_fwd");
  if (config.bidirectional()) lstm("lstm_bwd");
  if (config.has_attention()) {
    out.emplace_back("attention.w", Shape{width});
    out.emplace_back("attention.b", Shape{1});
  }
  for (std::size_t i = 0; i < config.kernel_widths.size(); ++i) {
    const std::string prefix = "conv." + std::to_string(i);
    out.emplace_back(prefix + ".filters", Shape{config.feature_maps, config.kernel_widths[i], width});
    out.emplace_back(prefix + ".bias", Shape{config.feature_maps});
  }
  const std::size_t fused = config.fused_dim();
  out.emplace_back("bn.gamma", Shape{fused});
  out.emplace_back("bn.beta", Shape{fused});
  out.emplace_back("fc.weight", Shape{config.fc_dim, fused});
  out.emplace_back("fc.bias", Shape{config.fc_dim});
  out.emplace_back("out.weight", Shape{config.n_classes, config.fc_dim});
  out.emplace_back("out.bias", Shape{config.n_classes});
  out.emplace_back("bn.running_mean", Shape{fused});
  out.emplace_back("bn.running_var", Shape{fused});
  return out;
}

namespace {

template <typename T>
Tensor<T> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> values(shape_numel(shape));
  for (T& v : values) v = static_cast<T>(rng.uniform(-limit, limit));
  return Tensor<T>::from(std::move(shape), std::move(values), true);
}

template <typename T>
Tensor<T> constant(std::size_t n, T value, bool learnable = true) {
  return Tensor<T>::full({n}, value, learnable);
}

template <typename T>
LstmParams<T> init_lstm(std::size_t hidden, std::size_t input, Rng& rng) {
  const std::size_t cols = hidden + input;
  LstmParams<T> p;
  p.w_input = glorot<T>({hidden, cols}, cols, hidden, rng);
  p.w_forget = glorot<T>({hidden, cols}, cols, hidden, rng);
  p.w_cell = glorot<T>({hidden, cols}, cols, hidden, rng);
  p.w_output = glorot<T>({hidden, cols}, cols, hidden, rng);
  p.b_input = constant<T>(hidden, T(0));
  p.b_forget = constant<T>(hidden, T(1));
  p.b_cell = constant<T>(hidden, T(0));
  p.b_output = constant<T>(hidden, T(0));
  return p;
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams<T> p;
  p.embedding.table = glorot<T>({config.vocab_size, config.embed_dim}, config.vocab_size, config.embed_dim, rng);
  p.lstm_fwd = init_lstm<T>(config.hidden, config.embed_dim, rng);
  if (config.bidirectional()) p.lstm_bwd = init_lstm<T>(config.hidden, config.embed_dim, rng);
  const std::size_t width = config.recurrent_width();
  if (config.has_attention()) {
    p.attention = AttentionParams<T>{glorot<T>({width}, width, 1, rng), constant<T>(1, T(0))};
  }
  for (std::size_t kw : config.kernel_widths) {
    p.conv.banks.push_back({kw, glorot<T>({config.feature_maps, kw, width}, kw * width, config.feature_maps, rng),
                            constant<T>(config.feature_maps, T(0))});
  }
  const std::size_t fused = config.fused_dim();
  p.bn.gamma = constant<T>(fused, T(1));
  p.bn.beta = constant<T>(fused, T(0));
  p.bn.running_mean = constant<T>(fused, T(0), false);
  p.bn.running_var = constant<T>(fused, T(1), false);
  p.fc = {glorot<T>({config.fc_dim, fused}, fused, config.fc_dim, rng), constant<T>(config.fc_dim, T(0))};
  p.out = {glorot<T>({config.n_classes, config.fc_dim}, config.fc_dim, config.n_classes, rng),
           constant<T>(config.n_classes, T(0))};
  return p;
}

namespace {

template <typename T>
void check_finite(const Tensor<T>& t, const char* layer) {
  if (!all_finite(t)) throw NumericError(std::string("non-finite activations after ") + layer);
}

void check_batch(const ModelConfig& config, const EncodedBatch& batch) {
  if (batch.batch_size == 0) throw ContractError("forward: empty batch");
  if (batch.ids.size() != batch.batch_size * batch.seq_len || batch.lengths.size() != batch.batch_size) {
    throw DimensionError("forward: batch arrays do not match [" + std::to_string(batch.batch_size) + "," +
                         std::to_string(batch.seq_len) + "]");
  }
  const std::size_t min_len = config.min_seq_len();
  for (std::size_t len : batch.lengths) {
    if (len < min_len || len > batch.seq_len) {
      throw ContractError("forward: sequence length " + std::to_string(len) + " outside [" + std::to_string(min_len) +
                          "," + std::to_string(batch.seq_len) + "]");
    }
  }
}

template <typename T>
ForwardResult<T> run_forward(const ModelConfig& config, const ModelParams<T>& params, BatchNormParams<T>* train_bn,
                             const EncodedBatch& batch, Mode mode, Rng* rng) {
  check_batch(config, batch);
  const std::span<const std::size_t> lengths = batch.lengths;
  const std::size_t bsz = batch.batch_size, steps = batch.seq_len;

  const Tensor<T> x = embed(params.embedding, batch.ids, bsz, steps);
  check_finite(x, "embedding");

  const Tensor<T> h = config.bidirectional() ? bilstm_forward(params.lstm_fwd, *params.lstm_bwd, x, lengths)
                                             : lstm_forward(params.lstm_fwd, x, lengths);
  check_finite(h, "lstm");

  Tensor<T> r = h;
  Tensor<T> alpha;
  if (config.has_attention()) {
    auto att = attention_forward(*params.attention, h, lengths);
    r = std::move(att.r);
    alpha = std::move(att.alpha);
    check_finite(r, "attention");
  } else {
    std::vector<T> uniform(bsz * steps, T(0));
    for (std::size_t b = 0; b < bsz; ++b) {
      std::fill_n(uniform.begin() + b * steps, lengths[b], T(1) / static_cast<T>(lengths[b]));
    }
    alpha = Tensor<T>::from({bsz, steps}, std::move(uniform));
  }

  std::vector<Tensor<T>> features;
  if (config.fuses_recurrent()) features.push_back(global_avg_pool(r, lengths));
  std::vector<std::size_t> valid(bsz);
  for (const auto& bank : params.conv.banks) {
    const Tensor<T> map = conv1d_bank(bank, r);
    for (std::size_t b = 0; b < bsz; ++b) valid[b] = lengths[b] - bank.width + 1;
    features.push_back(global_avg_pool(map, valid));
  }
  const Tensor<T> z = features.size() == 1 ? features.front() : concat(features, 1);
  check_finite(z, "convolution");

  const Tensor<T> normed = train_bn ? batch_norm(*train_bn, z, mode) : batch_norm(params.bn, z);
  check_finite(normed, "batch_norm");

  Tensor<T> hidden = dense(params.fc, normed, Activation::Relu);
  if (mode == Mode::Train) hidden = dropout(hidden, config.dropout_rate, mode, *rng);
  check_finite(hidden, "fc");

  const Tensor<T> logits = dense(params.out, hidden, Activation::None);
  Tensor<T> probs = softmax(logits);
  check_finite(probs, "output");
  return {std::move(probs), std::move(alpha)};
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const ModelConfig& config, ModelParams<T>& params, const EncodedBatch& batch, Mode mode,
                         Rng& rng) {
  if (mode == Mode::Infer) return run_forward<T>(config, params, nullptr, batch, mode, &rng);
  return run_forward<T>(config, params, &params.bn, batch, mode, &rng);
}

template <typename T>
ForwardResult<T> forward_infer(const ModelConfig& config, const ModelParams<T>& params, const EncodedBatch& batch) {
  return run_forward<T>(config, params, nullptr, batch, Mode::Infer, nullptr);
}

int argmax_label(std::span<const float> probs) {
  int best = 0;
  for (std::size_t c = 1; c < probs.size(); ++c) {
    if (probs[c] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

Prediction predict(const ModelConfig& config, const ModelParams<float>& params, const EncodedBatch& batch) {
  NoGradGuard no_grad;
  const auto result = forward_infer(config, params, batch);
  Prediction out;
  out.n_classes = result.probs.dim(1);
  out.seq_len = batch.seq_len;
  out.probs.assign(result.probs.values().begin(), result.probs.values().end());
  out.alpha.assign(result.alpha.values().begin(), result.alpha.values().end());
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    out.labels.push_back(argmax_label(std::span<const float>(out.probs).subspan(b * out.n_classes, out.n_classes)));
  }
  return out;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;
template ModelParams<float> init_params(const ModelConfig&, Rng&);
template ModelParams<double> init_params(const ModelConfig&, Rng&);
template ForwardResult<float> forward(const ModelConfig&, ModelParams<float>&, const EncodedBatch&, Mode, Rng&);
template ForwardResult<double> forward(const ModelConfig&, ModelParams<double>&, const EncodedBatch&, Mode, Rng&);
template ForwardResult<float> forward_infer(const ModelConfig&, const ModelParams<float>&, const EncodedBatch&);
template ForwardResult<double> forward_infer(const ModelConfig&, const ModelParams<double>&, const EncodedBatch&);

}  // namespace attnsteg
