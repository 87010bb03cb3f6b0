#include "attnsteg/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "attnsteg/errors.hpp"

namespace attnsteg {
namespace {

// Extents beyond this are rejected before any allocation.
constexpr std::uint64_t kMaxExtent = 1u << 20;
constexpr std::size_t kConfigWords = 8;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (n > remaining()) {
      throw LoadError(LoadError::Kind::Truncated, std::string("model stream truncated while reading ") + what);
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto b = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

[[noreturn]] void inconsistent(const std::string& what) {
  throw LoadError(LoadError::Kind::Inconsistent, "model stream inconsistent: " + what);
}

std::size_t bounded(std::uint32_t v, const char* field) {
  if (v > kMaxExtent) inconsistent(std::string(field) + " = " + std::to_string(v) + " is implausibly large");
  return v;
}

}  // namespace

std::size_t model_header_size(const ModelConfig& config) {
  return 4 + 4 + kConfigWords * 4 + 8 + 4 + 4 * config.kernel_widths.size() + 4;
}

std::size_t tensor_record_size(std::string_view name, const Shape& shape) {
  return 4 + name.size() + 4 + 4 * shape.size() + 4 * shape_numel(shape);
}

std::vector<std::uint8_t> serialize_model(const ModelParams<float>& params, const ModelConfig& config) {
  config.validate();
  Writer w;
  w.raw(kModelMagic, 4);
  w.u32(kModelFormatVersion);
  for (std::size_t v : {config.vocab_size, config.embed_dim, config.hidden, config.feature_maps, config.fc_dim,
                        config.n_classes}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(config.variant));
  w.u32(static_cast<std::uint32_t>(config.max_seq_len));
  w.f64(config.dropout_rate);
  w.u32(static_cast<std::uint32_t>(config.kernel_widths.size()));
  for (std::size_t kw : config.kernel_widths) w.u32(static_cast<std::uint32_t>(kw));

  const auto tensors = params.state();
  const auto layout = state_layout(config);
  if (tensors.size() != layout.size()) {
    throw ContractError("serialize_model: parameters do not match the config's layout");
  }
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, t] = tensors[i];
    if (name != layout[i].first || t.shape() != layout[i].second) {
      throw ContractError("serialize_model: tensor " + name + " " + shape_to_string(t.shape()) +
                          " does not match config layout");
    }
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t extent : t.shape()) w.u32(static_cast<std::uint32_t>(extent));
    for (float v : t.values()) w.f32(v);
  }
  return w.take();
}

LoadedModel deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kModelMagic, 4) != 0) {
    throw LoadError(LoadError::Kind::BadMagic, "not a model file (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kModelFormatVersion) {
    throw LoadError(LoadError::Kind::VersionMismatch, "model format version " + std::to_string(version) +
                                                          " is not supported (expected " +
                                                          std::to_string(kModelFormatVersion) + ")");
  }

  ModelConfig config;
  config.vocab_size = bounded(r.u32("vocab_size"), "vocab_size");
  config.embed_dim = bounded(r.u32("embed_dim"), "embed_dim");
  config.hidden = bounded(r.u32("hidden"), "hidden");
  config.feature_maps = bounded(r.u32("feature_maps"), "feature_maps");
  config.fc_dim = bounded(r.u32("fc_dim"), "fc_dim");
  config.n_classes = bounded(r.u32("n_classes"), "n_classes");
  const std::uint32_t variant = r.u32("variant");
  if (variant > static_cast<std::uint32_t>(Variant::BiLstmCnnAttCl)) inconsistent("unknown variant " + std::to_string(variant));
  config.variant = static_cast<Variant>(variant);
  config.max_seq_len = bounded(r.u32("max_seq_len"), "max_seq_len");
  config.dropout_rate = r.f64("dropout_rate");
  const std::size_t n_kernels = bounded(r.u32("kernel count"), "kernel count");
  if (n_kernels * 4 > r.remaining()) r.take(n_kernels * 4, "kernel widths");
  config.kernel_widths.clear();
  for (std::size_t i = 0; i < n_kernels; ++i) config.kernel_widths.push_back(bounded(r.u32("kernel width"), "kernel width"));
  try {
    config.validate();
  } catch (const ConfigError& e) {
    inconsistent(e.what());
  }

  const auto layout = state_layout(config);
  const std::uint32_t n_tensors = r.u32("tensor count");
  if (n_tensors != layout.size()) {
    inconsistent("expected " + std::to_string(layout.size()) + " tensors, found " + std::to_string(n_tensors));
  }
  // Refuse to allocate for a stream that cannot possibly hold the payload.
  std::uint64_t needed = 0;
  for (const auto& [name, shape] : layout) {
    needed += tensor_record_size(name, shape);
    if (needed > r.remaining()) break;
  }
  if (needed > r.remaining()) {
    throw LoadError(LoadError::Kind::Truncated, "model stream truncated: tensors need " + std::to_string(needed) +
                                                    " bytes, " + std::to_string(r.remaining()) + " remain");
  }

  Rng unused(0);
  LoadedModel out{config, init_params<float>(config, unused)};
  auto tensors = out.params.state();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [expected_name, expected_shape] = layout[i];
    const std::uint32_t name_len = r.u32("tensor name length");
    if (name_len != expected_name.size()) inconsistent("tensor " + std::to_string(i) + " should be " + expected_name);
    auto name_bytes = r.take(name_len, "tensor name");
    if (std::memcmp(name_bytes.data(), expected_name.data(), name_len) != 0) {
      inconsistent("tensor " + std::to_string(i) + " should be " + expected_name);
    }
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank != expected_shape.size()) inconsistent("rank of " + expected_name);
    for (std::size_t a = 0; a < rank; ++a) {
      if (r.u32("tensor extent") != expected_shape[a]) inconsistent("shape of " + expected_name);
    }
    auto values = tensors[i].second.mutable_values();
    auto raw = r.take(values.size() * 4, "tensor values");
    for (std::size_t j = 0; j < values.size(); ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[j * 4 + b]) << (8 * b);
      values[j] = std::bit_cast<float>(bits);
    }
  }
  if (r.remaining() != 0) inconsistent(std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

void save_model(const std::filesystem::path& path, const ModelParams<float>& params, const ModelConfig& config) {
  const auto bytes = serialize_model(params, config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing model file " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace attnsteg
