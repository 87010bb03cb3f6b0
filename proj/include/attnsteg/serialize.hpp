#pragma once

// Binary model file.
//
// All integers are unsigned 32-bit little-endian, all tensor values are
// IEEE-754 binary32 little-endian, dropout_rate is binary64 little-endian.
//
//   magic          4 bytes  "ATSG"
//   version        u32      kModelFormatVersion
//   vocab_size, embed_dim, hidden, feature_maps, fc_dim, n_classes,
//   variant, max_seq_len                          8 x u32
//   dropout_rate   f64
//   n_kernels      u32, followed by n_kernels u32 widths
//   n_tensors      u32
//   per tensor, in ModelParams::state() order:
//     name_len u32, name bytes (ASCII), rank u32, rank x u32 extents,
//     product(extents) x f32 values
//
// The stream must end exactly after the last tensor.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "attnsteg/model.hpp"

namespace attnsteg {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr char kModelMagic[4] = {'A', 'T', 'S', 'G'};

struct LoadedModel {
  ModelConfig config;
  ModelParams<float> params;
};

std::vector<std::uint8_t> serialize_model(const ModelParams<float>& params, const ModelConfig& config);

/// Throws LoadError with kind BadMagic, VersionMismatch, Truncated or
/// Inconsistent. Never reads past the end of the input.
LoadedModel deserialize_model(std::span<const std::uint8_t> bytes);

/// Bytes before the first tensor record.
std::size_t model_header_size(const ModelConfig& config);
/// Bytes of one tensor record.
std::size_t tensor_record_size(std::string_view name, const Shape& shape);

void save_model(const std::filesystem::path& path, const ModelParams<float>& params, const ModelConfig& config);
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace attnsteg
