#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace attnsteg {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;

inline constexpr int kCoverLabel = 0;
inline constexpr int kStegoLabel = 1;

/// Row-major token ids [batch_size, seq_len] with true lengths and labels.
/// Ids at or beyond lengths[b] are PAD.
struct EncodedBatch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> lengths;
  std::vector<int> labels;

  std::int32_t id(std::size_t b, std::size_t t) const { return ids[b * seq_len + t]; }
};

}  // namespace attnsteg
