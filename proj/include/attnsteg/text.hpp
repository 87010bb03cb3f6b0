#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace attnsteg {

using Tokens = std::vector<std::string>;

/// Lowercases ASCII letters, splits on whitespace and detaches every ASCII
/// punctuation character as its own token. Bytes >= 0x80 pass through.
Tokens tokenize(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens);

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Word <-> id map. Id 0 is PAD, id 1 is UNK, the rest follow frequency order.
class Vocabulary {
 public:
  /// Words with count >= min_count, ranked by (count desc, word asc), capped
  /// so that size() <= max_size. Throws ConfigError on an empty corpus.
  static Vocabulary build(std::span<const Tokens> corpus, std::size_t max_size, std::size_t min_count = 1);
  /// words[0] and words[1] must be the PAD and UNK tokens.
  static Vocabulary from_words(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  /// kUnkId for unknown words.
  std::int32_t id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(std::int32_t id) const;
  const std::vector<std::string>& words() const { return words_; }

  /// One word per line in id order.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct EncodedSequence {
  std::vector<std::int32_t> ids;  // exactly max_len entries, PAD after length
  std::size_t length = 0;
  bool empty_input = false;  // the token list was empty
};

/// Maps unknown words to UNK, truncates to max_len and right-pads with PAD.
/// Sequences shorter than min_len are PAD-extended and reported as min_len.
EncodedSequence encode(const Vocabulary& vocab, std::span<const std::string> tokens, std::size_t max_len,
                       std::size_t min_len);

/// Words of the first `length` ids.
Tokens decode(const Vocabulary& vocab, std::span<const std::int32_t> ids, std::size_t length);

}  // namespace attnsteg
