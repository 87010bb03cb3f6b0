#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "attnsteg/rng.hpp"
#include "attnsteg/text.hpp"

namespace attnsteg {

struct LengthRange {
  std::size_t min = 8;
  std::size_t max = 20;
};

/// Fixed-order word Markov chain. Read-only after training.
class MarkovModel {
 public:
  using WordId = std::uint32_t;
  using Context = std::vector<WordId>;

  struct Candidate {
    WordId word;
    std::uint64_t count;
  };

  /// Counts every (context -> next) occurrence. Sentences shorter than
  /// order + 1 tokens are skipped. Throws ConfigError when nothing is left.
  static MarkovModel train(std::span<const Tokens> corpus, std::size_t order = 2);

  std::size_t order() const noexcept { return order_; }
  std::size_t context_count() const noexcept { return table_.size(); }
  std::size_t word_count() const noexcept { return words_.size(); }

  /// Ranked by (count desc, word asc); nullptr for an unseen context.
  const std::vector<Candidate>* candidates(std::span<const WordId> context) const;
  const std::vector<std::pair<Context, std::uint64_t>>& start_contexts() const noexcept { return starts_; }
  const std::map<Context, std::vector<Candidate>>& table() const noexcept { return table_; }

  const std::string& word(WordId id) const { return words_.at(id); }
  std::optional<WordId> word_id(const std::string& word) const;

 private:
  std::size_t order_ = 2;
  std::vector<std::string> words_;  // sorted, so id order is word order
  std::unordered_map<std::string, WordId> index_;
  std::map<Context, std::vector<Candidate>> table_;
  std::vector<std::pair<Context, std::uint64_t>> starts_;
};

inline MarkovModel markov_train(std::span<const Tokens> corpus, std::size_t order = 2) {
  return MarkovModel::train(corpus, order);
}

/// Secret bit stream. Either drawn lazily from a seeded generator or a fixed
/// pattern repeated cyclically.
class BitStream {
 public:
  explicit BitStream(Rng rng);
  explicit BitStream(std::vector<std::uint8_t> pattern);

  std::uint8_t next();
  std::size_t position() const noexcept { return pos_; }
  /// Moves to any position; rewound bits are replayed identically.
  void seek(std::size_t pos);

 private:
  std::optional<Rng> rng_;
  std::vector<std::uint8_t> bits_;
  std::size_t pos_ = 0;
};

inline constexpr std::size_t kGenerateRetries = 100;

/// Samples a start context, then next words proportionally to counts until
/// the drawn target length or a dead end. Short sentences are redrawn up to
/// kGenerateRetries times; the longest attempt is returned after that.
Tokens generate_cover(const MarkovModel& model, LengthRange lengths, Rng& rng);

struct StegoSentence {
  Tokens tokens;
  std::vector<std::uint8_t> bits;  // consumed secret bits, in order

  std::size_t bits_embedded() const noexcept { return bits.size(); }
};

/// Bin embedding: where a context has at least 2^bpw candidates, bpw bits
/// (most significant first) index one of the top 2^bpw; otherwise the top
/// candidate is emitted and no bits are consumed. The target length and the
/// start context are drawn from rng exactly as generate_cover does.
StegoSentence generate_stego(const MarkovModel& model, int bpw, BitStream& secret, LengthRange lengths, Rng& rng);

/// Replays bin selection along a sentence and returns the embedded bits.
/// Throws ContractError if the sentence could not have come from the model.
std::vector<std::uint8_t> extract_bits(const MarkovModel& model, int bpw, std::span<const std::string> tokens);

}  // namespace attnsteg
