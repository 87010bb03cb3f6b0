#include "attnsteg/markov.hpp"

#include <algorithm>
#include <set>

#include "attnsteg/errors.hpp"

namespace attnsteg {
namespace {

void check_lengths(const MarkovModel& model, LengthRange lengths) {
  if (lengths.min < model.order() || lengths.min > lengths.max) {
    throw ConfigError("sentence length range [" + std::to_string(lengths.min) + ", " + std::to_string(lengths.max) +
                      "] must satisfy order <= min <= max (order " + std::to_string(model.order()) + ")");
  }
}

void check_bpw(int bpw) {
  if (bpw < 1 || bpw > 5) throw ConfigError("bpw must be in 1..5, got " + std::to_string(bpw));
}

template <typename Item>
std::size_t sample_by_count(const std::vector<Item>& items, auto count_of, Rng& rng) {
  std::uint64_t total = 0;
  for (const auto& it : items) total += count_of(it);
  std::uint64_t r = rng.below(total);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::uint64_t c = count_of(items[i]);
    if (r < c) return i;
    r -= c;
  }
  return items.size() - 1;
}

std::size_t draw_target(LengthRange lengths, Rng& rng) {
  return lengths.min + static_cast<std::size_t>(rng.below(lengths.max - lengths.min + 1));
}

const MarkovModel::Context& draw_start(const MarkovModel& model, Rng& rng) {
  const auto& starts = model.start_contexts();
  return starts[sample_by_count(starts, [](const auto& s) { return s.second; }, rng)].first;
}

Tokens to_tokens(const MarkovModel& model, const std::vector<MarkovModel::WordId>& ids) {
  Tokens out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(model.word(id));
  return out;
}

// Runs the retry loop shared by cover and stego generation. `step` picks the
// next word id for a candidate list.
template <typename Step, typename Restart>
std::vector<MarkovModel::WordId> generate_ids(const MarkovModel& model, LengthRange lengths, Rng& rng, Step step,
                                              Restart restart) {
  check_lengths(model, lengths);
  std::vector<MarkovModel::WordId> best;
  for (std::size_t attempt = 0; attempt < kGenerateRetries; ++attempt) {
    restart();
    const std::size_t target = draw_target(lengths, rng);
    std::vector<MarkovModel::WordId> ids = draw_start(model, rng);
    while (ids.size() < target) {
      const auto* cands = model.candidates(std::span(ids).last(model.order()));
      if (cands == nullptr) break;
      ids.push_back(step(*cands));
    }
    if (ids.size() >= lengths.min) return ids;
    if (ids.size() > best.size()) best = std::move(ids);
  }
  return best;
}

}  // namespace

MarkovModel MarkovModel::train(std::span<const Tokens> corpus, std::size_t order) {
  if (order == 0) throw ConfigError("Markov order must be at least 1");
  MarkovModel m;
  m.order_ = order;

  std::set<std::string> vocab;
  for (const auto& s : corpus) {
    if (s.size() >= order + 1) vocab.insert(s.begin(), s.end());
  }
  m.words_.assign(vocab.begin(), vocab.end());
  for (std::size_t i = 0; i < m.words_.size(); ++i) m.index_.emplace(m.words_[i], static_cast<WordId>(i));

  std::map<Context, std::map<WordId, std::uint64_t>> counts;
  std::map<Context, std::uint64_t> starts;
  for (const auto& s : corpus) {
    if (s.size() < order + 1) continue;
    std::vector<WordId> ids;
    for (const auto& w : s) ids.push_back(m.index_.at(w));
    ++starts[Context(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(order))];
    for (std::size_t i = order; i < ids.size(); ++i) {
      Context ctx(ids.begin() + static_cast<std::ptrdiff_t>(i - order), ids.begin() + static_cast<std::ptrdiff_t>(i));
      ++counts[ctx][ids[i]];
    }
  }
  if (counts.empty()) {
    throw ConfigError("corpus too small: no sentence has at least " + std::to_string(order + 1) + " tokens");
  }
  for (auto& [ctx, next] : counts) {
    std::vector<Candidate> ranked;
    for (auto [w, n] : next) ranked.push_back({w, n});
    // Ids follow lexicographic word order, so comparing ids breaks ties by word.
    std::stable_sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) {
      return a.count != b.count ? a.count > b.count : a.word < b.word;
    });
    m.table_.emplace(ctx, std::move(ranked));
  }
  m.starts_.assign(starts.begin(), starts.end());
  return m;
}

const std::vector<MarkovModel::Candidate>* MarkovModel::candidates(std::span<const WordId> context) const {
  if (context.size() != order_) return nullptr;
  auto it = table_.find(Context(context.begin(), context.end()));
  return it == table_.end() ? nullptr : &it->second;
}

std::optional<MarkovModel::WordId> MarkovModel::word_id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

BitStream::BitStream(Rng rng) : rng_(std::move(rng)) {}

BitStream::BitStream(std::vector<std::uint8_t> pattern) : bits_(std::move(pattern)) {
  if (bits_.empty()) throw ContractError("BitStream pattern must not be empty");
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::uint8_t BitStream::next() {
  if (!rng_) return bits_[pos_++ % bits_.size()];
  while (bits_.size() <= pos_) {
    const std::uint64_t word = rng_->next_u64();
    for (int i = 63; i >= 0; --i) bits_.push_back(static_cast<std::uint8_t>((word >> i) & 1u));
  }
  return bits_[pos_++];
}

void BitStream::seek(std::size_t pos) {
  while (pos_ < pos) next();
  pos_ = pos;
}

Tokens generate_cover(const MarkovModel& model, LengthRange lengths, Rng& rng) {
  auto step = [&](const std::vector<MarkovModel::Candidate>& cands) {
    return cands[sample_by_count(cands, [](const auto& c) { return c.count; }, rng)].word;
  };
  return to_tokens(model, generate_ids(model, lengths, rng, step, [] {}));
}

StegoSentence generate_stego(const MarkovModel& model, int bpw, BitStream& secret, LengthRange lengths, Rng& rng) {
  check_bpw(bpw);
  const std::size_t bins = std::size_t{1} << bpw;
  const std::size_t origin = secret.position();
  StegoSentence out;
  auto restart = [&] {
    secret.seek(origin);
    out.bits.clear();
  };
  auto step = [&](const std::vector<MarkovModel::Candidate>& cands) {
    if (cands.size() < bins) return cands.front().word;
    std::size_t index = 0;
    for (int i = 0; i < bpw; ++i) {
      const std::uint8_t bit = secret.next();
      out.bits.push_back(bit);
      index = (index << 1) | bit;
    }
    return cands[index].word;
  };
  const auto ids = generate_ids(model, lengths, rng, step, restart);
  out.tokens = to_tokens(model, ids);
  if (out.tokens.size() < lengths.min) {
    // Retries ran out; the longest attempt was not the last one.
    out.bits = extract_bits(model, bpw, out.tokens);
    secret.seek(origin + out.bits.size());
  }
  return out;
}

std::vector<std::uint8_t> extract_bits(const MarkovModel& model, int bpw, std::span<const std::string> tokens) {
  check_bpw(bpw);
  const std::size_t bins = std::size_t{1} << bpw;
  std::vector<MarkovModel::WordId> ids;
  for (const auto& t : tokens) {
    auto id = model.word_id(t);
    if (!id) throw ContractError("extract_bits: word '" + t + "' is not in the model");
    ids.push_back(*id);
  }
  std::vector<std::uint8_t> bits;
  for (std::size_t i = model.order(); i < ids.size(); ++i) {
    const auto* cands = model.candidates(std::span(ids).subspan(i - model.order(), model.order()));
    if (cands == nullptr) throw ContractError("extract_bits: unseen context before position " + std::to_string(i));
    if (cands->size() < bins) continue;
    std::size_t index = bins;
    for (std::size_t b = 0; b < bins; ++b) {
      if ((*cands)[b].word == ids[i]) index = b;
    }
    if (index == bins) throw ContractError("extract_bits: word at position " + std::to_string(i) + " is outside the bins");
    for (int b = bpw - 1; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((index >> b) & 1u));
  }
  return bits;
}

}  // namespace attnsteg
