#include <algorithm>
#include <fstream>
#include <map>

#include "attnsteg/batch.hpp"
#include "attnsteg/errors.hpp"
#include "attnsteg/text.hpp"

namespace attnsteg {

Vocabulary Vocabulary::build(std::span<const Tokens> corpus, std::size_t max_size, std::size_t min_count) {
  if (max_size < 2) throw ConfigError("vocabulary max_size must be at least 2");
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus) {
    for (const auto& w : sentence) ++counts[w];
  }
  if (counts.empty()) throw ConfigError("cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, n] : counts) {
    if (n >= min_count) ranked.emplace_back(w, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > max_size - 2) ranked.resize(max_size - 2);

  std::vector<std::string> words{std::string(kPadToken), std::string(kUnkToken)};
  for (auto& [w, n] : ranked) words.push_back(std::move(w));
  return from_words(std::move(words));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  if (words.size() < 2 || words[0] != kPadToken || words[1] != kUnkToken) {
    throw ConfigError("vocabulary must start with " + std::string(kPadToken) + " and " + std::string(kUnkToken));
  }
  Vocabulary v;
  v.words_ = std::move(words);
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    if (!v.index_.emplace(v.words_[i], static_cast<std::int32_t>(i)).second) {
      throw ConfigError("duplicate vocabulary entry '" + v.words_[i] + "'");
    }
  }
  return v;
}

std::int32_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }

const std::string& Vocabulary::word(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw OutOfVocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                               std::to_string(words_.size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  for (const auto& w : words_) out << w << '\n';
  if (!out) throw IoError("failed writing vocabulary file " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary file " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) words.push_back(line);
  try {
    return from_words(std::move(words));
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

EncodedSequence encode(const Vocabulary& vocab, std::span<const std::string> tokens, std::size_t max_len,
                       std::size_t min_len) {
  if (min_len == 0 || max_len < min_len) {
    throw ContractError("encode: need 1 <= min_len <= max_len, got " + std::to_string(min_len) + " and " +
                        std::to_string(max_len));
  }
  EncodedSequence out;
  out.ids.assign(max_len, kPadId);
  out.empty_input = tokens.empty();
  const std::size_t kept = std::min(tokens.size(), max_len);
  for (std::size_t i = 0; i < kept; ++i) out.ids[i] = vocab.id(tokens[i]);
  out.length = std::max(kept, min_len);
  return out;
}

Tokens decode(const Vocabulary& vocab, std::span<const std::int32_t> ids, std::size_t length) {
  Tokens out;
  for (std::size_t i = 0; i < std::min(length, ids.size()); ++i) out.push_back(vocab.word(ids[i]));
  return out;
}

}  // namespace attnsteg
