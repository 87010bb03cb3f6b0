#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "attnsteg/markov.hpp"
#include "attnsteg/model.hpp"
#include "attnsteg/text.hpp"
#include "attnsteg/training.hpp"

namespace attnsteg {

struct StegoCorpusSpec {
  std::filesystem::path cover_path;
  int bpw = 3;
  std::size_t per_class = 2000;
  LengthRange lengths{8, 20};
  std::size_t order = 2;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
};

struct LabeledText {
  int label = 0;
  std::string text;  // space-joined tokens
};

struct DatasetSplits {
  std::vector<LabeledText> train, val, test;
  std::uint64_t stego_bits = 0;
  std::uint64_t stego_words = 0;

  double bits_per_word() const { return stego_words ? double(stego_bits) / double(stego_words) : 0.0; }
};

/// Sizes of the 70/10/20 split of n items per class.
struct SplitSizes {
  std::size_t train, val, test;
};
SplitSizes split_sizes(std::size_t n);

/// One sentence per line, tokenized; blank lines skipped. Throws DataError.
std::vector<Tokens> read_cover_corpus(const std::filesystem::path& path);

/// Trains the Markov model on the cover corpus and generates N cover plus N
/// stego sentences, split per class so every split is exactly balanced.
/// Each sentence draws from its own substream, so `threads` never changes
/// the output.
DatasetSplits build_dataset(const StegoCorpusSpec& spec, std::size_t threads = 1);
DatasetSplits build_dataset(const StegoCorpusSpec& spec, const MarkovModel& model, std::size_t threads = 1);

/// Writes train.tsv, val.tsv, test.tsv and meta into out_dir.
void write_dataset(const DatasetSplits& splits, const StegoCorpusSpec& spec, const std::filesystem::path& out_dir);

DatasetSplits make_dataset(const StegoCorpusSpec& spec, const std::filesystem::path& out_dir, std::size_t threads = 1);

/// Parses `label<TAB>text` lines. Throws DataError naming path and line.
std::vector<LabeledText> read_dataset_file(const std::filesystem::path& path);

/// Vocabulary over the tokenized texts of the rows.
Vocabulary build_vocab(std::span<const LabeledText> rows, std::size_t max_size, std::size_t min_count = 1);

/// Tokenizes and encodes rows for the model: truncated to max_seq_len and
/// padded up to the widest kernel. `empty_inputs`, when given, receives the
/// number of rows whose text had no tokens.
std::vector<EncodedExample> encode_rows(const Vocabulary& vocab, std::span<const LabeledText> rows,
                                        const ModelConfig& config, std::size_t* empty_inputs = nullptr);

}  // namespace attnsteg
