#include "attnsteg/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "attnsteg/batch.hpp"
#include "attnsteg/errors.hpp"

namespace attnsteg {
namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void write_split(const std::filesystem::path& path, const std::vector<LabeledText>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : rows) out << r.label << '\t' << r.text << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void StegoCorpusSpec::validate() const {
  if (bpw < 1 || bpw > 5) throw ConfigError("bpw must be in 1..5, got " + std::to_string(bpw));
  if (per_class < 10) throw ConfigError("per_class must be at least 10, got " + std::to_string(per_class));
  if (order < 1) throw ConfigError("order must be at least 1");
  if (lengths.min < order || lengths.min > lengths.max) {
    throw ConfigError("sentence length range must satisfy order <= min <= max");
  }
}

SplitSizes split_sizes(std::size_t n) {
  const std::size_t train = n * 7 / 10;
  const std::size_t val = n / 10;
  return {train, val, n - train - val};
}

std::vector<Tokens> read_cover_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read cover corpus " + path.string());
  std::vector<Tokens> out;
  std::string line;
  while (std::getline(in, line)) {
    auto tokens = tokenize(line);
    if (!tokens.empty()) out.push_back(std::move(tokens));
  }
  if (out.empty()) throw DataError("cover corpus " + path.string() + " has no sentences");
  return out;
}

DatasetSplits build_dataset(const StegoCorpusSpec& spec, std::size_t threads) {
  spec.validate();
  const auto corpus = read_cover_corpus(spec.cover_path);
  try {
    return build_dataset(spec, MarkovModel::train(corpus, spec.order), threads);
  } catch (const DataError&) {
    throw;
  } catch (const ConfigError& e) {
    throw DataError(spec.cover_path.string() + ": " + e.what());
  }
}

DatasetSplits build_dataset(const StegoCorpusSpec& spec, const MarkovModel& model, std::size_t threads) {
  spec.validate();
  const std::size_t n = spec.per_class;
  const Rng root(spec.seed);
  const Rng cover_root = root.substream("cover");
  const Rng stego_root = root.substream("stego");
  const Rng secret_root = root.substream("secret");

  std::vector<Tokens> covers(n);
  std::vector<StegoSentence> stegos(n);
  parallel_for(2 * n, threads, [&](std::size_t job) {
    if (job < n) {
      Rng rng = cover_root.substream(job);
      covers[job] = generate_cover(model, spec.lengths, rng);
    } else {
      const std::size_t i = job - n;
      Rng rng = stego_root.substream(i);
      BitStream secret(secret_root.substream(i));
      stegos[i] = generate_stego(model, spec.bpw, secret, spec.lengths, rng);
    }
  });

  DatasetSplits out;
  for (const auto& s : stegos) {
    out.stego_bits += s.bits_embedded();
    out.stego_words += s.tokens.size();
  }

  const SplitSizes sizes = split_sizes(n);
  Rng split_rng = root.substream("split");
  auto distribute = [&](std::vector<LabeledText> rows) {
    split_rng.shuffle(rows);
    auto at = rows.begin();
    out.train.insert(out.train.end(), at, at + static_cast<std::ptrdiff_t>(sizes.train));
    at += static_cast<std::ptrdiff_t>(sizes.train);
    out.val.insert(out.val.end(), at, at + static_cast<std::ptrdiff_t>(sizes.val));
    at += static_cast<std::ptrdiff_t>(sizes.val);
    out.test.insert(out.test.end(), at, rows.end());
  };
  std::vector<LabeledText> cover_rows, stego_rows;
  for (const auto& c : covers) cover_rows.push_back({kCoverLabel, join_tokens(c)});
  for (const auto& s : stegos) stego_rows.push_back({kStegoLabel, join_tokens(s.tokens)});
  distribute(std::move(cover_rows));
  distribute(std::move(stego_rows));
  Rng order_rng = root.substream("split-order");
  order_rng.shuffle(out.train);
  order_rng.shuffle(out.val);
  order_rng.shuffle(out.test);
  return out;
}

void write_dataset(const DatasetSplits& splits, const StegoCorpusSpec& spec, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  write_split(out_dir / "train.tsv", splits.train);
  write_split(out_dir / "val.tsv", splits.val);
  write_split(out_dir / "test.tsv", splits.test);

  std::ofstream meta(out_dir / "meta", std::ios::binary | std::ios::trunc);
  if (!meta) throw IoError("cannot write " + (out_dir / "meta").string());
  meta.imbue(std::locale::classic());
  meta << "cover=" << spec.cover_path.string() << '\n'
       << "bpw=" << spec.bpw << '\n'
       << "per_class=" << spec.per_class << '\n'
       << "min_len=" << spec.lengths.min << '\n'
       << "max_len=" << spec.lengths.max << '\n'
       << "order=" << spec.order << '\n'
       << "seed=" << spec.seed << '\n'
       << "train=" << splits.train.size() << '\n'
       << "val=" << splits.val.size() << '\n'
       << "test=" << splits.test.size() << '\n'
       << "stego_bits=" << splits.stego_bits << '\n'
       << "stego_words=" << splits.stego_words << '\n'
       << "bits_per_word=" << std::fixed << std::setprecision(6) << splits.bits_per_word() << '\n';
  if (!meta) throw IoError("failed writing " + (out_dir / "meta").string());
}

DatasetSplits make_dataset(const StegoCorpusSpec& spec, const std::filesystem::path& out_dir, std::size_t threads) {
  auto splits = build_dataset(spec, threads);
  write_dataset(splits, spec, out_dir);
  return splits;
}

std::vector<LabeledText> read_dataset_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read dataset file " + path.string());
  std::vector<LabeledText> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string label = line.substr(0, tab);
    if (tab == std::string::npos || (label != "0" && label != "1")) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected '0|1<TAB>text'");
    }
    out.push_back({label == "1" ? kStegoLabel : kCoverLabel, line.substr(tab + 1)});
  }
  if (out.empty()) throw DataError("dataset file " + path.string() + " is empty");
  return out;
}

Vocabulary build_vocab(std::span<const LabeledText> rows, std::size_t max_size, std::size_t min_count) {
  std::vector<Tokens> corpus;
  corpus.reserve(rows.size());
  for (const auto& r : rows) corpus.push_back(tokenize(r.text));
  return Vocabulary::build(corpus, max_size, min_count);
}

std::vector<EncodedExample> encode_rows(const Vocabulary& vocab, std::span<const LabeledText> rows,
                                        const ModelConfig& config, std::size_t* empty_inputs) {
  std::vector<EncodedExample> out;
  out.reserve(rows.size());
  std::size_t empty = 0;
  for (const auto& r : rows) {
    auto enc = encode(vocab, tokenize(r.text), config.max_seq_len, config.min_seq_len());
    if (enc.empty_input) ++empty;
    enc.ids.resize(enc.length);
    out.push_back({std::move(enc.ids), r.label});
  }
  if (empty_inputs) *empty_inputs = empty;
  return out;
}

}  // namespace attnsteg
