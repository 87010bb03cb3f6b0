#include <algorithm>
#include <map>
#include <set>

#include "attnsteg/dataset.hpp"
#include "attnsteg/errors.hpp"
#include "attnsteg/markov.hpp"
#include "doctest.h"

using namespace attnsteg;

namespace {

// Order-1 chain over 40 words where every word follows every other.
MarkovModel dense_chain() {
  Rng rng(77);
  std::vector<Tokens> corpus;
  for (int s = 0; s < 400; ++s) {
    Tokens t;
    for (int i = 0; i < 25; ++i) t.push_back("w" + std::to_string(rng.below(40)));
    corpus.push_back(t);
  }
  return MarkovModel::train(corpus, 1);
}

std::vector<MarkovModel::WordId> ids_of(const MarkovModel& m, const Tokens& t) {
  std::vector<MarkovModel::WordId> ids;
  for (const auto& w : t) ids.push_back(*m.word_id(w));
  return ids;
}

double bits_per_word(const MarkovModel& m, int bpw, std::size_t n, LengthRange lengths) {
  Rng rng(11);
  BitStream secret(Rng(12));
  std::size_t bits = 0, words = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = generate_stego(m, bpw, secret, lengths, rng);
    bits += s.bits_embedded();
    words += s.tokens.size();
  }
  return double(bits) / double(words);
}

}  // namespace

TEST_CASE("markov: counts of a b a b a at order 1") {
  const std::vector<Tokens> corpus{{"a", "b", "a", "b", "a"}};
  const auto m = MarkovModel::train(corpus, 1);
  CHECK(m.word_count() == 2);
  CHECK(m.context_count() == 2);
  const auto a = *m.word_id("a");
  const auto b = *m.word_id("b");
  const std::vector<MarkovModel::WordId> ca{a}, cb{b};
  REQUIRE(m.candidates(ca) != nullptr);
  REQUIRE(m.candidates(ca)->size() == 1);
  CHECK(m.candidates(ca)->front().word == b);
  CHECK(m.candidates(ca)->front().count == 2);
  CHECK(m.candidates(cb)->front().word == a);
  CHECK(m.candidates(cb)->front().count == 2);
  REQUIRE(m.start_contexts().size() == 1);
  CHECK(m.start_contexts()[0].first == MarkovModel::Context{a});
  CHECK(m.start_contexts()[0].second == 1);
}

TEST_CASE("markov: candidates ranked by count then word") {
  const std::vector<Tokens> corpus{{"x", "c"}, {"x", "b"}, {"x", "a"}, {"x", "c"}, {"x", "b"}};
  const auto m = MarkovModel::train(corpus, 1);
  const std::vector<MarkovModel::WordId> cx{*m.word_id("x")};
  const auto& c = *m.candidates(cx);
  REQUIRE(c.size() == 3);
  CHECK(m.word(c[0].word) == "b");
  CHECK(m.word(c[1].word) == "c");
  CHECK(m.word(c[2].word) == "a");
  CHECK(m.candidates(std::vector<MarkovModel::WordId>{*m.word_id("a")}) == nullptr);
  CHECK_FALSE(m.word_id("zzz").has_value());
}

TEST_CASE("markov: training errors and skipped short sentences") {
  CHECK_THROWS_AS(MarkovModel::train(std::vector<Tokens>{{"a", "b"}}, 2), ConfigError);
  CHECK_THROWS_AS(MarkovModel::train(std::vector<Tokens>{{"a", "b", "c"}}, 0), ConfigError);
  const auto m = MarkovModel::train(std::vector<Tokens>{{"q"}, {"a", "b", "c"}}, 2);
  CHECK_FALSE(m.word_id("q").has_value());
  CHECK(m.word_count() == 3);
}

TEST_CASE("markov: a deterministic chain reproduces its only sentence") {
  const Tokens s{"the", "cat", "sat", "on", "the", "mat", "."};
  const auto m = MarkovModel::train(std::vector<Tokens>{s}, 2);
  Rng rng(3);
  for (int i = 0; i < 5; ++i) CHECK(generate_cover(m, {7, 7}, rng) == s);
  // The chain dead-ends after ".", which still meets the minimum length.
  CHECK(generate_cover(m, {7, 12}, rng) == s);
}

TEST_CASE("markov: generated words come from the corpus and respect lengths") {
  const auto m = dense_chain();
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto t = generate_cover(m, {5, 9}, rng);
    CHECK(t.size() >= 5);
    CHECK(t.size() <= 9);
    for (const auto& w : t) CHECK(m.word_id(w).has_value());
  }
  CHECK_THROWS_AS(generate_cover(m, {0, 3}, rng), ConfigError);
  CHECK_THROWS_AS(generate_cover(m, {5, 4}, rng), ConfigError);
}

TEST_CASE("markov: next-word frequencies follow the counts") {
  const std::vector<Tokens> corpus{{"s", "b"}, {"s", "b"}, {"s", "b"}, {"s", "c"}};
  const auto m = MarkovModel::train(corpus, 1);
  Rng rng(5);
  int b = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) b += generate_cover(m, {2, 2}, rng)[1] == "b";
  CHECK(std::abs(double(b) / n - 0.75) < 0.03);
}

TEST_CASE("bitstream: rng and pattern sources replay after seek") {
  BitStream p(std::vector<std::uint8_t>{1, 0, 0});
  CHECK(p.next() == 1);
  CHECK(p.next() == 0);
  CHECK(p.next() == 0);
  CHECK(p.next() == 1);
  p.seek(1);
  CHECK(p.next() == 0);
  CHECK_THROWS_AS(BitStream(std::vector<std::uint8_t>{}), ContractError);

  BitStream r(Rng(9));
  std::vector<std::uint8_t> first;
  for (int i = 0; i < 150; ++i) first.push_back(r.next());
  r.seek(20);
  for (int i = 20; i < 150; ++i) CHECK(r.next() == first[static_cast<std::size_t>(i)]);
  BitStream fresh(Rng(9));
  fresh.seek(140);
  CHECK(fresh.next() == first[140]);
}

TEST_CASE("stego: two bits pick one of the top four") {
  const auto m = dense_chain();
  Rng rng(6);
  BitStream secret(std::vector<std::uint8_t>{1, 0});  // index 2 every time
  const auto s = generate_stego(m, 2, secret, {10, 10}, rng);
  const auto ids = ids_of(m, s.tokens);
  CHECK(s.bits_embedded() == 2 * (ids.size() - 1));
  for (std::size_t i = 1; i < ids.size(); ++i) {
    const auto& c = *m.candidates(std::span(ids).subspan(i - 1, 1));
    CHECK(c[2].word == ids[i]);
  }
  CHECK(secret.position() == s.bits_embedded());
}

TEST_CASE("stego: all-zero secret follows the greedy path") {
  const auto m = dense_chain();
  for (int bpw = 1; bpw <= 5; ++bpw) {
    Rng rng(7);
    BitStream zeros(std::vector<std::uint8_t>{0});
    const auto s = generate_stego(m, bpw, zeros, {12, 12}, rng);
    const auto ids = ids_of(m, s.tokens);
    for (std::size_t i = 1; i < ids.size(); ++i) {
      CHECK(m.candidates(std::span(ids).subspan(i - 1, 1))->front().word == ids[i]);
    }
  }
}

TEST_CASE("stego: deviations from top-1 only where enough candidates exist") {
  const auto corpus = read_cover_corpus(std::string(ATTNSTEG_DATA_DIR) + "/cover_sample.txt");
  const auto m = MarkovModel::train(corpus, 2);
  Rng rng(8);
  BitStream secret(Rng(9));
  for (int bpw = 1; bpw <= 5; ++bpw) {
    const std::size_t bins = std::size_t{1} << bpw;
    for (int n = 0; n < 100; ++n) {
      const auto s = generate_stego(m, bpw, secret, {8, 20}, rng);
      const auto ids = ids_of(m, s.tokens);
      std::size_t carrying = 0;
      for (std::size_t i = 2; i < ids.size(); ++i) {
        const auto& c = *m.candidates(std::span(ids).subspan(i - 2, 2));
        if (c.size() < bins) {
          CHECK(c.front().word == ids[i]);
        } else {
          ++carrying;
          const auto rank = std::find_if(c.begin(), c.end(), [&](const auto& x) { return x.word == ids[i]; }) - c.begin();
          CHECK(static_cast<std::size_t>(rank) < bins);
        }
      }
      CHECK(s.bits_embedded() == carrying * static_cast<std::size_t>(bpw));
      CHECK(extract_bits(m, bpw, s.tokens) == s.bits);
    }
  }
}

TEST_CASE("stego: extraction rejects text the model could not produce") {
  const auto m = dense_chain();
  CHECK_THROWS_AS(extract_bits(m, 1, Tokens{"w1", "nope"}), ContractError);
  CHECK_THROWS_AS(extract_bits(m, 0, Tokens{"w1"}), ConfigError);
  const auto s = MarkovModel::train(std::vector<Tokens>{{"a", "b", "c"}, {"a", "c", "b"}, {"a", "d", "b"}}, 1);
  // "d" is the third candidate after "a", outside the two bins for one bit.
  CHECK_THROWS_AS(extract_bits(s, 1, Tokens{"a", "d"}), ContractError);
  const auto line = MarkovModel::train(std::vector<Tokens>{{"a", "b", "c"}}, 1);
  CHECK_THROWS_AS(extract_bits(line, 1, Tokens{"c", "a"}), ContractError);
}

TEST_CASE("stego: bits per word stays below bpw and grows with it") {
  const auto m = dense_chain();
  double prev = 0.0;
  for (int bpw = 1; bpw <= 5; ++bpw) {
    const double bpw_rate = bits_per_word(m, bpw, 300, {8, 20});
    CHECK(bpw_rate <= bpw);
    CHECK(bpw_rate > prev);
    prev = bpw_rate;
  }
}

TEST_CASE("stego: the shipped cover corpus gives strictly increasing capacity") {
  const auto corpus = read_cover_corpus(std::string(ATTNSTEG_DATA_DIR) + "/cover_sample.txt");
  const auto m = MarkovModel::train(corpus, 2);
  double prev = 0.0;
  for (int bpw = 1; bpw <= 5; ++bpw) {
    const double rate = bits_per_word(m, bpw, 1000, {8, 20});
    CHECK(rate <= bpw);
    CHECK(rate > prev);
    prev = rate;
  }
}

TEST_CASE("stego: cover and stego share the length draw and start context") {
  const auto m = dense_chain();
  for (int seed = 0; seed < 20; ++seed) {
    Rng a(static_cast<std::uint64_t>(seed)), b(static_cast<std::uint64_t>(seed));
    BitStream secret(Rng(1));
    const auto cover = generate_cover(m, {6, 14}, a);
    const auto stego = generate_stego(m, 3, secret, {6, 14}, b);
    CHECK(cover.size() == stego.tokens.size());
    CHECK(cover.front() == stego.tokens.front());
  }
}
