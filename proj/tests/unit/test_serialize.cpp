#include <cstring>
#include <filesystem>

#include "attnsteg/errors.hpp"
#include "attnsteg/serialize.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace attnsteg;

namespace {

ModelConfig random_config(Rng& rng) {
  ModelConfig c;
  c.vocab_size = 2 + rng.below(20);
  c.embed_dim = 1 + rng.below(6);
  c.hidden = 1 + rng.below(5);
  c.kernel_widths.clear();
  const std::size_t nk = 1 + rng.below(3);
  for (std::size_t i = 0; i < nk; ++i) c.kernel_widths.push_back(1 + rng.below(4));
  c.feature_maps = 1 + rng.below(4);
  c.fc_dim = 1 + rng.below(6);
  c.variant = static_cast<Variant>(rng.below(4));
  c.dropout_rate = rng.uniform(0.0, 0.9);
  c.max_seq_len = 5 + rng.below(30);
  return c;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

LoadError::Kind kind_of(std::span<const std::uint8_t> bytes) {
  try {
    deserialize_model(bytes);
  } catch (const LoadError& e) {
    return e.kind();
  }
  FAIL("expected a LoadError");
  return LoadError::Kind::Inconsistent;
}

}  // namespace

TEST_CASE("serialize: random models round-trip bit-exactly") {
  Rng rng(123);
  for (int trial = 0; trial < 25; ++trial) {
    const auto config = random_config(rng);
    auto params = init_params<float>(config, rng);
    for (auto& [name, t] : params.state()) {
      for (auto& v : t.mutable_values()) v = static_cast<float>(rng.uniform(-3, 3));
    }
    const auto bytes = serialize_model(params, config);
    std::size_t expected = model_header_size(config);
    for (const auto& [name, shape] : state_layout(config)) expected += tensor_record_size(name, shape);
    CHECK(bytes.size() == expected);

    const auto loaded = deserialize_model(bytes);
    CHECK(loaded.config == config);
    const auto a = params.state();
    const auto b = loaded.params.state();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(a[i].second.shape() == b[i].second.shape());
      CHECK(std::memcmp(a[i].second.values().data(), b[i].second.values().data(),
                        a[i].second.size() * sizeof(float)) == 0);
    }
    CHECK(serialize_model(loaded.params, loaded.config) == bytes);
  }
}

TEST_CASE("serialize: header layout") {
  Rng rng(1);
  ModelConfig c;
  c.vocab_size = 7;
  c.embed_dim = 3;
  c.hidden = 2;
  c.kernel_widths = {2};
  c.feature_maps = 2;
  c.fc_dim = 3;
  const auto bytes = serialize_model(init_params<float>(c, rng), c);
  CHECK(std::memcmp(bytes.data(), "ATSG", 4) == 0);
  CHECK(bytes[4] == kModelFormatVersion);
  CHECK(bytes[8] == 7);
  CHECK(model_header_size(c) == 4 + 4 + 8 * 4 + 8 + 4 + 4 + 4);
  CHECK(tensor_record_size("ab", {2, 3}) == 4 + 2 + 4 + 8 + 24);
}

TEST_CASE("serialize: typed corruption errors") {
  Rng rng(2);
  ModelConfig c;
  c.vocab_size = 9;
  c.embed_dim = 4;
  c.hidden = 3;
  c.kernel_widths = {2, 3};
  c.feature_maps = 2;
  c.fc_dim = 4;
  const auto good = serialize_model(init_params<float>(c, rng), c);

  auto bad = good;
  bad[0] = 'X';
  CHECK(kind_of(bad) == LoadError::Kind::BadMagic);

  bad = good;
  put_u32(bad, 4, kModelFormatVersion + 1);
  CHECK(kind_of(bad) == LoadError::Kind::VersionMismatch);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, model_header_size(c), good.size() - 1}) {
    CHECK(kind_of(std::span(good).first(cut)) == LoadError::Kind::Truncated);
  }

  bad = good;
  bad.push_back(0);
  CHECK(kind_of(bad) == LoadError::Kind::Inconsistent);

  bad = good;
  put_u32(bad, 8, 0);  // vocab_size
  CHECK(kind_of(bad) == LoadError::Kind::Inconsistent);

  bad = good;
  // Flip the case of the first letter of the first tensor name.
  bad[model_header_size(c) + 4] ^= 0x20;
  CHECK(kind_of(bad) == LoadError::Kind::Inconsistent);
}

TEST_CASE("serialize: random byte damage never escapes as anything but LoadError") {
  Rng rng(3);
  ModelConfig c;
  c.vocab_size = 6;
  c.embed_dim = 2;
  c.hidden = 2;
  c.kernel_widths = {1, 2};
  c.feature_maps = 2;
  c.fc_dim = 2;
  const auto good = serialize_model(init_params<float>(c, rng), c);
  const std::size_t header = model_header_size(c);
  for (int trial = 0; trial < 2000; ++trial) {
    auto bytes = good;
    const std::size_t flips = 1 + rng.below(4);
    for (std::size_t f = 0; f < flips; ++f) {
      // Bias damage toward the header, where the structure lives.
      const std::size_t at = rng.below(2) ? rng.below(header + 16) : rng.below(bytes.size());
      bytes[at] = static_cast<std::uint8_t>(rng.below(256));
    }
    if (rng.below(4) == 0) bytes.resize(rng.below(bytes.size()));
    try {
      const auto loaded = deserialize_model(bytes);
      CHECK_NOTHROW(loaded.config.validate());
    } catch (const LoadError&) {
    }
  }
}

TEST_CASE("serialize: file round trip and missing file") {
  Rng rng(4);
  ModelConfig c;
  c.vocab_size = 5;
  c.embed_dim = 2;
  c.hidden = 2;
  c.kernel_widths = {2};
  c.feature_maps = 1;
  c.fc_dim = 2;
  c.variant = Variant::LstmCnn;
  const auto params = init_params<float>(c, rng);
  const auto path = std::filesystem::temp_directory_path() / "attnsteg_serialize_test.bin";
  save_model(path, params, c);
  const auto loaded = load_model(path);
  CHECK(loaded.config == c);
  CHECK(serialize_model(loaded.params, c) == serialize_model(params, c));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_model(path), IoError);
}
