// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "attnsteg/dataset.hpp"
#include "attnsteg/errors.hpp"
#include "attnsteg/layers.hpp"
#include "attnsteg/markov.hpp"
#include "attnsteg/model.hpp"
#include "attnsteg/serialize.hpp"
#include "attnsteg/training.hpp"

using namespace attnsteg;
namespace fs = std::filesystem;

namespace {

const fs::path kCover = fs::path(ATTNSTEG_DATA_DIR) / "cover_sample.txt";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("attnsteg_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

// Reduced model used for the detection experiments.
ModelConfig desk_config(Variant v = Variant::BiLstmCnnAttCl) {
  ModelConfig c;
  c.embed_dim = 64;
  c.hidden = 64;
  c.feature_maps = 64;
  c.fc_dim = 64;
  c.variant = v;
  return c;
}

TrainOptions desk_options() {
  TrainOptions o;
  o.epochs = 10;
  o.batch_size = 64;
  return o;
}

struct Encoded {
  ModelConfig config;
  std::vector<EncodedExample> train, val, test;
};

Encoded encode_splits(const DatasetSplits& d, ModelConfig config) {
  const auto vocab = build_vocab(d.train, 20000);
  config.vocab_size = vocab.size();
  return {config, encode_rows(vocab, d.train, config), encode_rows(vocab, d.val, config),
          encode_rows(vocab, d.test, config)};
}

double test_accuracy(const DatasetSplits& d, const ModelConfig& config, const TrainOptions& options) {
  const auto e = encode_splits(d, config);
  const auto result = train(e.config, e.train, e.val, options);
  return evaluate(e.config, result.params, e.test).accuracy;
}

DatasetSplits dataset(int bpw, std::size_t per_class, std::uint64_t seed) {
  StegoCorpusSpec spec;
  spec.cover_path = kCover;
  spec.bpw = bpw;
  spec.per_class = per_class;
  spec.seed = seed;
  return build_dataset(spec, 4);
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = run(std::string(ATTNSTEG_UNIT_TESTS) + " -tc=*gradient*");
  const double secs = seconds_since(t0);
  return {rc == 0 && secs < 60.0, fmt("gradient suite exit %d in %.1f s (limit 60 s)", rc, secs)};
}

Outcome attention_properties() {
  Rng rng(2024);
  std::size_t bad = 0;
  double worst_sum = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + rng.below(4), t = 1 + rng.below(12), w = 2 * (1 + rng.below(4));
    std::vector<std::size_t> lengths(b);
    for (auto& l : lengths) l = 1 + rng.below(t);
    auto rand = [&](Shape s, double scale) {
      std::vector<double> v(shape_numel(s));
      for (auto& x : v) x = rng.uniform(-scale, scale);
      return Tensor<double>::from(std::move(s), std::move(v));
    };
    const auto h = rand({b, t, w}, 5.0);
    const AttentionParams<double> p{rand({w}, 3.0), rand({1}, 3.0)};
    const auto out = attention_forward(p, h, lengths);
    for (std::size_t i = 0; i < b; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        const double a = out.alpha.at({i, j});
        if (!std::isfinite(a) || a < 0.0 || (j >= lengths[i] && a != 0.0)) ++bad;
        s += a;
        for (std::size_t k = 0; k < w; ++k) {
          if (std::abs(out.r.at({i, j, k}) - a * h.at({i, j, k})) > 1e-12) ++bad;
        }
      }
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  }
  return {bad == 0 && worst_sum < 1e-9,
          fmt("1000 random inputs: %zu violations, max |sum alpha - 1| = %.2e", bad, worst_sum)};
}

Outcome overfit() {
  const auto d = dataset(3, 100, 5);
  std::vector<LabeledText> rows;
  for (std::size_t i = 0; i < d.train.size() && rows.size() < 64; ++i) rows.push_back(d.train[i]);
  const auto vocab = build_vocab(rows, 20000);
  ModelConfig c;
  c.vocab_size = vocab.size();
  c.embed_dim = 16;
  c.hidden = 16;
  c.feature_maps = 16;
  c.fc_dim = 16;
  const auto enc = encode_rows(vocab, rows, c);
  TrainOptions o;
  o.epochs = 200;
  o.batch_size = 16;
  o.adam.lr = 0.003;
  std::size_t hit = 0;
  double last_loss = 0.0, last_acc = 0.0;
  train(c, enc, enc, o, [&](const EpochRecord& e) {
    last_loss = e.train_loss;
    last_acc = e.train.accuracy;
    if (!hit && e.train.accuracy == 1.0 && e.train_loss < 0.05) hit = e.epoch;
  });
  return {hit != 0, hit ? fmt("64 sentences fit at epoch %zu", hit)
                        : fmt("not fit in 200 epochs: loss %.4f train acc %.4f", last_loss, last_acc)};
}

Outcome detection_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  const double acc1 = test_accuracy(dataset(1, 2000, 1), desk_config(), desk_options());
  const double acc5 = test_accuracy(dataset(5, 2000, 1), desk_config(), desk_options());
  return {acc5 >= 0.85 && acc5 - acc1 >= 0.05,
          fmt("test acc bpw=1 %.4f, bpw=5 %.4f (need bpw5 >= 0.85 and +5 points), %.0f s", acc1, acc5,
              seconds_since(t0))};
}

Outcome ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = dataset(3, 2000, 1);
  std::vector<double> acc;
  std::string detail;
  for (Variant v : kAllVariants) {
    acc.push_back(100.0 * test_accuracy(d, desk_config(v), desk_options()));
    detail += fmt("#%zu %s %.2f%%; ", acc.size() - 1, std::string(variant_name(v)).c_str(), acc.back());
  }
  return {acc[3] >= acc[0] - 0.5, detail + fmt("%.0f s", seconds_since(t0))};
}

Outcome cli_determinism() {
  const std::string cli = ATTNSTEG_CLI;
  const auto root = scratch_dir("cli");
  const auto gen = [&](const fs::path& out) {
    return run(cli + " generate --cover " + kCover.string() + " --out " + out.string() +
               " --per-class 200 --bpw 4 --seed 9 --threads 3");
  };
  const auto fit = [&](const fs::path& data, const fs::path& model) {
    return run(cli + " train --data " + data.string() + " --model " + model.string() +
               " --epochs 2 --embed-dim 8 --hidden 8 --feature-maps 8 --fc-dim 8 --batch-size 32 --seed 4 --quiet");
  };
  if (gen(root / "a") || gen(root / "b")) return {false, "generate exited nonzero"};
  for (const char* f : {"train.tsv", "val.tsv", "test.tsv", "meta"}) {
    if (slurp(root / "a" / f) != slurp(root / "b" / f)) return {false, std::string("generate differs in ") + f};
  }
  if (fit(root / "a", root / "m1.bin") || fit(root / "a", root / "m2.bin")) return {false, "train exited nonzero"};
  if (slurp(root / "m1.bin") != slurp(root / "m2.bin")) return {false, "model files differ"};
  if (slurp(root / "m1.bin.vocab") != slurp(root / "m2.bin.vocab")) return {false, "vocabulary files differ"};
  fs::remove_all(root);
  return {true, "generate and train are byte-identical across runs"};
}

Outcome serialization() {
  Rng rng(31);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig c;
    c.vocab_size = 2 + rng.below(50);
    c.embed_dim = 1 + rng.below(8);
    c.hidden = 1 + rng.below(8);
    c.kernel_widths = {1 + rng.below(3), 2 + rng.below(3)};
    c.feature_maps = 1 + rng.below(6);
    c.fc_dim = 1 + rng.below(8);
    c.variant = kAllVariants[rng.below(4)];
    const auto params = init_params<float>(c, rng);
    const auto bytes = serialize_model(params, c);
    const auto back = deserialize_model(bytes);
    if (!(back.config == c) || serialize_model(back.params, back.config) != bytes) ++mismatches;
  }
  ModelConfig c;
  c.vocab_size = 10;
  c.embed_dim = 4;
  c.hidden = 4;
  c.feature_maps = 2;
  c.fc_dim = 3;
  const auto good = serialize_model(init_params<float>(c, rng), c);
  auto kind = [](std::vector<std::uint8_t> b) -> int {
    try {
      deserialize_model(b);
      return -1;
    } catch (const LoadError& e) {
      return static_cast<int>(e.kind());
    }
  };
  auto magic = good;
  magic[1] = '?';
  auto version = good;
  version[4] = static_cast<std::uint8_t>(kModelFormatVersion + 7);
  auto cut = good;
  cut.resize(good.size() / 2);
  auto extra = good;
  extra.push_back(1);
  const bool typed = kind(magic) == int(LoadError::Kind::BadMagic) &&
                     kind(version) == int(LoadError::Kind::VersionMismatch) &&
                     kind(cut) == int(LoadError::Kind::Truncated) && kind(extra) == int(LoadError::Kind::Inconsistent);
  return {mismatches == 0 && typed, fmt("100 round trips, %zu mismatches; corruption typed: %s", mismatches,
                                        typed ? "yes" : "no")};
}

Outcome stego_roundtrip() {
  const auto model = MarkovModel::train(read_cover_corpus(kCover), 2);
  std::size_t errors = 0, bits = 0;
  for (int bpw = 1; bpw <= 5; ++bpw) {
    Rng rng(static_cast<std::uint64_t>(100 + bpw));
    BitStream secret(Rng(static_cast<std::uint64_t>(200 + bpw)));
    for (int i = 0; i < 500; ++i) {
      const std::size_t origin = secret.position();
      const auto s = generate_stego(model, bpw, secret, {8, 20}, rng);
      const auto got = extract_bits(model, bpw, s.tokens);
      BitStream replay(Rng(static_cast<std::uint64_t>(200 + bpw)));
      replay.seek(origin);
      for (std::size_t k = 0; k < s.bits.size(); ++k) errors += replay.next() != s.bits[k];
      if (got.size() != s.bits.size()) {
        errors += std::max(got.size(), s.bits.size());
        continue;
      }
      for (std::size_t k = 0; k < got.size(); ++k) errors += got[k] != s.bits[k];
      bits += got.size();
    }
  }
  return {errors == 0, fmt("2500 sentences, %zu bits recovered, %zu bit errors", bits, errors)};
}

Outcome confusion_metrics() {
  Rng rng(77);
  std::size_t bad = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<int> pred(n), truth(n);
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng.below(2));
      truth[i] = static_cast<int>(rng.below(2));
      if (pred[i] == 1 && truth[i] == 1) ++tp;
      if (pred[i] == 1 && truth[i] == 0) ++fp;
      if (pred[i] == 0 && truth[i] == 0) ++tn;
      if (pred[i] == 0 && truth[i] == 1) ++fn;
    }
    const auto m = metrics_from_predictions(pred, truth);
    const double acc = double(tp + tn) / double(n);
    const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    if (m.tp != tp || m.fp != fp || m.tn != tn || m.fn != fn) ++bad;
    if (std::abs(m.accuracy - acc) > 1e-12 || std::abs(m.precision - p) > 1e-12 || std::abs(m.recall - r) > 1e-12) {
      ++bad;
    }
    if (m.precision_undefined != (tp + fp == 0) || m.recall_undefined != (tp + fn == 0)) ++bad;
  }
  return {bad == 0, fmt("20 random confusion matrices, %zu mismatches", bad)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient checks", gradient_suite},
      {"attention weights", attention_properties},
      {"overfit small set", overfit},
      {"detection grows with payload", detection_trend},
      {"fusion ablation", ablation},
      {"CLI determinism", cli_determinism},
      {"model serialization", serialization},
      {"stego bit recovery", stego_roundtrip},
      {"classification metrics", confusion_metrics},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
