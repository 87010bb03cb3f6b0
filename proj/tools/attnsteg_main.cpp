// attnsteg command-line tool: generate, train, eval, predict, ablate.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attnsteg/dataset.hpp"
#include "attnsteg/errors.hpp"
#include "attnsteg/model.hpp"
#include "attnsteg/serialize.hpp"
#include "attnsteg/text.hpp"
#include "attnsteg/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace attnsteg;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct GenerateArgs {
  std::string cover;
  std::string out;
  int bpw = 3;
  std::size_t per_class = 2000;
  std::size_t min_len = 8;
  std::size_t max_len = 20;
  std::size_t order = 2;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

// Model and optimizer settings shared by train and ablate.
struct ModelArgs {
  std::string variant = "Bi-LSTM+CNN+ATT+CL";
  std::size_t embed_dim = 256;
  std::size_t hidden = 200;
  std::vector<std::size_t> kernels{3, 4, 5};
  std::size_t feature_maps = 128;
  std::size_t fc_dim = 100;
  double dropout = 0.5;
  std::size_t max_len = 30;
  std::size_t max_vocab = 20000;
  std::size_t min_count = 1;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double lr = 0.001;
  double clip = 5.0;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  bool quiet = false;
};

struct TrainArgs {
  std::string data;
  std::string model;
  std::string report;
};

struct EvalArgs {
  std::string model;
  std::string data;
  std::string json;
  std::size_t batch_size = 128;
  std::size_t threads = 1;
};

struct PredictArgs {
  std::string model;
  std::size_t batch_size = 128;
};

struct AblateArgs {
  std::string data;
  std::string out;
};

fs::path vocab_path(const fs::path& model) { return fs::path(model.string() + ".vocab"); }

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void add_model_flags(CLI::App* cmd, ModelArgs& a, bool with_variant) {
  if (with_variant) cmd->add_option("--variant", a.variant, "LSTM+CNN, Bi-LSTM+CNN, Bi-LSTM+CNN+ATT, Bi-LSTM+CNN+ATT+CL or 0-3");
  cmd->add_option("--embed-dim", a.embed_dim, "word embedding size d");
  cmd->add_option("--hidden", a.hidden, "LSTM hidden size k");
  cmd->add_option("--kernels", a.kernels, "convolution kernel widths")->delimiter(',');
  cmd->add_option("--feature-maps", a.feature_maps, "filters per kernel width F");
  cmd->add_option("--fc-dim", a.fc_dim, "hidden fully connected width");
  cmd->add_option("--dropout", a.dropout, "dropout rate before the output layer");
  cmd->add_option("--max-len", a.max_len, "sequence length T; longer sentences are truncated");
  cmd->add_option("--max-vocab", a.max_vocab, "vocabulary cap including PAD and UNK");
  cmd->add_option("--min-count", a.min_count, "minimum word frequency for the vocabulary");
  cmd->add_option("--epochs", a.epochs, "training epochs");
  cmd->add_option("--batch-size", a.batch_size, "mini-batch size");
  cmd->add_option("--lr", a.lr, "Adam learning rate");
  cmd->add_option("--clip", a.clip, "global gradient-norm clip, 0 disables");
  cmd->add_option("--seed", a.seed, "seed for initialization, shuffling and dropout");
  cmd->add_option("--threads", a.threads, "threads for evaluation batches");
  cmd->add_flag("--quiet", a.quiet, "no per-epoch progress on stderr");
}

ModelConfig model_config(const ModelArgs& a, std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = a.embed_dim;
  c.hidden = a.hidden;
  c.kernel_widths = a.kernels;
  c.feature_maps = a.feature_maps;
  c.fc_dim = a.fc_dim;
  c.dropout_rate = a.dropout;
  c.variant = parse_variant(a.variant);
  c.max_seq_len = a.max_len;
  c.validate();
  return c;
}

TrainOptions train_options(const ModelArgs& a) {
  TrainOptions o;
  o.epochs = a.epochs;
  o.batch_size = a.batch_size;
  o.adam.lr = a.lr;
  o.clip_norm = a.clip;
  o.seed = a.seed;
  if (o.batch_size < 2) throw ConfigError("batch-size must be at least 2");
  if (!(o.adam.lr > 0.0)) throw ConfigError("lr must be positive");
  if (a.max_vocab < 3) throw ConfigError("max-vocab must be at least 3");
  if (a.threads == 0) throw ConfigError("threads must be at least 1");
  return o;
}

void check_data_dir(const fs::path& dir, std::initializer_list<const char*> files) {
  for (const char* f : files) {
    if (!fs::is_regular_file(dir / f)) throw DataError("missing dataset file " + (dir / f).string());
  }
}

EpochCallback progress(bool quiet) {
  if (quiet) return {};
  return [](const EpochRecord& e) {
    std::cerr << "epoch " << e.epoch << " loss " << fixed(e.train_loss, 4) << " train_acc "
              << fixed(e.train.accuracy, 4) << " val_acc " << fixed(e.val.accuracy, 4) << "\n";
  };
}

int cmd_generate(const GenerateArgs& a) {
  StegoCorpusSpec spec;
  spec.cover_path = a.cover;
  spec.bpw = a.bpw;
  spec.per_class = a.per_class;
  spec.lengths = {a.min_len, a.max_len};
  spec.order = a.order;
  spec.seed = a.seed;
  spec.validate();
  if (a.threads == 0) throw ConfigError("threads must be at least 1");
  const auto splits = make_dataset(spec, a.out, a.threads);
  std::cout << "wrote " << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
            << " examples to " << a.out << " (bits/word " << fixed(splits.bits_per_word(), 4) << ")\n";
  return kOk;
}

struct TrainedRun {
  ModelConfig config;
  Vocabulary vocab;
  TrainResult result;
};

TrainedRun train_on(const fs::path& dir, const ModelArgs& a, Variant variant) {
  const auto train_rows = read_dataset_file(dir / "train.tsv");
  const auto val_rows = read_dataset_file(dir / "val.tsv");
  Vocabulary vocab = build_vocab(train_rows, a.max_vocab, a.min_count);
  ModelConfig config = model_config(a, vocab.size());
  config.variant = variant;
  const auto train_set = encode_rows(vocab, train_rows, config);
  const auto val_set = encode_rows(vocab, val_rows, config);
  const TrainOptions options = train_options(a);
  TrainResult result;
  try {
    result = train(config, train_set, val_set, options, progress(a.quiet));
  } catch (const DataError&) {
    throw;
  } catch (const ConfigError& e) {
    // Flags were validated up front, so what is left is about the data.
    throw DataError(dir.string() + ": " + e.what());
  }
  result.report.config.emplace_back("data", dir.string());
  result.report.config.emplace_back("max_vocab", std::to_string(a.max_vocab));
  result.report.config.emplace_back("min_count", std::to_string(a.min_count));
  return {config, std::move(vocab), std::move(result)};
}

int cmd_train(const TrainArgs& t, const ModelArgs& a) {
  const ModelConfig probe = model_config(a, 2);
  train_options(a);
  check_data_dir(t.data, {"train.tsv", "val.tsv"});
  const fs::path model_path = t.model;
  const fs::path report_path = t.report.empty() ? fs::path(t.model + ".report.tsv") : fs::path(t.report);

  auto run = train_on(t.data, a, probe.variant);
  save_model(model_path, run.result.params, run.config);
  run.vocab.save(vocab_path(model_path));
  std::ofstream report(report_path, std::ios::binary | std::ios::trunc);
  if (!report) throw IoError("cannot write report " + report_path.string());
  write_report(report, run.result.report);

  const auto& epochs = run.result.report.epochs;
  if (epochs.empty()) {
    std::cout << "no epochs run; wrote initialized model to " << model_path.string() << "\n";
  } else {
    const auto& best = epochs[run.result.report.best_epoch - 1];
    std::cout << "best epoch " << best.epoch << " val Acc=" << fixed(best.val.accuracy, 4)
              << " P=" << fixed(best.val.precision, 4) << " R=" << fixed(best.val.recall, 4) << "\n";
  }
  return kOk;
}

struct LoadedRun {
  LoadedModel model;
  Vocabulary vocab;
};

LoadedRun load_run(const fs::path& model_path) {
  auto model = load_model(model_path);
  auto vocab = Vocabulary::load(vocab_path(model_path));
  if (vocab.size() != model.config.vocab_size) {
    throw DataError("vocabulary " + vocab_path(model_path).string() + " has " + std::to_string(vocab.size()) +
                    " words, model expects " + std::to_string(model.config.vocab_size));
  }
  return {std::move(model), std::move(vocab)};
}

int cmd_eval(const EvalArgs& a) {
  if (a.batch_size == 0 || a.threads == 0) throw ConfigError("batch-size and threads must be positive");
  const auto run = load_run(a.model);
  const auto rows = read_dataset_file(a.data);
  const auto data = encode_rows(run.vocab, rows, run.model.config);
  const Metrics m = evaluate(run.model.config, run.model.params, data, {a.batch_size, a.threads});
  std::cout << "Acc=" << fixed(m.accuracy, 6) << " P=" << fixed(m.precision, 6) << " R=" << fixed(m.recall, 6)
            << " TP=" << m.tp << " FP=" << m.fp << " TN=" << m.tn << " FN=" << m.fn << "\n";
  if (!a.json.empty()) {
    nlohmann::json j = {{"accuracy", m.accuracy},
                        {"precision", m.precision},
                        {"recall", m.recall},
                        {"precision_undefined", m.precision_undefined},
                        {"recall_undefined", m.recall_undefined},
                        {"tp", m.tp},
                        {"fp", m.fp},
                        {"tn", m.tn},
                        {"fn", m.fn},
                        {"model", a.model},
                        {"data", a.data}};
    std::ofstream out(a.json, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + a.json);
    out << j.dump(2) << "\n";
  }
  return kOk;
}

int cmd_predict(const PredictArgs& a) {
  if (a.batch_size == 0) throw ConfigError("batch-size must be positive");
  const auto run = load_run(a.model);
  const ModelConfig& config = run.model.config;

  std::vector<std::string> lines;
  for (std::string line; std::getline(std::cin, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  for (std::size_t start = 0; start < lines.size(); start += a.batch_size) {
    const std::size_t end = std::min(lines.size(), start + a.batch_size);
    std::vector<EncodedExample> examples;
    for (std::size_t i = start; i < end; ++i) {
      auto enc = encode(run.vocab, tokenize(lines[i]), config.max_seq_len, config.min_seq_len());
      if (enc.empty_input) std::cerr << "warning: line " << i + 1 << " has no tokens\n";
      enc.ids.resize(enc.length);
      examples.push_back({std::move(enc.ids), kCoverLabel});
    }
    std::vector<std::size_t> idx(examples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const EncodedBatch batch = make_batch(examples, idx);
    const Prediction pred = predict(config, run.model.params, batch);
    for (std::size_t b = 0; b < examples.size(); ++b) {
      const std::size_t len = batch.lengths[b];
      std::vector<std::size_t> pos(len);
      std::iota(pos.begin(), pos.end(), std::size_t{0});
      const float* alpha = pred.alpha.data() + b * pred.seq_len;
      std::stable_sort(pos.begin(), pos.end(), [&](std::size_t x, std::size_t y) { return alpha[x] > alpha[y]; });
      std::cout << pred.labels[b] << '\t' << fixed(pred.prob(b, kStegoLabel), 6) << '\t';
      for (std::size_t k = 0; k < std::min<std::size_t>(3, len); ++k) {
        std::cout << (k ? "," : "") << run.vocab.word(batch.id(b, pos[k])) << ':' << fixed(alpha[pos[k]], 6);
      }
      std::cout << '\n';
    }
  }
  return kOk;
}

int cmd_ablate(const AblateArgs& t, ModelArgs a) {
  model_config(a, 2);
  train_options(a);
  check_data_dir(t.data, {"train.tsv", "val.tsv", "test.tsv"});
  const auto test_rows = read_dataset_file(fs::path(t.data) / "test.tsv");
  std::ostringstream table;
  for (Variant v : kAllVariants) {
    if (!a.quiet) std::cerr << "training " << variant_name(v) << "\n";
    const auto run = train_on(t.data, a, v);
    const auto test = encode_rows(run.vocab, test_rows, run.config);
    const Metrics m = evaluate(run.config, run.result.params, test, {a.batch_size, a.threads});
    table << '#' << static_cast<int>(v) << '\t' << variant_name(v) << '\t' << fixed(100.0 * m.accuracy, 2) << '\n';
  }
  std::cout << table.str();
  if (!t.out.empty()) {
    std::ofstream out(t.out, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + t.out);
    out << table.str();
  }
  return kOk;
}

void add_config_option(CLI::App* cmd) {
  cmd->add_option("--config", "key=value file with long flag names as keys; flags override it");
}

// Fills options not given on the command line from the --config file.
void apply_config_file(CLI::App* cmd) {
  const CLI::Option* config = cmd->get_option("--config");
  if (config->count() == 0) return;
  const std::string path = config->as<std::string>();
  std::ifstream in(path);
  if (!in) throw CLI::FileError::Missing(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string trimmed = CLI::detail::trim_copy(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw CLI::ConversionError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = CLI::detail::trim_copy(trimmed.substr(0, eq));
    const std::string value = CLI::detail::trim_copy(trimmed.substr(eq + 1));
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config" || key == "help") {
      throw CLI::ConversionError(path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (opt->count() != 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attentional LSTM-CNN text steganalysis"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "build a cover/stego dataset from a cover corpus");
  add_config_option(generate);
  generate->add_option("--cover", gen.cover, "cover corpus, one sentence per line");
  generate->add_option("--out", gen.out, "output directory");
  generate->add_option("--bpw", gen.bpw, "embedded bits per word (1-5)");
  generate->add_option("--per-class", gen.per_class, "sentences per class");
  generate->add_option("--min-len", gen.min_len, "minimum sentence length");
  generate->add_option("--max-len", gen.max_len, "maximum sentence length");
  generate->add_option("--order", gen.order, "Markov chain order");
  generate->add_option("--seed", gen.seed, "random seed");
  generate->add_option("--threads", gen.threads, "generation threads");

  TrainArgs tr;
  ModelArgs train_model;
  auto* train_cmd = app.add_subcommand("train", "train a detector on train.tsv, select on val.tsv");
  add_config_option(train_cmd);
  train_cmd->add_option("--data", tr.data, "dataset directory");
  train_cmd->add_option("--model", tr.model, "output model file (vocabulary goes to <model>.vocab)");
  train_cmd->add_option("--report", tr.report, "per-epoch report file (default <model>.report.tsv)");
  add_model_flags(train_cmd, train_model, true);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "accuracy, precision and recall on a dataset file");
  add_config_option(eval_cmd);
  eval_cmd->add_option("--model", ev.model, "model file");
  eval_cmd->add_option("--data", ev.data, "label<TAB>text file");
  eval_cmd->add_option("--json", ev.json, "also write metrics as JSON");
  eval_cmd->add_option("--batch-size", ev.batch_size, "evaluation batch size");
  eval_cmd->add_option("--threads", ev.threads, "evaluation threads");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "label sentences read from stdin");
  add_config_option(predict_cmd);
  predict_cmd->add_option("--model", pr.model, "model file");
  predict_cmd->add_option("--batch-size", pr.batch_size, "prediction batch size");

  AblateArgs ab;
  ModelArgs ablate_model;
  auto* ablate_cmd = app.add_subcommand("ablate", "train all four variants and report test accuracy");
  add_config_option(ablate_cmd);
  ablate_cmd->add_option("--data", ab.data, "dataset directory");
  ablate_cmd->add_option("--out", ab.out, "also write the table to this file");
  add_model_flags(ablate_cmd, ablate_model, false);

  const std::vector<std::pair<CLI::App*, std::vector<std::string>>> required = {
      {generate, {"--cover", "--out"}},
      {train_cmd, {"--data", "--model"}},
      {eval_cmd, {"--model", "--data"}},
      {predict_cmd, {"--model"}},
      {ablate_cmd, {"--data"}},
  };
  for (auto& [sub, names] : required) {
    for (const auto& name : names) sub->get_option(name)->description(sub->get_option(name)->get_description() + " (required)");
  }

  try {
    app.parse(argc, argv);
    for (auto& [sub, names] : required) {
      if (!*sub) continue;
      apply_config_file(sub);
      for (const auto& name : names) {
        if (sub->get_option(name)->count() == 0) throw CLI::RequiredError(name);
      }
    }
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*train_cmd) return cmd_train(tr, train_model);
    if (*eval_cmd) return cmd_eval(ev);
    if (*predict_cmd) return cmd_predict(pr);
    if (*ablate_cmd) return cmd_ablate(ab, ablate_model);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
