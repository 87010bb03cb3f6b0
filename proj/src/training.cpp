#include "attnsteg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>
#include <thread>

#include "attnsteg/errors.hpp"

namespace attnsteg {

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy_loss: probs " + shape_to_string(probs.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = probs.dim(0), classes = probs.dim(1);
  std::vector<std::size_t> picked(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw ContractError("cross_entropy_loss: label " + std::to_string(labels[b]) + " outside [0," +
                          std::to_string(classes) + ")");
    }
    picked[b] = b * classes + static_cast<std::size_t>(labels[b]);
  }
  const T floor = static_cast<T>(kProbabilityFloor);
  auto pv = probs.values();
  T total = 0;
  for (std::size_t i : picked) total -= std::log(std::max(pv[i], floor));
  const T inv_batch = T(1) / static_cast<T>(batch);
  return detail::make_result<T>({1}, {total * inv_batch}, {probs}, "cross_entropy",
                                [picked, floor, inv_batch](Node<T>& self) {
                                  auto gp = detail::parent_grad(self, 0);
                                  if (gp.empty()) return;
                                  const auto& pv = self.parents[0]->value;
                                  for (std::size_t i : picked) {
                                    if (pv[i] > floor) gp[i] -= self.grad[0] * inv_batch / pv[i];
                                  }
                                });
}

template <typename T>
Adam<T>::Adam(AdamConfig config, std::vector<std::pair<std::string, Tensor<T>>> params)
    : config_(config), params_(std::move(params)) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.size(), T(0));
    v_.emplace_back(t.size(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  for (const auto& [name, t] : params_) {
    if (!t.has_grad()) throw ContractError("adam_step: parameter '" + name + "' has no gradient");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor<T>& param = params_[p].second;
    auto g = param.grad();
    auto theta = param.mutable_values();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      theta[i] = static_cast<T>(theta[i] - config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps));
    }
  }
}

template <typename T>
double clip_grad_norm(std::span<std::pair<std::string, Tensor<T>>> params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    for (T g : t.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      for (T& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

EncodedBatch make_batch(std::span<const EncodedExample> examples, std::span<const std::size_t> indices) {
  EncodedBatch batch;
  batch.batch_size = indices.size();
  for (std::size_t i : indices) batch.seq_len = std::max(batch.seq_len, examples[i].ids.size());
  batch.ids.assign(batch.batch_size * batch.seq_len, kPadId);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& ex = examples[indices[b]];
    std::copy(ex.ids.begin(), ex.ids.end(), batch.ids.begin() + b * batch.seq_len);
    batch.lengths.push_back(ex.ids.size());
    batch.labels.push_back(ex.label);
  }
  return batch;
}

Metrics metrics_from_confusion(std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  const std::uint64_t total = m.total();
  m.accuracy = total ? static_cast<double>(tp + tn) / static_cast<double>(total) : 0.0;
  m.precision_undefined = tp + fp == 0;
  m.recall_undefined = tp + fn == 0;
  m.precision = m.precision_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall = m.recall_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  return m;
}

Metrics metrics_from_predictions(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw DimensionError("metrics: prediction and label counts differ");
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool pos_pred = predicted[i] == kStegoLabel;
    const bool pos_true = truth[i] == kStegoLabel;
    if (pos_pred && pos_true) ++tp;
    else if (pos_pred) ++fp;
    else if (pos_true) ++fn;
    else ++tn;
  }
  return metrics_from_confusion(tp, fp, tn, fn);
}

std::vector<int> predict_labels(const ModelConfig& config, const ModelParams<float>& params,
                                std::span<const EncodedExample> data, const EvalOptions& options) {
  std::vector<int> labels(data.size(), 0);
  const std::size_t batch_size = std::max<std::size_t>(1, options.batch_size);
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx;
    for (std::size_t start = begin; start < end; start += batch_size) {
      idx.clear();
      for (std::size_t i = start; i < std::min(end, start + batch_size); ++i) idx.push_back(i);
      const Prediction pred = predict(config, params, make_batch(data, idx));
      for (std::size_t b = 0; b < idx.size(); ++b) labels[idx[b]] = pred.labels[b];
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(1, data.size()));
  if (threads == 1) {
    work(0, data.size());
    return labels;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (data.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk, end = std::min(data.size(), begin + chunk);
    pool.emplace_back([&, t, begin, end] {
      try {
        if (begin < end) work(begin, end);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return labels;
}

Metrics evaluate(const ModelConfig& config, const ModelParams<float>& params, std::span<const EncodedExample> data,
                 const EvalOptions& options) {
  const std::vector<int> predicted = predict_labels(config, params, data, options);
  std::vector<int> truth;
  truth.reserve(data.size());
  for (const auto& ex : data) truth.push_back(ex.label);
  return metrics_from_predictions(predicted, truth);
}

namespace {

void check_dataset(std::span<const EncodedExample> data, const ModelConfig& config, const char* which) {
  for (const auto& ex : data) {
    if (ex.ids.size() < config.min_seq_len()) {
      throw ConfigError(std::string(which) + " set contains a sequence shorter than the widest kernel");
    }
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= config.n_classes) {
      throw ConfigError(std::string(which) + " set contains label " + std::to_string(ex.label));
    }
    for (std::int32_t id : ex.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
        throw ConfigError(std::string(which) + " set contains token id " + std::to_string(id) +
                          " outside the vocabulary");
      }
    }
  }
}

std::vector<std::pair<std::string, std::string>> describe(const ModelConfig& config, const TrainOptions& options) {
  std::ostringstream kernels;
  for (std::size_t i = 0; i < config.kernel_widths.size(); ++i) kernels << (i ? "," : "") << config.kernel_widths[i];
  auto num = [](double v) {
    std::ostringstream s;
    s.imbue(std::locale::classic());
    s << v;
    return s.str();
  };
  return {
      {"variant", std::string(variant_name(config.variant))},
      {"vocab_size", std::to_string(config.vocab_size)},
      {"embed_dim", std::to_string(config.embed_dim)},
      {"hidden", std::to_string(config.hidden)},
      {"kernels", kernels.str()},
      {"feature_maps", std::to_string(config.feature_maps)},
      {"fc_dim", std::to_string(config.fc_dim)},
      {"dropout", num(config.dropout_rate)},
      {"max_len", std::to_string(config.max_seq_len)},
      {"epochs", std::to_string(options.epochs)},
      {"batch_size", std::to_string(options.batch_size)},
      {"lr", num(options.adam.lr)},
      {"clip_norm", num(options.clip_norm)},
      {"seed", std::to_string(options.seed)},
  };
}

}  // namespace

TrainResult train(const ModelConfig& config, std::span<const EncodedExample> train_set,
                  std::span<const EncodedExample> val_set, const TrainOptions& options, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (val_set.empty()) throw ConfigError("validation set is empty");
  if (train_set.size() < 2) throw ConfigError("training set needs at least 2 examples for batch normalization");
  if (options.batch_size < 2) throw ConfigError("batch_size must be at least 2");
  std::vector<bool> seen(config.n_classes, false);
  for (const auto& ex : train_set) {
    if (ex.label >= 0 && static_cast<std::size_t>(ex.label) < seen.size()) seen[static_cast<std::size_t>(ex.label)] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) throw ConfigError("training set contains a single class");
  check_dataset(train_set, config, "training");
  check_dataset(val_set, config, "validation");

  const Rng root(options.seed);
  Rng init_rng = root.substream("init");
  Rng shuffle_rng = root.substream("shuffle");
  Rng dropout_rng = root.substream("dropout");

  TrainResult result{init_params<float>(config, init_rng), {}};
  result.report.seed = options.seed;
  result.report.config = describe(config, options);
  ModelParams<float>& params = result.params;
  ModelParams<float> best = params.clone();
  double best_acc = -1.0;

  auto learnable = params.learnable();
  Adam<float> adam(options.adam, learnable);
  std::vector<std::size_t> order(train_set.size());
  EvalOptions eval_options{std::max<std::size_t>(options.batch_size, 64), 1};

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      spans.emplace_back(start, std::min(order.size(), start + options.batch_size));
    }
    // A trailing single example cannot be batch-normalized; fold it in.
    if (spans.size() > 1 && spans.back().second - spans.back().first == 1) {
      spans[spans.size() - 2].second = spans.back().second;
      spans.pop_back();
    }

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < spans.size(); ++bi) {
      const auto idx = std::span<const std::size_t>(order).subspan(spans[bi].first, spans[bi].second - spans[bi].first);
      const EncodedBatch batch = make_batch(train_set, idx);
      try {
        params.zero_grad();
        const auto out = forward(config, params, batch, Mode::Train, dropout_rng);
        const Tensor<float> loss = cross_entropy_loss(out.probs, batch.labels);
        if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
        backward(loss);
        const double norm = clip_grad_norm<float>(learnable, options.clip_norm);
        if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
        adam.step();
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi + 1) + ": " + e.what());
      }
    }
    params.zero_grad();

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train_set.size());
    record.train = evaluate(config, params, train_set, eval_options);
    record.val = evaluate(config, params, val_set, eval_options);
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (record.val.accuracy > best_acc) {
      best_acc = record.val.accuracy;
      best = params.clone();
      result.report.best_epoch = epoch;
    }
    result.report.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  if (options.epochs > 0) result.params = std::move(best);
  return result;
}

void write_report(std::ostream& out, const TrainReport& report) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  for (const auto& [key, value] : report.config) s << "# " << key << "=" << value << "\n";
  s << "# best_epoch=" << report.best_epoch << "\n";
  s << "epoch\tloss\ttrain_acc\ttrain_p\ttrain_r\tval_acc\tval_p\tval_r\tseconds\n";
  s.setf(std::ios::fixed);
  for (const auto& e : report.epochs) {
    s.precision(6);
    s << e.epoch << "\t" << e.train_loss << "\t" << e.train.accuracy << "\t" << e.train.precision << "\t"
      << e.train.recall << "\t" << e.val.accuracy << "\t" << e.val.precision << "\t" << e.val.recall << "\t";
    s.precision(3);
    s << e.seconds << "\n";
  }
  out << s.str();
}

template Tensor<float> cross_entropy_loss(const Tensor<float>&, std::span<const int>);
template Tensor<double> cross_entropy_loss(const Tensor<double>&, std::span<const int>);
template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm(std::span<std::pair<std::string, Tensor<float>>>, double);
template double clip_grad_norm(std::span<std::pair<std::string, Tensor<double>>>, double);

}  // namespace attnsteg
