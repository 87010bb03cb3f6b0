#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnsteg/batch.hpp"
#include "attnsteg/model.hpp"
#include "attnsteg/tensor.hpp"

namespace attnsteg {

/// Probabilities below this are clamped before the log.
inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over the batch of -log(probs[b, labels[b]]).
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& probs, std::span<const int> labels);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed set of named parameters.
template <typename T>
class Adam {
 public:
  Adam(AdamConfig config, std::vector<std::pair<std::string, Tensor<T>>> params);

  /// One update from the gradients currently held by the parameters. Throws
  /// ContractError naming the first parameter without a gradient.
  void step();

  std::uint64_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }
  std::span<const T> first_moment(std::size_t i) const { return m_[i]; }
  std::span<const T> second_moment(std::size_t i) const { return v_[i]; }

 private:
  AdamConfig config_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Scales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<std::pair<std::string, Tensor<T>>> params, double max_norm);

/// One encoded sentence.
struct EncodedExample {
  std::vector<std::int32_t> ids;  // valid prefix, at least the minimum length
  int label = 0;
};

/// Pads the selected examples to the longest one in the selection.
EncodedBatch make_batch(std::span<const EncodedExample> examples, std::span<const std::size_t> indices);

struct Metrics {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool precision_undefined = false;  // TP + FP == 0, reported as 0
  bool recall_undefined = false;     // TP + FN == 0, reported as 0

  std::uint64_t total() const { return tp + fp + tn + fn; }
};

/// Stego is the positive class.
Metrics metrics_from_confusion(std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn);
Metrics metrics_from_predictions(std::span<const int> predicted, std::span<const int> truth);

struct EvalOptions {
  std::size_t batch_size = 128;
  std::size_t threads = 1;
};

/// Infer-mode predictions over a dataset, in dataset order.
std::vector<int> predict_labels(const ModelConfig& config, const ModelParams<float>& params,
                                std::span<const EncodedExample> data, const EvalOptions& options = {});

Metrics evaluate(const ModelConfig& config, const ModelParams<float>& params, std::span<const EncodedExample> data,
                 const EvalOptions& options = {});

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  AdamConfig adam;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  Metrics train;
  Metrics val;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;  // echoed settings
};

struct TrainResult {
  ModelParams<float> params;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on the cross-entropy loss; returns the parameters of the
/// epoch with the best validation accuracy (earliest on ties).
TrainResult train(const ModelConfig& config, std::span<const EncodedExample> train_set,
                  std::span<const EncodedExample> val_set, const TrainOptions& options,
                  const EpochCallback& on_epoch = {});

/// Tab-separated table, one row per epoch, '#'-prefixed settings first.
/// Columns: epoch loss train_acc train_p train_r val_acc val_p val_r seconds
void write_report(std::ostream& out, const TrainReport& report);

}  // namespace attnsteg
