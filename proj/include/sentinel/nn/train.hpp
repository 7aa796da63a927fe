#pragma once

// Adam and the two training loops.
//
// adam_step, for every trainable array p with gradient g (t = step after increment):
//   m = b1 m + (1 - b1) g
//   v = b2 v + (1 - b2) g^2
//   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
// Frozen arrays keep their moments at zero and are never written.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sentinel/dataset.hpp"
#include "sentinel/nn/model.hpp"

namespace sentinel::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

struct OptState {
  AdamConfig cfg;
  std::uint64_t step = 0;
  ParamBundle m;
  ParamBundle v;
};

OptState init_opt(const ParamBundle& params, const AdamConfig& cfg);
void adam_step(ParamBundle& params, const ParamBundle& grads, OptState& state,
               const std::vector<bool>& frozen);

struct Schedule {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  AdamConfig adam;
  // Fine-tuning stops after the first epoch whose held-out macro accuracy
  // reaches this value; 0 disables it.
  double target_accuracy = 0;
  // Pretraining evaluates the MLM loss on at most this many corpus
  // sequences with one fixed mask plan, before training and after each epoch.
  std::size_t eval_limit = 2048;
  bool operator==(const Schedule&) const = default;
};

// One CSV row: epoch,split,loss,accuracy.
struct LogRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0;
  double accuracy = 0;
};

std::string log_to_csv(std::span<const LogRow> rows);

// Called after each logged row; lets the CLI stream progress to stderr.
using LogSink = std::function<void(const LogRow&)>;

// Called with the model as it stands at the end of each epoch.
using EpochHook = std::function<void(std::size_t epoch, const Model& model)>;

struct TrainOptions {
  std::size_t threads = 1;
  LogSink sink;
  EpochHook on_epoch;
};

struct TrainResult {
  Model model;
  std::vector<LogRow> log;
};

// Rows: epoch 0 "eval" at init, then per epoch "train" (running mean over the
// epoch's batches) and "eval" (fixed mask plan). Throws EmptyCorpus.
TrainResult pretrain(std::span<const TokenSeq> corpus, const ModelConfig& config,
                     const Schedule& schedule, std::uint64_t seed, const TrainOptions& opts = {});

struct LabeledSet {
  std::span<const TokenSeq> seqs;
  std::span<const ThreatClass> labels;
};

// Rows per epoch: "train" and, when held_out is nonempty, "test" (accuracy is
// the macro accuracy, the mean per-class recall).
// Throws UnknownFreezeTarget, EmptyCorpus, ShapeMismatch.
TrainResult finetune(const Model& start, LabeledSet train, LabeledSet held_out,
                     std::span<const std::string> freeze_plan, const Schedule& schedule,
                     std::uint64_t seed, const TrainOptions& opts = {});

// Default freeze plan for fine-tuning a pretrained model.
std::vector<std::string> default_freeze_plan();

// Labels of a fully labeled dataset; throws BadDataset otherwise.
std::vector<ThreatClass> require_labels(const TokenDataset& ds);

}  // namespace sentinel::nn
