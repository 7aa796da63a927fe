#pragma once

// Model and training settings for the command line, as one JSON document:
//
//   {"seed": 7,
//    "model":    {"d_model": 64, "n_layers": 2, "n_heads": 4, "d_ff": 128, "dropout": 0},
//    "pretrain": {"epochs": 3, "batch_size": 32, "lr": 0.001, "beta1": 0.9,
//                 "beta2": 0.999, "eps": 1e-8, "eval_limit": 2048},
//    "finetune": {"epochs": 10, "batch_size": 32, "lr": 0.001, "beta1": 0.9,
//                 "beta2": 0.999, "eps": 1e-8, "target_accuracy": 0,
//                 "freeze": ["embeddings", "layer0"]}}
//
// Every key is optional; absent keys keep the defaults shown. vocab_size,
// max_len and n_classes always come from the PL-1 vocabulary.

#include <cstdint>
#include <string>
#include <vector>

#include "sentinel/lang.hpp"
#include "sentinel/nn/model.hpp"
#include "sentinel/nn/train.hpp"

namespace sentinel {

struct RunConfig {
  std::uint64_t seed = 7;
  nn::ModelConfig model;
  nn::Schedule pretrain;
  nn::Schedule finetune;
  // Applied only when fine-tuning starts from a checkpoint.
  std::vector<std::string> freeze;

  bool operator==(const RunConfig&) const = default;
};

RunConfig default_run_config(const Vocab& vocab);
// Throws InvalidConfig (with the field path) or UnknownFreezeTarget.
RunConfig parse_run_config(const std::string& json_text, const Vocab& vocab);
std::string run_config_to_json(const RunConfig& config);

}  // namespace sentinel
