#pragma once

// Checkpoint layout, little-endian:
//   "SNTL"  u16 version=1
//   u32 vocab_size d_model n_layers n_heads d_ff max_len n_classes   f64 dropout
//   32 bytes raw vocabulary SHA-256
//   u32 array count, then per array:
//     u16 name length, name bytes, u8 rank, u32 dims[rank], f64 values row-major

#include <string>

#include "sentinel/bytes.hpp"
#include "sentinel/nn/model.hpp"

namespace sentinel::nn {

struct Checkpoint {
  Model model;
  std::string vocab_sha256;
};

Bytes save_checkpoint(const Model& model, const std::string& vocab_sha256);
// Throws BadCheckpoint on malformed input.
Checkpoint load_checkpoint(ByteView data);
// As above, plus CompatibilityError when the vocabulary hash differs.
Checkpoint load_checkpoint(ByteView data, const std::string& expected_vocab_sha256);

}  // namespace sentinel::nn
