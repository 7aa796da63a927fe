#pragma once

// Token datasets: one TokenSeq (plus optional label) per capture record.
//
// Binary layout, all integers little-endian:
//   "SNTD" u16 version=1 u32 count u8 seq_len u8 has_labels
//   32 bytes raw SHA-256 of the vocabulary export
//   count x { u8 n  u16 id[n]  u8 label }      label 255 = none
// Only the n non-pad ids are stored; the rest of the sequence is [PAD].
//
// JSONL fallback: a header line
//   {"format":"sentinel-tokens","version":1,"vocab_sha256":"..","count":N}
// then one line per record {"ids":[..32..],"mask":[..32..],"label":"benign"|null}.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sentinel/bytes.hpp"
#include "sentinel/forge.hpp"
#include "sentinel/lang.hpp"
#include "sentinel/pcap.hpp"
#include "sentinel/threat_class.hpp"

namespace sentinel {

struct TokenDataset {
  std::string vocab_sha256;
  std::vector<TokenSeq> seqs;
  std::vector<std::optional<ThreatClass>> labels;  // same length as seqs

  std::size_t size() const { return seqs.size(); }
  bool fully_labeled() const;
  bool operator==(const TokenDataset&) const = default;
};

// IAT context comes from the labels' prev_ts_us when given (it survives the
// warm-up trim); otherwise from a FlowClock over the capture itself.
TokenDataset tokenize_capture(const Capture& capture, const std::vector<RecordLabel>* labels,
                              const Vocab& vocab);

enum class DatasetFormat { Binary, Jsonl };

Bytes encode_dataset(const TokenDataset& ds);
std::string dataset_to_jsonl(const TokenDataset& ds);
// Detects the format from the first bytes. Throws BadDataset.
TokenDataset decode_dataset(ByteView data);
TokenDataset load_dataset(const std::string& path);

// Throws CompatibilityError when the dataset was made with another vocabulary.
void check_vocab(const TokenDataset& ds, const Vocab& vocab);

struct Split {
  TokenDataset train;
  TokenDataset test;
};

// Draws train_per_class + test_per_class records of every class after a seeded
// shuffle. Throws BadDataset when a class is short or records are unlabeled.
Split balanced_split(const TokenDataset& ds, std::size_t train_per_class,
                     std::size_t test_per_class, std::uint64_t seed);

}  // namespace sentinel
