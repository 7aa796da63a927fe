#include <doctest.h>

#include "sentinel/dataset.hpp"
#include "sentinel/error.hpp"

using namespace sentinel;

namespace {

const LabeledCapture& default_capture() {
  static const LabeledCapture cap = forge(default_scenario());
  return cap;
}

}  // namespace

TEST_CASE("default scenario has enough of every class for the 4k/1k split") {
  const auto& cap = default_capture();
  for (auto c : kAllClasses) {
    MESSAGE(to_string(c) << ": " << cap.manifest.class_counts[index_of(c)]);
    CHECK(cap.manifest.class_counts[index_of(c)] >= 5000);
  }
}

TEST_CASE("tokenized capture: one well-formed sequence per record") {
  const auto& cap = default_capture();
  const Vocab& vocab = pl1_vocab();
  TokenDataset ds = tokenize_capture(cap.capture, &cap.labels, vocab);
  REQUIRE(ds.size() == cap.capture.records.size());
  CHECK(ds.fully_labeled());
  CHECK(ds.vocab_sha256 == vocab.hash());
  for (const auto& s : ds.seqs) CHECK(is_well_formed(s, vocab));

  // Without labels the flow clock starts at the cut, so only IAT tokens may differ.
  TokenDataset bare = tokenize_capture(cap.capture, nullptr, vocab);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK_FALSE(bare.labels[i].has_value());
    if (bare.seqs[i] != ds.seqs[i]) {
      ++differing;
      const std::size_t n = ds.seqs[i].length();
      for (std::size_t k = 0; k < kSeqLen; ++k) {
        if (k != n - 2) CHECK(bare.seqs[i].ids[k] == ds.seqs[i].ids[k]);
      }
    }
  }
  CHECK(differing > 0);
  CHECK(differing < ds.size() / 20);
}

TEST_CASE("binary and JSONL encodings round trip") {
  const auto& cap = default_capture();
  TokenDataset ds = tokenize_capture(cap.capture, &cap.labels, pl1_vocab());
  ds.seqs.resize(500);
  ds.labels.resize(500);
  ds.labels[3].reset();
  const Bytes bin = encode_dataset(ds);
  CHECK(decode_dataset(bin) == ds);
  CHECK(encode_dataset(decode_dataset(bin)) == bin);
  const std::string text = dataset_to_jsonl(ds);
  CHECK(decode_dataset(ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())) == ds);

  Bytes cut(bin.begin(), bin.end() - 3);
  CHECK_THROWS_AS(decode_dataset(cut), Error);
  Bytes junk = {'x', 'y', 'z', 'w'};
  CHECK_THROWS_AS(decode_dataset(junk), Error);
}

TEST_CASE("balanced split is seeded, disjoint and balanced") {
  const auto& cap = default_capture();
  TokenDataset ds = tokenize_capture(cap.capture, &cap.labels, pl1_vocab());
  Split a = balanced_split(ds, 400, 100, 5);
  Split b = balanced_split(ds, 400, 100, 5);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() == 1600);
  CHECK(a.test.size() == 400);
  std::array<std::size_t, kClassCount> counts{};
  for (const auto& l : a.test.labels) counts[index_of(*l)]++;
  for (auto n : counts) CHECK(n == 100);
  CHECK_FALSE(balanced_split(ds, 400, 100, 6).train == a.train);
  CHECK_THROWS_AS(balanced_split(ds, 100000, 1, 5), Error);
}

TEST_CASE("vocabulary mismatch is a compatibility error") {
  TokenDataset ds;
  ds.vocab_sha256 = std::string(64, '0');
  try {
    check_vocab(ds, pl1_vocab());
    FAIL("expected CompatibilityError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CompatibilityError);
  }
}
