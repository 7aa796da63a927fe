#include "sentinel/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <json.hpp>
#include <sstream>

#include "sentinel/error.hpp"
#include "sentinel/packet.hpp"
#include "sentinel/rng.hpp"

namespace sentinel {

namespace {

constexpr char kMagic[4] = {'S', 'N', 'T', 'D'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kNoLabel = 255;
constexpr std::size_t kHeaderLen = 4 + 2 + 4 + 1 + 1 + 32;

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::BadDataset, what); }

TokenSeq seq_from_ids(const std::vector<TokenId>& ids) {
  if (ids.size() > kSeqLen) bad("sequence longer than " + std::to_string(kSeqLen));
  TokenSeq seq;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    seq.ids[i] = ids[i];
    seq.mask[i] = true;
  }
  return seq;
}

Packet decode_or_empty(const CaptureRecord& rec) {
  try {
    return decode_frame(rec.frame, rec.timestamp_us());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::FrameTooShort) throw;
    Packet p;
    p.timestamp_us = rec.timestamp_us();
    p.raw = rec.frame;
    return p;
  }
}

TokenDataset decode_binary(ByteView data) {
  if (data.size() < kHeaderLen) bad("dataset header truncated");
  const std::uint8_t* p = data.data();
  if (load_le16(p + 4) != kVersion) bad("unsupported dataset version");
  const std::uint32_t count = load_le32(p + 6);
  if (p[10] != kSeqLen) bad("dataset sequence length " + std::to_string(p[10]));
  const bool has_labels = p[11] != 0;
  TokenDataset ds;
  ds.vocab_sha256 = hex_encode(data.subspan(12, 32));
  std::size_t pos = kHeaderLen;
  ds.seqs.reserve(count);
  ds.labels.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    if (pos >= data.size()) bad("dataset truncated at record " + std::to_string(r));
    const std::size_t n = data[pos++];
    if (pos + 2 * n + 1 > data.size()) bad("dataset truncated at record " + std::to_string(r));
    std::vector<TokenId> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = load_le16(p + pos + 2 * i);
    pos += 2 * n;
    const std::uint8_t label = data[pos++];
    ds.seqs.push_back(seq_from_ids(ids));
    if (label == kNoLabel) {
      ds.labels.emplace_back();
    } else if (label < kClassCount) {
      ds.labels.emplace_back(static_cast<ThreatClass>(label));
    } else {
      bad("bad label byte at record " + std::to_string(r));
    }
    if (has_labels && !ds.labels.back()) bad("missing label at record " + std::to_string(r));
  }
  if (pos != data.size()) bad("trailing bytes after dataset records");
  return ds;
}

TokenDataset decode_jsonl(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  TokenDataset ds;
  std::size_t expected = 0;
  bool header = false;
  std::size_t lineno = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      if (!header) {
        if (j.value("format", "") != "sentinel-tokens") bad("not a token dataset");
        if (j.at("version").get<int>() != kVersion) bad("unsupported dataset version");
        ds.vocab_sha256 = j.at("vocab_sha256").get<std::string>();
        expected = j.at("count").get<std::size_t>();
        header = true;
        continue;
      }
      const auto ids = j.at("ids").get<std::vector<int>>();
      const auto mask = j.at("mask").get<std::vector<int>>();
      if (ids.size() != kSeqLen || mask.size() != kSeqLen) bad("line " + std::to_string(lineno) + ": need 32 ids");
      TokenSeq seq;
      for (std::size_t i = 0; i < kSeqLen; ++i) {
        if (ids[i] < 0 || ids[i] > 0xFFFF) bad("line " + std::to_string(lineno) + ": id out of range");
        seq.ids[i] = static_cast<TokenId>(ids[i]);
        seq.mask[i] = mask[i] != 0;
      }
      ds.seqs.push_back(seq);
      const auto& label = j.at("label");
      if (label.is_null()) {
        ds.labels.emplace_back();
      } else {
        auto c = parse_threat_class(label.get<std::string>());
        if (!c) bad("line " + std::to_string(lineno) + ": unknown label");
        ds.labels.emplace_back(*c);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    bad("line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!header) bad("empty dataset file");
  if (ds.seqs.size() != expected) bad("record count does not match header");
  return ds;
}

}  // namespace

bool TokenDataset::fully_labeled() const {
  return std::all_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
}

TokenDataset tokenize_capture(const Capture& capture, const std::vector<RecordLabel>* labels,
                              const Vocab& vocab) {
  if (labels && labels->size() != capture.records.size()) {
    bad("labels sidecar has " + std::to_string(labels->size()) + " entries for " +
        std::to_string(capture.records.size()) + " records");
  }
  TokenDataset ds;
  ds.vocab_sha256 = vocab.hash();
  ds.seqs.reserve(capture.records.size());
  ds.labels.reserve(capture.records.size());
  FlowClock clock;
  for (std::size_t i = 0; i < capture.records.size(); ++i) {
    const Packet packet = decode_or_empty(capture.records[i]);
    std::optional<std::int64_t> prev;
    if (labels) {
      const RecordLabel& l = (*labels)[i];
      if (l.index != i || l.ts_us != capture.records[i].timestamp_us()) {
        bad("labels sidecar disagrees with record " + std::to_string(i));
      }
      prev = l.prev_ts_us;
      ds.labels.emplace_back(l.label);
    } else {
      prev = clock.observe(packet);
      ds.labels.emplace_back();
    }
    ds.seqs.push_back(tokenize_packet(packet, prev, vocab));
  }
  return ds;
}

Bytes encode_dataset(const TokenDataset& ds) {
  Bytes out(kMagic, kMagic + 4);
  put_le16(out, kVersion);
  put_le32(out, static_cast<std::uint32_t>(ds.size()));
  out.push_back(static_cast<std::uint8_t>(kSeqLen));
  out.push_back(ds.fully_labeled() && ds.size() > 0 ? 1 : 0);
  auto sha = hex_decode(ds.vocab_sha256);
  if (!sha || sha->size() != 32) bad("dataset vocab hash is not a SHA-256 digest");
  append(out, *sha);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const std::size_t n = ds.seqs[r].length();
    out.push_back(static_cast<std::uint8_t>(n));
    for (std::size_t i = 0; i < n; ++i) put_le16(out, ds.seqs[r].ids[i]);
    out.push_back(ds.labels[r] ? static_cast<std::uint8_t>(index_of(*ds.labels[r])) : kNoLabel);
  }
  return out;
}

std::string dataset_to_jsonl(const TokenDataset& ds) {
  std::string out = nlohmann::json{{"format", "sentinel-tokens"},
                                   {"version", kVersion},
                                   {"vocab_sha256", ds.vocab_sha256},
                                   {"count", ds.size()}}
                        .dump();
  out += '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    nlohmann::json j;
    j["ids"] = std::vector<int>(ds.seqs[r].ids.begin(), ds.seqs[r].ids.end());
    j["mask"] = std::vector<int>(ds.seqs[r].mask.begin(), ds.seqs[r].mask.end());
    j["label"] = ds.labels[r] ? nlohmann::json(std::string(to_string(*ds.labels[r]))) : nlohmann::json();
    out += j.dump();
    out += '\n';
  }
  return out;
}

TokenDataset decode_dataset(ByteView data) {
  if (data.size() >= 4 && std::memcmp(data.data(), kMagic, 4) == 0) return decode_binary(data);
  if (!data.empty() && data[0] == '{') {
    return decode_jsonl(std::string_view(reinterpret_cast<const char*>(data.data()), data.size()));
  }
  bad("unrecognized dataset format");
}

TokenDataset load_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

void check_vocab(const TokenDataset& ds, const Vocab& vocab) {
  if (ds.vocab_sha256 != vocab.hash()) {
    throw Error(ErrorCode::CompatibilityError,
                "dataset vocabulary " + ds.vocab_sha256 + " differs from " + vocab.hash());
  }
}

Split balanced_split(const TokenDataset& ds, std::size_t train_per_class,
                     std::size_t test_per_class, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kClassCount> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.labels[i]) bad("balanced split needs labels; record " + std::to_string(i) + " has none");
    by_class[index_of(*ds.labels[i])].push_back(i);
  }
  Rng rng(seed);
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  for (auto c : kAllClasses) {
    auto& idx = by_class[index_of(c)];
    if (idx.size() < train_per_class + test_per_class) {
      bad("class " + std::string(to_string(c)) + " has " + std::to_string(idx.size()) +
          " records, need " + std::to_string(train_per_class + test_per_class));
    }
    // Fisher-Yates with the shared range reduction.
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train_per_class));
    test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(train_per_class),
                    idx.begin() + static_cast<std::ptrdiff_t>(train_per_class + test_per_class));
  }
  auto take = [&](std::vector<std::size_t> idx) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    TokenDataset out;
    out.vocab_sha256 = ds.vocab_sha256;
    for (std::size_t i : idx) {
      out.seqs.push_back(ds.seqs[i]);
      out.labels.push_back(ds.labels[i]);
    }
    return out;
  };
  Split split;
  split.train = take(std::move(train_idx));
  split.test = take(std::move(test_idx));
  return split;
}

}  // namespace sentinel
