#include <doctest.h>

#include "sentinel/error.hpp"
#include "sentinel/pcap.hpp"
#include "sentinel/rng.hpp"

using namespace sentinel;

namespace {

std::vector<CaptureRecord> sample_records(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CaptureRecord> recs;
  std::int64_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t += static_cast<std::int64_t>(rng.between(1, 5000));
    Bytes frame(rng.between(14, 200));
    for (auto& b : frame) b = static_cast<std::uint8_t>(rng.below(256));
    recs.push_back(CaptureRecord::from_frame(t, std::move(frame)));
  }
  return recs;
}

// Byte-swapped image of a native file: every header field reversed.
Bytes byte_swap_file(const Bytes& native) {
  Bytes out = native;
  auto swap32 = [&](std::size_t off) { std::reverse(out.begin() + off, out.begin() + off + 4); };
  auto swap16 = [&](std::size_t off) { std::reverse(out.begin() + off, out.begin() + off + 2); };
  swap32(0);
  swap16(4);
  swap16(6);
  for (std::size_t off : {8, 12, 16, 20}) swap32(off);
  std::size_t pos = kPcapGlobalHeaderLen;
  while (pos < native.size()) {
    const std::uint32_t incl = load_le32(native.data() + pos + 8);
    for (std::size_t k = 0; k < 4; ++k) swap32(pos + 4 * k);
    pos += kPcapRecordHeaderLen + incl;
  }
  return out;
}

}  // namespace

TEST_CASE("empty capture is exactly the global header") {
  Bytes file = write_pcap(CaptureMeta{}, {});
  REQUIRE(file.size() == 24);
  CHECK(load_le32(file.data()) == 0xA1B2C3D4);
  CHECK(load_le16(file.data() + 4) == 2);
  CHECK(load_le16(file.data() + 6) == 4);
  CHECK(load_le32(file.data() + 16) == 65535);
  CHECK(load_le32(file.data() + 20) == 1);
  Capture cap = read_pcap(file);
  CHECK(cap.meta == CaptureMeta{});
  CHECK(cap.records.empty());
}

TEST_CASE("one 54-byte frame gives a 94-byte file") {
  std::vector<CaptureRecord> recs{CaptureRecord::from_frame(1'500'000, Bytes(54, 0x11))};
  Bytes file = write_pcap(CaptureMeta{}, recs);
  CHECK(file.size() == 94);
  CHECK(load_le32(file.data() + 24) == 1);       // ts_sec
  CHECK(load_le32(file.data() + 28) == 500000);  // ts_usec
  CHECK(load_le32(file.data() + 32) == 54);
  CHECK(load_le32(file.data() + 36) == 54);
}

TEST_CASE("write is deterministic and read inverts it") {
  auto recs = sample_records(500, 1);
  Bytes a = write_pcap(CaptureMeta{}, recs);
  Bytes b = write_pcap(CaptureMeta{}, recs);
  CHECK(a == b);
  Capture cap = read_pcap(a);
  CHECK(cap.records == recs);
  CHECK(write_pcap(cap.meta, cap.records) == a);
}

TEST_CASE("byte-swapped files read back as the native equivalent") {
  auto recs = sample_records(50, 2);
  Bytes native = write_pcap(CaptureMeta{}, recs);
  Bytes swapped = byte_swap_file(native);
  REQUIRE(swapped != native);
  Capture cap = read_pcap(swapped);
  CHECK(cap.meta.magic == kPcapMagic);
  CHECK(cap.records == recs);
  CHECK(write_pcap(cap.meta, cap.records) == native);
}

TEST_CASE("bad magic and truncation") {
  Bytes junk(24, 0x42);
  try {
    read_pcap(junk);
    FAIL("expected BadMagic");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadMagic);
  }

  auto recs = sample_records(10, 3);
  Bytes file = write_pcap(CaptureMeta{}, recs);
  // Cut in the middle of record 7's frame.
  std::size_t offset = kPcapGlobalHeaderLen;
  for (std::size_t i = 0; i < 7; ++i) offset += kPcapRecordHeaderLen + recs[i].frame.size();
  const std::size_t cut = offset + kPcapRecordHeaderLen + recs[7].frame.size() / 2;
  Bytes truncated(file.begin(), file.begin() + static_cast<std::ptrdiff_t>(cut));
  try {
    read_pcap(truncated);
    FAIL("expected TruncatedRecord");
  } catch (const TruncatedRecordError& e) {
    CHECK(e.code() == ErrorCode::TruncatedRecord);
    CHECK(e.complete_records() == 7);
  }
  // Cut inside a record header.
  Bytes in_header(file.begin(), file.begin() + static_cast<std::ptrdiff_t>(offset + 5));
  CHECK_THROWS_AS(read_pcap(in_header), TruncatedRecordError);
}

TEST_CASE("records longer than snaplen are refused") {
  CaptureMeta meta;
  meta.snaplen = 64;
  std::vector<CaptureRecord> recs{CaptureRecord::from_frame(0, Bytes(65, 0))};
  try {
    write_pcap(meta, recs);
    FAIL("expected RecordTooLong");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::RecordTooLong);
  }
}
