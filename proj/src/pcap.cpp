#include "sentinel/pcap.hpp"

#include "sentinel/error.hpp"

namespace sentinel {
namespace {

struct FieldReader {
  bool swapped;
  std::uint16_t u16(const std::uint8_t* p) const {
    const std::uint16_t v = load_le16(p);
    return swapped ? __builtin_bswap16(v) : v;
  }
  std::uint32_t u32(const std::uint8_t* p) const {
    const std::uint32_t v = load_le32(p);
    return swapped ? __builtin_bswap32(v) : v;
  }
};

}  // namespace

CaptureRecord CaptureRecord::from_frame(std::int64_t timestamp_us, Bytes frame) {
  CaptureRecord rec;
  rec.ts_sec = static_cast<std::uint32_t>(timestamp_us / 1'000'000);
  rec.ts_usec = static_cast<std::uint32_t>(timestamp_us % 1'000'000);
  rec.incl_len = static_cast<std::uint32_t>(frame.size());
  rec.orig_len = rec.incl_len;
  rec.frame = std::move(frame);
  return rec;
}

Capture read_pcap(ByteView bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::BadMagic, "file shorter than the magic number");
  const std::uint32_t magic = load_le32(bytes.data());
  if (magic != kPcapMagic && magic != kPcapMagicSwapped) {
    throw Error(ErrorCode::BadMagic, "unrecognized pcap magic");
  }
  if (bytes.size() < kPcapGlobalHeaderLen) {
    throw TruncatedRecordError(0, "global header cut short");
  }
  const FieldReader rd{magic == kPcapMagicSwapped};
  const std::uint8_t* g = bytes.data();

  Capture cap;
  cap.meta.magic = kPcapMagic;
  cap.meta.version_major = rd.u16(g + 4);
  cap.meta.version_minor = rd.u16(g + 6);
  cap.meta.thiszone = static_cast<std::int32_t>(rd.u32(g + 8));
  cap.meta.sigfigs = rd.u32(g + 12);
  cap.meta.snaplen = rd.u32(g + 16);
  cap.meta.linktype = rd.u32(g + 20);

  std::size_t pos = kPcapGlobalHeaderLen;
  while (pos < bytes.size()) {
    const std::size_t index = cap.records.size();
    if (bytes.size() - pos < kPcapRecordHeaderLen) {
      throw TruncatedRecordError(index, "record " + std::to_string(index) + " header cut short");
    }
    const std::uint8_t* h = bytes.data() + pos;
    CaptureRecord rec;
    rec.ts_sec = rd.u32(h);
    rec.ts_usec = rd.u32(h + 4);
    rec.incl_len = rd.u32(h + 8);
    rec.orig_len = rd.u32(h + 12);
    pos += kPcapRecordHeaderLen;
    if (bytes.size() - pos < rec.incl_len) {
      throw TruncatedRecordError(index, "record " + std::to_string(index) + " frame cut short");
    }
    rec.frame.assign(bytes.begin() + pos, bytes.begin() + pos + rec.incl_len);
    pos += rec.incl_len;
    cap.records.push_back(std::move(rec));
  }
  return cap;
}

Capture read_pcap_file(const std::string& path) { return read_pcap(read_file(path)); }

Bytes write_pcap(const CaptureMeta& meta, const std::vector<CaptureRecord>& records) {
  std::size_t total = kPcapGlobalHeaderLen;
  for (const auto& rec : records) total += kPcapRecordHeaderLen + rec.frame.size();
  Bytes out;
  out.reserve(total);
  put_le32(out, kPcapMagic);
  put_le16(out, meta.version_major);
  put_le16(out, meta.version_minor);
  put_le32(out, static_cast<std::uint32_t>(meta.thiszone));
  put_le32(out, meta.sigfigs);
  put_le32(out, meta.snaplen);
  put_le32(out, meta.linktype);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.incl_len > meta.snaplen) {
      throw Error(ErrorCode::RecordTooLong, "record " + std::to_string(i) + " has incl_len " +
                                                std::to_string(rec.incl_len) + " > snaplen");
    }
    if (rec.incl_len != rec.frame.size() || rec.incl_len > rec.orig_len) {
      throw Error(ErrorCode::InconsistentLengths,
                  "record " + std::to_string(i) + " incl_len/orig_len disagree with frame");
    }
    put_le32(out, rec.ts_sec);
    put_le32(out, rec.ts_usec);
    put_le32(out, rec.incl_len);
    put_le32(out, rec.orig_len);
    append(out, rec.frame);
  }
  return out;
}

}  // namespace sentinel
