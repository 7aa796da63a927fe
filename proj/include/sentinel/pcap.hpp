#pragma once

// Classic libpcap capture files (not pcapng): a 24-byte global header
// followed by records of a 16-byte header plus the captured frame bytes.

#include <cstdint>
#include <string>
#include <vector>

#include "sentinel/bytes.hpp"

namespace sentinel {

inline constexpr std::uint32_t kPcapMagic = 0xA1B2C3D4;
inline constexpr std::uint32_t kPcapMagicSwapped = 0xD4C3B2A1;
inline constexpr std::size_t kPcapGlobalHeaderLen = 24;
inline constexpr std::size_t kPcapRecordHeaderLen = 16;
inline constexpr std::uint32_t kLinkTypeEthernet = 1;

struct CaptureMeta {
  std::uint32_t magic = kPcapMagic;
  std::uint16_t version_major = 2;
  std::uint16_t version_minor = 4;
  std::int32_t thiszone = 0;
  std::uint32_t sigfigs = 0;
  std::uint32_t snaplen = 65535;
  std::uint32_t linktype = kLinkTypeEthernet;

  bool operator==(const CaptureMeta&) const = default;
};

struct CaptureRecord {
  std::uint32_t ts_sec = 0;
  std::uint32_t ts_usec = 0;
  std::uint32_t incl_len = 0;
  std::uint32_t orig_len = 0;
  Bytes frame;

  std::int64_t timestamp_us() const {
    return std::int64_t{ts_sec} * 1'000'000 + std::int64_t{ts_usec};
  }
  static CaptureRecord from_frame(std::int64_t timestamp_us, Bytes frame);

  bool operator==(const CaptureRecord&) const = default;
};

struct Capture {
  CaptureMeta meta;
  std::vector<CaptureRecord> records;
  bool operator==(const Capture&) const = default;
};

// Accepts native and byte-swapped microsecond files; the returned meta is
// always normalized to the native magic. Throws BadMagic, or
// TruncatedRecordError carrying the number of intact records.
Capture read_pcap(ByteView bytes);
Capture read_pcap_file(const std::string& path);

// Little-endian file with magic 0xA1B2C3D4; a pure function of its inputs.
// Throws RecordTooLong when a record exceeds meta.snaplen.
Bytes write_pcap(const CaptureMeta& meta, const std::vector<CaptureRecord>& records);

}  // namespace sentinel
