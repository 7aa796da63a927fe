#pragma once

// Layered view of one captured Ethernet frame and its bit-exact wire codec.
//
// Layouts follow RFC 791 (IPv4), RFC 9293 (TCP), RFC 768 (UDP) and RFC 792
// (ICMP). All multi-byte fields are big-endian on the wire. Decoding never
// rejects a frame of at least 14 bytes: layers that are missing or cut short
// are left absent and the leftover bytes are kept as payload, so that
// encode_packet(decode_frame(f)) reproduces f byte for byte.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sentinel/bytes.hpp"

namespace sentinel {

using MacAddr = std::array<std::uint8_t, 6>;
using Ipv4Addr = std::array<std::uint8_t, 4>;

std::string format_ipv4(const Ipv4Addr& addr);
std::optional<Ipv4Addr> parse_ipv4(std::string_view text);

inline constexpr std::uint16_t kEtherTypeIpv4 = 0x0800;
inline constexpr std::size_t kEthernetHeaderLen = 14;

inline constexpr std::uint8_t kProtoIcmp = 1;
inline constexpr std::uint8_t kProtoTcp = 6;
inline constexpr std::uint8_t kProtoUdp = 17;

struct EthernetHeader {
  MacAddr dst{};
  MacAddr src{};
  std::uint16_t ethertype = 0;
  bool operator==(const EthernetHeader&) const = default;
};

// 3-bit IPv4 flags field, most significant bit first.
namespace ipflag {
inline constexpr std::uint8_t kReserved = 0b100;
inline constexpr std::uint8_t kDontFragment = 0b010;
inline constexpr std::uint8_t kMoreFragments = 0b001;
}  // namespace ipflag

struct Ipv4Header {
  std::uint8_t version = 4;
  std::uint8_t ihl = 5;  // 32-bit words
  std::uint8_t tos = 0;
  std::uint16_t total_length = 0;
  std::uint16_t identification = 0;
  std::uint8_t flags = 0;                // 3 bits
  std::uint16_t fragment_offset = 0;     // 13 bits, 8-byte units
  std::uint8_t ttl = 64;
  std::uint8_t protocol = 0;
  std::uint16_t header_checksum = 0;
  Ipv4Addr src_addr{};
  Ipv4Addr dst_addr{};
  Bytes options;

  bool operator==(const Ipv4Header&) const = default;
};

namespace tcpflag {
inline constexpr std::uint8_t kFin = 0x01;
inline constexpr std::uint8_t kSyn = 0x02;
inline constexpr std::uint8_t kRst = 0x04;
inline constexpr std::uint8_t kPsh = 0x08;
inline constexpr std::uint8_t kAck = 0x10;
inline constexpr std::uint8_t kUrg = 0x20;
inline constexpr std::uint8_t kEce = 0x40;
inline constexpr std::uint8_t kCwr = 0x80;
}  // namespace tcpflag

struct TcpHeader {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint8_t data_offset = 5;  // 32-bit words
  std::uint8_t reserved = 0;     // 4 bits between data offset and flags
  std::uint8_t flags = 0;
  std::uint16_t window = 0;
  std::uint16_t checksum = 0;
  std::uint16_t urgent_ptr = 0;
  Bytes options;

  bool operator==(const TcpHeader&) const = default;
};

struct UdpHeader {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint16_t length = 0;
  std::uint16_t checksum = 0;
  bool operator==(const UdpHeader&) const = default;
};

struct IcmpHeader {
  std::uint8_t icmp_type = 0;
  std::uint8_t icmp_code = 0;
  std::uint16_t checksum = 0;
  std::uint32_t rest_of_header = 0;
  bool operator==(const IcmpHeader&) const = default;
};

using Transport = std::variant<std::monostate, TcpHeader, UdpHeader, IcmpHeader>;

struct Packet {
  std::int64_t timestamp_us = 0;
  EthernetHeader link;
  std::optional<Ipv4Header> ip;
  Transport transport;
  // Payload length implied by the IPv4 total length and header lengths, or
  // the number of trailing bytes when there is no IPv4 layer.
  std::uint32_t payload_len = 0;
  // Bytes after the last decoded header, as present in the frame.
  Bytes payload;
  // Frame bytes as handed to decode_frame; empty for packets built in memory.
  Bytes raw;

  const TcpHeader* tcp() const { return std::get_if<TcpHeader>(&transport); }
  const UdpHeader* udp() const { return std::get_if<UdpHeader>(&transport); }
  const IcmpHeader* icmp() const { return std::get_if<IcmpHeader>(&transport); }
  TcpHeader* tcp() { return std::get_if<TcpHeader>(&transport); }
  UdpHeader* udp() { return std::get_if<UdpHeader>(&transport); }
  IcmpHeader* icmp() { return std::get_if<IcmpHeader>(&transport); }
  bool has_transport() const { return !std::holds_alternative<std::monostate>(transport); }

  bool operator==(const Packet&) const = default;
};

enum class Anomaly {
  BadIpChecksum,
  BadIhl,
  LengthMismatch,
  IllegalTcpFlags,
  BadDataOffset,
  TruncatedHeader,
  NonIpv4,
};

std::string_view to_string(Anomaly anomaly);

// Ones-complement of the ones-complement sum of big-endian 16-bit words; an
// odd trailing byte is padded with zero.
std::uint16_t internet_checksum(ByteView bytes);

Packet decode_frame(ByteView frame, std::int64_t timestamp_us = 0);

enum class ChecksumMode {
  Raw,        // every field, checksums included, written verbatim
  Normalize,  // lengths must agree; IPv4/TCP/UDP/ICMP checksums recomputed
};

Bytes encode_packet(const Packet& packet, ChecksumMode mode = ChecksumMode::Raw);

// Sets ihl, data_offset, total_length, UDP length and payload_len from the
// option and payload sizes, so the packet encodes in Normalize mode.
void finalize_lengths(Packet& packet);

// Per-packet grammar check; result is sorted and free of duplicates.
std::vector<Anomaly> validate_packet(const Packet& packet);

bool is_illegal_tcp_flags(std::uint8_t flags);

}  // namespace sentinel
