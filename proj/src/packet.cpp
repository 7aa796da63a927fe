#include "sentinel/packet.hpp"

#include <algorithm>
#include <charconv>

#include "sentinel/error.hpp"

namespace sentinel {
namespace {

constexpr std::size_t kIpv4FixedLen = 20;
constexpr std::size_t kTcpFixedLen = 20;
constexpr std::size_t kUdpLen = 8;
constexpr std::size_t kIcmpLen = 8;
constexpr std::size_t kMaxOptionsLen = 40;
constexpr std::size_t kMinEthernetFrame = 60;

void write_ethernet(Bytes& out, const EthernetHeader& eth) {
  out.insert(out.end(), eth.dst.begin(), eth.dst.end());
  out.insert(out.end(), eth.src.begin(), eth.src.end());
  put_be16(out, eth.ethertype);
}

void check_range(bool ok, const char* field) {
  if (!ok) throw Error(ErrorCode::FieldOutOfRange, field);
}

void check_ip_ranges(const Ipv4Header& ip) {
  check_range(ip.version <= 0xF, "ip.version");
  check_range(ip.ihl <= 0xF, "ip.ihl");
  check_range(ip.flags <= 0x7, "ip.flags");
  check_range(ip.fragment_offset <= 0x1FFF, "ip.fragment_offset");
  check_range(ip.options.size() <= kMaxOptionsLen, "ip.options");
}

void check_tcp_ranges(const TcpHeader& tcp) {
  check_range(tcp.data_offset <= 0xF, "tcp.data_offset");
  check_range(tcp.reserved <= 0xF, "tcp.reserved");
  check_range(tcp.options.size() <= kMaxOptionsLen, "tcp.options");
}

// Fixed header plus options, checksum field taken from the struct.
Bytes ipv4_header_bytes(const Ipv4Header& ip) {
  Bytes out;
  out.reserve(kIpv4FixedLen + ip.options.size());
  out.push_back(static_cast<std::uint8_t>((ip.version << 4) | (ip.ihl & 0xF)));
  out.push_back(ip.tos);
  put_be16(out, ip.total_length);
  put_be16(out, ip.identification);
  put_be16(out, static_cast<std::uint16_t>((ip.flags << 13) | (ip.fragment_offset & 0x1FFF)));
  out.push_back(ip.ttl);
  out.push_back(ip.protocol);
  put_be16(out, ip.header_checksum);
  out.insert(out.end(), ip.src_addr.begin(), ip.src_addr.end());
  out.insert(out.end(), ip.dst_addr.begin(), ip.dst_addr.end());
  append(out, ip.options);
  return out;
}

Bytes tcp_header_bytes(const TcpHeader& tcp) {
  Bytes out;
  out.reserve(kTcpFixedLen + tcp.options.size());
  put_be16(out, tcp.src_port);
  put_be16(out, tcp.dst_port);
  put_be32(out, tcp.seq);
  put_be32(out, tcp.ack);
  out.push_back(static_cast<std::uint8_t>((tcp.data_offset << 4) | (tcp.reserved & 0xF)));
  out.push_back(tcp.flags);
  put_be16(out, tcp.window);
  put_be16(out, tcp.checksum);
  put_be16(out, tcp.urgent_ptr);
  append(out, tcp.options);
  return out;
}

Bytes udp_header_bytes(const UdpHeader& udp) {
  Bytes out;
  put_be16(out, udp.src_port);
  put_be16(out, udp.dst_port);
  put_be16(out, udp.length);
  put_be16(out, udp.checksum);
  return out;
}

Bytes icmp_header_bytes(const IcmpHeader& icmp) {
  Bytes out;
  out.push_back(icmp.icmp_type);
  out.push_back(icmp.icmp_code);
  put_be16(out, icmp.checksum);
  put_be32(out, icmp.rest_of_header);
  return out;
}

// Checksum over the RFC 9293 pseudo-header followed by the segment.
std::uint16_t pseudo_header_checksum(const Ipv4Header& ip, std::uint8_t protocol,
                                     ByteView segment) {
  Bytes buf;
  buf.reserve(12 + segment.size());
  buf.insert(buf.end(), ip.src_addr.begin(), ip.src_addr.end());
  buf.insert(buf.end(), ip.dst_addr.begin(), ip.dst_addr.end());
  buf.push_back(0);
  buf.push_back(protocol);
  put_be16(buf, static_cast<std::uint16_t>(segment.size()));
  append(buf, segment);
  return internet_checksum(buf);
}

void set_be16(Bytes& buf, std::size_t offset, std::uint16_t v) {
  buf[offset] = static_cast<std::uint8_t>(v >> 8);
  buf[offset + 1] = static_cast<std::uint8_t>(v);
}

std::size_t transport_header_len(const Transport& transport) {
  if (const auto* tcp = std::get_if<TcpHeader>(&transport)) {
    return kTcpFixedLen + tcp->options.size();
  }
  if (std::holds_alternative<UdpHeader>(transport)) return kUdpLen;
  if (std::holds_alternative<IcmpHeader>(transport)) return kIcmpLen;
  return 0;
}

void require_consistent(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InconsistentLengths, what);
}

}  // namespace

std::string format_ipv4(const Ipv4Addr& addr) {
  return std::to_string(addr[0]) + "." + std::to_string(addr[1]) + "." + std::to_string(addr[2]) +
         "." + std::to_string(addr[3]);
}

std::optional<Ipv4Addr> parse_ipv4(std::string_view text) {
  Ipv4Addr addr{};
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int i = 0; i < 4; ++i) {
    unsigned value = 0;
    auto [next, ec] = std::from_chars(p, end, value);
    if (ec != std::errc{} || next == p || value > 255) return std::nullopt;
    addr[i] = static_cast<std::uint8_t>(value);
    p = next;
    if (i < 3) {
      if (p == end || *p != '.') return std::nullopt;
      ++p;
    }
  }
  if (p != end) return std::nullopt;
  return addr;
}

std::string_view to_string(Anomaly anomaly) {
  switch (anomaly) {
    case Anomaly::BadIpChecksum: return "BadIpChecksum";
    case Anomaly::BadIhl: return "BadIhl";
    case Anomaly::LengthMismatch: return "LengthMismatch";
    case Anomaly::IllegalTcpFlags: return "IllegalTcpFlags";
    case Anomaly::BadDataOffset: return "BadDataOffset";
    case Anomaly::TruncatedHeader: return "TruncatedHeader";
    case Anomaly::NonIpv4: return "NonIpv4";
  }
  return "Unknown";
}

std::uint16_t internet_checksum(ByteView bytes) {
  std::uint64_t sum = 0;
  std::size_t i = 0;
  for (; i + 1 < bytes.size(); i += 2) sum += load_be16(bytes.data() + i);
  if (i < bytes.size()) sum += std::uint64_t{bytes[i]} << 8;
  while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum & 0xFFFF);
}

Packet decode_frame(ByteView frame, std::int64_t timestamp_us) {
  if (frame.size() < kEthernetHeaderLen) {
    throw Error(ErrorCode::FrameTooShort,
                "frame has " + std::to_string(frame.size()) + " bytes, need 14");
  }
  Packet pkt;
  pkt.timestamp_us = timestamp_us;
  pkt.raw.assign(frame.begin(), frame.end());
  std::copy_n(frame.begin(), 6, pkt.link.dst.begin());
  std::copy_n(frame.begin() + 6, 6, pkt.link.src.begin());
  pkt.link.ethertype = load_be16(frame.data() + 12);

  ByteView rest = frame.subspan(kEthernetHeaderLen);
  if (pkt.link.ethertype != kEtherTypeIpv4 || rest.size() < kIpv4FixedLen) {
    pkt.payload.assign(rest.begin(), rest.end());
    pkt.payload_len = static_cast<std::uint32_t>(rest.size());
    return pkt;
  }

  Ipv4Header ip;
  const std::uint8_t* h = rest.data();
  ip.version = h[0] >> 4;
  ip.ihl = h[0] & 0xF;
  ip.tos = h[1];
  ip.total_length = load_be16(h + 2);
  ip.identification = load_be16(h + 4);
  const std::uint16_t frag = load_be16(h + 6);
  ip.flags = static_cast<std::uint8_t>(frag >> 13);
  ip.fragment_offset = frag & 0x1FFF;
  ip.ttl = h[8];
  ip.protocol = h[9];
  ip.header_checksum = load_be16(h + 10);
  std::copy_n(h + 12, 4, ip.src_addr.begin());
  std::copy_n(h + 16, 4, ip.dst_addr.begin());
  const std::size_t declared_hdr = std::size_t{ip.ihl} * 4;
  if (declared_hdr > kIpv4FixedLen) {
    const std::size_t hdr_end = std::min(declared_hdr, rest.size());
    ip.options.assign(rest.begin() + kIpv4FixedLen, rest.begin() + hdr_end);
  }
  const std::size_t ip_consumed = kIpv4FixedLen + ip.options.size();
  const bool header_complete = ip.ihl >= 5 && ip_consumed == declared_hdr;
  rest = rest.subspan(ip_consumed);

  std::size_t transport_consumed = 0;
  if (header_complete && ip.fragment_offset == 0) {
    const std::uint8_t* t = rest.data();
    if (ip.protocol == kProtoTcp && rest.size() >= kTcpFixedLen) {
      TcpHeader tcp;
      tcp.src_port = load_be16(t);
      tcp.dst_port = load_be16(t + 2);
      tcp.seq = load_be32(t + 4);
      tcp.ack = load_be32(t + 8);
      tcp.data_offset = t[12] >> 4;
      tcp.reserved = t[12] & 0xF;
      tcp.flags = t[13];
      tcp.window = load_be16(t + 14);
      tcp.checksum = load_be16(t + 16);
      tcp.urgent_ptr = load_be16(t + 18);
      const std::size_t declared = std::size_t{tcp.data_offset} * 4;
      if (declared > kTcpFixedLen) {
        const std::size_t end = std::min(declared, rest.size());
        tcp.options.assign(rest.begin() + kTcpFixedLen, rest.begin() + end);
      }
      transport_consumed = kTcpFixedLen + tcp.options.size();
      pkt.transport = std::move(tcp);
    } else if (ip.protocol == kProtoUdp && rest.size() >= kUdpLen) {
      pkt.transport = UdpHeader{load_be16(t), load_be16(t + 2), load_be16(t + 4), load_be16(t + 6)};
      transport_consumed = kUdpLen;
    } else if (ip.protocol == kProtoIcmp && rest.size() >= kIcmpLen) {
      pkt.transport = IcmpHeader{t[0], t[1], load_be16(t + 2), load_be32(t + 4)};
      transport_consumed = kIcmpLen;
    }
  }
  rest = rest.subspan(transport_consumed);
  pkt.payload.assign(rest.begin(), rest.end());

  const std::int64_t declared_payload = std::int64_t{ip.total_length} -
                                        static_cast<std::int64_t>(ip_consumed + transport_consumed);
  pkt.payload_len = static_cast<std::uint32_t>(std::max<std::int64_t>(0, declared_payload));
  pkt.ip = std::move(ip);
  return pkt;
}

Bytes encode_packet(const Packet& packet, ChecksumMode mode) {
  const bool normalize = mode == ChecksumMode::Normalize;
  if (packet.has_transport() && !packet.ip) {
    throw Error(ErrorCode::InconsistentLengths, "transport header without IPv4 header");
  }
  Bytes out;
  out.reserve(kEthernetHeaderLen + 60 + packet.payload.size());
  write_ethernet(out, packet.link);
  if (!packet.ip) {
    append(out, packet.payload);
    return out;
  }

  const Ipv4Header& ip = *packet.ip;
  check_ip_ranges(ip);
  if (const auto* tcp = packet.tcp()) check_tcp_ranges(*tcp);

  const std::size_t transport_len = transport_header_len(packet.transport);
  if (normalize) {
    require_consistent(ip.options.size() % 4 == 0, "ip options not a multiple of 4 bytes");
    require_consistent(std::size_t{ip.ihl} * 4 == kIpv4FixedLen + ip.options.size(),
                       "ihl disagrees with options length");
    require_consistent(std::size_t{ip.total_length} ==
                           kIpv4FixedLen + ip.options.size() + transport_len + packet.payload.size(),
                       "total_length disagrees with frame contents");
    if (const auto* tcp = packet.tcp()) {
      require_consistent(tcp->options.size() % 4 == 0, "tcp options not a multiple of 4 bytes");
      require_consistent(std::size_t{tcp->data_offset} * 4 == kTcpFixedLen + tcp->options.size(),
                         "data_offset disagrees with options length");
    }
    if (const auto* udp = packet.udp()) {
      require_consistent(std::size_t{udp->length} == kUdpLen + packet.payload.size(),
                         "udp length disagrees with payload");
    }
  }

  Bytes ip_bytes = ipv4_header_bytes(ip);
  if (normalize) {
    set_be16(ip_bytes, 10, 0);
    set_be16(ip_bytes, 10, internet_checksum(ip_bytes));
  }
  append(out, ip_bytes);

  Bytes segment;
  std::size_t checksum_offset = 0;
  bool pseudo = false;
  if (const auto* tcp = packet.tcp()) {
    segment = tcp_header_bytes(*tcp);
    checksum_offset = 16;
    pseudo = true;
  } else if (const auto* udp = packet.udp()) {
    segment = udp_header_bytes(*udp);
    checksum_offset = 6;
    pseudo = true;
  } else if (const auto* icmp = packet.icmp()) {
    segment = icmp_header_bytes(*icmp);
    checksum_offset = 2;
  }
  append(segment, packet.payload);
  if (normalize && packet.has_transport()) {
    set_be16(segment, checksum_offset, 0);
    std::uint16_t sum = pseudo ? pseudo_header_checksum(ip, ip.protocol, segment)
                               : internet_checksum(segment);
    // A computed UDP checksum of zero is transmitted as all ones.
    if (packet.udp() && sum == 0) sum = 0xFFFF;
    set_be16(segment, checksum_offset, sum);
  }
  append(out, segment);
  return out;
}

void finalize_lengths(Packet& packet) {
  const std::size_t transport_len = transport_header_len(packet.transport);
  if (auto* tcp = packet.tcp()) {
    tcp->data_offset = static_cast<std::uint8_t>((kTcpFixedLen + tcp->options.size()) / 4);
  }
  if (auto* udp = packet.udp()) {
    udp->length = static_cast<std::uint16_t>(kUdpLen + packet.payload.size());
  }
  if (packet.ip) {
    packet.ip->ihl = static_cast<std::uint8_t>((kIpv4FixedLen + packet.ip->options.size()) / 4);
    packet.ip->total_length = static_cast<std::uint16_t>(
        kIpv4FixedLen + packet.ip->options.size() + transport_len + packet.payload.size());
  }
  packet.payload_len = static_cast<std::uint32_t>(packet.payload.size());
}

bool is_illegal_tcp_flags(std::uint8_t flags) {
  using namespace tcpflag;
  constexpr std::uint8_t kClassic = kFin | kSyn | kRst | kPsh | kAck | kUrg;
  if (flags == 0) return true;
  if ((flags & kSyn) && (flags & kFin)) return true;
  return (flags & kClassic) == kClassic;
}

std::vector<Anomaly> validate_packet(const Packet& packet) {
  std::vector<Anomaly> found;
  if (packet.link.ethertype != kEtherTypeIpv4) {
    found.push_back(Anomaly::NonIpv4);
    return found;
  }
  if (!packet.ip) {
    found.push_back(Anomaly::TruncatedHeader);
    return found;
  }
  const Ipv4Header& ip = *packet.ip;
  if (ip.version != 4) found.push_back(Anomaly::NonIpv4);
  if (ip.ihl < 5) found.push_back(Anomaly::BadIhl);

  const std::size_t ip_hdr = kIpv4FixedLen + ip.options.size();
  const bool header_complete = ip.ihl >= 5 && std::size_t{ip.ihl} * 4 == ip_hdr;
  if (ip.ihl >= 5 && !header_complete) found.push_back(Anomaly::TruncatedHeader);
  if (internet_checksum(ipv4_header_bytes(ip)) != 0) found.push_back(Anomaly::BadIpChecksum);

  const std::size_t ip_bytes_present =
      ip_hdr + transport_header_len(packet.transport) + packet.payload.size();
  const std::size_t frame_len = kEthernetHeaderLen + ip_bytes_present;
  const std::size_t declared_hdr = std::max<std::size_t>(std::size_t{ip.ihl} * 4, kIpv4FixedLen);
  if (ip.total_length < declared_hdr || ip.total_length > ip_bytes_present ||
      (ip.total_length < ip_bytes_present && frame_len > kMinEthernetFrame)) {
    found.push_back(Anomaly::LengthMismatch);
  }

  const bool expects_transport = header_complete && ip.fragment_offset == 0 &&
                                 (ip.protocol == kProtoTcp || ip.protocol == kProtoUdp ||
                                  ip.protocol == kProtoIcmp);
  if (expects_transport && !packet.has_transport()) found.push_back(Anomaly::TruncatedHeader);

  if (const auto* tcp = packet.tcp()) {
    if (tcp->data_offset < 5) {
      found.push_back(Anomaly::BadDataOffset);
    } else if (std::size_t{tcp->data_offset} * 4 != kTcpFixedLen + tcp->options.size()) {
      found.push_back(Anomaly::TruncatedHeader);
    }
    if (is_illegal_tcp_flags(tcp->flags)) found.push_back(Anomaly::IllegalTcpFlags);
  }
  if (const auto* udp = packet.udp()) {
    if (udp->length < kUdpLen || std::size_t{udp->length} + ip_hdr != ip.total_length) {
      found.push_back(Anomaly::LengthMismatch);
    }
  }

  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());
  return found;
}

}  // namespace sentinel
