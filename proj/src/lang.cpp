#include "sentinel/lang.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <set>
#include <sstream>

#include "sentinel/error.hpp"

namespace sentinel {
namespace {

std::string hex_byte(std::size_t v) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%02zx", v);
  return buf;
}

std::size_t port_index(std::uint16_t port) {
  if (port <= 1023) return port;
  return port <= 32767 ? kPortRegistered : kPortEphemeral;
}

ValueRange port_range(std::size_t index) {
  if (index < kPortRegistered) return {index, index};
  if (index == kPortRegistered) return {1024, 32767};
  return {32768, 65535};
}

std::size_t frag_index(const Ipv4Header& ip) {
  if (ip.fragment_offset != 0) return 3;
  if (ip.flags & ipflag::kMoreFragments) return 2;
  if (ip.flags & ipflag::kDontFragment) return 1;
  return 0;
}

std::size_t proto_index(std::uint8_t protocol) {
  switch (protocol) {
    case kProtoIcmp: return 0;
    case kProtoTcp: return 1;
    case kProtoUdp: return 2;
    default: return 3;
  }
}

std::size_t icmp_type_index(std::uint8_t type) {
  switch (type) {
    case 8: return 0;
    case 0: return 1;
    case 3: return 2;
    default: return 3;
  }
}

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedSequence, what);
}

// Reads the non-pad prefix of a sequence one family at a time.
class Cursor {
 public:
  Cursor(const TokenSeq& seq, const Vocab& vocab, std::size_t length)
      : seq_(seq), vocab_(vocab), length_(length) {}

  std::size_t expect(Family family) {
    if (pos_ >= length_) malformed("sentence ends before " + std::string(to_string(family)));
    const TokenId id = seq_.ids[pos_];
    if (vocab_.family_of(id) != family) {
      malformed("position " + std::to_string(pos_) + " holds " + vocab_.token(id) +
                ", expected " + std::string(to_string(family)));
    }
    ++pos_;
    return vocab_.index_in_family(id);
  }

  TokenId next_special() {
    if (pos_ >= length_) malformed("sentence ends early");
    const TokenId id = seq_.ids[pos_++];
    if (!vocab_.is_special(id)) malformed("expected a section marker, got " + vocab_.token(id));
    return id;
  }

  std::size_t pos() const { return pos_; }

 private:
  const TokenSeq& seq_;
  const Vocab& vocab_;
  std::size_t length_;
  std::size_t pos_ = 1;
};

}  // namespace

std::string_view to_string(Family family) {
  static constexpr std::array<std::string_view, kFamilyCount> kNames = {
      "special", "ip_ver", "ip_ihl", "tos",      "iplen",     "frag",      "ttl",   "proto",
      "octet",   "port",   "seq",    "ack",      "off",       "tcpflags",  "win",   "urg",
      "opts",    "udplen", "icmp_type", "icmp_code", "paylen", "iat"};
  return kNames[static_cast<std::size_t>(family)];
}

Vocab build_vocabulary() {
  Vocab v;
  auto family = [&v](Family f, const std::vector<std::string>& names) {
    auto& range = v.families_[Vocab::idx(f)];
    range.first = static_cast<TokenId>(v.tokens_.size());
    range.count = names.size();
    for (const auto& n : names) {
      v.tokens_.push_back(n);
      v.family_of_.push_back(f);
    }
  };
  auto numbered = [](const std::string& prefix, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
  };

  family(Family::Special, {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[TCP]", "[UDP]", "[ICMP]", "[OTHER]"});
  family(Family::IpVer, {"ip_ver_4", "ip_ver_other"});
  family(Family::IpIhl, {"ip_ihl_5", "ip_ihl_other"});
  family(Family::Tos, {"tos_zero", "tos_nonzero"});
  family(Family::IpLen, numbered("iplen_b", 16));
  family(Family::Frag, {"frag_none", "frag_df", "frag_mf", "frag_offset"});
  family(Family::Ttl, numbered("ttl_b", 8));
  family(Family::Proto, {"proto_icmp", "proto_tcp", "proto_udp", "proto_other"});
  family(Family::Octet, numbered("octet_", 256));
  {
    auto ports = numbered("port_", 1024);
    ports.push_back("port_reg");
    ports.push_back("port_eph");
    family(Family::Port, ports);
  }
  family(Family::Seq, numbered("seq_b", 16));
  family(Family::Ack, numbered("ack_b", 16));
  family(Family::Off, {"off_5", "off_other"});
  {
    std::vector<std::string> flags;
    for (std::size_t i = 0; i < 256; ++i) flags.push_back("tcpflags_" + hex_byte(i));
    family(Family::TcpFlags, flags);
  }
  family(Family::Win, numbered("win_b", 16));
  family(Family::Urg, {"urg_zero", "urg_nonzero"});
  family(Family::Opts, {"opts_none", "opts_mss", "opts_sack", "opts_ts", "opts_multi", "opts_other"});
  family(Family::UdpLen, numbered("udplen_b", 16));
  family(Family::IcmpType,
         {"icmp_type_echo_req", "icmp_type_echo_rep", "icmp_type_unreach", "icmp_type_other"});
  family(Family::IcmpCode, {"icmp_code_zero", "icmp_code_nonzero"});
  family(Family::PayloadLen, numbered("paylen_b", 16));
  family(Family::Iat, numbered("iat_b", 16));

  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    v.index_.emplace(v.tokens_[i], static_cast<TokenId>(i));
  }
  v.hash_ = sha256_hex(v.export_text());
  return v;
}

const Vocab& pl1_vocab() {
  static const Vocab vocab = build_vocabulary();
  return vocab;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(Family family, std::size_t index) const {
  const auto& range = families_[idx(family)];
  if (index >= range.count) {
    throw Error(ErrorCode::IdOutOfRange, std::string(to_string(family)) + " index " +
                                             std::to_string(index) + " out of range");
  }
  return static_cast<TokenId>(range.first + index);
}

Family Vocab::family_of(TokenId id) const {
  if (id >= family_of_.size()) {
    throw Error(ErrorCode::IdOutOfRange, "token id " + std::to_string(id) + " out of range");
  }
  return family_of_[id];
}

std::size_t Vocab::index_in_family(TokenId id) const {
  return id - families_[idx(family_of(id))].first;
}

std::string Vocab::export_text() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

std::size_t TokenSeq::length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

bool is_well_formed(const TokenSeq& seq, const Vocab& vocab) {
  std::size_t len = 0;
  while (len < kSeqLen && seq.ids[len] != special::kPad) ++len;
  for (std::size_t i = 0; i < kSeqLen; ++i) {
    if (seq.ids[i] >= vocab.size()) return false;
    if (seq.mask[i] != (i < len)) return false;
    if (i >= len && seq.ids[i] != special::kPad) return false;
  }
  if (len < 3 || seq.ids[0] != special::kCls || seq.ids[len - 1] != special::kSep) return false;
  return std::count(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(len),
                    special::kSep) == 1;
}

std::size_t log2_bucket(std::uint64_t value) {
  if (value == std::numeric_limits<std::uint64_t>::max()) return 15;
  const std::size_t floor_log2 = static_cast<std::size_t>(std::bit_width(value + 1)) - 1;
  return std::min<std::size_t>(15, floor_log2);
}

ValueRange log2_bucket_range(std::size_t bucket, std::uint64_t field_max) {
  const std::uint64_t lo = (std::uint64_t{1} << bucket) - 1;
  const std::uint64_t hi = bucket >= 15 ? field_max : (std::uint64_t{1} << (bucket + 1)) - 2;
  return {lo, std::min(hi, field_max)};
}

OptionsClass classify_tcp_options(ByteView options) {
  std::set<OptionsClass> kinds;
  std::size_t i = 0;
  while (i < options.size()) {
    const std::uint8_t kind = options[i];
    if (kind == 0) break;
    if (kind == 1) {
      ++i;
      continue;
    }
    if (i + 1 >= options.size()) return OptionsClass::Other;
    const std::size_t len = options[i + 1];
    if (len < 2 || i + len > options.size()) return OptionsClass::Other;
    switch (kind) {
      case 2: kinds.insert(OptionsClass::Mss); break;
      case 4:
      case 5: kinds.insert(OptionsClass::Sack); break;
      case 8: kinds.insert(OptionsClass::Timestamp); break;
      default: kinds.insert(OptionsClass::Other); break;
    }
    i += len;
  }
  if (kinds.empty()) return OptionsClass::None;
  if (kinds.size() > 1) return OptionsClass::Multi;
  return *kinds.begin();
}

TokenSeq tokenize_packet(const Packet& packet, std::optional<std::int64_t> prev_ts_us,
                         const Vocab& vocab) {
  TokenSeq seq;
  std::size_t n = 0;
  auto push = [&](TokenId id) {
    seq.ids[n] = id;
    seq.mask[n] = true;
    ++n;
  };
  auto put = [&](Family f, std::size_t index) { push(vocab.id(f, index)); };

  push(special::kCls);
  if (!packet.ip) {
    push(special::kOther);
    push(special::kSep);
    return seq;
  }

  const Ipv4Header& ip = *packet.ip;
  put(Family::IpVer, ip.version == 4 ? 0 : 1);
  put(Family::IpIhl, ip.ihl == 5 ? 0 : 1);
  put(Family::Tos, ip.tos == 0 ? 0 : 1);
  put(Family::IpLen, log2_bucket(ip.total_length));
  put(Family::Frag, frag_index(ip));
  put(Family::Ttl, ip.ttl / 32);
  put(Family::Proto, proto_index(ip.protocol));
  for (auto octet : ip.src_addr) put(Family::Octet, octet);
  for (auto octet : ip.dst_addr) put(Family::Octet, octet);

  if (const auto* tcp = packet.tcp()) {
    push(special::kTcp);
    put(Family::Port, port_index(tcp->src_port));
    put(Family::Port, port_index(tcp->dst_port));
    put(Family::Seq, log2_bucket(tcp->seq));
    put(Family::Ack, log2_bucket(tcp->ack));
    put(Family::Off, tcp->data_offset == 5 ? 0 : 1);
    put(Family::TcpFlags, tcp->flags);
    put(Family::Win, log2_bucket(tcp->window));
    put(Family::Urg, tcp->urgent_ptr == 0 ? 0 : 1);
    put(Family::Opts, static_cast<std::size_t>(classify_tcp_options(tcp->options)));
  } else if (const auto* udp = packet.udp()) {
    push(special::kUdp);
    put(Family::Port, port_index(udp->src_port));
    put(Family::Port, port_index(udp->dst_port));
    put(Family::UdpLen, log2_bucket(udp->length));
  } else if (const auto* icmp = packet.icmp()) {
    push(special::kIcmp);
    put(Family::IcmpType, icmp_type_index(icmp->icmp_type));
    put(Family::IcmpCode, icmp->icmp_code == 0 ? 0 : 1);
  } else {
    push(special::kOther);
  }

  put(Family::PayloadLen, log2_bucket(packet.payload_len));
  std::size_t iat_bucket = 15;
  if (prev_ts_us) {
    const std::int64_t dt = std::max<std::int64_t>(0, packet.timestamp_us - *prev_ts_us);
    iat_bucket = log2_bucket(static_cast<std::uint64_t>(dt));
  }
  put(Family::Iat, iat_bucket);
  push(special::kSep);
  return seq;
}

std::string render_sentence(const TokenSeq& seq, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < kSeqLen; ++i) {
    if (seq.ids[i] == special::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(seq.ids[i]);
  }
  return out;
}

std::vector<TokenId> parse_sentence(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    auto id = vocab.find(word);
    if (!id) malformed("unknown token '" + word + "'");
    ids.push_back(*id);
  }
  return ids;
}

FieldAssignment detokenize_fields(const TokenSeq& seq, const Vocab& vocab) {
  if (!is_well_formed(seq, vocab)) malformed("sequence violates [CLS]/[SEP]/[PAD] structure");
  const std::size_t len = seq.length();
  Cursor cur(seq, vocab, len - 1);  // stop before [SEP]

  FieldAssignment out;
  if (len == 3 && seq.ids[1] == special::kOther) return out;

  out.has_ip = true;
  out.ip_version_4 = cur.expect(Family::IpVer) == 0;
  out.ihl_5 = cur.expect(Family::IpIhl) == 0;
  out.tos_nonzero = cur.expect(Family::Tos) == 1;
  out.total_length = log2_bucket_range(cur.expect(Family::IpLen), 65535);
  out.frag = static_cast<FragClass>(cur.expect(Family::Frag));
  const std::size_t ttl = cur.expect(Family::Ttl);
  out.ttl = ValueRange{ttl * 32, ttl * 32 + 31};
  static constexpr std::array<std::uint8_t, 3> kProtos = {kProtoIcmp, kProtoTcp, kProtoUdp};
  const std::size_t proto = cur.expect(Family::Proto);
  if (proto < kProtos.size()) out.protocol = kProtos[proto];
  Ipv4Addr src{}, dst{};
  for (auto& o : src) o = static_cast<std::uint8_t>(cur.expect(Family::Octet));
  for (auto& o : dst) o = static_cast<std::uint8_t>(cur.expect(Family::Octet));
  out.src_addr = src;
  out.dst_addr = dst;

  switch (cur.next_special()) {
    case special::kTcp:
      out.section = Section::Tcp;
      out.src_port = port_range(cur.expect(Family::Port));
      out.dst_port = port_range(cur.expect(Family::Port));
      out.seq = log2_bucket_range(cur.expect(Family::Seq), 0xFFFFFFFFull);
      out.ack = log2_bucket_range(cur.expect(Family::Ack), 0xFFFFFFFFull);
      out.data_offset_5 = cur.expect(Family::Off) == 0;
      out.tcp_flags = static_cast<std::uint8_t>(cur.expect(Family::TcpFlags));
      out.window = log2_bucket_range(cur.expect(Family::Win), 65535);
      out.urgent_nonzero = cur.expect(Family::Urg) == 1;
      out.options = static_cast<OptionsClass>(cur.expect(Family::Opts));
      break;
    case special::kUdp:
      out.section = Section::Udp;
      out.src_port = port_range(cur.expect(Family::Port));
      out.dst_port = port_range(cur.expect(Family::Port));
      out.udp_length = log2_bucket_range(cur.expect(Family::UdpLen), 65535);
      break;
    case special::kIcmp:
      out.section = Section::Icmp;
      out.icmp_type = static_cast<IcmpTypeClass>(cur.expect(Family::IcmpType));
      out.icmp_code_nonzero = cur.expect(Family::IcmpCode) == 1;
      break;
    case special::kOther:
      out.section = Section::Other;
      break;
    default:
      malformed("unexpected section marker");
  }
  out.payload_len = log2_bucket_range(cur.expect(Family::PayloadLen), 0xFFFFFFFFull);
  out.iat_us = log2_bucket_range(cur.expect(Family::Iat),
                                 static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()));
  if (cur.pos() != len - 1) malformed("trailing tokens before [SEP]");
  return out;
}

std::optional<FlowKey> flow_key(const Packet& packet) {
  if (!packet.ip) return std::nullopt;
  std::uint16_t sport = 0, dport = 0;
  if (const auto* tcp = packet.tcp()) {
    sport = tcp->src_port;
    dport = tcp->dst_port;
  } else if (const auto* udp = packet.udp()) {
    sport = udp->src_port;
    dport = udp->dst_port;
  }
  FlowKey key;
  key.protocol = packet.ip->protocol;
  const auto a = std::make_pair(packet.ip->src_addr, sport);
  const auto b = std::make_pair(packet.ip->dst_addr, dport);
  const auto& lo = std::min(a, b);
  const auto& hi = std::max(a, b);
  key.addr_a = lo.first;
  key.port_a = lo.second;
  key.addr_b = hi.first;
  key.port_b = hi.second;
  return key;
}

std::size_t FlowKeyHash::operator()(const FlowKey& k) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ull;
  };
  for (auto o : k.addr_a) mix(o);
  for (auto o : k.addr_b) mix(o);
  mix(k.port_a);
  mix(k.port_b);
  mix(k.protocol);
  return static_cast<std::size_t>(h);
}

std::optional<std::int64_t> FlowClock::observe(const Packet& packet) {
  auto key = flow_key(packet);
  if (!key) return std::nullopt;
  auto [it, inserted] = last_.try_emplace(*key, packet.timestamp_us);
  if (inserted) return std::nullopt;
  const std::int64_t prev = it->second;
  it->second = packet.timestamp_us;
  return prev;
}

}  // namespace sentinel
