#pragma once

// PL-1: packets rendered as fixed-length sentences of header-field tokens.
//
// Sentence layout (positions in wire order, L = 32):
//
//   [CLS] ip_ver ip_ihl tos iplen frag ttl proto octet*4(src) octet*4(dst)
//     [TCP]  sport dport seq ack off tcpflags win urg opts  paylen iat [SEP]
//     [UDP]  sport dport udplen                             paylen iat [SEP]
//     [ICMP] icmp_type icmp_code                            paylen iat [SEP]
//     [OTHER]                                               paylen iat [SEP]
//
// An IPv4 packet whose transport header could not be decoded uses the
// [OTHER] section. A frame with no IPv4 layer is just [CLS] [OTHER] [SEP].
// Positions after [SEP] are [PAD].
//
// Log2 buckets: b(v) = min(15, floor(log2(v + 1))), so bucket b covers
// [2^b - 1, 2^(b+1) - 2] and bucket 15 is open-ended. TTL uses 8 linear
// buckets of width 32. Ports 0..1023 are exact; 1024..32767 map to port_reg
// and 32768..65535 to port_eph.

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sentinel/packet.hpp"

namespace sentinel {

using TokenId = std::uint16_t;

inline constexpr std::size_t kSeqLen = 32;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kCls = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kMask = 3;
inline constexpr TokenId kTcp = 4;
inline constexpr TokenId kUdp = 5;
inline constexpr TokenId kIcmp = 6;
inline constexpr TokenId kOther = 7;
inline constexpr std::size_t kCount = 8;
}  // namespace special

enum class Family {
  Special,
  IpVer,
  IpIhl,
  Tos,
  IpLen,
  Frag,
  Ttl,
  Proto,
  Octet,
  Port,
  Seq,
  Ack,
  Off,
  TcpFlags,
  Win,
  Urg,
  Opts,
  UdpLen,
  IcmpType,
  IcmpCode,
  PayloadLen,
  Iat,
};
inline constexpr std::size_t kFamilyCount = 22;

std::string_view to_string(Family family);

// Index of port_reg / port_eph inside the Port family.
inline constexpr std::size_t kPortRegistered = 1024;
inline constexpr std::size_t kPortEphemeral = 1025;

enum class FragClass { None, DontFragment, MoreFragments, Offset };
enum class OptionsClass { None, Mss, Sack, Timestamp, Multi, Other };
enum class IcmpTypeClass { EchoRequest, EchoReply, Unreachable, Other };

class Vocab {
 public:
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::optional<TokenId> find(std::string_view token) const;

  TokenId id(Family family, std::size_t index) const;
  std::size_t family_size(Family family) const { return families_[idx(family)].count; }
  Family family_of(TokenId id) const;
  // Position of id inside its family.
  std::size_t index_in_family(TokenId id) const;
  bool is_special(TokenId id) const { return id < special::kCount; }

  // One token per line, line number (from 0) = id.
  std::string export_text() const;
  // SHA-256 of export_text(); checkpoints and datasets record it.
  const std::string& hash() const { return hash_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  friend Vocab build_vocabulary();
  struct FamilyRange {
    TokenId first = 0;
    std::size_t count = 0;
  };
  static std::size_t idx(Family f) { return static_cast<std::size_t>(f); }

  std::vector<std::string> tokens_;
  std::vector<Family> family_of_;
  std::array<FamilyRange, kFamilyCount> families_{};
  std::unordered_map<std::string, TokenId> index_;
  std::string hash_;
};

// The fixed PL-1 vocabulary. Independent of any data.
Vocab build_vocabulary();
// Process-wide instance of build_vocabulary().
const Vocab& pl1_vocab();

struct TokenSeq {
  std::array<TokenId, kSeqLen> ids{};
  std::array<bool, kSeqLen> mask{};  // true at non-pad positions

  std::size_t length() const;
  bool operator==(const TokenSeq&) const = default;
};

// Structural check: [CLS] first, exactly one [SEP] at the last non-pad
// position, mask consistent with [PAD] ids, ids in range.
bool is_well_formed(const TokenSeq& seq, const Vocab& vocab);

std::size_t log2_bucket(std::uint64_t value);

struct ValueRange {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;
  bool contains(std::uint64_t v) const { return lo <= v && v <= hi; }
  bool exact() const { return lo == hi; }
  bool operator==(const ValueRange&) const = default;
};

ValueRange log2_bucket_range(std::size_t bucket, std::uint64_t field_max);

OptionsClass classify_tcp_options(ByteView options);

// prev_ts_us: timestamp of the previous packet of the same flow, or nullopt
// for the first packet of a flow (which gets the iat_b15 sentinel).
TokenSeq tokenize_packet(const Packet& packet, std::optional<std::int64_t> prev_ts_us,
                         const Vocab& vocab);

std::string render_sentence(const TokenSeq& seq, const Vocab& vocab);
// Inverse of render_sentence: the non-pad ids. Unknown words throw MalformedSequence.
std::vector<TokenId> parse_sentence(std::string_view text, const Vocab& vocab);

enum class Section { Other, Tcp, Udp, Icmp };

struct FieldAssignment {
  bool has_ip = false;
  Section section = Section::Other;

  std::optional<bool> ip_version_4;
  std::optional<bool> ihl_5;
  std::optional<bool> tos_nonzero;
  std::optional<ValueRange> total_length;
  std::optional<FragClass> frag;
  std::optional<ValueRange> ttl;
  std::optional<std::uint8_t> protocol;  // set for ICMP, TCP and UDP only
  std::optional<Ipv4Addr> src_addr;
  std::optional<Ipv4Addr> dst_addr;

  std::optional<ValueRange> src_port;
  std::optional<ValueRange> dst_port;
  std::optional<ValueRange> seq;
  std::optional<ValueRange> ack;
  std::optional<bool> data_offset_5;
  std::optional<std::uint8_t> tcp_flags;
  std::optional<ValueRange> window;
  std::optional<bool> urgent_nonzero;
  std::optional<OptionsClass> options;

  std::optional<ValueRange> udp_length;
  std::optional<IcmpTypeClass> icmp_type;
  std::optional<bool> icmp_code_nonzero;

  std::optional<ValueRange> payload_len;
  std::optional<ValueRange> iat_us;
};

// Throws MalformedSequence when the sequence breaks the layout above.
FieldAssignment detokenize_fields(const TokenSeq& seq, const Vocab& vocab);

// Bidirectional 5-tuple; nullopt for frames without IPv4.
struct FlowKey {
  Ipv4Addr addr_a{};
  Ipv4Addr addr_b{};
  std::uint16_t port_a = 0;
  std::uint16_t port_b = 0;
  std::uint8_t protocol = 0;
  bool operator==(const FlowKey&) const = default;
};
std::optional<FlowKey> flow_key(const Packet& packet);

struct FlowKeyHash {
  std::size_t operator()(const FlowKey& k) const noexcept;
};

// Caller-side flow context: remembers the last timestamp per flow.
class FlowClock {
 public:
  // Returns the previous timestamp of the packet's flow and records this one.
  std::optional<std::int64_t> observe(const Packet& packet);

 private:
  std::unordered_map<FlowKey, std::int64_t, FlowKeyHash> last_;
};

}  // namespace sentinel
