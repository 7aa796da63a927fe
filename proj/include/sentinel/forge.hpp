#pragma once

// Deterministic synthesis of labeled benign and attack traffic.
//
// Time is integer microseconds from scenario start. A generator emitting
// `rate` packets per second over [start, end) produces
// floor((end - start) * rate / 1e6) packets, the k-th at
//   start + floor(k * 1e6 / rate) + jitter,  jitter in [0, interval / 2)
// so every generator's output is strictly time-ordered.
//
// Benign TCP lifecycle (client C, server S, ISNs c and s):
//   C->S SYN            seq c                 (MSS option)
//   S->C SYN|ACK        seq s,   ack c+1      (MSS option)
//   C->S ACK            seq c+1, ack s+1
//   per data segment: sender PSH|ACK with payload, receiver ACK covering it;
//     the first segment is the client request, the rest are server replies
//   C->S FIN            seq c+1+sent_c
//   S->C FIN|ACK        seq s+1+sent_s, ack c+2+sent_c
//   C->S ACK            seq c+2+sent_c, ack s+2+sent_s
// A flow with no data segments is therefore exactly 6 packets.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sentinel/packet.hpp"
#include "sentinel/pcap.hpp"
#include "sentinel/rng.hpp"
#include "sentinel/threat_class.hpp"

namespace sentinel {

enum class HostRole { Client, Server, Attacker, Bottleneck };

struct Host {
  Ipv4Addr addr{};
  HostRole role = HostRole::Client;
  bool operator==(const Host&) const = default;
};

struct BenignConfig {
  std::uint32_t flow_rate = 50;  // new flows per second
  std::vector<std::uint16_t> dst_ports{80, 443};
  std::uint32_t payload_min = 64;
  std::uint32_t payload_max = 1200;
  std::uint32_t segments_min = 1;
  std::uint32_t segments_max = 4;
  bool operator==(const BenignConfig&) const = default;
};

enum class AttackKind { SynFlood, UdpFlood, IcmpFlood, LinkFlood, Malformed };

std::string_view to_string(AttackKind kind);
ThreatClass attack_class(AttackKind kind);

struct AttackConfig {
  AttackKind kind = AttackKind::SynFlood;
  std::uint32_t rate = 1000;  // packets per second; per flow for link floods
  std::int64_t start_us = 0;
  bool spoofing = false;
  Ipv4Addr target{};
  std::uint16_t target_port = 80;
  std::uint32_t flows = 1;  // link floods only
  std::uint32_t payload_min = 1024;  // UDP/ICMP floods only
  std::uint32_t payload_max = 1400;
  bool operator==(const AttackConfig&) const = default;
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  std::int64_t duration_us = 12'000'000;
  std::int64_t warmup_us = 2'000'000;
  std::vector<Host> hosts;
  BenignConfig benign;
  std::vector<AttackConfig> attacks;
  bool operator==(const ScenarioConfig&) const = default;
};

// Throws InvalidConfig naming the offending field path, e.g. "attacks[1].rate".
void validate_config(const ScenarioConfig& config);

// JSON document form; unknown keys are rejected with InvalidConfig.
ScenarioConfig parse_scenario(const std::string& json_text);
std::string scenario_to_json(const ScenarioConfig& config);

// Star topology around one bottleneck with four balanced traffic classes.
ScenarioConfig default_scenario(std::uint64_t seed = 7);

struct ForgedPacket {
  std::int64_t ts_us = 0;
  Bytes frame;
  ThreatClass label = ThreatClass::Benign;
};
using Timeline = std::vector<ForgedPacket>;

MacAddr mac_for(const Ipv4Addr& addr);

struct BenignFlowSpec {
  Ipv4Addr client{};
  Ipv4Addr server{};
  std::uint16_t client_port = 40000;
  std::uint16_t server_port = 80;
  std::int64_t start_us = 0;
  std::vector<std::uint32_t> segment_sizes;
  std::uint8_t client_ttl = 64;
  std::uint8_t server_ttl = 64;
};

struct FloodSpec {
  std::int64_t start_us = 0;
  std::int64_t end_us = 0;
  std::uint32_t rate = 1;
  bool spoofing = false;
  std::vector<Ipv4Addr> sources;
  Ipv4Addr target{};
  std::uint16_t target_port = 80;
  std::uint32_t payload_min = 1024;
  std::uint32_t payload_max = 1400;
  std::uint32_t flows = 1;  // link flood only
};

Timeline gen_benign_flow(Rng& rng, const BenignFlowSpec& spec);
Timeline gen_syn_flood(Rng& rng, const FloodSpec& spec);
Timeline gen_udp_flood(Rng& rng, const FloodSpec& spec);
Timeline gen_icmp_flood(Rng& rng, const FloodSpec& spec);
// Each flow owns the stream Rng::stream(stream_seed, flow index).
Timeline gen_link_flood(std::uint64_t stream_seed, const FloodSpec& spec);

enum class MalformedVariant { SynFin, ZeroFlags, AllFlags, BadIhl, BadChecksum, TruncatedHeader };
inline constexpr std::size_t kMalformedVariants = 6;
// Packet k uses variant k mod 6, in the order listed above.
Timeline gen_malformed(Rng& rng, const FloodSpec& spec);

// Stable merge by timestamp; equal timestamps keep list order, then
// within-list order.
Timeline merge_timeline(std::vector<Timeline> lists);

struct RecordLabel {
  std::size_t index = 0;
  std::int64_t ts_us = 0;
  ThreatClass label = ThreatClass::Benign;
  std::uint64_t flow_id = 0;
  // Previous packet of the same flow, including packets cut by the warm-up trim.
  std::optional<std::int64_t> prev_ts_us;
  bool operator==(const RecordLabel&) const = default;
};

struct ForgeManifest {
  ScenarioConfig config;
  std::string pcap_sha256;
  std::array<std::size_t, kClassCount> class_counts{};
  std::size_t records = 0;
};

struct LabeledCapture {
  Capture capture;
  std::vector<RecordLabel> labels;
  ForgeManifest manifest;
};

LabeledCapture forge(const ScenarioConfig& config);

std::string labels_to_jsonl(const std::vector<RecordLabel>& labels);
std::vector<RecordLabel> labels_from_jsonl(const std::string& text);
std::string manifest_to_json(const ForgeManifest& manifest);

}  // namespace sentinel
