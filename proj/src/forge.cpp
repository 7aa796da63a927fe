#include "sentinel/forge.hpp"

#include <algorithm>
#include <unordered_map>

#include "sentinel/error.hpp"
#include "sentinel/lang.hpp"

namespace sentinel {
namespace {

// Stream ids: benign flow k uses stream k; attack i uses kAttackStreamBase + i.
constexpr std::uint64_t kAttackStreamBase = std::uint64_t{1} << 40;

const Bytes kMssOption = {2, 4, 0x05, 0xB4};  // MSS 1460
constexpr std::array<std::uint16_t, 3> kSynWindows = {64240, 65535, 29200};

std::int64_t interval_us(std::uint32_t rate) { return 1'000'000 / rate; }

std::int64_t packet_count(std::int64_t start_us, std::int64_t end_us, std::uint32_t rate) {
  if (end_us <= start_us) return 0;
  return (end_us - start_us) * std::int64_t{rate} / 1'000'000;
}

// Base time of the k-th packet of a constant-rate source, plus bounded jitter.
std::int64_t slot_time(Rng& rng, std::int64_t start_us, std::int64_t k, std::uint32_t rate) {
  const std::int64_t base = start_us + k * 1'000'000 / rate;
  const std::int64_t half = interval_us(rate) / 2;
  return half > 0 ? base + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(half)))
                  : base;
}

Bytes filler(std::size_t size, std::uint8_t seed) {
  Bytes out(size);
  for (std::size_t i = 0; i < size; ++i) out[i] = static_cast<std::uint8_t>(seed + i);
  return out;
}

Ipv4Addr random_public_addr(Rng& rng) {
  const auto v = static_cast<std::uint32_t>(rng.next());
  Ipv4Addr a{static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
             static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
  a[0] = static_cast<std::uint8_t>(1 + a[0] % 223);  // 1..223, unicast
  if (a[0] == 10 || a[0] == 127) a[0] = static_cast<std::uint8_t>(a[0] + 1);
  return a;
}

Packet base_ipv4(const Ipv4Addr& src, const Ipv4Addr& dst, std::uint8_t protocol,
                 std::uint8_t ttl, std::uint16_t ip_id, bool dont_fragment) {
  Packet p;
  p.link.src = mac_for(src);
  p.link.dst = mac_for(dst);
  p.link.ethertype = kEtherTypeIpv4;
  Ipv4Header ip;
  ip.ttl = ttl;
  ip.protocol = protocol;
  ip.identification = ip_id;
  ip.flags = dont_fragment ? ipflag::kDontFragment : 0;
  ip.src_addr = src;
  ip.dst_addr = dst;
  p.ip = ip;
  return p;
}

struct TcpFields {
  Ipv4Addr src{};
  Ipv4Addr dst{};
  std::uint16_t sport = 0;
  std::uint16_t dport = 0;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint8_t flags = 0;
  std::uint16_t window = 0;
  std::uint8_t ttl = 64;
  std::uint16_t ip_id = 0;
  bool dont_fragment = true;
  Bytes options;
  Bytes payload;
};

Packet tcp_packet(const TcpFields& f) {
  Packet p = base_ipv4(f.src, f.dst, kProtoTcp, f.ttl, f.ip_id, f.dont_fragment);
  TcpHeader tcp;
  tcp.src_port = f.sport;
  tcp.dst_port = f.dport;
  tcp.seq = f.seq;
  tcp.ack = f.ack;
  tcp.flags = f.flags;
  tcp.window = f.window;
  tcp.options = f.options;
  p.transport = tcp;
  p.payload = f.payload;
  finalize_lengths(p);
  return p;
}

ForgedPacket forged(std::int64_t ts, const Packet& p, ThreatClass label,
                    ChecksumMode mode = ChecksumMode::Normalize) {
  return ForgedPacket{ts, encode_packet(p, mode), label};
}

Ipv4Addr pick_source(Rng& rng, const FloodSpec& spec, std::int64_t k) {
  if (spec.spoofing || spec.sources.empty()) return random_public_addr(rng);
  return spec.sources[static_cast<std::size_t>(k) % spec.sources.size()];
}

std::vector<Ipv4Addr> hosts_with_role(const ScenarioConfig& cfg, HostRole role) {
  std::vector<Ipv4Addr> out;
  for (const auto& h : cfg.hosts) {
    if (h.role == role) out.push_back(h.addr);
  }
  return out;
}

}  // namespace

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::SynFlood: return "syn_flood";
    case AttackKind::UdpFlood: return "udp_flood";
    case AttackKind::IcmpFlood: return "icmp_flood";
    case AttackKind::LinkFlood: return "link_flood";
    case AttackKind::Malformed: return "malformed";
  }
  return "unknown";
}

ThreatClass attack_class(AttackKind kind) {
  switch (kind) {
    case AttackKind::UdpFlood:
    case AttackKind::IcmpFlood: return ThreatClass::Volumetric;
    case AttackKind::SynFlood:
    case AttackKind::LinkFlood: return ThreatClass::Protocol;
    case AttackKind::Malformed: return ThreatClass::Vulnerability;
  }
  return ThreatClass::Benign;
}

MacAddr mac_for(const Ipv4Addr& addr) { return {0x02, 0x00, addr[0], addr[1], addr[2], addr[3]}; }

Timeline gen_benign_flow(Rng& rng, const BenignFlowSpec& spec) {
  struct Side {
    Ipv4Addr addr;
    std::uint16_t port;
    std::uint8_t ttl;
    std::uint32_t isn;
    std::uint32_t sent = 0;
    std::uint16_t window;
    std::uint16_t ip_id;
  };
  // Draw order: client ISN, server ISN, half RTT, client window, server
  // window, client IP id, server IP id, payload pattern seed, then one gap
  // per data segment and one before teardown.
  Side client{spec.client, spec.client_port, spec.client_ttl, static_cast<std::uint32_t>(rng.next()),
              0, 0, 0};
  Side server{spec.server, spec.server_port, spec.server_ttl, static_cast<std::uint32_t>(rng.next()),
              0, 0, 0};
  const std::int64_t half_rtt = static_cast<std::int64_t>(rng.between(100, 2500));
  client.window = kSynWindows[rng.below(kSynWindows.size())];
  server.window = kSynWindows[rng.below(kSynWindows.size())];
  client.ip_id = static_cast<std::uint16_t>(rng.below(65536));
  server.ip_id = static_cast<std::uint16_t>(rng.below(65536));
  const auto pattern = static_cast<std::uint8_t>(rng.below(256));

  Timeline out;
  std::int64_t t = spec.start_us;
  auto emit = [&](Side& from, const Side& to, std::uint8_t flags, std::uint32_t seq,
                  std::uint32_t ack, const Bytes& options, std::size_t payload) {
    TcpFields f;
    f.src = from.addr;
    f.dst = to.addr;
    f.sport = from.port;
    f.dport = to.port;
    f.seq = seq;
    f.ack = ack;
    f.flags = flags;
    f.window = from.window;
    f.ttl = from.ttl;
    f.ip_id = from.ip_id++;
    f.options = options;
    f.payload = filler(payload, pattern);
    out.push_back(forged(t, tcp_packet(f), ThreatClass::Benign));
  };
  using namespace tcpflag;

  emit(client, server, kSyn, client.isn, 0, kMssOption, 0);
  t += half_rtt;
  emit(server, client, kSyn | kAck, server.isn, client.isn + 1, kMssOption, 0);
  t += half_rtt;
  emit(client, server, kAck, client.isn + 1, server.isn + 1, {}, 0);

  for (std::size_t i = 0; i < spec.segment_sizes.size(); ++i) {
    Side& sender = i == 0 ? client : server;
    Side& receiver = i == 0 ? server : client;
    const std::uint32_t size = spec.segment_sizes[i];
    t += static_cast<std::int64_t>(rng.between(50, 3000));
    emit(sender, receiver, kPsh | kAck, sender.isn + 1 + sender.sent,
         receiver.isn + 1 + receiver.sent, {}, size);
    sender.sent += size;
    t += half_rtt;
    emit(receiver, sender, kAck, receiver.isn + 1 + receiver.sent, sender.isn + 1 + sender.sent,
         {}, 0);
  }

  t += static_cast<std::int64_t>(rng.between(50, 3000));
  emit(client, server, kFin, client.isn + 1 + client.sent, 0, {}, 0);
  t += half_rtt;
  emit(server, client, kFin | kAck, server.isn + 1 + server.sent, client.isn + 2 + client.sent, {},
       0);
  t += half_rtt;
  emit(client, server, kAck, client.isn + 2 + client.sent, server.isn + 2 + server.sent, {}, 0);
  return out;
}

Timeline gen_syn_flood(Rng& rng, const FloodSpec& spec) {
  Timeline out;
  const std::int64_t n = packet_count(spec.start_us, spec.end_us, spec.rate);
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    const std::int64_t t = slot_time(rng, spec.start_us, k, spec.rate);
    TcpFields f;
    f.src = pick_source(rng, spec, k);
    f.dst = spec.target;
    f.sport = static_cast<std::uint16_t>(rng.between(1024, 65535));
    f.dport = spec.target_port;
    f.seq = static_cast<std::uint32_t>(rng.next());
    f.flags = tcpflag::kSyn;
    f.window = static_cast<std::uint16_t>(rng.between(512, 1024));
    f.ttl = static_cast<std::uint8_t>(rng.between(32, 255));
    f.ip_id = static_cast<std::uint16_t>(rng.below(65536));
    f.dont_fragment = false;
    out.push_back(forged(t, tcp_packet(f), ThreatClass::Protocol));
  }
  return out;
}

Timeline gen_udp_flood(Rng& rng, const FloodSpec& spec) {
  Timeline out;
  const std::int64_t n = packet_count(spec.start_us, spec.end_us, spec.rate);
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    const std::int64_t t = slot_time(rng, spec.start_us, k, spec.rate);
    const Ipv4Addr src = pick_source(rng, spec, k);
    Packet p = base_ipv4(src, spec.target, kProtoUdp, 64,
                         static_cast<std::uint16_t>(rng.below(65536)), false);
    UdpHeader udp;
    udp.src_port = static_cast<std::uint16_t>(rng.between(1024, 65535));
    udp.dst_port = spec.target_port;
    p.transport = udp;
    const auto size = static_cast<std::size_t>(rng.between(spec.payload_min, spec.payload_max));
    p.payload = filler(size, static_cast<std::uint8_t>(k));
    finalize_lengths(p);
    out.push_back(forged(t, p, ThreatClass::Volumetric));
  }
  return out;
}

Timeline gen_icmp_flood(Rng& rng, const FloodSpec& spec) {
  Timeline out;
  const std::int64_t n = packet_count(spec.start_us, spec.end_us, spec.rate);
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    const std::int64_t t = slot_time(rng, spec.start_us, k, spec.rate);
    const Ipv4Addr src = pick_source(rng, spec, k);
    Packet p = base_ipv4(src, spec.target, kProtoIcmp, 64,
                         static_cast<std::uint16_t>(rng.below(65536)), false);
    IcmpHeader icmp;
    icmp.icmp_type = 8;  // echo request
    const auto ident = static_cast<std::uint32_t>(rng.below(65536));
    icmp.rest_of_header = (ident << 16) | static_cast<std::uint32_t>(k & 0xFFFF);
    p.transport = icmp;
    const auto size = static_cast<std::size_t>(rng.between(spec.payload_min, spec.payload_max));
    p.payload = filler(size, static_cast<std::uint8_t>(k));
    finalize_lengths(p);
    out.push_back(forged(t, p, ThreatClass::Volumetric));
  }
  return out;
}

Timeline gen_link_flood(std::uint64_t stream_seed, const FloodSpec& spec) {
  std::vector<Timeline> flows;
  flows.reserve(spec.flows);
  const std::int64_t step = interval_us(spec.rate);
  for (std::uint32_t j = 0; j < spec.flows; ++j) {
    Rng rng = Rng::stream(stream_seed, j);
    const Ipv4Addr bot = spec.sources.empty() ? random_public_addr(rng)
                                              : spec.sources[j % spec.sources.size()];
    const auto bot_port = static_cast<std::uint16_t>(rng.between(32768, 60999));
    const auto bot_isn = static_cast<std::uint32_t>(rng.next());
    const auto tgt_isn = static_cast<std::uint32_t>(rng.next());
    const std::int64_t phase = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(step)));
    const auto chunk = static_cast<std::uint32_t>(rng.between(16, 96));
    auto bot_id = static_cast<std::uint16_t>(rng.below(65536));
    auto tgt_id = static_cast<std::uint16_t>(rng.below(65536));
    std::uint32_t bot_sent = 0;

    Timeline flow;
    for (std::int64_t k = 0;; ++k) {
      const std::int64_t t = spec.start_us + phase + k * 1'000'000 / spec.rate;
      if (t >= spec.end_us) break;
      TcpFields f;
      const bool from_bot = k == 0 || k == 2 || (k >= 3 && (k - 3) % 2 == 0);
      f.src = from_bot ? bot : spec.target;
      f.dst = from_bot ? spec.target : bot;
      f.sport = from_bot ? bot_port : spec.target_port;
      f.dport = from_bot ? spec.target_port : bot_port;
      f.ttl = 64;
      f.ip_id = from_bot ? bot_id++ : tgt_id++;
      f.window = from_bot ? 64240 : 65160;
      if (k == 0) {
        f.flags = tcpflag::kSyn;
        f.seq = bot_isn;
        f.options = kMssOption;
      } else if (k == 1) {
        f.flags = tcpflag::kSyn | tcpflag::kAck;
        f.seq = tgt_isn;
        f.ack = bot_isn + 1;
        f.options = kMssOption;
      } else if (from_bot) {
        f.flags = k == 2 ? tcpflag::kAck : tcpflag::kPsh | tcpflag::kAck;
        f.seq = bot_isn + 1 + bot_sent;
        f.ack = tgt_isn + 1;
        if (k > 2) {
          f.payload = filler(chunk, static_cast<std::uint8_t>(j));
          bot_sent += chunk;
        }
      } else {
        f.flags = tcpflag::kAck;
        f.seq = tgt_isn + 1;
        f.ack = bot_isn + 1 + bot_sent;
      }
      flow.push_back(forged(t, tcp_packet(f), ThreatClass::Protocol));
    }
    flows.push_back(std::move(flow));
  }
  return merge_timeline(std::move(flows));
}

Timeline gen_malformed(Rng& rng, const FloodSpec& spec) {
  Timeline out;
  const std::int64_t n = packet_count(spec.start_us, spec.end_us, spec.rate);
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    const std::int64_t t = slot_time(rng, spec.start_us, k, spec.rate);
    TcpFields f;
    f.src = pick_source(rng, spec, k);
    f.dst = spec.target;
    f.sport = static_cast<std::uint16_t>(rng.between(1024, 65535));
    f.dport = spec.target_port;
    f.seq = static_cast<std::uint32_t>(rng.next());
    f.ack = static_cast<std::uint32_t>(rng.next());
    f.window = static_cast<std::uint16_t>(rng.between(1024, 65535));
    f.ip_id = static_cast<std::uint16_t>(rng.below(65536));
    f.ttl = 64;

    const auto variant = static_cast<MalformedVariant>(k % static_cast<std::int64_t>(kMalformedVariants));
    switch (variant) {
      case MalformedVariant::SynFin:
        f.flags = tcpflag::kSyn | tcpflag::kFin;
        out.push_back(forged(t, tcp_packet(f), ThreatClass::Vulnerability));
        break;
      case MalformedVariant::ZeroFlags:
        f.flags = 0;
        out.push_back(forged(t, tcp_packet(f), ThreatClass::Vulnerability));
        break;
      case MalformedVariant::AllFlags:
        f.flags = 0xFF;
        out.push_back(forged(t, tcp_packet(f), ThreatClass::Vulnerability));
        break;
      case MalformedVariant::BadIhl: {
        f.flags = tcpflag::kPsh | tcpflag::kAck;
        f.payload = filler(32, static_cast<std::uint8_t>(k));
        Packet p = tcp_packet(f);
        Bytes normal = encode_packet(p, ChecksumMode::Normalize);
        // Same bytes, but the header claims 16 bytes; checksum kept valid.
        normal[kEthernetHeaderLen] = 0x44;
        normal[kEthernetHeaderLen + 10] = 0;
        normal[kEthernetHeaderLen + 11] = 0;
        const std::uint16_t sum =
            internet_checksum(ByteView(normal).subspan(kEthernetHeaderLen, 20));
        normal[kEthernetHeaderLen + 10] = static_cast<std::uint8_t>(sum >> 8);
        normal[kEthernetHeaderLen + 11] = static_cast<std::uint8_t>(sum);
        out.push_back(ForgedPacket{t, std::move(normal), ThreatClass::Vulnerability});
        break;
      }
      case MalformedVariant::BadChecksum: {
        f.flags = tcpflag::kPsh | tcpflag::kAck;
        f.payload = filler(32, static_cast<std::uint8_t>(k));
        Packet p = decode_frame(encode_packet(tcp_packet(f), ChecksumMode::Normalize), t);
        p.ip->header_checksum ^= static_cast<std::uint16_t>(1u << rng.below(16));
        out.push_back(forged(t, p, ThreatClass::Vulnerability, ChecksumMode::Raw));
        break;
      }
      case MalformedVariant::TruncatedHeader: {
        f.flags = tcpflag::kSyn;
        Bytes frame = encode_packet(tcp_packet(f), ChecksumMode::Normalize);
        frame.resize(kEthernetHeaderLen + 20 + rng.between(1, 19));
        out.push_back(ForgedPacket{t, std::move(frame), ThreatClass::Vulnerability});
        break;
      }
    }
  }
  return out;
}

Timeline merge_timeline(std::vector<Timeline> lists) {
  Timeline all;
  std::size_t total = 0;
  for (const auto& l : lists) total += l.size();
  all.reserve(total);
  for (auto& l : lists) {
    std::move(l.begin(), l.end(), std::back_inserter(all));
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const ForgedPacket& a, const ForgedPacket& b) { return a.ts_us < b.ts_us; });
  return all;
}

LabeledCapture forge(const ScenarioConfig& config) {
  validate_config(config);
  const auto clients = hosts_with_role(config, HostRole::Client);
  const auto servers = hosts_with_role(config, HostRole::Server);
  const auto attackers = hosts_with_role(config, HostRole::Attacker);

  std::vector<Timeline> lists;

  // Benign flow k draws all of its parameters from its own stream k.
  {
    const auto& b = config.benign;
    const std::int64_t n_flows = packet_count(0, config.duration_us, b.flow_rate);
    std::vector<Timeline> flows;
    flows.reserve(static_cast<std::size_t>(n_flows));
    for (std::int64_t k = 0; k < n_flows; ++k) {
      Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(k));
      BenignFlowSpec spec;
      spec.start_us = slot_time(rng, 0, k, b.flow_rate);
      const std::size_t ci = rng.below(clients.size());
      spec.client = clients[ci];
      spec.server = servers[rng.below(servers.size())];
      spec.server_port = b.dst_ports[rng.below(b.dst_ports.size())];
      spec.client_port = static_cast<std::uint16_t>(rng.between(32768, 60999));
      spec.client_ttl = ci % 2 == 0 ? 64 : 128;
      spec.server_ttl = 64;
      const auto segments = rng.between(b.segments_min, b.segments_max);
      for (std::uint64_t s = 0; s < segments; ++s) {
        spec.segment_sizes.push_back(static_cast<std::uint32_t>(rng.between(b.payload_min, b.payload_max)));
      }
      flows.push_back(gen_benign_flow(rng, spec));
    }
    lists.push_back(merge_timeline(std::move(flows)));
  }

  for (std::size_t i = 0; i < config.attacks.size(); ++i) {
    const auto& a = config.attacks[i];
    FloodSpec spec;
    spec.start_us = a.start_us;
    spec.end_us = config.duration_us;
    spec.rate = a.rate;
    spec.spoofing = a.spoofing;
    spec.sources = attackers;
    spec.target = a.target;
    spec.target_port = a.target_port;
    spec.payload_min = a.payload_min;
    spec.payload_max = a.payload_max;
    spec.flows = a.flows;
    const std::uint64_t stream = kAttackStreamBase + i;
    Rng rng = Rng::stream(config.seed, stream);
    switch (a.kind) {
      case AttackKind::SynFlood: lists.push_back(gen_syn_flood(rng, spec)); break;
      case AttackKind::UdpFlood: lists.push_back(gen_udp_flood(rng, spec)); break;
      case AttackKind::IcmpFlood: lists.push_back(gen_icmp_flood(rng, spec)); break;
      case AttackKind::LinkFlood:
        lists.push_back(gen_link_flood(mix_stream(config.seed, stream), spec));
        break;
      case AttackKind::Malformed: lists.push_back(gen_malformed(rng, spec)); break;
    }
  }

  Timeline timeline = merge_timeline(std::move(lists));
  std::erase_if(timeline, [&](const ForgedPacket& p) { return p.ts_us >= config.duration_us; });

  LabeledCapture out;
  std::unordered_map<FlowKey, std::pair<std::uint64_t, std::int64_t>, FlowKeyHash> flows;
  std::uint64_t next_flow = 0;
  for (auto& fp : timeline) {
    const Packet pkt = decode_frame(fp.frame, fp.ts_us);
    // Frames without IPv4 each form their own flow.
    std::uint64_t flow_id = 0;
    std::optional<std::int64_t> prev;
    if (auto key = flow_key(pkt)) {
      auto [it, inserted] = flows.try_emplace(*key, next_flow, fp.ts_us);
      if (inserted) {
        ++next_flow;
      } else {
        prev = it->second.second;
        it->second.second = fp.ts_us;
      }
      flow_id = it->second.first;
    } else {
      flow_id = next_flow++;
    }
    if (fp.ts_us < config.warmup_us) continue;

    RecordLabel label;
    label.index = out.labels.size();
    label.ts_us = fp.ts_us;
    label.label = fp.label;
    label.flow_id = flow_id;
    label.prev_ts_us = prev;
    out.labels.push_back(label);
    out.manifest.class_counts[index_of(fp.label)]++;
    out.capture.records.push_back(CaptureRecord::from_frame(fp.ts_us, std::move(fp.frame)));
  }
  out.manifest.config = config;
  out.manifest.records = out.labels.size();
  out.manifest.pcap_sha256 = sha256_hex(write_pcap(out.capture.meta, out.capture.records));
  return out;
}

}  // namespace sentinel
