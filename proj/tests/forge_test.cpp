#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <set>

#include "sentinel/error.hpp"
#include "sentinel/forge.hpp"
#include "sentinel/lang.hpp"

using namespace sentinel;

namespace {

ScenarioConfig small_scenario() {
  ScenarioConfig c;
  c.seed = 99;
  c.duration_us = 3'000'000;
  c.warmup_us = 1'000'000;
  c.hosts = {{{10, 0, 1, 1}, HostRole::Client},
             {{10, 0, 1, 2}, HostRole::Client},
             {{10, 0, 2, 1}, HostRole::Server},
             {{10, 0, 9, 1}, HostRole::Attacker}};
  c.benign.flow_rate = 20;
  return c;
}

FloodSpec flood(std::uint32_t rate, std::int64_t span_us) {
  FloodSpec s;
  s.start_us = 0;
  s.end_us = span_us;
  s.rate = rate;
  s.sources = {{10, 0, 9, 1}, {10, 0, 9, 2}};
  s.target = {10, 0, 2, 1};
  s.target_port = 80;
  return s;
}

std::vector<Packet> decode_all(const Timeline& t) {
  std::vector<Packet> out;
  for (const auto& fp : t) out.push_back(decode_frame(fp.frame, fp.ts_us));
  return out;
}

bool time_ordered(const Timeline& t) {
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i].ts_us < t[i - 1].ts_us) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("benign flow without payload is six packets through the lifecycle") {
  Rng rng(1);
  BenignFlowSpec spec;
  spec.client = {10, 0, 1, 1};
  spec.server = {10, 0, 2, 1};
  spec.start_us = 1000;
  Timeline t = gen_benign_flow(rng, spec);
  REQUIRE(t.size() == 6);
  auto pkts = decode_all(t);
  using namespace tcpflag;
  const std::vector<std::uint8_t> flags = {kSyn, kSyn | kAck, kAck, kFin, kFin | kAck, kAck};
  for (std::size_t i = 0; i < 6; ++i) {
    REQUIRE(pkts[i].tcp() != nullptr);
    CHECK(pkts[i].tcp()->flags == flags[i]);
    CHECK(validate_packet(pkts[i]).empty());
    CHECK(t[i].label == ThreatClass::Benign);
  }
  CHECK(time_ordered(t));
  const std::uint32_t c = pkts[0].tcp()->seq;
  const std::uint32_t s = pkts[1].tcp()->seq;
  CHECK(pkts[1].tcp()->ack == c + 1);
  CHECK(pkts[2].tcp()->seq == c + 1);
  CHECK(pkts[2].tcp()->ack == s + 1);
  CHECK(pkts[3].tcp()->seq == c + 1);
  CHECK(pkts[4].tcp()->ack == c + 2);
  CHECK(pkts[5].tcp()->ack == s + 2);
  CHECK(classify_tcp_options(pkts[0].tcp()->options) == OptionsClass::Mss);
  CHECK(pkts[0].tcp()->window >= 8192);
}

TEST_CASE("benign data segments follow cumulative sequence arithmetic") {
  Rng rng(2);
  BenignFlowSpec spec;
  spec.client = {10, 0, 1, 1};
  spec.server = {10, 0, 2, 1};
  spec.segment_sizes = {100, 200, 300};
  spec.client_ttl = 128;
  Timeline t = gen_benign_flow(rng, spec);
  REQUIRE(t.size() == 6 + 2 * 3);
  auto pkts = decode_all(t);
  const std::uint32_t c = pkts[0].tcp()->seq;
  const std::uint32_t s = pkts[1].tcp()->seq;
  // Request from client, then two server replies.
  CHECK(pkts[3].payload.size() == 100);
  CHECK(pkts[3].tcp()->seq == c + 1);
  CHECK(pkts[4].tcp()->ack == c + 1 + 100);
  CHECK(pkts[5].tcp()->seq == s + 1);
  CHECK(pkts[5].payload.size() == 200);
  CHECK(pkts[7].tcp()->seq == s + 1 + 200);
  CHECK(pkts[8].tcp()->ack == s + 1 + 500);
  CHECK(pkts[9].tcp()->seq == c + 1 + 100);
  CHECK(pkts[10].tcp()->ack == c + 2 + 100);
  CHECK(pkts[11].tcp()->ack == s + 2 + 500);
  CHECK(pkts[0].ip->ttl == 128);
  for (const auto& p : pkts) {
    CHECK(validate_packet(p).empty());
    CHECK(p.tcp()->window >= 8192);
  }
}

TEST_CASE("SYN flood: flags, rate and spoofed sources") {
  Rng rng(3);
  FloodSpec spec = flood(1000, 10'000'000);
  spec.spoofing = true;
  Timeline t = gen_syn_flood(rng, spec);
  CHECK(t.size() == 10000);
  CHECK(time_ordered(t));
  std::set<Ipv4Addr> sources;
  for (const auto& p : decode_all(t)) {
    CHECK(p.tcp()->flags == tcpflag::kSyn);
    CHECK(p.tcp()->options.empty());
    CHECK(p.tcp()->window <= 1024);
    CHECK(p.tcp()->dst_port == 80);
    CHECK(validate_packet(p).empty());
    sources.insert(p.ip->src_addr);
  }
  CHECK(sources.size() >= 9900);

  Rng rng2(4);
  CHECK(gen_syn_flood(rng2, flood(333, 3'000'000)).size() == 999);
  CHECK(gen_syn_flood(rng2, flood(7, 1'500'000)).size() == 10);
}

TEST_CASE("UDP and ICMP floods are volumetric with large payloads") {
  Rng rng(5);
  FloodSpec spec = flood(500, 1'000'000);
  spec.payload_min = 1100;
  spec.payload_max = 1300;
  for (const auto& t : {gen_udp_flood(rng, spec), gen_icmp_flood(rng, spec)}) {
    CHECK(t.size() == 500);
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(t[i].label == ThreatClass::Volumetric);
      Packet p = decode_frame(t[i].frame, t[i].ts_us);
      CHECK(p.payload_len >= 1100);
      CHECK(p.payload_len <= 1300);
      CHECK(log2_bucket(p.payload_len) >= 10);
      CHECK(validate_packet(p).empty());
      if (p.icmp()) CHECK(p.icmp()->icmp_type == 8);
    }
  }
}

TEST_CASE("link flood: clean low-rate flows with the configured aggregate rate") {
  FloodSpec spec = flood(10, 5'000'000);
  spec.flows = 40;
  spec.target = {10, 0, 3, 1};
  spec.target_port = 8080;
  Timeline t = gen_link_flood(1234, spec);
  CHECK(time_ordered(t));
  const double aggregate = static_cast<double>(t.size()) / 5.0;
  CHECK(std::abs(aggregate - 40 * 10) <= 0.05 * 400);
  std::unordered_map<FlowKey, std::size_t, FlowKeyHash> per_flow;
  for (const auto& p : decode_all(t)) {
    CHECK(validate_packet(p).empty());
    per_flow[*flow_key(p)]++;
  }
  CHECK(per_flow.size() == 40);
  for (const auto& [key, n] : per_flow) CHECK(n <= 10 * 5);
}

TEST_CASE("malformed packets rotate through variants and all break the grammar") {
  Rng rng(6);
  Timeline t = gen_malformed(rng, flood(600, 100'000));
  REQUIRE(t.size() == 60);
  for (std::size_t k = 0; k < t.size(); ++k) {
    Packet p = decode_frame(t[k].frame, t[k].ts_us);
    auto anomalies = validate_packet(p);
    CHECK_FALSE(anomalies.empty());
    const auto variant = static_cast<MalformedVariant>(k % kMalformedVariants);
    auto has = [&](Anomaly a) {
      return std::find(anomalies.begin(), anomalies.end(), a) != anomalies.end();
    };
    switch (variant) {
      case MalformedVariant::SynFin: CHECK(p.tcp()->flags == 0x03); break;
      case MalformedVariant::ZeroFlags: CHECK(p.tcp()->flags == 0x00); break;
      case MalformedVariant::AllFlags: CHECK(p.tcp()->flags == 0xFF); break;
      case MalformedVariant::BadIhl: CHECK(anomalies == std::vector<Anomaly>{Anomaly::BadIhl}); break;
      case MalformedVariant::BadChecksum: {
        CHECK(anomalies == std::vector<Anomaly>{Anomaly::BadIpChecksum});
        // Differs from the normalized encoding only in the IPv4 checksum bytes.
        Bytes valid = encode_packet(p, ChecksumMode::Normalize);
        REQUIRE(valid.size() == t[k].frame.size());
        for (std::size_t i = 0; i < valid.size(); ++i) {
          if (i == 24 || i == 25) continue;
          CHECK(valid[i] == t[k].frame[i]);
        }
        CHECK((valid[24] != t[k].frame[24] || valid[25] != t[k].frame[25]));
        break;
      }
      case MalformedVariant::TruncatedHeader: CHECK(has(Anomaly::TruncatedHeader)); break;
    }
  }
}

TEST_CASE("merge_timeline is a stable time-ordered permutation") {
  auto fp = [](std::int64_t ts, std::uint8_t tag) { return ForgedPacket{ts, Bytes{tag}, ThreatClass::Benign}; };
  Timeline a{fp(1, 1), fp(2, 2)};
  Timeline b{fp(5, 3), fp(6, 4)};
  Timeline m = merge_timeline({a, b});
  REQUIRE(m.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(m[i].frame[0] == i + 1);

  Timeline c{fp(3, 10), fp(3, 11)};
  Timeline d{fp(3, 20), fp(1, 21)};
  std::sort(d.begin(), d.end(), [](auto& x, auto& y) { return x.ts_us < y.ts_us; });
  Timeline n = merge_timeline({c, d});
  std::vector<int> tags;
  for (const auto& p : n) tags.push_back(p.frame[0]);
  CHECK(tags == std::vector<int>{21, 10, 11, 20});
}

TEST_CASE("forge is deterministic, trims the warm-up and labels by class") {
  ScenarioConfig c = small_scenario();
  c.attacks.push_back({AttackKind::SynFlood, 200, 0, true, {10, 0, 2, 1}, 80, 1, 1024, 1400});
  c.attacks.push_back({AttackKind::Malformed, 100, 0, false, {10, 0, 2, 1}, 80, 1, 1024, 1400});
  LabeledCapture a = forge(c);
  LabeledCapture b = forge(c);
  CHECK(a.manifest.pcap_sha256 == b.manifest.pcap_sha256);
  CHECK(a.capture == b.capture);
  CHECK(a.labels == b.labels);

  REQUIRE(a.labels.size() == a.capture.records.size());
  std::size_t total = 0;
  for (auto n : a.manifest.class_counts) total += n;
  CHECK(total == a.labels.size());
  CHECK(a.manifest.class_counts[index_of(ThreatClass::Protocol)] >= 396);
  CHECK(a.manifest.class_counts[index_of(ThreatClass::Protocol)] <= 404);
  CHECK(a.manifest.class_counts[index_of(ThreatClass::Vulnerability)] == 200);

  std::int64_t last = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const auto& l = a.labels[i];
    CHECK(l.index == i);
    CHECK(l.ts_us >= c.warmup_us);
    CHECK(l.ts_us < c.duration_us);
    CHECK(l.ts_us >= last);
    CHECK(l.ts_us == a.capture.records[i].timestamp_us());
    last = l.ts_us;
    Packet p = decode_frame(a.capture.records[i].frame, l.ts_us);
    const bool clean = validate_packet(p).empty();
    if (l.label == ThreatClass::Vulnerability) CHECK_FALSE(clean);
    else CHECK(clean);
    CHECK(encode_packet(p) == a.capture.records[i].frame);
  }
  // Some benign flows straddle the cut and keep their pre-cut context.
  bool straddles = false;
  for (const auto& l : a.labels) {
    if (l.prev_ts_us && *l.prev_ts_us < c.warmup_us) straddles = true;
  }
  CHECK(straddles);

  ScenarioConfig other = c;
  other.seed = 100;
  CHECK(forge(other).manifest.pcap_sha256 != a.manifest.pcap_sha256);
}

TEST_CASE("forge without attacks is all benign") {
  LabeledCapture cap = forge(small_scenario());
  CHECK_FALSE(cap.labels.empty());
  for (const auto& l : cap.labels) CHECK(l.label == ThreatClass::Benign);
}

TEST_CASE("SYN flood at 1000 pkts/s over a 10 s window") {
  ScenarioConfig c = small_scenario();
  c.duration_us = 12'000'000;
  c.warmup_us = 2'000'000;
  c.attacks.push_back({AttackKind::SynFlood, 1000, 0, true, {10, 0, 2, 1}, 80, 1, 1024, 1400});
  LabeledCapture cap = forge(c);
  const auto n = cap.manifest.class_counts[index_of(ThreatClass::Protocol)];
  CHECK(n >= 9800);
  CHECK(n <= 10200);
}

TEST_CASE("scenario JSON round trip and validation errors") {
  const ScenarioConfig d = default_scenario(5);
  CHECK(parse_scenario(scenario_to_json(d)) == d);

  auto expect_invalid = [](const std::string& text, const std::string& path) {
    try {
      parse_scenario(text);
      FAIL("expected InvalidConfig for " << text);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidConfig);
      CHECK(std::string(e.what()).find(path) != std::string::npos);
    }
  };
  const std::string hosts =
      R"("hosts":[{"addr":"10.0.0.1","role":"client"},{"addr":"10.0.0.2","role":"server"}])";
  expect_invalid("{", "$");
  expect_invalid(R"({"seed":1,"duration_s":5,)" + hosts + R"(,"bogus":1})", "bogus");
  expect_invalid(R"({"seed":1,"duration_s":5,"warmup_s":6,)" + hosts + "}", "warmup_s");
  expect_invalid(R"({"seed":1,"duration_s":5,)" + hosts +
                     R"(,"attacks":[{"kind":"syn_flood","rate":0,"target":"10.0.0.2"}]})",
                 "hosts");
  const std::string with_attacker =
      R"("hosts":[{"addr":"10.0.0.1","role":"client"},{"addr":"10.0.0.2","role":"server"},)"
      R"({"addr":"10.0.0.9","role":"attacker"}])";
  expect_invalid(R"({"seed":1,"duration_s":5,)" + with_attacker +
                     R"(,"attacks":[{"kind":"syn_flood","rate":0,"target":"10.0.0.2"}]})",
                 "attacks[0].rate");
  expect_invalid(R"({"seed":1,"duration_s":5,)" + with_attacker +
                     R"(,"attacks":[{"kind":"syn_flood","rate":5,"target":"10.0.0.2","x":1}]})",
                 "attacks[0].x");
  expect_invalid(R"({"seed":1,"duration_s":5,)" + with_attacker +
                     R"(,"attacks":[{"kind":"teardrop","rate":5,"target":"10.0.0.2"}]})",
                 "attacks[0].kind");
  expect_invalid(R"({"seed":1,"duration_s":5,"hosts":[{"addr":"10.0.0.300","role":"client"}]})",
                 "hosts[0].addr");
}

TEST_CASE("labels sidecar round trip") {
  LabeledCapture cap = forge(small_scenario());
  const std::string text = labels_to_jsonl(cap.labels);
  CHECK(labels_from_jsonl(text) == cap.labels);
  CHECK(text.find("\"label\":\"benign\"") != std::string::npos);
  CHECK_THROWS_AS(labels_from_jsonl("{\"index\":0}\n"), Error);
}
