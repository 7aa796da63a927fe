#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sentinel/error.hpp"
#include "sentinel/forge.hpp"
#include "json_reader.hpp"

namespace sentinel {
namespace {

using nlohmann::json;

using detail::invalid;
using detail::ObjectReader;

std::string_view role_name(HostRole r) {
  switch (r) {
    case HostRole::Client: return "client";
    case HostRole::Server: return "server";
    case HostRole::Attacker: return "attacker";
    case HostRole::Bottleneck: return "bottleneck";
  }
  return "client";
}

double to_seconds(std::int64_t us) { return static_cast<double>(us) / 1e6; }

}  // namespace

void validate_config(const ScenarioConfig& c) {
  if (c.duration_us <= 0) invalid("duration_s", "must be > 0");
  if (c.warmup_us < 0 || c.warmup_us >= c.duration_us) {
    invalid("warmup_s", "must satisfy 0 <= warmup_s < duration_s");
  }
  std::array<int, 4> roles{};
  for (const auto& h : c.hosts) roles[static_cast<std::size_t>(h.role)]++;
  if (roles[static_cast<std::size_t>(HostRole::Client)] == 0) invalid("hosts", "need at least one client");
  if (roles[static_cast<std::size_t>(HostRole::Server)] == 0) invalid("hosts", "need at least one server");

  const auto& b = c.benign;
  if (b.flow_rate == 0) invalid("benign.flow_rate", "must be > 0");
  if (b.dst_ports.empty()) invalid("benign.dst_ports", "must not be empty");
  if (b.payload_min == 0 || b.payload_min > b.payload_max || b.payload_max > 1460) {
    invalid("benign.payload_min", "need 1 <= payload_min <= payload_max <= 1460");
  }
  if (b.segments_min > b.segments_max || b.segments_max > 64) {
    invalid("benign.segments_min", "need segments_min <= segments_max <= 64");
  }

  if (!c.attacks.empty() && roles[static_cast<std::size_t>(HostRole::Attacker)] == 0) {
    invalid("hosts", "attacks need at least one attacker host");
  }
  for (std::size_t i = 0; i < c.attacks.size(); ++i) {
    const auto& a = c.attacks[i];
    const std::string p = "attacks[" + std::to_string(i) + "]";
    if (a.rate == 0) invalid(p + ".rate", "must be > 0");
    if (a.rate > 1'000'000) invalid(p + ".rate", "must be <= 1000000");
    if (a.start_us < 0 || a.start_us >= c.duration_us) invalid(p + ".start_s", "must lie inside the scenario");
    if (a.kind == AttackKind::LinkFlood) {
      if (a.flows == 0) invalid(p + ".flows", "must be > 0");
      if (a.spoofing) invalid(p + ".spoofing", "link floods complete handshakes and cannot spoof");
    }
    if (a.kind == AttackKind::UdpFlood || a.kind == AttackKind::IcmpFlood) {
      if (a.payload_min < 1023 || a.payload_min > a.payload_max || a.payload_max > 1472) {
        invalid(p + ".payload_min", "need 1023 <= payload_min <= payload_max <= 1472");
      }
    }
  }
}

ScenarioConfig parse_scenario(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    invalid("$", std::string("malformed JSON: ") + e.what());
  }
  ScenarioConfig c;
  ObjectReader top(root, "", {"seed", "duration_s", "warmup_s", "hosts", "benign", "attacks"});
  c.seed = top.u64("seed", UINT64_MAX);
  c.duration_us = top.seconds_us("duration_s");
  c.warmup_us = top.has("warmup_s") ? top.seconds_us("warmup_s") : 2'000'000;

  const json& hosts = top.at("hosts");
  if (!hosts.is_array()) invalid("hosts", "expected an array");
  for (std::size_t i = 0; i < hosts.size(); ++i) {
    ObjectReader h(hosts[i], "hosts[" + std::to_string(i) + "]", {"addr", "role"});
    Host host;
    host.addr = h.addr("addr");
    const std::string role = h.string("role");
    if (role == "client") host.role = HostRole::Client;
    else if (role == "server") host.role = HostRole::Server;
    else if (role == "attacker") host.role = HostRole::Attacker;
    else if (role == "bottleneck") host.role = HostRole::Bottleneck;
    else invalid(h.field("role"), "unknown role '" + role + "'");
    c.hosts.push_back(host);
  }

  if (top.has("benign")) {
    ObjectReader b(top.at("benign"), "benign",
                   {"flow_rate", "dst_ports", "payload_min", "payload_max", "segments_min", "segments_max"});
    b.opt_uint("flow_rate", c.benign.flow_rate);
    b.opt_uint("payload_min", c.benign.payload_min);
    b.opt_uint("payload_max", c.benign.payload_max);
    b.opt_uint("segments_min", c.benign.segments_min);
    b.opt_uint("segments_max", c.benign.segments_max);
    if (b.has("dst_ports")) {
      const json& ports = b.at("dst_ports");
      if (!ports.is_array()) invalid("benign.dst_ports", "expected an array");
      c.benign.dst_ports.clear();
      for (std::size_t i = 0; i < ports.size(); ++i) {
        const std::string path = "benign.dst_ports[" + std::to_string(i) + "]";
        if (!ports[i].is_number_integer() || ports[i].get<std::int64_t>() < 0 ||
            ports[i].get<std::int64_t>() > 65535) {
          invalid(path, "expected a port number");
        }
        c.benign.dst_ports.push_back(ports[i].get<std::uint16_t>());
      }
    }
  }

  if (top.has("attacks")) {
    const json& attacks = top.at("attacks");
    if (!attacks.is_array()) invalid("attacks", "expected an array");
    for (std::size_t i = 0; i < attacks.size(); ++i) {
      ObjectReader a(attacks[i], "attacks[" + std::to_string(i) + "]",
                     {"kind", "rate", "start_s", "spoofing", "target", "target_port", "flows",
                      "payload_min", "payload_max"});
      AttackConfig ac;
      const std::string kind = a.string("kind");
      bool known = false;
      for (auto k : {AttackKind::SynFlood, AttackKind::UdpFlood, AttackKind::IcmpFlood,
                     AttackKind::LinkFlood, AttackKind::Malformed}) {
        if (to_string(k) == kind) {
          ac.kind = k;
          known = true;
        }
      }
      if (!known) invalid(a.field("kind"), "unknown attack kind '" + kind + "'");
      ac.rate = static_cast<std::uint32_t>(a.u64("rate", UINT32_MAX));
      ac.start_us = a.has("start_s") ? a.seconds_us("start_s") : 0;
      ac.spoofing = a.has("spoofing") ? a.boolean("spoofing") : false;
      ac.target = a.addr("target");
      a.opt_uint("target_port", ac.target_port);
      a.opt_uint("flows", ac.flows);
      a.opt_uint("payload_min", ac.payload_min);
      a.opt_uint("payload_max", ac.payload_max);
      c.attacks.push_back(ac);
    }
  }
  validate_config(c);
  return c;
}

std::string scenario_to_json(const ScenarioConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["duration_s"] = to_seconds(c.duration_us);
  j["warmup_s"] = to_seconds(c.warmup_us);
  j["hosts"] = json::array();
  for (const auto& h : c.hosts) {
    j["hosts"].push_back({{"addr", format_ipv4(h.addr)}, {"role", role_name(h.role)}});
  }
  j["benign"] = {{"flow_rate", c.benign.flow_rate},       {"dst_ports", c.benign.dst_ports},
                 {"payload_min", c.benign.payload_min},   {"payload_max", c.benign.payload_max},
                 {"segments_min", c.benign.segments_min}, {"segments_max", c.benign.segments_max}};
  j["attacks"] = json::array();
  for (const auto& a : c.attacks) {
    j["attacks"].push_back({{"kind", to_string(a.kind)},
                            {"rate", a.rate},
                            {"start_s", to_seconds(a.start_us)},
                            {"spoofing", a.spoofing},
                            {"target", format_ipv4(a.target)},
                            {"target_port", a.target_port},
                            {"flows", a.flows},
                            {"payload_min", a.payload_min},
                            {"payload_max", a.payload_max}});
  }
  return j.dump(2) + "\n";
}

ScenarioConfig default_scenario(std::uint64_t seed) {
  ScenarioConfig c;
  c.seed = seed;
  c.duration_us = 12'000'000;
  c.warmup_us = 2'000'000;
  for (std::uint8_t i = 1; i <= 16; ++i) c.hosts.push_back({{10, 0, 1, i}, HostRole::Client});
  for (std::uint8_t i = 1; i <= 4; ++i) c.hosts.push_back({{10, 0, 2, i}, HostRole::Server});
  c.hosts.push_back({{10, 0, 3, 1}, HostRole::Bottleneck});
  for (std::uint8_t i = 1; i <= 8; ++i) c.hosts.push_back({{10, 0, 9, i}, HostRole::Attacker});

  c.benign.flow_rate = 55;
  c.benign.dst_ports = {80, 443, 22, 25};
  c.benign.payload_min = 64;
  c.benign.payload_max = 1200;
  c.benign.segments_min = 1;
  c.benign.segments_max = 4;

  AttackConfig syn;
  syn.kind = AttackKind::SynFlood;
  syn.rate = 350;
  syn.spoofing = true;
  syn.target = {10, 0, 2, 1};
  syn.target_port = 80;

  AttackConfig link;
  link.kind = AttackKind::LinkFlood;
  link.rate = 10;
  link.flows = 25;
  link.target = {10, 0, 3, 1};
  link.target_port = 8080;

  AttackConfig udp;
  udp.kind = AttackKind::UdpFlood;
  udp.rate = 300;
  udp.target = {10, 0, 2, 2};
  udp.target_port = 53;
  udp.payload_min = 1024;
  udp.payload_max = 1400;

  AttackConfig icmp;
  icmp.kind = AttackKind::IcmpFlood;
  icmp.rate = 300;
  icmp.spoofing = true;
  icmp.target = {10, 0, 2, 3};
  icmp.payload_min = 1024;
  icmp.payload_max = 1400;

  AttackConfig malformed;
  malformed.kind = AttackKind::Malformed;
  malformed.rate = 600;
  malformed.target = {10, 0, 2, 1};
  malformed.target_port = 80;

  c.attacks = {syn, link, udp, icmp, malformed};
  return c;
}

std::string labels_to_jsonl(const std::vector<RecordLabel>& labels) {
  std::string out;
  for (const auto& l : labels) {
    json j = {{"index", l.index},
              {"ts_us", l.ts_us},
              {"label", to_string(l.label)},
              {"flow_id", l.flow_id},
              {"prev_ts_us", l.prev_ts_us ? json(*l.prev_ts_us) : json(nullptr)}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<RecordLabel> labels_from_jsonl(const std::string& text) {
  std::vector<RecordLabel> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      RecordLabel l;
      l.index = j.at("index").get<std::size_t>();
      l.ts_us = j.at("ts_us").get<std::int64_t>();
      auto c = parse_threat_class(j.at("label").get<std::string>());
      if (!c) throw Error(ErrorCode::BadDataset, "unknown label");
      l.label = *c;
      l.flow_id = j.at("flow_id").get<std::uint64_t>();
      if (j.contains("prev_ts_us") && !j.at("prev_ts_us").is_null()) {
        l.prev_ts_us = j.at("prev_ts_us").get<std::int64_t>();
      }
      out.push_back(l);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::BadDataset, "labels line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string manifest_to_json(const ForgeManifest& m) {
  json j;
  j["config"] = json::parse(scenario_to_json(m.config));
  j["pcap_sha256"] = m.pcap_sha256;
  j["records"] = m.records;
  json counts = json::object();
  for (auto c : kAllClasses) counts[std::string(to_string(c))] = m.class_counts[index_of(c)];
  j["class_counts"] = counts;
  return j.dump(2) + "\n";
}

}  // namespace sentinel
