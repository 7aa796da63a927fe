#include "sentinel/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "sentinel/error.hpp"

namespace sentinel {

namespace {

__int128 gcd128(__int128 a, __int128 b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    const __int128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

std::string u128_to_string(unsigned __int128 v) {
  if (v == 0) return "0";
  std::string s;
  while (v > 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  std::reverse(s.begin(), s.end());
  return s;
}

std::string pad_left(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

// Rows of cells -> text with each column padded to its widest cell. The first
// column is left-aligned, the rest right-aligned.
std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c > 0) line += "  ";
      line += c == 0 ? pad_right(r[c], width[c]) : pad_left(r[c], width[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + '\n';
  }
  return out;
}

std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

std::string metrics_json_body(const Metrics& m, const std::string& indent) {
  std::string out = "{\n";
  const std::string in = indent + "  ";
  out += in + "\"n_samples\": " + std::to_string(m.n_samples) + ",\n";
  out += in + "\"classes\": [";
  for (std::size_t c = 0; c < kClassCount; ++c) {
    out += (c ? ", " : "") + json_string(std::string(to_string(kAllClasses[c])));
  }
  out += "],\n" + in + "\"confusion\": [";
  for (std::size_t t = 0; t < kClassCount; ++t) {
    out += t ? ", [" : "[";
    for (std::size_t p = 0; p < kClassCount; ++p) out += (p ? ", " : "") + std::to_string(m.confusion[t][p]);
    out += "]";
  }
  out += "],\n" + in + "\"per_class\": {\n";
  for (std::size_t c = 0; c < kClassCount; ++c) {
    const auto& pc = m.per_class[c];
    out += in + "  " + json_string(std::string(to_string(kAllClasses[c]))) + ": {\"precision\": " +
           pc.precision.fixed4() + ", \"recall\": " + pc.recall.fixed4() + ", \"f1\": " + pc.f1.fixed4() +
           ", \"support\": " + std::to_string(pc.support) + "}" + (c + 1 < kClassCount ? ",\n" : "\n");
  }
  out += in + "},\n";
  out += in + "\"accuracy\": " + m.accuracy.fixed4() + ",\n";
  out += in + "\"macro_f1\": " + m.macro_f1.fixed4() + "\n";
  out += indent + "}";
  return out;
}

Metrics metrics_from_json_value(const nlohmann::json& j) {
  try {
    const auto rows = j.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
    if (rows.size() != kClassCount) throw Error(ErrorCode::BadDataset, "confusion must be 4x4");
    Confusion conf{};
    for (std::size_t t = 0; t < kClassCount; ++t) {
      if (rows[t].size() != kClassCount) throw Error(ErrorCode::BadDataset, "confusion must be 4x4");
      for (std::size_t p = 0; p < kClassCount; ++p) conf[t][p] = rows[t][p];
    }
    return metrics_from_confusion(conf);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadDataset, std::string("metrics JSON: ") + e.what());
  }
}

}  // namespace

Fraction::Fraction(__int128 num, __int128 den) {
  if (den == 0) throw Error(ErrorCode::FieldOutOfRange, "fraction with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const __int128 g = gcd128(num, den);
  num_ = g ? num / g : 0;
  den_ = g ? den / g : 1;
}

std::string Fraction::fixed4() const {
  const bool neg = num_ < 0;
  const auto mag = static_cast<unsigned __int128>(neg ? -num_ : num_);
  const auto den = static_cast<unsigned __int128>(den_);
  const unsigned __int128 scaled = mag * 10000;
  unsigned __int128 q = scaled / den;
  const unsigned __int128 r = scaled % den;
  if (2 * r > den || (2 * r == den && q % 2 == 1)) ++q;
  const std::string frac = u128_to_string(q % 10000);
  std::string out = u128_to_string(q / 10000) + "." + std::string(4 - frac.size(), '0') + frac;
  if (neg && q != 0) out = "-" + out;
  return out;
}

std::string Fraction::str() const {
  const bool neg = num_ < 0;
  std::string s = (neg ? "-" : "") + u128_to_string(static_cast<unsigned __int128>(neg ? -num_ : num_));
  if (den_ != 1) s += "/" + u128_to_string(static_cast<unsigned __int128>(den_));
  return s;
}

Fraction Fraction::operator+(const Fraction& o) const {
  const __int128 g = gcd128(den_, o.den_);
  return Fraction(num_ * (o.den_ / g) + o.num_ * (den_ / g), den_ / g * o.den_);
}

Fraction Fraction::operator-(const Fraction& o) const { return *this + Fraction(-o.num_, o.den_); }

Fraction Fraction::operator/(std::uint64_t k) const { return Fraction(num_, den_ * k); }

std::strong_ordering Fraction::operator<=>(const Fraction& o) const {
  const __int128 lhs = num_ * o.den_;
  const __int128 rhs = o.num_ * den_;
  if (lhs < rhs) return std::strong_ordering::less;
  if (lhs > rhs) return std::strong_ordering::greater;
  return std::strong_ordering::equal;
}

Metrics metrics_from_confusion(const Confusion& confusion) {
  Metrics m;
  m.confusion = confusion;
  std::uint64_t trace = 0;
  for (std::size_t t = 0; t < kClassCount; ++t) {
    for (std::size_t p = 0; p < kClassCount; ++p) m.n_samples += confusion[t][p];
    trace += confusion[t][t];
  }
  if (m.n_samples == 0) throw Error(ErrorCode::EmptySet, "no samples to evaluate");
  Fraction f1_sum;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    const std::uint64_t tp = confusion[c][c];
    std::uint64_t predicted = 0, actual = 0;
    for (std::size_t k = 0; k < kClassCount; ++k) {
      predicted += confusion[k][c];
      actual += confusion[c][k];
    }
    ClassMetrics& cm = m.per_class[c];
    cm.support = actual;
    cm.precision = predicted ? Fraction(tp, predicted) : Fraction();
    cm.recall = actual ? Fraction(tp, actual) : Fraction();
    // 2TP + FP + FN = predicted + actual.
    cm.f1 = tp ? Fraction(2 * static_cast<__int128>(tp), static_cast<__int128>(predicted) + actual) : Fraction();
    f1_sum = f1_sum + cm.f1;
  }
  m.accuracy = Fraction(trace, m.n_samples);
  m.macro_f1 = f1_sum / kClassCount;
  return m;
}

Metrics compute_metrics(std::span<const ThreatClass> truth, std::span<const ThreatClass> predicted) {
  if (truth.size() != predicted.size()) {
    throw Error(ErrorCode::ShapeMismatch, "truth and predictions differ in length");
  }
  Confusion conf{};
  for (std::size_t i = 0; i < truth.size(); ++i) conf[index_of(truth[i])][index_of(predicted[i])]++;
  return metrics_from_confusion(conf);
}

Metrics evaluate(const nn::Model& model, std::span<const TokenSeq> seqs, std::span<const ThreatClass> truth,
                 std::size_t threads) {
  if (seqs.empty()) throw Error(ErrorCode::EmptySet, "evaluation set is empty");
  if (seqs.size() != truth.size()) throw Error(ErrorCode::ShapeMismatch, "one label per sequence required");
  const auto verdicts = nn::predict_all(model, seqs, threads);
  std::vector<ThreatClass> pred;
  pred.reserve(verdicts.size());
  for (const auto& v : verdicts) pred.push_back(v.cls);
  return compute_metrics(truth, pred);
}

std::string metrics_to_text(const Metrics& m) {
  std::string out = "samples: " + std::to_string(m.n_samples) + "\n\n";
  out += "confusion (rows = truth, columns = predicted)\n";
  std::vector<std::vector<std::string>> conf{{""}};
  for (auto c : kAllClasses) conf[0].emplace_back(to_string(c));
  for (std::size_t t = 0; t < kClassCount; ++t) {
    std::vector<std::string> row{std::string(to_string(kAllClasses[t]))};
    for (std::size_t p = 0; p < kClassCount; ++p) row.push_back(std::to_string(m.confusion[t][p]));
    conf.push_back(std::move(row));
  }
  out += render_table(conf) + "\n";
  std::vector<std::vector<std::string>> per{{"class", "precision", "recall", "f1", "support"}};
  for (std::size_t c = 0; c < kClassCount; ++c) {
    const auto& pc = m.per_class[c];
    per.push_back({std::string(to_string(kAllClasses[c])), pc.precision.fixed4(), pc.recall.fixed4(),
                   pc.f1.fixed4(), std::to_string(pc.support)});
  }
  out += render_table(per) + "\n";
  out += render_table({{"accuracy", m.accuracy.fixed4()}, {"macro_f1", m.macro_f1.fixed4()}});
  return out;
}

std::string metrics_to_json(const Metrics& m) { return metrics_json_body(m, "") + "\n"; }

Metrics metrics_from_json(const std::string& text) {
  try {
    return metrics_from_json_value(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadDataset, std::string("metrics JSON: ") + e.what());
  }
}

std::string run_record_to_json(const RunRecord& r) {
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.3f", r.wall_seconds);
  std::string out = "{\n";
  out += "  \"run_id\": " + json_string(r.run_id) + ",\n";
  out += "  \"config_digest\": " + json_string(r.config_digest) + ",\n";
  out += "  \"dataset_hash\": " + json_string(r.dataset_hash) + ",\n";
  out += "  \"wall_seconds\": " + std::string(secs) + ",\n";
  out += "  \"metrics\": " + metrics_json_body(r.metrics, "  ") + "\n}\n";
  return out;
}

RunRecord run_record_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.dataset_hash = j.at("dataset_hash").get<std::string>();
    r.wall_seconds = j.value("wall_seconds", 0.0);
    r.metrics = metrics_from_json_value(j.at("metrics"));
    if (r.run_id.empty() || r.config_digest.empty() || r.dataset_hash.empty()) {
      throw Error(ErrorCode::BadDataset, "run record needs a run id and nonempty hashes");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadDataset, std::string("run record: ") + e.what());
  }
}

Comparison compare_runs(std::vector<RunRecord> runs) {
  std::sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
    if (a.metrics.macro_f1 != b.metrics.macro_f1) return a.metrics.macro_f1 > b.metrics.macro_f1;
    if (a.metrics.accuracy != b.metrics.accuracy) return a.metrics.accuracy > b.metrics.accuracy;
    return a.run_id < b.run_id;
  });
  Comparison out;
  for (auto& r : runs) {
    RankedRun rr;
    const Metrics& best = runs.front().metrics;
    for (std::size_t c = 0; c < kClassCount; ++c) rr.f1_delta[c] = r.metrics.per_class[c].f1 - best.per_class[c].f1;
    rr.macro_f1_delta = r.metrics.macro_f1 - best.macro_f1;
    rr.run = std::move(r);
    out.ranked.push_back(std::move(rr));
  }
  return out;
}

std::string comparison_to_text(const Comparison& c) {
  std::vector<std::vector<std::string>> rows{{"rank", "run", "macro_f1", "accuracy"}};
  for (auto k : kAllClasses) rows[0].push_back("d_f1_" + std::string(to_string(k)));
  rows[0].push_back("d_macro_f1");
  for (std::size_t i = 0; i < c.ranked.size(); ++i) {
    const auto& r = c.ranked[i];
    std::vector<std::string> row{std::to_string(i + 1), r.run.run_id, r.run.metrics.macro_f1.fixed4(),
                                 r.run.metrics.accuracy.fixed4()};
    for (const auto& d : r.f1_delta) row.push_back(d.fixed4());
    row.push_back(r.macro_f1_delta.fixed4());
    rows.push_back(std::move(row));
  }
  return render_table(rows);
}

std::string comparison_to_json(const Comparison& c) {
  std::string out = "{\n  \"ranked\": [";
  for (std::size_t i = 0; i < c.ranked.size(); ++i) {
    const auto& r = c.ranked[i];
    out += i ? ",\n    {" : "\n    {";
    out += "\"rank\": " + std::to_string(i + 1) + ", \"run_id\": " + json_string(r.run.run_id) +
           ", \"macro_f1\": " + r.run.metrics.macro_f1.fixed4() + ", \"accuracy\": " + r.run.metrics.accuracy.fixed4() +
           ", \"f1_delta\": {";
    for (std::size_t k = 0; k < kClassCount; ++k) {
      out += (k ? ", " : "") + json_string(std::string(to_string(kAllClasses[k]))) + ": " + r.f1_delta[k].fixed4();
    }
    out += "}, \"macro_f1_delta\": " + r.macro_f1_delta.fixed4() + "}";
  }
  out += c.ranked.empty() ? "]\n}\n" : "\n  ]\n}\n";
  return out;
}

}  // namespace sentinel
