#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sentinel/error.hpp"
#include "sentinel/eval.hpp"
#include "sentinel/rng.hpp"

using namespace sentinel;

namespace {

std::string slurp(const std::string& name) {
  std::ifstream in(std::string(SENTINEL_FIXTURE_DIR) + "/" + name);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Pairs {
  std::vector<ThreatClass> truth;
  std::vector<ThreatClass> pred;
};

Pairs fixture_pairs() {
  std::istringstream in(slurp("eval_fixture.csv"));
  std::string line;
  std::getline(in, line);
  Pairs p;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    p.truth.push_back(*parse_threat_class(line.substr(0, comma)));
    p.pred.push_back(*parse_threat_class(line.substr(comma + 1)));
  }
  return p;
}

Fraction parse_fraction(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) return Fraction(std::stoll(s), 1);
  return Fraction(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
}

}  // namespace

TEST_CASE("round half to even at four decimals") {
  CHECK(Fraction(13, 32).fixed4() == "0.4062");   // 0.40625
  CHECK(Fraction(19, 32).fixed4() == "0.5938");   // 0.59375
  CHECK(Fraction(1, 32).fixed4() == "0.0312");    // 0.03125
  CHECK(Fraction(3, 32).fixed4() == "0.0938");    // 0.09375
  CHECK(Fraction(1, 3).fixed4() == "0.3333");
  CHECK(Fraction(2, 3).fixed4() == "0.6667");
  CHECK(Fraction(1, 1).fixed4() == "1.0000");
  CHECK(Fraction(0, 5).fixed4() == "0.0000");
  CHECK(Fraction(-1, 3).fixed4() == "-0.3333");
  CHECK(Fraction(-1, 100000).fixed4() == "0.0000");
  CHECK(Fraction(99995, 100000).fixed4() == "1.0000");
  CHECK(Fraction(99985, 100000).fixed4() == "0.9998");
}

TEST_CASE("20-sample fixture equals the hand-computed oracle table") {
  const Pairs p = fixture_pairs();
  REQUIRE(p.truth.size() == 20);
  const Metrics m = compute_metrics(p.truth, p.pred);
  const auto o = nlohmann::json::parse(slurp("eval_oracle.json"));
  CHECK(m.n_samples == o["n_samples"].get<std::uint64_t>());
  const auto conf = o["confusion"].get<std::vector<std::vector<std::uint64_t>>>();
  for (std::size_t t = 0; t < kClassCount; ++t) {
    for (std::size_t c = 0; c < kClassCount; ++c) CHECK(m.confusion[t][c] == conf[t][c]);
  }
  for (auto c : kAllClasses) {
    const auto& want = o["per_class"][std::string(to_string(c))];
    const auto& got = m.per_class[index_of(c)];
    INFO(to_string(c));
    CHECK(got.precision == parse_fraction(want["precision"]));
    CHECK(got.recall == parse_fraction(want["recall"]));
    CHECK(got.f1 == parse_fraction(want["f1"]));
    CHECK(got.support == want["support"].get<std::uint64_t>());
    const auto rendered = want["rendered"].get<std::vector<std::string>>();
    CHECK(got.precision.fixed4() == rendered[0]);
    CHECK(got.recall.fixed4() == rendered[1]);
    CHECK(got.f1.fixed4() == rendered[2]);
  }
  CHECK(m.accuracy == parse_fraction(o["accuracy"]));
  CHECK(m.macro_f1 == parse_fraction(o["macro_f1"]));
  CHECK(m.accuracy.fixed4() == o["accuracy_rendered"].get<std::string>());
  CHECK(m.macro_f1.fixed4() == o["macro_f1_rendered"].get<std::string>());
}

TEST_CASE("fixture report matches the golden text file") {
  const Pairs p = fixture_pairs();
  const Metrics m = compute_metrics(p.truth, p.pred);
  CHECK(metrics_to_text(m) == slurp("eval_fixture_report.txt"));
  CHECK(metrics_to_text(m) == metrics_to_text(compute_metrics(p.truth, p.pred)));
}

TEST_CASE("JSON carries the same numbers as the text report") {
  const Pairs p = fixture_pairs();
  const Metrics m = compute_metrics(p.truth, p.pred);
  const std::string text = metrics_to_json(m);
  const auto j = nlohmann::json::parse(text);
  CHECK(j["accuracy"].get<double>() == std::stod(m.accuracy.fixed4()));
  CHECK(j["macro_f1"].get<double>() == std::stod(m.macro_f1.fixed4()));
  CHECK(text.find("\"macro_f1\": 0.4062") != std::string::npos);
  for (auto c : kAllClasses) {
    const auto& pc = j["per_class"][std::string(to_string(c))];
    CHECK(pc["f1"].get<double>() == std::stod(m.per_class[index_of(c)].f1.fixed4()));
    CHECK(pc["precision"].get<double>() == std::stod(m.per_class[index_of(c)].precision.fixed4()));
  }
  CHECK(metrics_from_json(text) == m);
}

TEST_CASE("trivial predictors and invariants") {
  std::vector<ThreatClass> truth;
  for (int i = 0; i < 40; ++i) truth.push_back(static_cast<ThreatClass>(i % 4));
  const Metrics perfect = compute_metrics(truth, truth);
  CHECK(perfect.accuracy == Fraction(1, 1));
  CHECK(perfect.macro_f1 == Fraction(1, 1));
  for (std::size_t t = 0; t < kClassCount; ++t) {
    for (std::size_t c = 0; c < kClassCount; ++c) CHECK(perfect.confusion[t][c] == (t == c ? 10u : 0u));
  }
  const std::vector<ThreatClass> constant(40, ThreatClass::Protocol);
  CHECK(compute_metrics(truth, constant).accuracy == Fraction(1, 4));
  CHECK_THROWS_AS(compute_metrics({}, {}), Error);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    std::vector<ThreatClass> t, p;
    for (std::size_t i = 0; i < n; ++i) {
      t.push_back(static_cast<ThreatClass>(rng.below(4)));
      p.push_back(static_cast<ThreatClass>(rng.below(4)));
    }
    const Metrics m = compute_metrics(t, p);
    std::uint64_t sum = 0, trace = 0;
    Fraction f1_sum;
    for (std::size_t c = 0; c < kClassCount; ++c) {
      std::uint64_t row = 0, col = 0;
      for (std::size_t k = 0; k < kClassCount; ++k) {
        row += m.confusion[c][k];
        col += m.confusion[k][c];
      }
      CHECK(row == static_cast<std::uint64_t>(std::count(t.begin(), t.end(), kAllClasses[c])));
      CHECK(col == static_cast<std::uint64_t>(std::count(p.begin(), p.end(), kAllClasses[c])));
      sum += row;
      trace += m.confusion[c][c];
      f1_sum = f1_sum + m.per_class[c].f1;
      for (const Fraction& f : {m.per_class[c].precision, m.per_class[c].recall, m.per_class[c].f1}) {
        CHECK(f >= Fraction());
        CHECK(f <= Fraction(1, 1));
      }
    }
    CHECK(sum == m.n_samples);
    CHECK(m.accuracy == Fraction(trace, sum));
    CHECK(m.macro_f1 == f1_sum / 4);
    // Order invariance.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    std::vector<ThreatClass> t2, p2;
    for (auto i : idx) {
      t2.push_back(t[i]);
      p2.push_back(p[i]);
    }
    CHECK(compute_metrics(t2, p2) == m);
  }
}

TEST_CASE("compare_runs ranking and ties") {
  const Pairs p = fixture_pairs();
  std::vector<ThreatClass> truth;
  for (int i = 0; i < 40; ++i) truth.push_back(static_cast<ThreatClass>(i % 4));
  auto run = [](std::string id, Metrics m) { return RunRecord{std::move(id), "cfg", "data", std::move(m), 1.0}; };
  const Metrics fixture = compute_metrics(p.truth, p.pred);
  const Metrics perfect = compute_metrics(truth, truth);

  const Comparison single = compare_runs({run("only", fixture)});
  REQUIRE(single.ranked.size() == 1);
  CHECK(single.ranked[0].run.run_id == "only");
  CHECK(single.ranked[0].macro_f1_delta == Fraction());

  const std::vector<RunRecord> runs{run("b", fixture), run("z", perfect), run("a", fixture)};
  const Comparison c = compare_runs(runs);
  const std::vector<std::string> want{"z", "a", "b"};
  for (std::size_t i = 0; i < 3; ++i) CHECK(c.ranked[i].run.run_id == want[i]);
  CHECK(c.ranked[1].macro_f1_delta == Fraction(13, 32) - Fraction(1, 1));
  CHECK(c.ranked[1].f1_delta[index_of(ThreatClass::Protocol)] == Fraction(-1, 1));
  for (int perm = 0; perm < 6; ++perm) {
    std::vector<RunRecord> r = runs;
    std::next_permutation(r.begin(), r.end(), [](auto& x, auto& y) { return x.run_id < y.run_id; });
    const Comparison cp = compare_runs(r);
    for (std::size_t i = 0; i < 3; ++i) CHECK(cp.ranked[i].run.run_id == want[i]);
  }
  const std::string text = comparison_to_text(c);
  CHECK(text.find("d_macro_f1") != std::string::npos);
  CHECK(text.find("-0.5938") != std::string::npos);
  const auto j = nlohmann::json::parse(comparison_to_json(c));
  CHECK(j["ranked"][0]["run_id"] == "z");
  CHECK(j["ranked"][2]["macro_f1"].get<double>() == 0.4062);

  const RunRecord back = run_record_from_json(run_record_to_json(runs[0]));
  CHECK(back.run_id == "b");
  CHECK(back.metrics == fixture);
}
