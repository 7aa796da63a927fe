#pragma once

// Classification metrics held as exact fractions, so rendering to four
// decimals (round half to even) never suffers from binary rounding.
//
// precision = TP / (TP + FP), recall = TP / (TP + FN), each 0 when its
// denominator is 0. F1 = 2 TP / (2 TP + FP + FN), 0 when TP = 0 (this covers
// precision + recall = 0). Macro-F1 is the unweighted mean over the 4 classes.

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sentinel/lang.hpp"
#include "sentinel/nn/model.hpp"
#include "sentinel/threat_class.hpp"

namespace sentinel {

// Rational in lowest terms with a positive denominator.
class Fraction {
 public:
  Fraction() = default;
  Fraction(__int128 num, __int128 den);

  __int128 num() const { return num_; }
  __int128 den() const { return den_; }
  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }
  // Fixed 4 decimals, round half to even (on the magnitude).
  std::string fixed4() const;
  std::string str() const;  // "n/d" or "n"

  Fraction operator+(const Fraction& o) const;
  Fraction operator-(const Fraction& o) const;
  Fraction operator/(std::uint64_t k) const;
  bool operator==(const Fraction&) const = default;
  std::strong_ordering operator<=>(const Fraction& o) const;

 private:
  __int128 num_ = 0;
  __int128 den_ = 1;
};

using Confusion = std::array<std::array<std::uint64_t, kClassCount>, kClassCount>;

struct ClassMetrics {
  Fraction precision;
  Fraction recall;
  Fraction f1;
  std::uint64_t support = 0;
  bool operator==(const ClassMetrics&) const = default;
};

struct Metrics {
  Confusion confusion{};  // rows = truth, cols = predicted
  std::array<ClassMetrics, kClassCount> per_class{};
  Fraction accuracy;
  Fraction macro_f1;
  std::uint64_t n_samples = 0;
  bool operator==(const Metrics&) const = default;
};

// Throws EmptySet.
Metrics metrics_from_confusion(const Confusion& confusion);
Metrics compute_metrics(std::span<const ThreatClass> truth, std::span<const ThreatClass> predicted);
Metrics evaluate(const nn::Model& model, std::span<const TokenSeq> seqs,
                 std::span<const ThreatClass> truth, std::size_t threads = 1);

std::string metrics_to_text(const Metrics& m);
std::string metrics_to_json(const Metrics& m);
// Rebuilds exact metrics from the confusion matrix in a metrics JSON document.
Metrics metrics_from_json(const std::string& text);

struct RunRecord {
  std::string run_id;
  std::string config_digest;
  std::string dataset_hash;
  Metrics metrics;
  double wall_seconds = 0;
};

// {"run_id","config_digest","dataset_hash","wall_seconds","metrics":{...}}
std::string run_record_to_json(const RunRecord& r);
RunRecord run_record_from_json(const std::string& text);

struct RankedRun {
  RunRecord run;
  // this - best, per class F1 and macro-F1; zero for the best run.
  std::array<Fraction, kClassCount> f1_delta{};
  Fraction macro_f1_delta;
};

struct Comparison {
  std::vector<RankedRun> ranked;
};

// Macro-F1 descending, then accuracy descending, then run id ascending.
Comparison compare_runs(std::vector<RunRecord> runs);
std::string comparison_to_text(const Comparison& c);
std::string comparison_to_json(const Comparison& c);

}  // namespace sentinel
