#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fimscan/corpus.hpp"
#include "fimscan/scoring.hpp"

namespace fimscan {

enum class MwuMethod { auto_select, exact_permutation, normal_approx };

// Two-sided Mann-Whitney U result. u_statistic is the U of the first sample
// (midrank convention), so u_statistic / (n1*n2) is the probability that a
// random member of `a` outranks a random member of `b`, ties counted half.
struct MannWhitneyResult {
  double u_statistic = 0.0;
  double p_two_sided = 1.0;
  MwuMethod method = MwuMethod::normal_approx;
  int n1 = 0;
  int n2 = 0;
  bool degenerate = false;  // all pooled values identical; P reported as 1.0
};

// U from midrank sums. Exact two-sided P by full enumeration of labelings
// when n1*n2 <= 64 and the pooled sample is tie-free; otherwise the normal
// approximation with tie correction and a continuity correction clamped at
// the mean. `method` can force one path (exact requires the same conditions).
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                 MwuMethod method = MwuMethod::auto_select);

// Probability a random positive outranks a random negative, ties half.
// Equals U/(n1*n2) with midranks. Throws EmptyClass.
double roc_auc(std::span<const double> pos, std::span<const double> neg);

struct TopKTable {
  std::vector<int> k_values;
  std::vector<int> hits;           // per k
  int total_functions = 0;
  std::vector<double> accuracy;    // hits / total_functions
};

// Per-function ranking: lines sorted by score descending, ties broken by
// ascending line number; a function is a hit at k when any of its first k
// lines is labelled vulnerable. Every function must contain at least one
// scored line and one vulnerable line (FunctionWithoutLines otherwise).
TopKTable top_k_accuracy(const std::vector<AnomalyRecord>& records,
                         const std::vector<FunctionSpan>& functions,
                         const std::vector<LineLabel>& labels,
                         const std::vector<int>& k_values);

// Standard median; even counts average the two central order statistics.
double median(std::vector<double> values);  // throws EmptyGroup

// Effective class used for grouping: a record without a label counts as
// non-vulnerable (classification runs score every line of a function but only
// vulnerable lines carry labels).
LineClass effective_class(const AnomalyRecord& record);

std::map<std::string, double> group_medians(const std::vector<AnomalyRecord>& records);

// Fraction of records with exact_match == true; filters ignored.
double exact_match_rate(const std::vector<AnomalyRecord>& records);  // throws EmptyGroup

std::map<std::string, double> group_exact_match_rates(const std::vector<AnomalyRecord>& records);

using LineKey = std::pair<std::string, int>;  // (file, line)

struct OverlapMatrix {
  std::vector<std::string> configs;
  std::vector<std::vector<int64_t>> counts;  // symmetric; diagonal = |set_i|
};

// Pairwise intersection sizes of per-config exact-match line sets. Requires
// at least two runs.
OverlapMatrix exact_match_overlap(const std::vector<std::pair<std::string, std::set<LineKey>>>& runs);

struct EvaluationReport {
  double roc_auc = 0.0;
  TopKTable topk;
  MannWhitneyResult p_value;  // vulnerable vs non-vulnerable
  std::map<std::string, double> median_scores;      // per label group
  std::map<std::string, double> exact_match_rates;  // per label group + "all"
  // Three-way analysis, present when patched lines exist.
  std::map<std::string, MannWhitneyResult> extra_p_values;
  std::string config_descriptor;
  std::map<std::string, std::string> manifest;  // provenance, set by the harness
};

// Deterministic serialization (sorted keys, shortest round-trip doubles).
std::string report_to_json(const EvaluationReport& report, int indent = 2);
// Tabular (CSV) rendering of the same values for plotting.
std::string report_to_csv(const EvaluationReport& report);
std::string overlap_to_csv(const OverlapMatrix& matrix);
std::string overlap_to_json(const OverlapMatrix& matrix, int indent = 2);

}  // namespace fimscan
