#include "fimscan/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace fimscan {

using nlohmann::json;

namespace {

// Midrank sum of the first sample over the pooled data, plus the tie term
// sum(t^3 - t) needed by the variance correction. Ranks are 1-based; tied
// runs share the average of the ranks they occupy.
struct RankSummary {
  double r1 = 0.0;        // midrank sum of sample a
  double tie_term = 0.0;  // sum over tied runs of t^3 - t
};

RankSummary rank_summary(std::span<const double> a, std::span<const double> b) {
  std::vector<std::pair<double, int>> pooled;  // (value, group 0=a 1=b)
  pooled.reserve(a.size() + b.size());
  for (double v : a) pooled.emplace_back(v, 0);
  for (double v : b) pooled.emplace_back(v, 1);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });

  RankSummary s;
  size_t i = 0;
  while (i < pooled.size()) {
    size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (pooled[k].second == 0) s.r1 += midrank;
    if (t > 1.0) s.tie_term += t * t * t - t;
    i = j;
  }
  return s;
}

bool has_ties(std::span<const double> a, std::span<const double> b) {
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  return std::adjacent_find(pooled.begin(), pooled.end()) != pooled.end();
}

// Exact two-sided P for a tie-free pooled sample: enumerate every labeling of
// the pooled ranks (C(n1+n2, n1) of them), and count those whose U lands in
// either tail at least as extreme as the observed one. Feasible for
// n1*n2 <= 64 (worst case 12870 labelings at n1=n2=8).
double exact_permutation_p(int n1, int n2, int64_t u_obs) {
  const int n = n1 + n2;
  const int64_t max_u = static_cast<int64_t>(n1) * n2;
  const int64_t u_low = std::min(u_obs, max_u - u_obs);

  std::vector<int> mask(static_cast<size_t>(n), 0);
  std::fill(mask.begin(), mask.begin() + n1, 1);
  std::sort(mask.begin(), mask.end(), std::greater<>());  // start at lexicographic max

  int64_t extreme = 0;
  int64_t total = 0;
  do {
    int64_t rank_sum = 0;
    for (int i = 0; i < n; ++i)
      if (mask[static_cast<size_t>(i)]) rank_sum += i + 1;
    const int64_t u = rank_sum - static_cast<int64_t>(n1) * (n1 + 1) / 2;
    if (u <= u_low || u >= max_u - u_low) ++extreme;
    ++total;
  } while (std::prev_permutation(mask.begin(), mask.end()));

  return std::min(1.0, static_cast<double>(extreme) / static_cast<double>(total));
}

// Normal approximation with tie correction and a continuity correction
// clamped at the mean (so a dead-centre U reports P = 1, matching the exact
// tail count there).
double normal_approx_p(int n1, int n2, double u, double tie_term, bool& degenerate) {
  const double n1n2 = static_cast<double>(n1) * n2;
  const double n = static_cast<double>(n1 + n2);
  const double mean_u = n1n2 / 2.0;
  double tie_correction = 0.0;
  if (n > 1.0) tie_correction = tie_term / (n * (n - 1.0));
  const double var_u = std::max(n1n2 * ((n + 1.0) - tie_correction) / 12.0, 0.0);
  if (var_u == 0.0) {
    degenerate = true;
    return 1.0;
  }
  const double sd_u = std::sqrt(var_u);
  const double z_num = -std::max(std::fabs(u - mean_u) - 0.5, 0.0);
  const double p = 1.0 + std::erf(z_num / (std::sqrt(2.0) * sd_u));
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                 MwuMethod method) {
  if (a.empty() || b.empty())
    throw EmptyClass("mann_whitney_u: both samples must be non-empty");

  MannWhitneyResult result;
  result.n1 = static_cast<int>(a.size());
  result.n2 = static_cast<int>(b.size());

  const RankSummary s = rank_summary(a, b);
  result.u_statistic =
      s.r1 - static_cast<double>(result.n1) * (result.n1 + 1) / 2.0;

  const bool tied = has_ties(a, b);
  const int64_t n1n2 = static_cast<int64_t>(result.n1) * result.n2;

  bool exact = n1n2 <= 64 && !tied;
  if (method == MwuMethod::exact_permutation) {
    if (!exact)
      throw SchemaError("exact permutation requires a tie-free sample with n1*n2 <= 64");
  } else if (method == MwuMethod::normal_approx) {
    exact = false;
  }

  if (exact) {
    result.method = MwuMethod::exact_permutation;
    result.p_two_sided = exact_permutation_p(result.n1, result.n2,
                                             static_cast<int64_t>(std::llround(result.u_statistic)));
  } else {
    result.method = MwuMethod::normal_approx;
    result.p_two_sided =
        normal_approx_p(result.n1, result.n2, result.u_statistic, s.tie_term, result.degenerate);
  }
  return result;
}

double roc_auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty())
    throw EmptyClass("roc_auc: both classes must be non-empty");
  const RankSummary s = rank_summary(pos, neg);
  const double n1 = static_cast<double>(pos.size());
  const double n2 = static_cast<double>(neg.size());
  const double u = s.r1 - n1 * (n1 + 1.0) / 2.0;
  return u / (n1 * n2);
}

TopKTable top_k_accuracy(const std::vector<AnomalyRecord>& records,
                         const std::vector<FunctionSpan>& functions,
                         const std::vector<LineLabel>& labels,
                         const std::vector<int>& k_values) {
  std::unordered_map<std::string, std::vector<const AnomalyRecord*>> by_file;
  for (const AnomalyRecord& r : records) by_file[r.file].push_back(&r);

  std::unordered_map<std::string, std::unordered_set<int>> vulnerable;
  for (const LineLabel& l : labels)
    if (l.label == LineClass::vulnerable) vulnerable[l.file].insert(l.line_no);

  TopKTable table;
  table.k_values = k_values;
  table.hits.assign(k_values.size(), 0);
  table.total_functions = static_cast<int>(functions.size());

  for (const FunctionSpan& fn : functions) {
    std::vector<const AnomalyRecord*> in_span;
    if (auto it = by_file.find(fn.file); it != by_file.end())
      for (const AnomalyRecord* r : it->second)
        if (fn.start_line <= r->line_no && r->line_no <= fn.end_line) in_span.push_back(r);
    if (in_span.empty())
      throw FunctionWithoutLines("function " + fn.id + " has no scored lines");

    const auto vit = vulnerable.find(fn.file);
    const bool has_vulnerable =
        vit != vulnerable.end() &&
        std::any_of(in_span.begin(), in_span.end(),
                    [&](const AnomalyRecord* r) { return vit->second.count(r->line_no) > 0; });
    if (!has_vulnerable)
      throw FunctionWithoutLines("function " + fn.id + " has no labelled vulnerable line");

    std::sort(in_span.begin(), in_span.end(),
              [](const AnomalyRecord* x, const AnomalyRecord* y) {
                if (x->score != y->score) return x->score > y->score;
                return x->line_no < y->line_no;
              });

    for (size_t ki = 0; ki < k_values.size(); ++ki) {
      const size_t k = static_cast<size_t>(std::max(0, k_values[ki]));
      const size_t upto = std::min(k, in_span.size());
      for (size_t i = 0; i < upto; ++i) {
        if (vit->second.count(in_span[i]->line_no)) {
          table.hits[ki]++;
          break;
        }
      }
    }
  }

  table.accuracy.resize(k_values.size(), 0.0);
  for (size_t ki = 0; ki < k_values.size(); ++ki)
    table.accuracy[ki] = table.total_functions == 0
                             ? 0.0
                             : static_cast<double>(table.hits[ki]) / table.total_functions;
  return table;
}

double median(std::vector<double> values) {
  if (values.empty()) throw EmptyGroup("median of empty group");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n % 2) return values[n / 2];
  return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

LineClass effective_class(const AnomalyRecord& record) {
  return record.label.value_or(LineClass::non_vulnerable);
}

std::map<std::string, double> group_medians(const std::vector<AnomalyRecord>& records) {
  std::map<std::string, std::vector<double>> groups;
  for (const AnomalyRecord& r : records)
    groups[to_string(effective_class(r))].push_back(r.score);
  std::map<std::string, double> out;
  for (auto& [name, scores] : groups) out[name] = median(std::move(scores));
  return out;
}

double exact_match_rate(const std::vector<AnomalyRecord>& records) {
  if (records.empty()) throw EmptyGroup("exact_match_rate of empty group");
  const auto matches = std::count_if(records.begin(), records.end(),
                                     [](const AnomalyRecord& r) { return r.exact_match; });
  return static_cast<double>(matches) / static_cast<double>(records.size());
}

std::map<std::string, double> group_exact_match_rates(const std::vector<AnomalyRecord>& records) {
  std::map<std::string, std::vector<AnomalyRecord>> groups;
  for (const AnomalyRecord& r : records)
    groups[to_string(effective_class(r))].push_back(r);
  std::map<std::string, double> out;
  for (const auto& [name, group] : groups) out[name] = exact_match_rate(group);
  if (!records.empty()) out["all"] = exact_match_rate(records);
  return out;
}

OverlapMatrix exact_match_overlap(
    const std::vector<std::pair<std::string, std::set<LineKey>>>& runs) {
  if (runs.size() < 2)
    throw SchemaError("exact_match_overlap requires at least two runs");
  OverlapMatrix m;
  for (const auto& [config, _] : runs) m.configs.push_back(config);
  m.counts.assign(runs.size(), std::vector<int64_t>(runs.size(), 0));
  for (size_t i = 0; i < runs.size(); ++i) {
    for (size_t j = i; j < runs.size(); ++j) {
      const auto& a = runs[i].second;
      const auto& b = runs[j].second;
      int64_t common = 0;
      for (const LineKey& k : a)
        if (b.count(k)) ++common;
      m.counts[i][j] = m.counts[j][i] = common;
    }
  }
  return m;
}

namespace {

const char* to_string(MwuMethod m) {
  switch (m) {
    case MwuMethod::exact_permutation: return "exact_permutation";
    case MwuMethod::normal_approx: return "normal_approx";
    case MwuMethod::auto_select: return "auto";
  }
  return "auto";
}

json mwu_to_json(const MannWhitneyResult& r) {
  json j;
  j["u"] = r.u_statistic;
  j["p"] = r.p_two_sided;
  j["method"] = to_string(r.method);
  j["n1"] = r.n1;
  j["n2"] = r.n2;
  j["degenerate"] = r.degenerate;
  return j;
}

json topk_to_json(const TopKTable& t) {
  json j;
  j["k"] = t.k_values;
  j["hits"] = t.hits;
  j["total_functions"] = t.total_functions;
  j["accuracy"] = t.accuracy;
  return j;
}

// Shortest round-trip formatting, identical to the JSON rendering so the
// tabular export carries byte-identical values.
std::string num(double v) { return json(v).dump(); }

}  // namespace

std::string report_to_json(const EvaluationReport& report, int indent) {
  json j;
  j["config"] = report.config_descriptor;
  j["manifest"] = report.manifest;
  j["roc_auc"] = report.roc_auc;
  j["top_k"] = topk_to_json(report.topk);
  j["p_value"] = mwu_to_json(report.p_value);
  j["median_scores"] = report.median_scores;
  j["exact_match_rates"] = report.exact_match_rates;
  if (!report.extra_p_values.empty()) {
    json extra;
    for (const auto& [name, r] : report.extra_p_values) extra[name] = mwu_to_json(r);
    j["extra_p_values"] = extra;
  }
  return j.dump(indent) + "\n";
}

std::string report_to_csv(const EvaluationReport& report) {
  std::ostringstream out;
  out << "metric,group,value\n";
  out << "config," << "," << report.config_descriptor << "\n";
  out << "roc_auc,," << num(report.roc_auc) << "\n";
  for (size_t i = 0; i < report.topk.k_values.size(); ++i)
    out << "top_k,k=" << report.topk.k_values[i] << "," << num(report.topk.accuracy[i]) << "\n";
  out << "p_value,vulnerable_vs_non_vulnerable," << num(report.p_value.p_two_sided) << "\n";
  for (const auto& [group, value] : report.median_scores)
    out << "median_score," << group << "," << num(value) << "\n";
  for (const auto& [group, value] : report.exact_match_rates)
    out << "exact_match_rate," << group << "," << num(value) << "\n";
  for (const auto& [name, r] : report.extra_p_values)
    out << "p_value," << name << "," << num(r.p_two_sided) << "\n";
  return out.str();
}

std::string overlap_to_csv(const OverlapMatrix& matrix) {
  std::ostringstream out;
  out << "config";
  for (const auto& c : matrix.configs) out << "," << c;
  out << "\n";
  for (size_t i = 0; i < matrix.configs.size(); ++i) {
    out << matrix.configs[i];
    for (size_t j = 0; j < matrix.configs.size(); ++j) out << "," << matrix.counts[i][j];
    out << "\n";
  }
  return out.str();
}

std::string overlap_to_json(const OverlapMatrix& matrix, int indent) {
  json j;
  j["configs"] = matrix.configs;
  j["counts"] = matrix.counts;
  return j.dump(indent) + "\n";
}

}  // namespace fimscan
