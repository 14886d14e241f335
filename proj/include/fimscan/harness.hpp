#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fimscan/analytics.hpp"
#include "fimscan/cache.hpp"
#include "fimscan/context.hpp"
#include "fimscan/corpus.hpp"
#include "fimscan/fim.hpp"
#include "fimscan/scoring.hpp"

namespace fimscan {

struct Target {
  std::string file;
  int line = 0;
  auto operator<=>(const Target&) const = default;
};

struct ScanConfig {
  Strategy strategy = Strategy::mcs();
  ScoreFn score_fn = ScoreFn::hybrid;
  FilterConfig filters;
  SentinelConfig sentinels;
  int parallelism = 1;
  uint64_t seed = 0;

  // Uniquely encodes the config; embedded in reports and manifests.
  std::string descriptor() const;
  void validate() const;  // throws SchemaError
};

std::vector<Target> targets_from_labels(const std::vector<LineLabel>& labels);
// Every non-blank line of every corpus file.
std::vector<Target> all_targets(const Corpus& corpus);

uint64_t content_hash(const SourceFile& file);
// Combined digest over (path, content hash) pairs in sorted path order.
std::string corpus_digest(const Corpus& corpus);

// Scan: context -> prompt -> judgment (cached) -> scores -> filters, one
// record per non-blank target, output sorted by (file, line). On
// ContextOverflow the window shrinks along the next-largest-compound-
// statement chain (fixed windows halve) and the line is retried, never
// skipped. All-or-nothing: any failure aborts the run without partial
// output. Deterministic: identical inputs give byte-identical records for
// any parallelism setting.
std::vector<AnomalyRecord> scan(const Corpus& corpus, const std::vector<Target>& targets,
                                const ScanConfig& config, Backend& backend,
                                JudgmentCache* cache = nullptr,
                                const std::vector<LineLabel>* labels = nullptr);

// Serial reference implementation of the same pipeline; scan() with
// parallelism == 1 routes here. Kept separate so tests and the benchmark can
// compare the OpenMP fan-out against it.
std::vector<AnomalyRecord> scan_serial(const Corpus& corpus, const std::vector<Target>& targets,
                                       const ScanConfig& config, Backend& backend,
                                       JudgmentCache* cache = nullptr,
                                       const std::vector<LineLabel>* labels = nullptr);

// Assemble the full report: ROC-AUC over vulnerable vs everything else
// (patched excluded), Top-k over the supplied vulnerable functions,
// Mann-Whitney P between the vulnerable and non-vulnerable groups, group
// medians and exact-match rates, plus patched-line comparisons when patched
// labels are present.
EvaluationReport evaluate(const std::vector<AnomalyRecord>& records,
                          const std::vector<LineLabel>& labels,
                          const std::vector<FunctionSpan>& functions = {},
                          const std::vector<int>& k_values = {5, 10});

struct SweepResult {
  // (config descriptor, report) in config order.
  std::vector<std::pair<std::string, EvaluationReport>> reports;
  OverlapMatrix overlap;  // empty (configs < 2) leaves a 1x1/0x0 matrix out
  std::vector<int64_t> exact_match_counts;  // per config
};

// Run scan + evaluate for every config, sharing the cache where keys
// coincide, and cross-config exact-match overlap. A failing config aborts
// the sweep with its descriptor in the error message.
SweepResult sweep(const Corpus& corpus, const std::vector<Target>& targets,
                  const std::vector<LineLabel>& labels,
                  const std::vector<FunctionSpan>& functions,
                  const std::vector<ScanConfig>& configs, Backend& backend,
                  JudgmentCache* cache = nullptr,
                  const std::vector<int>& k_values = {5, 10});

// Provenance block embedded in every report.
std::map<std::string, std::string> run_manifest(const Corpus& corpus,
                                                const ScanConfig& config,
                                                const Backend& backend);

}  // namespace fimscan
