#include "fimscan/harness.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <set>
#include <unordered_map>

#include <omp.h>

namespace fimscan {

std::string ScanConfig::descriptor() const {
  std::string d = "strategy=" + strategy.descriptor();
  d += ";score=" + std::string(to_string(score_fn));
  d += ";m1=" + std::string(filters.m1 ? "1" : "0");
  d += ";m2=" + std::string(filters.m2 ? "1" : "0");
  d += ";backend=" + sentinels.backend_id;
  d += ";seed=" + std::to_string(seed);
  return d;
}

void ScanConfig::validate() const {
  sentinels.validate();
  if (strategy.kind == Strategy::Kind::fixed && strategy.total < 2)
    throw SchemaError("fixed context total must be >= 2, got " +
                      std::to_string(strategy.total));
  if (strategy.kind == Strategy::Kind::mcs && strategy.limit < 1)
    throw SchemaError("mcs limit must be >= 1");
  if (strategy.kind == Strategy::Kind::mcs && strategy.fallback_half < 0)
    throw SchemaError("mcs fallback_half must be >= 0");
  if (parallelism < 1) throw SchemaError("parallelism must be >= 1");
}

std::vector<Target> targets_from_labels(const std::vector<LineLabel>& labels) {
  std::vector<Target> targets;
  targets.reserve(labels.size());
  for (const LineLabel& l : labels) targets.push_back(Target{l.file, l.line_no});
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  return targets;
}

std::vector<Target> all_targets(const Corpus& corpus) {
  std::vector<Target> targets;
  for (const auto& [path, file] : corpus.files())
    for (int no = 1; no <= file.line_count(); ++no)
      if (!is_blank(file.line(no))) targets.push_back(Target{path, no});
  return targets;
}

uint64_t content_hash(const SourceFile& file) { return fnv1a64(file.joined()); }

std::string corpus_digest(const Corpus& corpus) {
  std::string acc;
  for (const auto& [path, file] : corpus.files()) {
    acc += path;
    acc += ':';
    acc += hex64(content_hash(file));
    acc += '\n';
  }
  return hex64(fnv1a64(acc));
}

namespace {

// Initial context window for the configured strategy.
ContextWindow initial_window(const SourceFile& file, const BraceIndex* index, int line,
                             const Strategy& strategy) {
  if (strategy.kind == Strategy::Kind::mcs)
    return mcs_context(file, *index, line, strategy.limit, strategy.fallback_half);
  return fixed_context(file, line, strategy.total);
}

// Obtain a judgment, shrinking the context whenever the backend reports
// overflow: an MCS window steps to the next strictly smaller enclosing
// compound statement, then to the fallback window; fallback and fixed
// windows halve. The chain strictly shrinks, so it terminates; when even an
// empty context overflows, the overflow propagates (the run fails rather
// than silently skipping the line).
ModelJudgment judge_with_shrink(Backend& backend, const SourceFile& file,
                                const BraceIndex* index, int line, const ScanConfig& config) {
  const Strategy& strategy = config.strategy;
  std::vector<BracePair> chain;
  size_t chain_at = 0;
  int half = 0;
  bool windowed;  // true once we are in clamped-window (fixed or fallback) mode

  if (strategy.kind == Strategy::Kind::mcs) {
    for (const BracePair& p : enclosing_pairs(*index, line))
      if (p.span() <= strategy.limit) chain.push_back(p);
    windowed = chain.empty();
    half = strategy.fallback_half;
  } else {
    windowed = true;
    half = strategy.total / 2;
  }
  ContextWindow window =
      windowed ? clamped_window(file, line, half, strategy,
                                strategy.kind == Strategy::Kind::mcs)
               : window_from_pair(file, line, chain[0], strategy);

  for (;;) {
    const FimPrompt prompt = assemble_prompt(window, file.line(line), config.sentinels);
    try {
      return backend.judge(prompt);
    } catch (const ContextOverflow&) {
      if (!windowed) {
        const int current_span = chain[chain_at].span();
        while (chain_at + 1 < chain.size() && chain[chain_at + 1].span() >= current_span)
          ++chain_at;
        if (chain_at + 1 < chain.size()) {
          ++chain_at;
          window = window_from_pair(file, line, chain[chain_at], strategy);
        } else {
          windowed = true;
          half = strategy.fallback_half;
          window = clamped_window(file, line, half, strategy, /*fell_back=*/true);
        }
      } else if (half > 0) {
        half /= 2;
        window = clamped_window(file, line, half, strategy,
                                strategy.kind == Strategy::Kind::mcs);
      } else {
        throw;  // empty context still too long: the backend cannot serve this run
      }
    }
  }
}

struct ScanPlan {
  std::vector<Target> targets;
  std::unordered_map<std::string, const SourceFile*> files;
  std::unordered_map<std::string, BraceIndex> indexes;
  std::unordered_map<std::string, uint64_t> hashes;
  std::map<std::pair<std::string, int>, LineClass> label_of;
};

ScanPlan prepare(const Corpus& corpus, const std::vector<Target>& raw_targets,
                 const ScanConfig& config, const std::vector<LineLabel>* labels) {
  ScanPlan plan;
  std::vector<Target> targets = raw_targets;
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

  for (const Target& t : targets) {
    const SourceFile& file = corpus.at(t.file);
    if (t.line < 1 || t.line > file.line_count())
      throw LineOutOfRange(t.file + ": target line " + std::to_string(t.line) +
                           " out of range (1.." + std::to_string(file.line_count()) + ")");
    if (is_blank(file.line(t.line))) continue;  // blank lines carry nothing to score
    plan.targets.push_back(t);
    if (!plan.files.count(t.file)) {
      plan.files[t.file] = &file;
      plan.hashes[t.file] = content_hash(file);
      if (config.strategy.kind == Strategy::Kind::mcs)
        plan.indexes[t.file] = build_brace_index(file);
    }
  }
  if (labels)
    for (const LineLabel& l : *labels) plan.label_of[{l.file, l.line_no}] = l.label;
  return plan;
}

AnomalyRecord process_target(const ScanPlan& plan, const Target& target,
                             const ScanConfig& config, Backend& backend,
                             JudgmentCache* cache) {
  const SourceFile& file = *plan.files.at(target.file);
  const BraceIndex* index = nullptr;
  if (config.strategy.kind == Strategy::Kind::mcs) index = &plan.indexes.at(target.file);

  auto compute = [&] { return judge_with_shrink(backend, file, index, target.line, config); };

  // Filters are evaluated on the configured strategy's window, not on any
  // overflow-shrunk one, so the decision is identical whether the judgment
  // came from the backend or the cache.
  const ContextWindow window = initial_window(file, index, target.line, config.strategy);

  ModelJudgment judgment;
  if (cache) {
    const std::string key = make_cache_key(plan.hashes.at(target.file), target.line,
                                           config.strategy.descriptor(), backend.id());
    judgment = cache->get_or_compute(key, compute);
  } else {
    judgment = compute();
  }

  const std::string& p = file.line(target.line);
  AnomalyRecord record;
  record.file = target.file;
  record.line_no = target.line;
  if (auto it = plan.label_of.find({target.file, target.line}); it != plan.label_of.end())
    record.label = it->second;
  record.loss = loss_score(judgment);
  record.exact_match = exact_match(p, judgment.generated);
  record.score = score_with(config.score_fn, judgment, p);
  record.strategy = config.strategy.descriptor();
  return apply_filters(std::move(record), window, p, judgment.generated, config.filters);
}

std::vector<AnomalyRecord> run_scan(const Corpus& corpus, const std::vector<Target>& targets,
                                    const ScanConfig& config, Backend& backend,
                                    JudgmentCache* cache, const std::vector<LineLabel>* labels,
                                    bool parallel) {
  config.validate();
  const ScanPlan plan = prepare(corpus, targets, config, labels);
  std::vector<AnomalyRecord> records(plan.targets.size());

  if (!parallel) {
    for (size_t i = 0; i < plan.targets.size(); ++i)
      records[i] = process_target(plan, plan.targets[i], config, backend, cache);
  } else {
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mu;
    const int threads = config.parallelism;
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (int64_t i = 0; i < static_cast<int64_t>(plan.targets.size()); ++i) {
      if (failed.load(std::memory_order_relaxed)) continue;
      try {
        records[static_cast<size_t>(i)] =
            process_target(plan, plan.targets[static_cast<size_t>(i)], config, backend, cache);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
      }
    }
    if (error) std::rethrow_exception(error);  // all-or-nothing: no partial output
  }

  // plan.targets is (file, line)-sorted, so records already are; keep the
  // guarantee explicit in case the plan ordering ever changes.
  std::sort(records.begin(), records.end(), [](const AnomalyRecord& a, const AnomalyRecord& b) {
    return std::tie(a.file, a.line_no) < std::tie(b.file, b.line_no);
  });
  return records;
}

}  // namespace

std::vector<AnomalyRecord> scan_serial(const Corpus& corpus, const std::vector<Target>& targets,
                                       const ScanConfig& config, Backend& backend,
                                       JudgmentCache* cache, const std::vector<LineLabel>* labels) {
  return run_scan(corpus, targets, config, backend, cache, labels, /*parallel=*/false);
}

std::vector<AnomalyRecord> scan(const Corpus& corpus, const std::vector<Target>& targets,
                                const ScanConfig& config, Backend& backend, JudgmentCache* cache,
                                const std::vector<LineLabel>* labels) {
  if (config.parallelism <= 1)
    return scan_serial(corpus, targets, config, backend, cache, labels);
  return run_scan(corpus, targets, config, backend, cache, labels, /*parallel=*/true);
}

EvaluationReport evaluate(const std::vector<AnomalyRecord>& records,
                          const std::vector<LineLabel>& labels,
                          const std::vector<FunctionSpan>& functions,
                          const std::vector<int>& k_values) {
  std::map<std::pair<std::string, int>, LineClass> label_of;
  for (const LineLabel& l : labels) label_of[{l.file, l.line_no}] = l.label;

  // the label argument is authoritative: labels embedded by the scan are
  // replaced, so relabelling experiments see only the supplied ground truth
  std::vector<AnomalyRecord> joined = records;
  for (AnomalyRecord& r : joined) {
    const auto it = label_of.find({r.file, r.line_no});
    r.label = it == label_of.end() ? std::nullopt : std::optional<LineClass>(it->second);
  }

  std::vector<double> pos, neg, patched;
  for (const AnomalyRecord& r : joined) {
    if (r.label == LineClass::patched)
      patched.push_back(r.score);
    else if (r.label == LineClass::vulnerable)
      pos.push_back(r.score);
    else
      neg.push_back(r.score);  // unlabelled lines count as non-vulnerable
  }
  if (pos.empty() || neg.empty())
    throw EmptyClass("evaluate requires at least one vulnerable and one non-vulnerable line");

  EvaluationReport report;
  report.roc_auc = roc_auc(pos, neg);
  report.p_value = mann_whitney_u(pos, neg);
  if (!functions.empty()) {
    report.topk = top_k_accuracy(joined, functions, labels, k_values);
  } else {
    report.topk.k_values = k_values;
    report.topk.hits.assign(k_values.size(), 0);
    report.topk.accuracy.assign(k_values.size(), 0.0);
  }
  report.median_scores = group_medians(joined);
  report.exact_match_rates = group_exact_match_rates(joined);
  if (!patched.empty()) {
    report.extra_p_values["patched_vs_vulnerable"] = mann_whitney_u(patched, pos);
    report.extra_p_values["patched_vs_non_vulnerable"] = mann_whitney_u(patched, neg);
  }
  if (!joined.empty()) report.config_descriptor = joined.front().strategy;
  return report;
}

namespace {

[[noreturn]] void rethrow_tagged(const std::string& descriptor) {
  try {
    throw;
  } catch (const BackendUnavailable& e) {
    throw BackendUnavailable("config [" + descriptor + "]: " + e.what());
  } catch (const BackendMalformedReply& e) {
    throw BackendMalformedReply("config [" + descriptor + "]: " + e.what());
  } catch (const ContextOverflow& e) {
    throw ContextOverflow("config [" + descriptor + "]: " + e.what());
  } catch (const Error& e) {
    throw Error("config [" + descriptor + "]: " + e.what());
  }
}

}  // namespace

SweepResult sweep(const Corpus& corpus, const std::vector<Target>& targets,
                  const std::vector<LineLabel>& labels,
                  const std::vector<FunctionSpan>& functions,
                  const std::vector<ScanConfig>& configs, Backend& backend,
                  JudgmentCache* cache, const std::vector<int>& k_values) {
  if (configs.empty()) throw SchemaError("sweep requires at least one config");

  SweepResult result;
  std::vector<std::pair<std::string, std::set<LineKey>>> match_sets;
  for (const ScanConfig& config : configs) {
    const std::string descriptor = config.descriptor();
    try {
      const std::vector<AnomalyRecord> records =
          scan(corpus, targets, config, backend, cache, &labels);
      EvaluationReport report = evaluate(records, labels, functions, k_values);
      report.config_descriptor = descriptor;
      report.manifest = run_manifest(corpus, config, backend);

      std::set<LineKey> matches;
      for (const AnomalyRecord& r : records)
        if (r.exact_match) matches.insert({r.file, r.line_no});
      result.exact_match_counts.push_back(static_cast<int64_t>(matches.size()));
      match_sets.emplace_back(descriptor, std::move(matches));
      result.reports.emplace_back(descriptor, std::move(report));
    } catch (...) {
      rethrow_tagged(descriptor);
    }
  }
  if (match_sets.size() >= 2) result.overlap = exact_match_overlap(match_sets);
  return result;
}

std::map<std::string, std::string> run_manifest(const Corpus& corpus, const ScanConfig& config,
                                                const Backend& backend) {
  std::map<std::string, std::string> manifest;
  manifest["backend"] = backend.id();
  manifest["config"] = config.descriptor();
  manifest["corpus_digest"] = corpus_digest(corpus);
  manifest["corpus_files"] = std::to_string(corpus.size());
  manifest["seed"] = std::to_string(config.seed);
  return manifest;
}

}  // namespace fimscan
