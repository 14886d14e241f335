#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fimscan/analytics.hpp"
#include "fimscan/harness.hpp"
#include "fimscan/http_backend.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fimscan;

namespace {

Strategy parse_strategy(const std::string& text, int mcs_limit, int fallback_half) {
  if (text == "mcs") return Strategy::mcs(mcs_limit, fallback_half);
  if (text.rfind("fixed:", 0) == 0) {
    int total = 0;
    try {
      total = std::stoi(text.substr(6));
    } catch (const std::exception&) {
      throw SchemaError("cannot parse strategy \"" + text + "\"");
    }
    if (total < 2) throw SchemaError("fixed context total must be >= 2, got " + text);
    return Strategy::fixed_lines(total);
  }
  throw SchemaError("unknown strategy \"" + text + "\" (expected mcs or fixed:N)");
}

std::unique_ptr<Backend> make_backend(const std::string& descriptor,
                                      const SentinelConfig& sentinels) {
  if (descriptor.rfind("mock:", 0) == 0) {
    const std::string path = descriptor.substr(5);
    if (path.empty()) return std::make_unique<MockBackend>();
    return mock_backend_from_file(path);
  }
  if (descriptor.rfind("http://", 0) == 0 || descriptor.rfind("https://", 0) == 0)
    return std::make_unique<HttpBackend>(descriptor, sentinels);
  throw SchemaError("backend must be mock:[table.json] or an http(s) URL, got \"" + descriptor +
                    "\"");
}

std::string default_cache_path() {
  if (const char* dir = std::getenv("FIMSCAN_CACHE_DIR"); dir && *dir)
    return (fs::path(dir) / "judgments.fsc").string();
  return {};
}

// Options shared by the scanning subcommands.
struct ScanOpts {
  std::string corpus_root;
  std::string labels_path;
  std::string functions_path;
  std::string backend_desc;
  std::string strategy_text = "mcs";
  int mcs_limit = 500;
  int fallback_half = 150;
  std::string score_fn = "hybrid";
  bool no_m1 = false;
  bool no_m2 = false;
  std::string targets_mode = "auto";  // labelled when labels given, else all
  int sample_negatives_n = 0;
  uint64_t seed = 0;
  int parallelism = 1;
  std::string cache_path = default_cache_path();
  std::string pre_token = "<PRE>";
  std::string suf_token = "<SUF>";
  std::string mid_token = "<MID>";
};

void add_scan_opts(CLI::App* cmd, ScanOpts& o, bool backend_required) {
  cmd->add_option("--corpus", o.corpus_root, "corpus root directory (or single file)")
      ->required();
  cmd->add_option("--labels", o.labels_path, "label dataset (JSONL)");
  cmd->add_option("--functions", o.functions_path, "function-span dataset (JSONL)");
  auto* backend = cmd->add_option("--backend", o.backend_desc,
                                  "mock:[table.json] or http(s)://host[:port][/path]");
  if (backend_required) backend->required();
  cmd->add_option("--strategy", o.strategy_text, "mcs or fixed:N (default mcs)");
  cmd->add_option("--mcs-limit", o.mcs_limit, "max compound-statement span in lines");
  cmd->add_option("--fallback-half", o.fallback_half, "per-side lines when no MCS fits");
  cmd->add_option("--score-fn", o.score_fn, "delta1, delta2 or hybrid");
  cmd->add_flag("--no-m1", o.no_m1, "disable the empty-prefix filter");
  cmd->add_flag("--no-m2", o.no_m2, "disable the comment-pair filter");
  cmd->add_option("--targets", o.targets_mode, "labelled or all (default: labelled if labels given)");
  cmd->add_option("--sample-negatives", o.sample_negatives_n,
                  "add N seeded non-vulnerable labels before scanning");
  cmd->add_option("--seed", o.seed, "RNG seed (sampling, manifests)");
  cmd->add_option("--parallelism", o.parallelism, "concurrent in-flight judgments");
  cmd->add_option("--cache", o.cache_path,
                  "judgment cache store (default $FIMSCAN_CACHE_DIR/judgments.fsc)");
  cmd->add_option("--pre-token", o.pre_token, "prefix sentinel");
  cmd->add_option("--suf-token", o.suf_token, "suffix sentinel");
  cmd->add_option("--mid-token", o.mid_token, "middle sentinel");
}

struct LoadedScan {
  Corpus corpus;
  std::vector<LineLabel> labels;
  std::vector<FunctionSpan> functions;
  std::vector<Target> targets;
  ScanConfig config;
  std::unique_ptr<Backend> backend;
  std::unique_ptr<JudgmentCache> cache;
};

LoadedScan prepare_scan(const ScanOpts& o) {
  LoadedScan s;
  s.corpus = load_corpus_dir(o.corpus_root);

  s.config.strategy = parse_strategy(o.strategy_text, o.mcs_limit, o.fallback_half);
  s.config.score_fn = score_fn_from_string(o.score_fn);
  s.config.filters.m1 = !o.no_m1;
  s.config.filters.m2 = !o.no_m2;
  s.config.parallelism = o.parallelism;
  s.config.seed = o.seed;
  s.config.sentinels.prefix_token = o.pre_token;
  s.config.sentinels.suffix_token = o.suf_token;
  s.config.sentinels.middle_token = o.mid_token;

  s.backend = make_backend(o.backend_desc, s.config.sentinels);
  s.config.sentinels.backend_id = s.backend->id();
  s.config.validate();

  if (!o.labels_path.empty()) s.labels = load_labels(o.labels_path, s.corpus);
  if (o.sample_negatives_n > 0) {
    auto negatives = sample_negatives(s.corpus, s.labels, o.sample_negatives_n, o.seed);
    s.labels.insert(s.labels.end(), negatives.begin(), negatives.end());
  }
  if (!o.functions_path.empty()) s.functions = load_functions(o.functions_path, s.corpus);

  std::string mode = o.targets_mode;
  if (mode == "auto") mode = s.labels.empty() ? "all" : "labelled";
  if (mode == "labelled") {
    if (s.labels.empty())
      throw SchemaError("--targets labelled requires --labels or --sample-negatives");
    s.targets = targets_from_labels(s.labels);
  } else if (mode == "all") {
    s.targets = all_targets(s.corpus);
  } else {
    throw SchemaError("unknown --targets mode \"" + mode + "\"");
  }

  if (!o.cache_path.empty()) s.cache = std::make_unique<JudgmentCache>(o.cache_path);
  return s;
}

std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", v * 100.0);
  return buf;
}

std::string summary_line(const EvaluationReport& r) {
  std::string line = "ROC-AUC " + json(r.roc_auc).dump();
  for (size_t i = 0; i < r.topk.k_values.size(); ++i) {
    line += "  Top-" + std::to_string(r.topk.k_values[i]) + " ";
    line += r.topk.total_functions ? format_percent(r.topk.accuracy[i]) : std::string("n/a");
  }
  line += "  P " + json(r.p_value.p_two_sided).dump();
  if (r.p_value.degenerate) line += " (degenerate)";
  return line;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileUnreadable("cannot write " + path);
  out << text;
}

std::string file_stem_for(const Strategy& strategy) {
  std::string s = strategy.descriptor();
  for (char& c : s)
    if (c == ':') c = '_';
  return s;
}

int cmd_scan(const ScanOpts& o, const std::string& out_path, const std::string& labels_out) {
  LoadedScan s = prepare_scan(o);
  const auto records =
      scan(s.corpus, s.targets, s.config, *s.backend, s.cache.get(), &s.labels);
  write_records(out_path, records);
  if (!labels_out.empty()) write_labels(labels_out, s.labels);
  std::cout << "scanned " << records.size() << " lines -> " << out_path << "\n";
  return 0;
}

int cmd_evaluate(const std::string& records_path, const std::string& labels_path,
                 const std::string& functions_path, const std::string& corpus_root,
                 std::vector<int> k_values, bool k_explicit, const std::string& out_path,
                 const std::string& format) {
  if (k_explicit && functions_path.empty())
    throw SchemaError("--k requires --functions (Top-k ranks lines within functions)");

  const auto records = read_records(records_path);
  std::vector<LineLabel> labels;
  std::vector<FunctionSpan> functions;
  if (!corpus_root.empty()) {
    const Corpus corpus = load_corpus_dir(corpus_root);
    labels = load_labels(labels_path, corpus);
    if (!functions_path.empty()) functions = load_functions(functions_path, corpus);
  } else {
    labels = load_labels_unchecked(labels_path);
    if (!functions_path.empty()) {
      // no corpus to validate spans against; trust the dataset bounds
      std::ifstream in(functions_path);
      if (!in) throw FileUnreadable("cannot open " + functions_path);
      std::string line;
      size_t index = 0;
      while (std::getline(in, line)) {
        ++index;
        if (is_blank(line)) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("file") ||
            !j.contains("start_line") || !j.contains("end_line"))
          throw SchemaError(functions_path + " record " + std::to_string(index) +
                            ": expected fields id, file, start_line, end_line");
        functions.push_back(FunctionSpan{j.at("id").get<std::string>(),
                                         j.at("file").get<std::string>(),
                                         j.at("start_line").get<int>(),
                                         j.at("end_line").get<int>()});
      }
    }
  }

  EvaluationReport report = evaluate(records, labels, functions, k_values);
  report.manifest["records"] = records_path;
  report.manifest["labels"] = labels_path;
  {
    std::ifstream in(records_path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    report.manifest["records_digest"] = hex64(fnv1a64(buf.str()));
  }

  const std::string body =
      format == "tabular" ? report_to_csv(report) : report_to_json(report);
  if (out_path.empty())
    std::cout << body;
  else
    write_text(out_path, body);
  std::cout << summary_line(report) << "\n";
  return 0;
}

int cmd_sweep(const ScanOpts& o, const std::vector<int>& sizes, bool with_mcs,
              const std::string& out_dir, const std::string& format) {
  std::vector<ScanConfig> configs;
  LoadedScan s = prepare_scan(o);
  for (int size : sizes) {
    ScanConfig c = s.config;
    c.strategy = Strategy::fixed_lines(size);
    configs.push_back(c);
  }
  if (with_mcs) {
    ScanConfig c = s.config;
    c.strategy = Strategy::mcs(o.mcs_limit, o.fallback_half);
    configs.push_back(c);
  }
  if (configs.empty()) throw SchemaError("sweep needs --sizes and/or --mcs");
  if (s.labels.empty()) throw SchemaError("sweep requires --labels (statistics need label groups)");

  const SweepResult result = sweep(s.corpus, s.targets, s.labels, s.functions, configs,
                                   *s.backend, s.cache.get());

  fs::create_directories(out_dir);
  std::string medians_csv = "config,group,median\n";
  for (size_t i = 0; i < result.reports.size(); ++i) {
    const auto& [descriptor, report] = result.reports[i];
    const std::string stem = file_stem_for(configs[i].strategy);
    write_text((fs::path(out_dir) / ("report_" + stem + ".json")).string(),
               report_to_json(report));
    if (format == "tabular")
      write_text((fs::path(out_dir) / ("report_" + stem + ".csv")).string(),
                 report_to_csv(report));
    for (const auto& [group, value] : report.median_scores)
      medians_csv += configs[i].strategy.descriptor() + "," + group + "," + json(value).dump() + "\n";
    std::cout << configs[i].strategy.descriptor() << ": " << summary_line(report) << "\n";
  }
  write_text((fs::path(out_dir) / "medians.csv").string(), medians_csv);
  if (!result.overlap.configs.empty()) {
    write_text((fs::path(out_dir) / "overlap.json").string(), overlap_to_json(result.overlap));
    if (format == "tabular")
      write_text((fs::path(out_dir) / "overlap.csv").string(), overlap_to_csv(result.overlap));
  }
  std::cout << "wrote " << result.reports.size() << " reports -> " << out_dir << "\n";
  return 0;
}

int cmd_context(const std::string& corpus_root, const std::string& file_path, int line,
                const std::string& strategy_text, int mcs_limit, int fallback_half) {
  const Corpus corpus = load_corpus_dir(corpus_root);
  const SourceFile& file = corpus.at(file_path);
  const Strategy strategy = parse_strategy(strategy_text, mcs_limit, fallback_half);

  ContextWindow window;
  if (strategy.kind == Strategy::Kind::mcs) {
    const BraceIndex index = build_brace_index(file);
    window = mcs_context(file, index, line, strategy.limit, strategy.fallback_half);
  } else {
    window = fixed_context(file, line, strategy.total);
  }

  json j;
  j["file"] = window.file;
  j["target_line"] = window.target_line;
  j["strategy"] = window.strategy.descriptor();
  j["fell_back"] = window.fell_back;
  if (window.mcs_span) j["mcs_span"] = {window.mcs_span->first, window.mcs_span->second};
  j["prefix"] = window.prefix;
  j["suffix"] = window.suffix;
  std::cout << j.dump(2) << "\n";
  return 0;
}

template <typename Fn>
int run_guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"line-level anomaly scanner driven by fill-in-the-middle code models"};
  app.require_subcommand(1);

  // scan
  auto* scan_cmd = app.add_subcommand("scan", "score lines and write an anomaly record stream");
  ScanOpts scan_opts;
  std::string scan_out, scan_labels_out;
  add_scan_opts(scan_cmd, scan_opts, /*backend_required=*/true);
  scan_cmd->add_option("--out", scan_out, "output records (JSONL)")->required();
  scan_cmd->add_option("--labels-out", scan_labels_out,
                       "write the (possibly augmented) label set used for the scan");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "compute metrics from a saved record stream");
  std::string eval_records, eval_labels, eval_functions, eval_corpus, eval_out;
  std::string eval_format = "structured";
  std::vector<int> eval_k = {5, 10};
  eval_cmd->add_option("--records", eval_records, "anomaly records (JSONL)")->required();
  eval_cmd->add_option("--labels", eval_labels, "label dataset (JSONL)")->required();
  eval_cmd->add_option("--functions", eval_functions, "function-span dataset (JSONL)");
  eval_cmd->add_option("--corpus", eval_corpus, "corpus root for label validation (optional)");
  auto* k_opt = eval_cmd->add_option("--k", eval_k, "Top-k thresholds (default 5 10)");
  eval_cmd->add_option("--out", eval_out, "report path (default stdout)");
  eval_cmd->add_option("--format", eval_format, "structured (JSON) or tabular (CSV)");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "scan + evaluate across context configurations");
  ScanOpts sweep_opts;
  std::vector<int> sweep_sizes;
  bool sweep_mcs = false;
  std::string sweep_out;
  std::string sweep_format = "structured";
  add_scan_opts(sweep_cmd, sweep_opts, /*backend_required=*/true);
  sweep_cmd->add_option("--sizes", sweep_sizes, "fixed context sizes, e.g. --sizes 100 300 500");
  sweep_cmd->add_flag("--mcs", sweep_mcs, "include the MCS strategy in the sweep");
  sweep_cmd->add_option("--out", sweep_out, "output directory")->required();
  sweep_cmd->add_option("--format", sweep_format, "structured or tabular");

  // context
  auto* ctx_cmd = app.add_subcommand("context", "print the context window for one (file, line)");
  std::string ctx_corpus, ctx_file, ctx_strategy = "mcs";
  int ctx_line = 0, ctx_limit = 500, ctx_fallback = 150;
  ctx_cmd->add_option("--corpus", ctx_corpus, "corpus root")->required();
  ctx_cmd->add_option("--file", ctx_file, "file path relative to corpus root")->required();
  ctx_cmd->add_option("--line", ctx_line, "1-based target line")->required();
  ctx_cmd->add_option("--strategy", ctx_strategy, "mcs or fixed:N");
  ctx_cmd->add_option("--mcs-limit", ctx_limit, "max compound-statement span");
  ctx_cmd->add_option("--fallback-half", ctx_fallback, "per-side fallback lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (scan_cmd->parsed())
    return run_guarded([&] { return cmd_scan(scan_opts, scan_out, scan_labels_out); });
  if (eval_cmd->parsed())
    return run_guarded([&] {
      return cmd_evaluate(eval_records, eval_labels, eval_functions, eval_corpus, eval_k,
                          k_opt->count() > 0, eval_out, eval_format);
    });
  if (sweep_cmd->parsed())
    return run_guarded([&] {
      return cmd_sweep(sweep_opts, sweep_sizes, sweep_mcs, sweep_out, sweep_format);
    });
  if (ctx_cmd->parsed())
    return run_guarded([&] {
      return cmd_context(ctx_corpus, ctx_file, ctx_line, ctx_strategy, ctx_limit, ctx_fallback);
    });
  return 2;
}
