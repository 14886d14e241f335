#include <doctest.h>

#include <map>
#include <random>
#include <sstream>

#include "fimscan/harness.hpp"
#include "test_util.hpp"

using namespace fimscan;
using testutil::SynthOptions;
using testutil::make_synth_corpus;

namespace {

ScanConfig config_for(const Backend& backend) {
  ScanConfig c;
  c.strategy = Strategy::mcs();
  c.sentinels.backend_id = backend.id();
  return c;
}

std::string records_blob(const std::vector<AnomalyRecord>& records) {
  std::string out;
  for (const auto& r : records) out += record_to_jsonl(r) + "\n";
  return out;
}

}  // namespace

TEST_CASE("perfect mock: every scanned line matches exactly and scores at most 0") {
  auto synth = make_synth_corpus({.n_files = 1, .functions_per_file = 4, .vulnerable_lines = 4});
  MockBackend backend;
  ScanConfig config = config_for(backend);

  const auto records = scan(synth.corpus, all_targets(synth.corpus), config, backend);
  REQUIRE_FALSE(records.empty());
  for (const auto& r : records) {
    CHECK(r.exact_match);
    CHECK(r.loss == 0.0);
    CHECK(r.score <= 0.0);
    if (!r.filtered_by) CHECK(r.score == -1.0);  // zero loss + match
  }
}

TEST_CASE("corruptor mock separates labelled vulnerable lines") {
  auto synth = make_synth_corpus({});
  MockBackend backend("mock:corruptor");
  backend.add_rule(testutil::corruptor_rule("vmark"));
  ScanConfig config = config_for(backend);

  const auto records =
      scan(synth.corpus, all_targets(synth.corpus), config, backend, nullptr, &synth.labels);

  std::map<std::pair<std::string, int>, bool> is_vul;
  for (const auto& l : synth.labels) is_vul[{l.file, l.line_no}] = true;

  int vul_seen = 0;
  for (const auto& r : records) {
    if (is_vul.count({r.file, r.line_no})) {
      ++vul_seen;
      CHECK(r.label == LineClass::vulnerable);
      CHECK(r.score > 0.0);
      CHECK_FALSE(r.exact_match);
    } else {
      CHECK(r.score < 0.0);
    }
  }
  CHECK(vul_seen == 60);
}

TEST_CASE("warm cache: second scan issues zero backend calls and identical bytes") {
  testutil::TempDir tmp;
  auto synth = make_synth_corpus({.n_files = 1, .functions_per_file = 3, .vulnerable_lines = 3});
  MockBackend backend("mock:corruptor");
  backend.add_rule(testutil::corruptor_rule("vmark"));
  ScanConfig config = config_for(backend);
  const auto targets = all_targets(synth.corpus);

  JudgmentCache cache(tmp.file("judgments.fsc"));
  const auto first = scan(synth.corpus, targets, config, backend, &cache);
  const uint64_t calls_after_first = backend.calls();
  CHECK(calls_after_first == targets.size());

  const auto second = scan(synth.corpus, targets, config, backend, &cache);
  CHECK(backend.calls() == calls_after_first);  // all hits
  CHECK(records_blob(first) == records_blob(second));

  // fresh cache object over the same store: still zero backend calls
  JudgmentCache reopened(tmp.file("judgments.fsc"));
  const auto third = scan(synth.corpus, targets, config, backend, &reopened, nullptr);
  CHECK(backend.calls() == calls_after_first);
  CHECK(records_blob(first) == records_blob(third));
}

TEST_CASE("cache key tracks file content: editing forces recompute") {
  testutil::TempDir tmp;
  Corpus corpus;
  corpus.add(source_from_string("a.c", "int f() {\n  return 1;\n}\n"));
  MockBackend backend;
  ScanConfig config = config_for(backend);
  JudgmentCache cache(tmp.file("j.fsc"));

  scan(corpus, {{"a.c", 2}}, config, backend, &cache);
  CHECK(backend.calls() == 1);
  scan(corpus, {{"a.c", 2}}, config, backend, &cache);
  CHECK(backend.calls() == 1);

  Corpus edited;
  edited.add(source_from_string("a.c", "int f() {\n  return 2;\n}\n"));
  scan(edited, {{"a.c", 2}}, config, backend, &cache);
  CHECK(backend.calls() == 2);
}

TEST_CASE("determinism: serial reference equals the OpenMP fan-out byte for byte") {
  auto synth = make_synth_corpus({.n_files = 2, .functions_per_file = 6, .vulnerable_lines = 9});
  MockBackend backend("mock:corruptor");
  backend.add_rule(testutil::corruptor_rule("vmark"));
  ScanConfig config = config_for(backend);
  const auto targets = all_targets(synth.corpus);

  const auto serial = scan_serial(synth.corpus, targets, config, backend, nullptr, &synth.labels);

  for (int threads : {2, 4, 7}) {
    config.parallelism = threads;
    const auto parallel =
        scan(synth.corpus, targets, config, backend, nullptr, &synth.labels);
    CHECK(records_blob(serial) == records_blob(parallel));
  }
}

TEST_CASE("blank lines are skipped; bad targets are rejected") {
  Corpus corpus;
  corpus.add(source_from_string("a.c", "int a;\n\n   \nint b;\n"));
  MockBackend backend;
  ScanConfig config = config_for(backend);

  const auto records = scan(corpus, all_targets(corpus), config, backend);
  CHECK(records.size() == 2);  // lines 2 and 3 are blank

  const auto explicit_blank = scan(corpus, {{"a.c", 2}}, config, backend);
  CHECK(explicit_blank.empty());

  CHECK_THROWS_AS(scan(corpus, {{"zz.c", 1}}, config, backend), UnknownFile);
  CHECK_THROWS_AS(scan(corpus, {{"a.c", 99}}, config, backend), LineOutOfRange);
  config.parallelism = 0;
  CHECK_THROWS_AS(scan(corpus, {{"a.c", 1}}, config, backend), SchemaError);
}

TEST_CASE("context overflow walks the next-largest compound statement chain") {
  Corpus corpus;
  corpus.add(source_from_string("nested.c",
                                "void outer() {\n"
                                "  a;\n"
                                "  if (x) {\n"
                                "    b;\n"
                                "    if (y) {\n"
                                "      target;\n"
                                "    }\n"
                                "  }\n"
                                "}\n"));
  const SourceFile& file = corpus.at("nested.c");
  const BraceIndex index = build_brace_index(file);

  // budget: exactly the innermost window's prompt
  SentinelConfig sentinels;
  sentinels.backend_id = "mock:overflow";
  const ContextWindow inner = window_from_pair(file, 6, BracePair{5, 7}, Strategy::mcs());
  const size_t budget = assemble_prompt(inner, file.line(6), sentinels).body.size();

  MockBackend backend("mock:overflow");
  backend.set_max_prompt_chars(budget);
  ScanConfig config;
  config.strategy = Strategy::mcs();
  config.sentinels = sentinels;

  const auto records = scan(corpus, {{"nested.c", 6}}, config, backend);
  REQUIRE(records.size() == 1);
  CHECK(records[0].exact_match);
  CHECK(backend.calls() == 1);      // one successful judgment
  CHECK(backend.overflows() == 2);  // spans 9 -> 6 -> 3: two rejected attempts

  SUBCASE("fallback windows halve until they fit") {
    MockBackend tight("mock:tight");
    tight.set_max_prompt_chars(40);
    ScanConfig c2;
    c2.strategy = Strategy::mcs(/*limit=*/2, /*fallback_half=*/150);  // nothing fits: fallback
    c2.sentinels.backend_id = tight.id();
    const auto shrunk = scan(corpus, {{"nested.c", 6}}, c2, tight);
    REQUIRE(shrunk.size() == 1);
    CHECK(tight.overflows() >= 1);
  }

  SUBCASE("an overflow that survives even an empty context propagates") {
    MockBackend impossible("mock:impossible");
    impossible.set_max_prompt_chars(0);
    ScanConfig c3 = config;
    c3.sentinels.backend_id = impossible.id();
    CHECK_THROWS_AS(scan(corpus, {{"nested.c", 6}}, c3, impossible), ContextOverflow);
  }
}

TEST_CASE("ablation: filter settings change scores only on filtered lines") {
  auto synth = make_synth_corpus({.n_files = 2,
                                  .functions_per_file = 5,
                                  .vulnerable_lines = 10,
                                  .comment_marker = "cmark",
                                  .include_marker = "inc_mark"});
  MockBackend backend("mock:ablation");
  backend.add_rule(testutil::corruptor_rule("vmark"));
  backend.add_rule({"cmark", "// x ", {2.0, 2.0}});
  backend.add_rule({"inc_mark", "#include <stdio.h> ", {2.0, 2.0}});

  const auto targets = all_targets(synth.corpus);
  ScanConfig none = config_for(backend);
  none.filters = {false, false};
  ScanConfig m1 = config_for(backend);
  m1.filters = {true, false};
  ScanConfig both = config_for(backend);
  both.filters = {true, true};

  const auto r_none = scan(synth.corpus, targets, none, backend, nullptr, &synth.labels);
  const auto r_m1 = scan(synth.corpus, targets, m1, backend, nullptr, &synth.labels);
  const auto r_both = scan(synth.corpus, targets, both, backend, nullptr, &synth.labels);
  REQUIRE(r_none.size() == r_m1.size());
  REQUIRE(r_none.size() == r_both.size());

  int m1_filtered = 0, m2_filtered = 0;
  for (size_t i = 0; i < r_none.size(); ++i) {
    // with filters off the raw Eq. 1 pipeline shows through
    CHECK_FALSE(r_none[i].filtered_by.has_value());
    CHECK(r_none[i].score == hybrid_score(r_none[i].loss, r_none[i].exact_match));

    if (r_m1[i].filtered_by.has_value()) {
      ++m1_filtered;
      CHECK(*r_m1[i].filtered_by == FilterKind::M1);
      CHECK(r_m1[i].score == -1.0);
    } else {
      CHECK(r_m1[i].score == r_none[i].score);
    }

    if (r_both[i].filtered_by == FilterKind::M2) ++m2_filtered;
    if (!r_both[i].filtered_by.has_value()) CHECK(r_both[i].score == r_m1[i].score);
  }
  CHECK(m1_filtered > 0);
  CHECK(m2_filtered > 0);

  // comment-heavy negatives: filtering raises ROC-AUC monotonically
  const double auc_none = evaluate(r_none, synth.labels).roc_auc;
  const double auc_m1 = evaluate(r_m1, synth.labels).roc_auc;
  const double auc_both = evaluate(r_both, synth.labels).roc_auc;
  CHECK(auc_none <= auc_m1);
  CHECK(auc_m1 <= auc_both);
  CHECK(auc_both == 1.0);
}

TEST_CASE("evaluate: corruptor corpus yields perfect classification") {
  auto synth = make_synth_corpus({});
  MockBackend backend("mock:corruptor");
  backend.add_rule(testutil::corruptor_rule("vmark"));
  ScanConfig config = config_for(backend);

  const auto records =
      scan(synth.corpus, all_targets(synth.corpus), config, backend, nullptr, &synth.labels);
  EvaluationReport report = evaluate(records, synth.labels, synth.functions);

  CHECK(report.roc_auc == 1.0);
  REQUIRE(report.topk.k_values == std::vector<int>{5, 10});
  CHECK(report.topk.accuracy[0] == 1.0);
  CHECK(report.topk.accuracy[1] == 1.0);
  CHECK(report.p_value.p_two_sided < 0.05);
  CHECK(report.median_scores.at("vulnerable") > report.median_scores.at("non_vulnerable"));
  CHECK(report.exact_match_rates.at("vulnerable") == 0.0);
  CHECK(report.exact_match_rates.at("non_vulnerable") > 0.9);
}

TEST_CASE("evaluate: random scores sit near chance, identical scores are degenerate") {
  std::mt19937_64 rng(4242);
  std::vector<AnomalyRecord> records;
  std::vector<LineLabel> labels;
  for (int i = 1; i <= 1000; ++i) {
    AnomalyRecord r;
    r.file = "r.c";
    r.line_no = i;
    r.score = static_cast<double>(rng() % 100000) / 100000.0;
    r.strategy = "fixed:300";
    records.push_back(r);
    labels.push_back(LineLabel{"r.c", i,
                               i % 2 ? LineClass::vulnerable : LineClass::non_vulnerable,
                               std::nullopt});
  }
  EvaluationReport report = evaluate(records, labels);
  CHECK(report.roc_auc > 0.45);
  CHECK(report.roc_auc < 0.55);

  for (auto& r : records) r.score = 0.25;
  EvaluationReport flat = evaluate(records, labels);
  CHECK(flat.roc_auc == 0.5);
  CHECK(flat.p_value.degenerate);
  CHECK(flat.p_value.p_two_sided == 1.0);
}

TEST_CASE("evaluate requires both classes") {
  std::vector<AnomalyRecord> records = {[] {
    AnomalyRecord r;
    r.file = "a.c";
    r.line_no = 1;
    r.score = 1.0;
    return r;
  }()};
  std::vector<LineLabel> only_vul = {{"a.c", 1, LineClass::vulnerable, std::nullopt}};
  CHECK_THROWS_AS(evaluate(records, only_vul), EmptyClass);
}

TEST_CASE("patched lines get their own three-way comparison and stay out of ROC") {
  std::vector<AnomalyRecord> records;
  std::vector<LineLabel> labels;
  auto push = [&](int line, double score, LineClass c) {
    AnomalyRecord r;
    r.file = "p.c";
    r.line_no = line;
    r.score = score;
    records.push_back(r);
    labels.push_back(LineLabel{"p.c", line, c, std::nullopt});
  };
  int line = 1;
  for (int i = 0; i < 8; ++i) push(line++, 2.0 + i * 0.01, LineClass::vulnerable);
  for (int i = 0; i < 8; ++i) push(line++, -1.0 + i * 0.01, LineClass::non_vulnerable);
  for (int i = 0; i < 8; ++i) push(line++, 0.5 + i * 0.01, LineClass::patched);

  EvaluationReport report = evaluate(records, labels);
  CHECK(report.roc_auc == 1.0);  // patched excluded from both classes
  REQUIRE(report.extra_p_values.count("patched_vs_vulnerable"));
  REQUIRE(report.extra_p_values.count("patched_vs_non_vulnerable"));
  CHECK(report.median_scores.at("patched") > report.median_scores.at("non_vulnerable"));
  CHECK(report.median_scores.at("patched") < report.median_scores.at("vulnerable"));
}

TEST_CASE("monotone plumbing: an extra floor-scoring negative never lowers ROC-AUC") {
  std::vector<AnomalyRecord> records;
  std::vector<LineLabel> labels;
  for (int i = 1; i <= 10; ++i) {
    AnomalyRecord r;
    r.file = "m.c";
    r.line_no = i;
    r.score = i <= 5 ? 1.0 : -0.5;
    records.push_back(r);
    labels.push_back(LineLabel{"m.c", i, i <= 5 ? LineClass::vulnerable : LineClass::non_vulnerable,
                               std::nullopt});
  }
  const double before = evaluate(records, labels).roc_auc;
  AnomalyRecord extra;
  extra.file = "m.c";
  extra.line_no = 11;
  extra.score = -1.0;
  records.push_back(extra);
  labels.push_back(LineLabel{"m.c", 11, LineClass::non_vulnerable, std::nullopt});
  CHECK(evaluate(records, labels).roc_auc >= before);
}

TEST_CASE("sweep: shared cache, per-config reports, overlap matrix") {
  testutil::TempDir tmp;
  auto synth = make_synth_corpus({.n_files = 2, .functions_per_file = 4, .vulnerable_lines = 8});
  MockBackend backend("mock:corruptor");
  backend.add_rule(testutil::corruptor_rule("vmark"));
  // balance the label set with seeded negatives, as the statistics expect
  auto negatives = sample_negatives(synth.corpus, synth.labels, 8, 17);
  synth.labels.insert(synth.labels.end(), negatives.begin(), negatives.end());
  const auto targets = targets_from_labels(synth.labels);

  ScanConfig base = config_for(backend);
  std::vector<ScanConfig> configs;
  for (int total : {100, 300}) {
    ScanConfig c = base;
    c.strategy = Strategy::fixed_lines(total);
    configs.push_back(c);
  }
  configs.push_back(base);  // mcs

  JudgmentCache cache(tmp.file("j.fsc"));
  SweepResult result = sweep(synth.corpus, targets, synth.labels, synth.functions, configs,
                             backend, &cache);
  REQUIRE(result.reports.size() == 3);
  REQUIRE(result.overlap.configs.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(result.overlap.counts[i][i] == result.exact_match_counts[i]);
    CHECK(result.reports[i].second.roc_auc == 1.0);
    CHECK(result.reports[i].second.manifest.count("corpus_digest") == 1);
  }
  // the mock judges by ground truth alone, so every config produces the same
  // exact-match set and the matrix is flat
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j) CHECK(result.overlap.counts[i][j] == result.overlap.counts[0][0]);

  SUBCASE("single config sweep equals scan + evaluate") {
    SweepResult single = sweep(synth.corpus, targets, synth.labels, synth.functions,
                               {configs[0]}, backend, &cache);
    REQUIRE(single.reports.size() == 1);
    const auto records =
        scan(synth.corpus, targets, configs[0], backend, &cache, &synth.labels);
    EvaluationReport direct = evaluate(records, synth.labels, synth.functions);
    CHECK(single.reports[0].second.roc_auc == direct.roc_auc);
    CHECK(single.reports[0].second.p_value.p_two_sided == direct.p_value.p_two_sided);
    CHECK(single.overlap.configs.empty());
  }

  SUBCASE("failures carry the config descriptor") {
    MockBackend impossible("mock:impossible");
    impossible.set_max_prompt_chars(0);
    ScanConfig bad = config_for(impossible);
    CHECK_THROWS_WITH_AS(sweep(synth.corpus, targets, synth.labels, synth.functions, {bad},
                               impossible, nullptr),
                         doctest::Contains("config ["), ContextOverflow);
  }

  SUBCASE("zero configs rejected") {
    CHECK_THROWS_AS(sweep(synth.corpus, targets, synth.labels, synth.functions, {}, backend,
                          nullptr),
                    SchemaError);
  }
}

TEST_CASE("labels embed into records and M1 hits file-leading lines") {
  Corpus corpus;
  corpus.add(source_from_string("top.c", "#include <a.h>\nint x;\nint y;\n"));
  MockBackend backend;
  ScanConfig config = config_for(backend);
  config.strategy = Strategy::fixed_lines(4);
  std::vector<LineLabel> labels = {{"top.c", 2, LineClass::vulnerable, std::nullopt}};

  const auto records = scan(corpus, all_targets(corpus), config, backend, nullptr, &labels);
  REQUIRE(records.size() == 3);
  CHECK(records[0].filtered_by == FilterKind::M1);  // line 1 has an empty prefix
  CHECK(records[0].score == -1.0);
  CHECK(records[1].label == LineClass::vulnerable);
  CHECK_FALSE(records[2].label.has_value());
}
