#include <doctest.h>

#include <random>

#include "fimscan/scoring.hpp"

using namespace fimscan;

namespace {

ModelJudgment judgment(std::string generated, std::vector<double> losses) {
  ModelJudgment j;
  j.generated = std::move(generated);
  j.token_losses = std::move(losses);
  j.backend_id = "test";
  return j;
}

ContextWindow window_with_prefix(bool non_empty) {
  ContextWindow w;
  w.file = "a.c";
  w.target_line = non_empty ? 2 : 1;
  if (non_empty) w.prefix = {"int a;"};
  w.suffix = {"int b;"};
  return w;
}

}  // namespace

TEST_CASE("loss_score is the mean token loss") {
  CHECK(loss_score(judgment("x", {0.2, 0.4, 0.6})) == doctest::Approx(0.4));
  CHECK(loss_score(judgment("x", {})) == 0.0);
  CHECK(loss_score(judgment("x", {0.0, 0.0})) == 0.0);
  CHECK_THROWS_AS(loss_score(judgment("x", {0.1, -0.2})), NegativeLoss);
}

TEST_CASE("exact_match trims outer whitespace only") {
  CHECK(exact_match("i++;", "i++;"));
  CHECK_FALSE(exact_match("if (a >= 0)", "if (a > 0)"));
  CHECK(exact_match("  x = 1;", "x = 1;"));
  CHECK(exact_match("x = 1;\t", "   x = 1;"));
  CHECK_FALSE(exact_match("x  = 1;", "x = 1;"));  // interior whitespace significant
  CHECK(exact_match("   ", ""));
}

TEST_CASE("hybrid score rewards exact matches by a full unit") {
  CHECK(hybrid_score(0.05, true) == doctest::Approx(-0.95));
  CHECK(hybrid_score(0.0, true) == -1.0);
  CHECK(hybrid_score(0.4, false) == 0.4);
}

TEST_CASE("score_with dispatches the three scoring functions") {
  CHECK(score_with(ScoreFn::delta2, judgment("p", {0.5}), "p") == -1.0);
  CHECK(score_with(ScoreFn::delta2, judgment("q", {0.5}), "p") == 0.0);
  CHECK(score_with(ScoreFn::delta1, judgment("q", {0.3}), "p") == doctest::Approx(0.3));
  CHECK(score_with(ScoreFn::hybrid, judgment("q", {0.3}), "p") == doctest::Approx(0.3));
  CHECK(score_with(ScoreFn::hybrid, judgment("p", {0.3}), "p") == doctest::Approx(-0.7));
}

TEST_CASE("score identity: score == loss - indicator(match), score >= -1") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 10000; ++i) {
    const double loss = static_cast<double>(rng() % 10000) / 3333.0;
    const bool match = rng() % 2 == 0;
    const std::string p = "line";
    ModelJudgment j = judgment(match ? "line" : "other", {loss});
    const double score = score_with(ScoreFn::hybrid, j, p);
    CHECK(score == loss - (match ? 1.0 : 0.0));
    CHECK(score >= -1.0);
  }
}

TEST_CASE("is_comment single-line heuristic") {
  CHECK(is_comment("// x"));
  CHECK(is_comment("   // indented"));
  CHECK(is_comment("/* block start"));
  CHECK(is_comment(" * continuation"));
  CHECK(is_comment("*/"));
  CHECK_FALSE(is_comment("int a; // x"));
  CHECK_FALSE(is_comment("free(buf);"));
  CHECK_FALSE(is_comment(""));
}

TEST_CASE("M1 fires on empty prefixes before M2") {
  AnomalyRecord r;
  r.loss = 1.3;
  r.exact_match = false;
  r.score = 1.3;

  SUBCASE("empty prefix marks the line non-vulnerable") {
    AnomalyRecord out = apply_filters(r, window_with_prefix(false), "#include <a.h>",
                                      "#include <stdio.h>", {});
    REQUIRE(out.filtered_by.has_value());
    CHECK(*out.filtered_by == FilterKind::M1);
    CHECK(out.score == -1.0);
    CHECK(out.loss == doctest::Approx(1.3));  // loss preserved for audit
  }

  SUBCASE("comment pair marks the line non-vulnerable") {
    AnomalyRecord out = apply_filters(r, window_with_prefix(true), "// free buffer",
                                      "// free the buffer", {});
    REQUIRE(out.filtered_by.has_value());
    CHECK(*out.filtered_by == FilterKind::M2);
    CHECK(out.score == -1.0);
  }

  SUBCASE("comment ground truth with generated code is kept") {
    AnomalyRecord out = apply_filters(r, window_with_prefix(true), "// note", "free(buf);", {});
    CHECK_FALSE(out.filtered_by.has_value());
    CHECK(out.score == doctest::Approx(1.3));
  }

  SUBCASE("M1 takes precedence when both would fire") {
    AnomalyRecord out = apply_filters(r, window_with_prefix(false), "// a", "// b", {});
    REQUIRE(out.filtered_by.has_value());
    CHECK(*out.filtered_by == FilterKind::M1);
  }

  SUBCASE("disabled filters leave the raw score untouched") {
    FilterConfig off{false, false};
    AnomalyRecord out = apply_filters(r, window_with_prefix(false), "// a", "// b", off);
    CHECK_FALSE(out.filtered_by.has_value());
    CHECK(out.score == doctest::Approx(1.3));
  }
}

TEST_CASE("score floor: -1 exactly iff perfect match or filtered") {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 2000; ++i) {
    const double loss = static_cast<double>(rng() % 1000) / 500.0;
    const bool match = rng() % 2 == 0;
    const bool m1 = rng() % 4 == 0;
    AnomalyRecord r;
    r.loss = loss;
    r.exact_match = match;
    r.score = hybrid_score(loss, match);
    AnomalyRecord out =
        apply_filters(r, window_with_prefix(!m1), match ? "p" : "p2", "p", {});
    CHECK(out.score >= -1.0);
    const bool at_floor = out.score == -1.0;
    const bool expect_floor = out.filtered_by.has_value() || (match && loss == 0.0);
    CHECK(at_floor == expect_floor);
  }
}

TEST_CASE("ranking monotonicity: at equal loss a match never outranks a non-match") {
  for (double loss : {0.0, 0.2, 0.9, 3.7}) {
    CHECK(hybrid_score(loss, true) < hybrid_score(loss, false));
  }
}

TEST_CASE("record JSONL round trip is stable") {
  AnomalyRecord r;
  r.file = "dir/a.c";
  r.line_no = 17;
  r.label = LineClass::patched;
  r.loss = 0.25;
  r.exact_match = true;
  r.score = -0.75;
  r.strategy = "mcs:500:150";

  const std::string line = record_to_jsonl(r);
  CHECK(line == record_to_jsonl(r));  // byte-stable
  AnomalyRecord back = record_from_jsonl(line);
  CHECK(back.file == r.file);
  CHECK(back.line_no == r.line_no);
  CHECK(back.label == r.label);
  CHECK(back.loss == r.loss);
  CHECK(back.exact_match == r.exact_match);
  CHECK(back.score == r.score);
  CHECK_FALSE(back.filtered_by.has_value());
  CHECK(back.strategy == r.strategy);

  r.filtered_by = FilterKind::M2;
  r.score = -1.0;
  AnomalyRecord back2 = record_from_jsonl(record_to_jsonl(r));
  REQUIRE(back2.filtered_by.has_value());
  CHECK(*back2.filtered_by == FilterKind::M2);

  CHECK_THROWS_AS(record_from_jsonl("{not json"), SchemaError);
  CHECK_THROWS_AS(record_from_jsonl(R"({"file":"a.c"})"), SchemaError);
}
