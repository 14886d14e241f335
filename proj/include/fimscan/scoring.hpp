#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fimscan/context.hpp"
#include "fimscan/corpus.hpp"
#include "fimscan/fim.hpp"

namespace fimscan {

enum class ScoreFn { delta1, delta2, hybrid };

const char* to_string(ScoreFn fn);
ScoreFn score_fn_from_string(const std::string& s);  // throws SchemaError

enum class FilterKind { M1, M2 };

const char* to_string(FilterKind f);

struct FilterConfig {
  bool m1 = true;
  bool m2 = true;
};

// Per-line scan result. `score` is -1 exactly when a filter fired; otherwise
// it is the configured scoring function of (loss, exact_match).
struct AnomalyRecord {
  std::string file;
  int line_no = 0;
  std::optional<LineClass> label;
  double loss = 0.0;        // mean token cross-entropy
  bool exact_match = false; // trimmed string equality of p and q
  double score = 0.0;
  std::optional<FilterKind> filtered_by;
  std::string strategy;     // strategy descriptor of the producing config
};

// Mean of token_losses; empty list scores 0 (blank / unscoreable ground
// truth). Throws NegativeLoss when the backend violated its contract.
double loss_score(const ModelJudgment& judgment);

// Trimmed equality: leading/trailing whitespace ignored, interior significant.
bool exact_match(const std::string& p, const std::string& q);

std::string trim_copy(const std::string& s);

// loss - 1 on exact match, loss otherwise.
double hybrid_score(double loss, bool match);

double score_with(ScoreFn fn, const ModelJudgment& judgment, const std::string& p);

// Single-line comment heuristic: trimmed line starts with "//", "/*" or "*"
// (which also covers a bare "*/"). Lines inside block comments that lack a
// marker are not detected.
bool is_comment(const std::string& line);

// M1: empty prefix window marks the line non-vulnerable (models tend to hallucinate
// an #include at an apparent file start). M2: both ground truth and generation
// are comments. M1 is checked first; a firing filter floors the score at -1 so
// the line stays in classification denominators but ranks last. Either filter
// can be disabled for ablations.
AnomalyRecord apply_filters(AnomalyRecord record, const ContextWindow& ctx,
                            const std::string& p, const std::string& q,
                            const FilterConfig& filters = {});

// JSONL serialization with stable field order (byte-identical reruns).
std::string record_to_jsonl(const AnomalyRecord& record);
AnomalyRecord record_from_jsonl(const std::string& line);  // throws SchemaError
void write_records(const std::string& path, const std::vector<AnomalyRecord>& records);
std::vector<AnomalyRecord> read_records(const std::string& path);

}  // namespace fimscan
