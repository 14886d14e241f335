#include "fimscan/scoring.hpp"

#include <fstream>
#include <numeric>

#include <json.hpp>

namespace fimscan {

using nlohmann::json;

const char* to_string(ScoreFn fn) {
  switch (fn) {
    case ScoreFn::delta1: return "delta1";
    case ScoreFn::delta2: return "delta2";
    case ScoreFn::hybrid: return "hybrid";
  }
  return "hybrid";
}

ScoreFn score_fn_from_string(const std::string& s) {
  if (s == "delta1") return ScoreFn::delta1;
  if (s == "delta2") return ScoreFn::delta2;
  if (s == "hybrid") return ScoreFn::hybrid;
  throw SchemaError("unknown score function \"" + s + "\"");
}

const char* to_string(FilterKind f) { return f == FilterKind::M1 ? "M1" : "M2"; }

double loss_score(const ModelJudgment& judgment) {
  if (judgment.token_losses.empty()) return 0.0;
  double sum = 0.0;
  for (double loss : judgment.token_losses) {
    if (loss < 0.0)
      throw NegativeLoss("backend " + judgment.backend_id +
                         " reported a negative token loss: " + std::to_string(loss));
    sum += loss;
  }
  return sum / static_cast<double>(judgment.token_losses.size());
}

std::string trim_copy(const std::string& s) {
  const char* ws = " \t\n\r\f\v";
  const size_t first = s.find_first_not_of(ws);
  if (first == std::string::npos) return "";
  const size_t last = s.find_last_not_of(ws);
  return s.substr(first, last - first + 1);
}

bool exact_match(const std::string& p, const std::string& q) {
  return trim_copy(p) == trim_copy(q);
}

double hybrid_score(double loss, bool match) { return match ? loss - 1.0 : loss; }

double score_with(ScoreFn fn, const ModelJudgment& judgment, const std::string& p) {
  const bool match = exact_match(p, judgment.generated);
  switch (fn) {
    case ScoreFn::delta1: return loss_score(judgment);
    case ScoreFn::delta2: return match ? -1.0 : 0.0;
    case ScoreFn::hybrid: return hybrid_score(loss_score(judgment), match);
  }
  return 0.0;
}

bool is_comment(const std::string& line) {
  const std::string t = trim_copy(line);
  if (t.rfind("//", 0) == 0) return true;
  if (t.rfind("/*", 0) == 0) return true;
  if (!t.empty() && t[0] == '*') return true;  // block-comment continuation, incl. "*/"
  return false;
}

AnomalyRecord apply_filters(AnomalyRecord record, const ContextWindow& ctx,
                            const std::string& p, const std::string& q,
                            const FilterConfig& filters) {
  if (filters.m1 && ctx.prefix.empty()) {
    record.filtered_by = FilterKind::M1;
    record.score = -1.0;
    return record;
  }
  if (filters.m2 && is_comment(p) && is_comment(q)) {
    record.filtered_by = FilterKind::M2;
    record.score = -1.0;
    return record;
  }
  return record;
}

std::string record_to_jsonl(const AnomalyRecord& record) {
  json j;
  j["file"] = record.file;
  j["line"] = record.line_no;
  if (record.label) j["label"] = to_string(*record.label);
  j["loss"] = record.loss;
  j["exact_match"] = record.exact_match;
  j["score"] = record.score;
  if (record.filtered_by) j["filtered_by"] = to_string(*record.filtered_by);
  j["strategy"] = record.strategy;
  return j.dump();  // nlohmann objects serialize key-sorted: stable byte output
}

AnomalyRecord record_from_jsonl(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw SchemaError("invalid record line: " + line);
  AnomalyRecord r;
  try {
    r.file = j.at("file").get<std::string>();
    r.line_no = j.at("line").get<int>();
    if (j.contains("label")) r.label = line_class_from_string(j.at("label").get<std::string>());
    r.loss = j.at("loss").get<double>();
    r.exact_match = j.at("exact_match").get<bool>();
    r.score = j.at("score").get<double>();
    if (j.contains("filtered_by")) {
      const std::string f = j.at("filtered_by").get<std::string>();
      if (f == "M1")
        r.filtered_by = FilterKind::M1;
      else if (f == "M2")
        r.filtered_by = FilterKind::M2;
      else
        throw SchemaError("unknown filter \"" + f + "\"");
    }
    r.strategy = j.at("strategy").get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("record schema: ") + e.what());
  }
  return r;
}

void write_records(const std::string& path, const std::vector<AnomalyRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileUnreadable("cannot write " + path);
  for (const AnomalyRecord& r : records) out << record_to_jsonl(r) << '\n';
}

std::vector<AnomalyRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileUnreadable("cannot open " + path);
  std::vector<AnomalyRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (is_blank(line)) continue;
    out.push_back(record_from_jsonl(line));
  }
  return out;
}

}  // namespace fimscan
