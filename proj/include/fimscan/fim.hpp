#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fimscan/context.hpp"
#include "fimscan/errors.hpp"

namespace fimscan {

// Model-specific sentinel tokens separating prefix, suffix and generation
// start in a fill-in-the-middle prompt.
struct SentinelConfig {
  std::string prefix_token = "<PRE>";
  std::string suffix_token = "<SUF>";
  std::string middle_token = "<MID>";
  std::vector<std::string> stop_sequences = {"\n"};
  std::string backend_id = "default";
  int max_new_tokens = 256;

  void validate() const;  // tokens non-empty and mutually distinct
};

struct FimPrompt {
  std::string body;          // prefix_token + prefix + suffix_token + suffix + middle_token
  std::string ground_truth;  // the masked line, withheld from the body
};

// Backend reply: greedy single-line completion plus teacher-forced
// cross-entropy per ground-truth token (natural-log units, backend tokenizer).
struct ModelJudgment {
  std::string generated;
  std::vector<double> token_losses;
  bool truncated = false;
  std::string backend_id;
};

// Deterministic prompt assembly. Every prefix line is newline-terminated in
// the body (the masked line's own newline belongs to the generation); suffix
// lines are newline-separated with no leading newline after the sentinel.
FimPrompt assemble_prompt(const ContextWindow& ctx, const std::string& ground_truth,
                          const SentinelConfig& sentinels);

// Behavioural contract for judgment sources. Implementations must be
// deterministic and accept concurrent judge() calls.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual ModelJudgment judge(const FimPrompt& prompt) = 0;
  virtual std::string id() const = 0;
};

// Scriptable deterministic backend. Lines listed in the table get the scripted
// reply; a line whose ground truth contains a rule marker gets a mangled
// generation; everything else reconstructs perfectly (generated == ground
// truth, zero loss).
class MockBackend : public Backend {
 public:
  struct Entry {
    std::string generated;
    std::vector<double> token_losses;
  };
  struct Rule {
    std::string contains;                        // marker substring
    std::string generated_prefix = "__mock__ ";  // generated = prefix + ground truth
    std::vector<double> token_losses = {2.0, 2.0};
  };

  explicit MockBackend(std::string id = "mock:perfect") : id_(std::move(id)) {}

  void set_entry(std::string ground_truth, Entry entry);
  void add_rule(Rule rule);
  // When set, prompts whose body exceeds this many bytes raise ContextOverflow.
  void set_max_prompt_chars(size_t n) { max_prompt_chars_ = n; }

  ModelJudgment judge(const FimPrompt& prompt) override;
  std::string id() const override { return id_; }

  uint64_t calls() const { return calls_.load(); }
  uint64_t overflows() const { return overflows_.load(); }

 private:
  std::string id_;
  std::unordered_map<std::string, Entry> table_;
  std::vector<Rule> rules_;
  std::optional<size_t> max_prompt_chars_;
  std::atomic<uint64_t> calls_{0};
  std::atomic<uint64_t> overflows_{0};
};

// Mock table file: {"entries": {line: {"generated":..., "token_losses":[...]}},
//                   "rules": [{"contains":..., "generated_prefix":..., "token_losses":[...]}]}
std::unique_ptr<MockBackend> mock_backend_from_file(const std::string& path);

// Truncate at the first occurrence of any stop sequence.
std::string apply_stop_sequences(std::string text, const std::vector<std::string>& stops);

}  // namespace fimscan
