#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fimscan/corpus.hpp"

namespace fimscan {

// Matched pair of brace lines. open_line <= close_line always; pairs from one
// index are properly nested at character level (a single-line `} else {` can
// still make two pairs share a boundary line).
struct BracePair {
  int open_line = 0;
  int close_line = 0;
  int span() const { return close_line - open_line + 1; }
};

struct BraceIndex {
  std::vector<BracePair> pairs;        // in close-completion order
  std::vector<int> unmatched_opens;    // ascending line numbers
  std::vector<int> unmatched_closes;   // ascending line numbers
};

// Stack-matched braces over a lightweight lexical scan that ignores braces
// inside `//`, `/*...*/`, `"..."` and `'...'` regions (backslash escapes
// honoured, including line continuations inside literals; an unterminated
// literal closes at end of line). Preprocessor conditionals are not
// interpreted: imbalance under `#if` ends up in the unmatched lists.
BraceIndex build_brace_index(const SourceFile& file);

// Context-selection strategy. `total` applies to fixed windows; `limit` and
// `fallback_half` to maximum-compound-statement selection.
struct Strategy {
  enum class Kind { fixed, mcs };
  Kind kind = Kind::mcs;
  int total = 300;
  int limit = 500;
  int fallback_half = 150;

  static Strategy fixed_lines(int total);
  static Strategy mcs(int limit = 500, int fallback_half = 150);

  // "fixed:300" / "mcs:500:150" — stable, used as a cache key component.
  std::string descriptor() const;
};

struct ContextWindow {
  std::string file;
  int target_line = 0;
  std::vector<std::string> prefix;  // lines immediately preceding target
  std::vector<std::string> suffix;  // lines immediately following target
  Strategy strategy;
  std::optional<std::pair<int, int>> mcs_span;  // set when a pair was selected
  bool fell_back = false;
};

// All pairs enclosing `line` (inclusive bounds: a line holding the pair's own
// brace counts), sorted by span descending, then open_line ascending.
std::vector<BracePair> enclosing_pairs(const BraceIndex& index, int line);

// Window for a specific enclosing pair: prefix runs from the pair's opening
// line (plus any signature lines found above it), suffix to the closing line.
ContextWindow window_from_pair(const SourceFile& file, int line,
                               const BracePair& pair, const Strategy& strategy);

// Plain clamped window of `half` lines each side; `strategy` and `fell_back`
// recorded as given.
ContextWindow clamped_window(const SourceFile& file, int line, int half,
                             const Strategy& strategy, bool fell_back);

// Largest enclosing compound statement whose span is <= limit; ties broken by
// smallest opening line. Falls back to a fallback_half/fallback_half window
// (fell_back = true) when no enclosing pair fits.
ContextWindow mcs_context(const SourceFile& file, const BraceIndex& index,
                          int line, int limit = 500, int fallback_half = 150);

// floor(total/2) lines each side, clamped at file boundaries. total >= 2.
ContextWindow fixed_context(const SourceFile& file, int line, int total);

// Signature lines included above an MCS opening line: walk upward through at
// most 10 lines while each is non-blank and does not end (after trailing
// whitespace) with ';', '}' or '{'. Returns the first included line number,
// or open_line if none.
int signature_start(const SourceFile& file, int open_line);

}  // namespace fimscan
