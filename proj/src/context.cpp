#include "fimscan/context.hpp"

#include <algorithm>
#include <cctype>

namespace fimscan {

namespace {

enum class LexState { normal, line_comment, block_comment, dquote, squote };

}  // namespace

BraceIndex build_brace_index(const SourceFile& file) {
  BraceIndex index;
  std::vector<int> stack;
  LexState state = LexState::normal;
  bool escape = false;  // pending backslash inside a quoted literal

  for (int no = 1; no <= file.line_count(); ++no) {
    const std::string& line = file.lines[static_cast<size_t>(no - 1)];
    for (size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      switch (state) {
        case LexState::normal:
          if (c == '/' && i + 1 < line.size() && line[i + 1] == '/') {
            state = LexState::line_comment;
            i = line.size();  // rest of line is comment
          } else if (c == '/' && i + 1 < line.size() && line[i + 1] == '*') {
            state = LexState::block_comment;
            ++i;
          } else if (c == '"') {
            state = LexState::dquote;
          } else if (c == '\'') {
            state = LexState::squote;
          } else if (c == '{') {
            stack.push_back(no);
          } else if (c == '}') {
            if (stack.empty()) {
              index.unmatched_closes.push_back(no);
            } else {
              index.pairs.push_back(BracePair{stack.back(), no});
              stack.pop_back();
            }
          }
          break;
        case LexState::block_comment:
          if (c == '*' && i + 1 < line.size() && line[i + 1] == '/') {
            state = LexState::normal;
            ++i;
          }
          break;
        case LexState::dquote:
        case LexState::squote:
          if (escape) {
            escape = false;
          } else if (c == '\\') {
            escape = true;
          } else if ((state == LexState::dquote && c == '"') ||
                     (state == LexState::squote && c == '\'')) {
            state = LexState::normal;
          }
          break;
        case LexState::line_comment:
          break;  // unreachable within a line; reset below
      }
    }
    // end of line: line comments always end; an unterminated literal closes
    // unless the line ended in a backslash continuation
    if (state == LexState::line_comment) state = LexState::normal;
    if (state == LexState::dquote || state == LexState::squote) {
      if (escape)
        escape = false;  // backslash-newline: literal continues
      else
        state = LexState::normal;
    }
  }

  index.unmatched_opens = stack;
  return index;
}

Strategy Strategy::fixed_lines(int total) {
  Strategy s;
  s.kind = Kind::fixed;
  s.total = total;
  return s;
}

Strategy Strategy::mcs(int limit, int fallback_half) {
  Strategy s;
  s.kind = Kind::mcs;
  s.limit = limit;
  s.fallback_half = fallback_half;
  return s;
}

std::string Strategy::descriptor() const {
  if (kind == Kind::fixed) return "fixed:" + std::to_string(total);
  return "mcs:" + std::to_string(limit) + ":" + std::to_string(fallback_half);
}

std::vector<BracePair> enclosing_pairs(const BraceIndex& index, int line) {
  std::vector<BracePair> out;
  for (const BracePair& p : index.pairs)
    if (p.open_line <= line && line <= p.close_line) out.push_back(p);
  std::sort(out.begin(), out.end(), [](const BracePair& a, const BracePair& b) {
    if (a.span() != b.span()) return a.span() > b.span();
    return a.open_line < b.open_line;
  });
  return out;
}

int signature_start(const SourceFile& file, int open_line) {
  int start = open_line;
  for (int steps = 0; steps < 10; ++steps) {
    const int candidate = start - 1;
    if (candidate < 1) break;
    const std::string& text = file.line(candidate);
    if (is_blank(text)) break;
    size_t end = text.find_last_not_of(" \t\r\f\v");
    const char last = text[end];
    if (last == ';' || last == '}' || last == '{') break;
    start = candidate;
  }
  return start;
}

namespace {

void check_line(const SourceFile& file, int line) {
  if (line < 1 || line > file.line_count())
    throw LineOutOfRange(file.path + ": line " + std::to_string(line) + " out of range (1.." +
                         std::to_string(file.line_count()) + ")");
}

std::vector<std::string> slice(const SourceFile& file, int from, int to) {
  std::vector<std::string> out;
  for (int no = from; no <= to; ++no) out.push_back(file.line(no));
  return out;
}

}  // namespace

ContextWindow window_from_pair(const SourceFile& file, int line, const BracePair& pair,
                               const Strategy& strategy) {
  check_line(file, line);
  ContextWindow w;
  w.file = file.path;
  w.target_line = line;
  w.strategy = strategy;
  w.mcs_span = {pair.open_line, pair.close_line};
  const int first = signature_start(file, pair.open_line);
  w.prefix = slice(file, first, line - 1);
  w.suffix = slice(file, line + 1, pair.close_line);
  return w;
}

ContextWindow clamped_window(const SourceFile& file, int line, int half,
                             const Strategy& strategy, bool fell_back) {
  check_line(file, line);
  ContextWindow w;
  w.file = file.path;
  w.target_line = line;
  w.strategy = strategy;
  w.fell_back = fell_back;
  w.prefix = slice(file, std::max(1, line - half), line - 1);
  w.suffix = slice(file, line + 1, std::min(file.line_count(), line + half));
  return w;
}

ContextWindow mcs_context(const SourceFile& file, const BraceIndex& index, int line, int limit,
                          int fallback_half) {
  check_line(file, line);
  const Strategy strategy = Strategy::mcs(limit, fallback_half);
  for (const BracePair& pair : enclosing_pairs(index, line)) {
    if (pair.span() <= limit) return window_from_pair(file, line, pair, strategy);
  }
  return clamped_window(file, line, fallback_half, strategy, /*fell_back=*/true);
}

ContextWindow fixed_context(const SourceFile& file, int line, int total) {
  if (total < 2)
    throw SchemaError("fixed context total must be >= 2, got " + std::to_string(total));
  return clamped_window(file, line, total / 2, Strategy::fixed_lines(total),
                        /*fell_back=*/false);
}

}  // namespace fimscan
