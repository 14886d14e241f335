#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fimscan/errors.hpp"

namespace fimscan {

// One source file, newline-split. Line numbers are 1-based throughout.
struct SourceFile {
  std::string path;
  std::vector<std::string> lines;  // newline-stripped
  bool had_invalid_bytes = false;  // set when undecodable bytes were replaced

  int line_count() const { return static_cast<int>(lines.size()); }

  const std::string& line(int no) const;  // throws LineOutOfRange

  // join(lines, "\n"), no trailing newline.
  std::string joined() const;

  // Canonical text form: joined() plus a trailing newline when non-empty.
  // source_from_string(serialized()) reproduces the line sequence exactly.
  std::string serialized() const;
};

enum class LineClass { vulnerable, non_vulnerable, patched };

const char* to_string(LineClass c);
LineClass line_class_from_string(const std::string& s);  // throws SchemaError

struct LineLabel {
  std::string file;
  int line_no = 0;
  LineClass label = LineClass::non_vulnerable;
  std::optional<std::string> function_id;
};

struct FunctionSpan {
  std::string id;
  std::string file;
  int start_line = 1;
  int end_line = 1;
};

// Set of source files keyed by path, iterated in sorted path order.
class Corpus {
 public:
  void add(SourceFile file);
  const SourceFile* find(const std::string& path) const;
  const SourceFile& at(const std::string& path) const;  // throws UnknownFile
  const std::map<std::string, SourceFile>& files() const { return files_; }
  size_t size() const { return files_.size(); }
  bool empty() const { return files_.empty(); }

 private:
  std::map<std::string, SourceFile> files_;
};

// True when the line contains only whitespace. Blank lines carry no tokens to
// score and are excluded from negative sampling and scanning.
bool is_blank(const std::string& line);

// Build a SourceFile from in-memory content: sanitize invalid UTF-8 byte
// sequences to U+FFFD (flagging the file), split on '\n', and drop the
// phantom empty element a trailing newline would otherwise produce.
SourceFile source_from_string(std::string path, std::string_view content);

// Read and split one file. Throws FileUnreadable with path and cause.
SourceFile load_source(const std::string& path);

// Load every file under `root` whose extension looks like C/C++ source
// (when `extensions` is empty a built-in list is used). Paths in the corpus
// are relative to `root`.
Corpus load_corpus_dir(const std::string& root,
                       const std::vector<std::string>& extensions = {});

// Parse a JSONL label dataset and validate each record against the corpus:
// the file must exist, the line must be in range and (file, line) must be
// unique. Errors name the offending record index.
std::vector<LineLabel> load_labels(const std::string& path, const Corpus& corpus);

// Same parse without corpus validation (used when only the record stream is
// available, e.g. `evaluate` over a saved scan). Duplicates still rejected.
std::vector<LineLabel> load_labels_unchecked(const std::string& path);

// Parse a JSONL function-span dataset. Spans are validated against the
// corpus; spans within one file may nest but must not partially overlap.
std::vector<FunctionSpan> load_functions(const std::string& path, const Corpus& corpus);

// Seeded sampling of `n` unlabelled, non-blank lines as non_vulnerable
// labels. Deterministic for identical (corpus, labels, n, seed); output
// sorted by (file, line). Throws InsufficientPopulation.
std::vector<LineLabel> sample_negatives(const Corpus& corpus,
                                        const std::vector<LineLabel>& labels,
                                        int n, uint64_t seed);

// Serialize labels back to JSONL (stable field order).
void write_labels(const std::string& path, const std::vector<LineLabel>& labels);

namespace detail {
// Uniform draw in [0, k) by rejection; bit-exact across platforms given the
// mt19937_64 stream, unlike std::uniform_int_distribution.
template <typename Rng>
uint64_t bounded(Rng& rng, uint64_t k) {
  const uint64_t threshold = (-k) % k;  // 2^64 mod k
  for (;;) {
    const uint64_t x = rng();
    if (x >= threshold) return x % k;
  }
}
}  // namespace detail

}  // namespace fimscan
