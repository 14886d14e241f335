#include "fimscan/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace fimscan {

namespace fs = std::filesystem;
using nlohmann::json;

const std::string& SourceFile::line(int no) const {
  if (no < 1 || no > line_count())
    throw LineOutOfRange(path + ": line " + std::to_string(no) + " out of range (1.." +
                         std::to_string(line_count()) + ")");
  return lines[static_cast<size_t>(no - 1)];
}

std::string SourceFile::joined() const {
  std::string out;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

std::string SourceFile::serialized() const {
  if (lines.empty()) return {};
  return joined() + "\n";
}

const char* to_string(LineClass c) {
  switch (c) {
    case LineClass::vulnerable: return "vulnerable";
    case LineClass::non_vulnerable: return "non_vulnerable";
    case LineClass::patched: return "patched";
  }
  return "non_vulnerable";
}

LineClass line_class_from_string(const std::string& s) {
  if (s == "vulnerable") return LineClass::vulnerable;
  if (s == "non_vulnerable") return LineClass::non_vulnerable;
  if (s == "patched") return LineClass::patched;
  throw SchemaError("unknown label \"" + s + "\"");
}

void Corpus::add(SourceFile file) {
  std::string path = file.path;
  files_[path] = std::move(file);
}

const SourceFile* Corpus::find(const std::string& path) const {
  auto it = files_.find(path);
  return it == files_.end() ? nullptr : &it->second;
}

const SourceFile& Corpus::at(const std::string& path) const {
  const SourceFile* f = find(path);
  if (!f) throw UnknownFile("no such file in corpus: " + path);
  return *f;
}

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

namespace {

// Replace invalid UTF-8 byte sequences with U+FFFD. Keeps valid multi-byte
// sequences intact so the round trip over well-formed files is byte identity.
std::string sanitize_utf8(std::string_view in, bool& replaced) {
  static const char kReplacement[] = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(in.size());
  size_t i = 0;
  const size_t n = in.size();
  auto cont = [&](size_t k) {
    return k < n && (static_cast<unsigned char>(in[k]) & 0xC0) == 0x80;
  };
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(in[i]);
    if (c < 0x80) {
      out += static_cast<char>(c);
      ++i;
      continue;
    }
    if (c >= 0xC2 && c <= 0xDF && cont(i + 1)) {
      out.append(in.substr(i, 2));
      i += 2;
      continue;
    }
    if (c >= 0xE0 && c <= 0xEF && cont(i + 1) && cont(i + 2)) {
      const unsigned char c1 = static_cast<unsigned char>(in[i + 1]);
      const bool overlong = (c == 0xE0 && c1 < 0xA0);
      const bool surrogate = (c == 0xED && c1 > 0x9F);
      if (!overlong && !surrogate) {
        out.append(in.substr(i, 3));
        i += 3;
        continue;
      }
    }
    if (c >= 0xF0 && c <= 0xF4 && cont(i + 1) && cont(i + 2) && cont(i + 3)) {
      const unsigned char c1 = static_cast<unsigned char>(in[i + 1]);
      const bool overlong = (c == 0xF0 && c1 < 0x90);
      const bool too_big = (c == 0xF4 && c1 > 0x8F);
      if (!overlong && !too_big) {
        out.append(in.substr(i, 4));
        i += 4;
        continue;
      }
    }
    out.append(kReplacement, 3);
    replaced = true;
    ++i;
  }
  return out;
}

}  // namespace

SourceFile source_from_string(std::string path, std::string_view content) {
  SourceFile file;
  file.path = std::move(path);
  std::string text = sanitize_utf8(content, file.had_invalid_bytes);

  size_t start = 0;
  while (start <= text.size()) {
    const size_t nl = text.find('\n', start);
    if (nl == std::string::npos) {
      // last segment; a trailing newline leaves an empty segment we drop
      if (start < text.size()) file.lines.push_back(text.substr(start));
      break;
    }
    file.lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return file;
}

SourceFile load_source(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw FileUnreadable("cannot open " + path + ": " + std::strerror(errno));
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad())
    throw FileUnreadable("read error on " + path);
  return source_from_string(path, buf.str());
}

Corpus load_corpus_dir(const std::string& root, const std::vector<std::string>& extensions) {
  static const std::vector<std::string> kDefaultExts = {".c",   ".h",   ".cc", ".cpp",
                                                        ".hpp", ".cxx", ".hxx", ".inl"};
  const std::vector<std::string>& exts = extensions.empty() ? kDefaultExts : extensions;
  fs::path base(root);
  if (!fs::exists(base))
    throw FileUnreadable("corpus root does not exist: " + root);

  Corpus corpus;
  if (fs::is_regular_file(base)) {
    SourceFile f = load_source(base.string());
    f.path = base.filename().string();
    corpus.add(std::move(f));
    return corpus;
  }

  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(base)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (std::find(exts.begin(), exts.end(), ext) == exts.end()) continue;
    paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    SourceFile f = load_source(p.string());
    f.path = fs::relative(p, base).generic_string();
    corpus.add(std::move(f));
  }
  return corpus;
}

namespace {

std::vector<std::pair<size_t, json>> parse_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileUnreadable("cannot open " + path + ": " + std::strerror(errno));
  std::vector<std::pair<size_t, json>> out;
  std::string line;
  size_t index = 0;
  while (std::getline(in, line)) {
    ++index;
    if (is_blank(line)) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw SchemaError(path + " record " + std::to_string(index) + ": invalid JSON");
    out.emplace_back(index, std::move(j));
  }
  return out;
}

LineLabel label_from_json(const json& j, const std::string& path, size_t index) {
  if (!j.is_object() || !j.contains("file") || !j.contains("line") || !j.contains("label"))
    throw SchemaError(path + " record " + std::to_string(index) +
                      ": expected fields file, line, label");
  LineLabel label;
  try {
    label.file = j.at("file").get<std::string>();
    label.line_no = j.at("line").get<int>();
    label.label = line_class_from_string(j.at("label").get<std::string>());
    if (j.contains("function_id") && !j.at("function_id").is_null())
      label.function_id = j.at("function_id").get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError(path + " record " + std::to_string(index) + ": " + e.what());
  }
  return label;
}

}  // namespace

std::vector<LineLabel> load_labels(const std::string& path, const Corpus& corpus) {
  std::vector<LineLabel> labels;
  std::set<std::pair<std::string, int>> seen;
  for (const auto& [index, j] : parse_jsonl(path)) {
    LineLabel label = label_from_json(j, path, index);
    const SourceFile* file = corpus.find(label.file);
    if (!file)
      throw UnknownFile(path + " record " + std::to_string(index) + ": unknown file " +
                        label.file);
    if (label.line_no < 1 || label.line_no > file->line_count())
      throw LineOutOfRange(path + " record " + std::to_string(index) + ": line " +
                           std::to_string(label.line_no) + " out of range for " + label.file +
                           " (" + std::to_string(file->line_count()) + " lines)");
    if (!seen.insert({label.file, label.line_no}).second)
      throw DuplicateLabel(path + " record " + std::to_string(index) + ": duplicate label for " +
                           label.file + ":" + std::to_string(label.line_no));
    labels.push_back(std::move(label));
  }
  return labels;
}

std::vector<LineLabel> load_labels_unchecked(const std::string& path) {
  std::vector<LineLabel> labels;
  std::set<std::pair<std::string, int>> seen;
  for (const auto& [index, j] : parse_jsonl(path)) {
    LineLabel label = label_from_json(j, path, index);
    if (!seen.insert({label.file, label.line_no}).second)
      throw DuplicateLabel(path + " record " + std::to_string(index) + ": duplicate label for " +
                           label.file + ":" + std::to_string(label.line_no));
    labels.push_back(std::move(label));
  }
  return labels;
}

std::vector<FunctionSpan> load_functions(const std::string& path, const Corpus& corpus) {
  std::vector<FunctionSpan> spans;
  for (const auto& [index, j] : parse_jsonl(path)) {
    if (!j.is_object() || !j.contains("id") || !j.contains("file") ||
        !j.contains("start_line") || !j.contains("end_line"))
      throw SchemaError(path + " record " + std::to_string(index) +
                        ": expected fields id, file, start_line, end_line");
    FunctionSpan span;
    try {
      span.id = j.at("id").get<std::string>();
      span.file = j.at("file").get<std::string>();
      span.start_line = j.at("start_line").get<int>();
      span.end_line = j.at("end_line").get<int>();
    } catch (const json::exception& e) {
      throw SchemaError(path + " record " + std::to_string(index) + ": " + e.what());
    }
    const SourceFile* file = corpus.find(span.file);
    if (!file)
      throw UnknownFile(path + " record " + std::to_string(index) + ": unknown file " + span.file);
    if (span.start_line < 1 || span.end_line < span.start_line ||
        span.end_line > file->line_count())
      throw LineOutOfRange(path + " record " + std::to_string(index) + ": span " +
                           std::to_string(span.start_line) + ".." +
                           std::to_string(span.end_line) + " invalid for " + span.file);
    spans.push_back(std::move(span));
  }

  // nesting allowed, partial overlap rejected
  for (size_t i = 0; i < spans.size(); ++i) {
    for (size_t k = i + 1; k < spans.size(); ++k) {
      const auto& a = spans[i];
      const auto& b = spans[k];
      if (a.file != b.file) continue;
      const bool disjoint = a.end_line < b.start_line || b.end_line < a.start_line;
      const bool a_in_b = b.start_line <= a.start_line && a.end_line <= b.end_line;
      const bool b_in_a = a.start_line <= b.start_line && b.end_line <= a.end_line;
      if (!disjoint && !a_in_b && !b_in_a)
        throw SchemaError(path + ": spans " + a.id + " and " + b.id + " partially overlap in " +
                          a.file);
    }
  }
  return spans;
}

std::vector<LineLabel> sample_negatives(const Corpus& corpus,
                                        const std::vector<LineLabel>& labels, int n,
                                        uint64_t seed) {
  if (n < 0) throw SchemaError("sample_negatives: n must be >= 0");
  if (n == 0) return {};

  std::unordered_map<std::string, std::unordered_set<int>> labelled;
  for (const auto& l : labels) labelled[l.file].insert(l.line_no);

  std::vector<std::pair<const std::string*, int>> eligible;
  for (const auto& [path, file] : corpus.files()) {
    const auto it = labelled.find(path);
    for (int no = 1; no <= file.line_count(); ++no) {
      if (is_blank(file.line(no))) continue;
      if (it != labelled.end() && it->second.count(no)) continue;
      eligible.emplace_back(&path, no);
    }
  }
  if (eligible.size() < static_cast<size_t>(n))
    throw InsufficientPopulation("need " + std::to_string(n) + " unlabelled non-blank lines, have " +
                                 std::to_string(eligible.size()));

  // partial Fisher-Yates over the (path-sorted, line-ordered) eligible list
  std::mt19937_64 rng(seed);
  const size_t total = eligible.size();
  for (size_t i = 0; i < static_cast<size_t>(n); ++i) {
    const size_t j = i + static_cast<size_t>(detail::bounded(rng, total - i));
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(static_cast<size_t>(n));
  std::sort(eligible.begin(), eligible.end(),
            [](const auto& a, const auto& b) {
              return std::tie(*a.first, a.second) < std::tie(*b.first, b.second);
            });

  std::vector<LineLabel> out;
  out.reserve(eligible.size());
  for (const auto& [path, no] : eligible)
    out.push_back(LineLabel{*path, no, LineClass::non_vulnerable, std::nullopt});
  return out;
}

void write_labels(const std::string& path, const std::vector<LineLabel>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileUnreadable("cannot write " + path);
  for (const auto& l : labels) {
    json j;
    j["file"] = l.file;
    j["line"] = l.line_no;
    j["label"] = to_string(l.label);
    if (l.function_id) j["function_id"] = *l.function_id;
    out << j.dump() << '\n';
  }
}

}  // namespace fimscan
