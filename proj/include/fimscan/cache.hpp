#pragma once

#include <condition_variable>
#include <cstdint>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

#include "fimscan/fim.hpp"

namespace fimscan {

uint64_t fnv1a64(std::string_view data);
uint32_t fnv1a32(std::string_view data);
std::string hex64(uint64_t value);

// Cache key: everything the judgment depends on. Score functions and filters
// are applied downstream and deliberately excluded so runs that differ only
// in scoring share judgments.
std::string make_cache_key(uint64_t file_content_hash, int line,
                           const std::string& strategy_descriptor,
                           const std::string& backend_id);

// Persistent judgment store: one on-disk file of length-prefixed records,
// each carrying a checksum. Entries failing the checksum are dropped on load
// and recomputed on demand (CacheCorrupt handling); the rewritten record
// supersedes the damaged one. get_or_compute guarantees at most one compute
// per key per cache lifetime, including under concurrent callers.
class JudgmentCache {
 public:
  explicit JudgmentCache(std::string path);

  ModelJudgment get_or_compute(const std::string& key,
                               const std::function<ModelJudgment()>& compute);

  bool contains(const std::string& key) const;
  size_t size() const;
  size_t corrupt_dropped() const { return corrupt_dropped_; }
  const std::string& path() const { return path_; }

 private:
  void load();
  void append_locked(const std::string& key, const ModelJudgment& judgment);

  std::string path_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::unordered_map<std::string, ModelJudgment> entries_;
  std::unordered_set<std::string> in_flight_;
  std::ofstream out_;
  size_t corrupt_dropped_ = 0;
};

}  // namespace fimscan
