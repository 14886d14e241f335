#include "fimscan/cache.hpp"

#include <filesystem>

#include <json.hpp>

namespace fimscan {

using nlohmann::json;

uint64_t fnv1a64(std::string_view data) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

uint32_t fnv1a32(std::string_view data) {
  uint32_t h = 2166136261u;
  for (unsigned char c : data) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

std::string hex64(uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

std::string make_cache_key(uint64_t file_content_hash, int line,
                           const std::string& strategy_descriptor,
                           const std::string& backend_id) {
  return hex64(file_content_hash) + "|" + std::to_string(line) + "|" + strategy_descriptor +
         "|" + backend_id;
}

namespace {

constexpr char kMagic[4] = {'F', 'S', 'C', '1'};

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

uint32_t get_u32(const char* p) {
  return static_cast<uint32_t>(static_cast<unsigned char>(p[0])) |
         static_cast<uint32_t>(static_cast<unsigned char>(p[1])) << 8 |
         static_cast<uint32_t>(static_cast<unsigned char>(p[2])) << 16 |
         static_cast<uint32_t>(static_cast<unsigned char>(p[3])) << 24;
}

std::string payload_for(const std::string& key, const ModelJudgment& j) {
  json record;
  record["key"] = key;
  record["generated"] = j.generated;
  record["token_losses"] = j.token_losses;
  record["truncated"] = j.truncated;
  record["backend_id"] = j.backend_id;
  return record.dump();
}

}  // namespace

JudgmentCache::JudgmentCache(std::string path) : path_(std::move(path)) {
  const auto parent = std::filesystem::path(path_).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  load();
  const bool fresh = !std::filesystem::exists(path_) ||
                     std::filesystem::file_size(path_) == 0;
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw FileUnreadable("cannot open cache store " + path_);
  if (fresh) {
    out_.write(kMagic, sizeof kMagic);
    out_.flush();
  }
}

void JudgmentCache::load() {
  std::ifstream in(path_, std::ios::binary);
  if (!in) return;  // no store yet
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.empty()) return;
  if (data.size() < sizeof kMagic ||
      std::string_view(data.data(), 4) != std::string_view(kMagic, 4))
    // refuse rather than append to (or clobber) a file that is not a store
    throw SchemaError(path_ + " is not a judgment cache store");
  size_t at = sizeof kMagic;
  while (at + 8 <= data.size()) {
    const uint32_t len = get_u32(data.data() + at);
    const uint32_t checksum = get_u32(data.data() + at + 4);
    at += 8;
    if (len > data.size() - at) break;  // truncated tail record
    const std::string_view payload(data.data() + at, len);
    at += len;
    if (fnv1a32(payload) != checksum) {
      corrupt_dropped_++;  // damaged entry: treated as missing, recomputed later
      continue;
    }
    json record = json::parse(payload, nullptr, false);
    if (record.is_discarded() || !record.contains("key")) {
      corrupt_dropped_++;
      continue;
    }
    try {
      ModelJudgment j;
      j.generated = record.at("generated").get<std::string>();
      j.token_losses = record.at("token_losses").get<std::vector<double>>();
      j.truncated = record.at("truncated").get<bool>();
      j.backend_id = record.at("backend_id").get<std::string>();
      entries_[record.at("key").get<std::string>()] = std::move(j);  // last valid wins
    } catch (const json::exception&) {
      corrupt_dropped_++;
    }
  }
}

void JudgmentCache::append_locked(const std::string& key, const ModelJudgment& judgment) {
  const std::string payload = payload_for(key, judgment);
  std::string framed;
  framed.reserve(payload.size() + 8);
  put_u32(framed, static_cast<uint32_t>(payload.size()));
  put_u32(framed, fnv1a32(payload));
  framed += payload;
  out_.write(framed.data(), static_cast<std::streamsize>(framed.size()));
  out_.flush();
}

ModelJudgment JudgmentCache::get_or_compute(const std::string& key,
                                            const std::function<ModelJudgment()>& compute) {
  std::unique_lock lock(mu_);
  for (;;) {
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    if (!in_flight_.count(key)) break;
    cv_.wait(lock);  // another caller is computing this key
  }
  in_flight_.insert(key);
  lock.unlock();

  ModelJudgment judgment;
  try {
    judgment = compute();
  } catch (...) {
    lock.lock();
    in_flight_.erase(key);
    cv_.notify_all();
    throw;
  }

  lock.lock();
  entries_[key] = judgment;
  append_locked(key, judgment);
  in_flight_.erase(key);
  cv_.notify_all();
  return judgment;
}

bool JudgmentCache::contains(const std::string& key) const {
  std::lock_guard lock(mu_);
  return entries_.count(key) > 0;
}

size_t JudgmentCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

}  // namespace fimscan
