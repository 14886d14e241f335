#pragma once

#include <chrono>
#include <string>

#include "fimscan/fim.hpp"

namespace fimscan {

// Remote inference service speaking the documented wire protocol.
//
// Request  (POST, JSON): {prompt, ground_truth, stop, max_new_tokens, temperature: 0}
// Response (200,  JSON): {generated, token_losses, truncated}
// Error    (JSON body) : {error: code, message}; code "context_overflow" maps
//                        to ContextOverflow, everything else to BackendUnavailable.
//
// One retry with exponential backoff on transport failure, then
// BackendUnavailable. Replies that fail to parse raise BackendMalformedReply.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(std::string url, const SentinelConfig& sentinels,
                       std::chrono::milliseconds initial_backoff = std::chrono::milliseconds(200));

  ModelJudgment judge(const FimPrompt& prompt) override;
  std::string id() const override { return url_; }

 private:
  std::string url_;   // scheme://host[:port]
  std::string base_;  // scheme://host[:port]
  std::string path_;  // request path, default "/judge"
  std::vector<std::string> stop_;
  int max_new_tokens_;
  std::chrono::milliseconds backoff_;
};

}  // namespace fimscan
