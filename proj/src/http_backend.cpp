#include "fimscan/http_backend.hpp"

#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace fimscan {

using nlohmann::json;

HttpBackend::HttpBackend(std::string url, const SentinelConfig& sentinels,
                         std::chrono::milliseconds initial_backoff)
    : url_(std::move(url)),
      stop_(sentinels.stop_sequences),
      max_new_tokens_(sentinels.max_new_tokens),
      backoff_(initial_backoff) {
  // split scheme://host[:port] from the request path
  const size_t scheme = url_.find("://");
  if (scheme == std::string::npos)
    throw SchemaError("backend url must start with http:// or https://: " + url_);
  const size_t slash = url_.find('/', scheme + 3);
  if (slash == std::string::npos) {
    base_ = url_;
    path_ = "/judge";
  } else {
    base_ = url_.substr(0, slash);
    path_ = url_.substr(slash);
  }
}

ModelJudgment HttpBackend::judge(const FimPrompt& prompt) {
  json request;
  request["prompt"] = prompt.body;
  request["ground_truth"] = prompt.ground_truth;
  request["stop"] = stop_;
  request["max_new_tokens"] = max_new_tokens_;
  request["temperature"] = 0;
  const std::string body = request.dump();

  httplib::Result res;
  std::chrono::milliseconds backoff = backoff_;
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt) std::this_thread::sleep_for(backoff), backoff *= 2;
    httplib::Client client(base_);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(300, 0);
    res = client.Post(path_, body, "application/json");
    if (res) break;
  }
  if (!res)
    throw BackendUnavailable("backend " + url_ + " unreachable: " +
                             httplib::to_string(res.error()));

  json reply = json::parse(res->body, nullptr, false);
  if (res->status != 200) {
    if (reply.is_object() && reply.contains("error")) {
      const std::string code = reply.at("error").is_string()
                                   ? reply.at("error").get<std::string>()
                                   : reply.at("error").dump();
      const std::string message =
          reply.contains("message") ? reply.at("message").dump() : "";
      if (code == "context_overflow")
        throw ContextOverflow("backend " + url_ + ": " + message);
      throw BackendUnavailable("backend " + url_ + " error " + code + ": " + message);
    }
    throw BackendMalformedReply("backend " + url_ + " returned status " +
                                std::to_string(res->status) + " without an error body");
  }

  if (reply.is_discarded() || !reply.is_object())
    throw BackendMalformedReply("backend " + url_ + " reply is not a JSON object");
  try {
    ModelJudgment judgment;
    judgment.generated = reply.at("generated").get<std::string>();
    judgment.token_losses = reply.at("token_losses").get<std::vector<double>>();
    judgment.truncated =
        reply.contains("truncated") ? reply.at("truncated").get<bool>() : false;
    judgment.backend_id = url_;
    judgment.generated = apply_stop_sequences(std::move(judgment.generated), stop_);
    return judgment;
  } catch (const json::exception& e) {
    throw BackendMalformedReply("backend " + url_ + " reply schema: " + e.what());
  }
}

}  // namespace fimscan
