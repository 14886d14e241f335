#include "fimscan/fim.hpp"

#include <fstream>

#include <json.hpp>

namespace fimscan {

using nlohmann::json;

void SentinelConfig::validate() const {
  if (prefix_token.empty() || suffix_token.empty() || middle_token.empty())
    throw SchemaError("sentinel tokens must be non-empty");
  if (prefix_token == suffix_token || prefix_token == middle_token ||
      suffix_token == middle_token)
    throw SchemaError("sentinel tokens must be mutually distinct");
}

FimPrompt assemble_prompt(const ContextWindow& ctx, const std::string& ground_truth,
                          const SentinelConfig& sentinels) {
  FimPrompt prompt;
  prompt.ground_truth = ground_truth;
  std::string& body = prompt.body;
  body += sentinels.prefix_token;
  for (const std::string& line : ctx.prefix) {
    body += line;
    body += '\n';
  }
  body += sentinels.suffix_token;
  for (size_t i = 0; i < ctx.suffix.size(); ++i) {
    if (i) body += '\n';
    body += ctx.suffix[i];
  }
  body += sentinels.middle_token;
  return prompt;
}

std::string apply_stop_sequences(std::string text, const std::vector<std::string>& stops) {
  size_t cut = text.size();
  for (const std::string& stop : stops) {
    if (stop.empty()) continue;
    const size_t at = text.find(stop);
    if (at != std::string::npos && at < cut) cut = at;
  }
  text.resize(cut);
  return text;
}

void MockBackend::set_entry(std::string ground_truth, Entry entry) {
  table_[std::move(ground_truth)] = std::move(entry);
}

void MockBackend::add_rule(Rule rule) { rules_.push_back(std::move(rule)); }

ModelJudgment MockBackend::judge(const FimPrompt& prompt) {
  if (max_prompt_chars_ && prompt.body.size() > *max_prompt_chars_) {
    overflows_.fetch_add(1, std::memory_order_relaxed);
    throw ContextOverflow("mock backend: prompt of " + std::to_string(prompt.body.size()) +
                          " bytes exceeds limit of " + std::to_string(*max_prompt_chars_));
  }
  calls_.fetch_add(1, std::memory_order_relaxed);

  ModelJudgment j;
  j.backend_id = id_;
  if (auto it = table_.find(prompt.ground_truth); it != table_.end()) {
    j.generated = it->second.generated;
    j.token_losses = it->second.token_losses;
  } else {
    const Rule* hit = nullptr;
    for (const Rule& rule : rules_) {
      if (!rule.contains.empty() &&
          prompt.ground_truth.find(rule.contains) != std::string::npos) {
        hit = &rule;
        break;
      }
    }
    if (hit) {
      j.generated = hit->generated_prefix + prompt.ground_truth;
      j.token_losses = hit->token_losses;
    } else {
      j.generated = prompt.ground_truth;  // perfect reconstruction
      j.token_losses = {0.0};
    }
  }
  j.generated = apply_stop_sequences(std::move(j.generated), {"\n"});
  return j;
}

std::unique_ptr<MockBackend> mock_backend_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileUnreadable("cannot open mock table " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw SchemaError("mock table " + path + ": invalid JSON");

  auto backend = std::make_unique<MockBackend>("mock:" + path);
  try {
    if (j.contains("entries")) {
      for (const auto& [line, entry] : j.at("entries").items()) {
        MockBackend::Entry e;
        e.generated = entry.at("generated").get<std::string>();
        e.token_losses = entry.at("token_losses").get<std::vector<double>>();
        backend->set_entry(line, std::move(e));
      }
    }
    if (j.contains("rules")) {
      for (const auto& r : j.at("rules")) {
        MockBackend::Rule rule;
        rule.contains = r.at("contains").get<std::string>();
        if (r.contains("generated_prefix"))
          rule.generated_prefix = r.at("generated_prefix").get<std::string>();
        if (r.contains("token_losses"))
          rule.token_losses = r.at("token_losses").get<std::vector<double>>();
        backend->add_rule(std::move(rule));
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError("mock table " + path + ": " + e.what());
  }
  return backend;
}

}  // namespace fimscan
