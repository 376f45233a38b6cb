#include <chrono>
#include <thread>

#include <httplib.h>

#include "spear/backend.hpp"
#include "spear/errors.hpp"
#include "spear/tokenizer.hpp"

namespace spear {

Value HttpBackend::build_payload(const BackendRequest& req, const Options& options) {
  Value messages = Value::array();
  Value msg = Value::object();
  msg["role"] = "user";
  msg["content"] = req.prompt_text;
  messages.push_back(msg);

  Value payload = Value::object();
  payload["model"] = options.model;
  payload["messages"] = messages;
  payload["max_tokens"] = req.max_completion_tokens;
  payload["temperature"] = req.temperature;
  return payload;
}

BackendResponse HttpBackend::parse_response(const Value& body, std::size_t local_prompt_tokens,
                                            std::size_t local_cached_tokens) {
  if (!body.contains("choices") || !body.at("choices").is_array() || body.at("choices").empty()) {
    throw SpearError(Errc::ProtocolError, "completion response has no choices");
  }
  const Value& choice = body.at("choices").at(0);
  if (!choice.contains("message") || !choice.at("message").contains("content")) {
    throw SpearError(Errc::ProtocolError, "completion choice has no message content");
  }

  BackendResponse resp;
  resp.text = choice.at("message").at("content").get<std::string>();
  // Providers rarely expose logprobs on chat completions; without them the
  // confidence signal degrades to a fixed midpoint.
  resp.confidence = 0.5;

  resp.usage.prompt_tokens = local_prompt_tokens;
  resp.usage.cached_prefix_tokens = local_cached_tokens;
  resp.usage.completion_tokens = token_count(resp.text);
  if (body.contains("usage")) {
    const Value& usage = body.at("usage");
    resp.usage.prompt_tokens = usage.value("prompt_tokens", resp.usage.prompt_tokens);
    resp.usage.completion_tokens = usage.value("completion_tokens", resp.usage.completion_tokens);
    if (usage.contains("prompt_tokens_details") &&
        usage.at("prompt_tokens_details").contains("cached_tokens")) {
      resp.usage.cached_prefix_tokens =
          usage.at("prompt_tokens_details").at("cached_tokens").get<std::size_t>();
    }
  }
  if (resp.usage.cached_prefix_tokens > resp.usage.prompt_tokens) {
    resp.usage.cached_prefix_tokens = resp.usage.prompt_tokens;
  }
  return resp;
}

BackendResponse HttpBackend::complete(const BackendRequest& req, PrefixCache& cache) {
  auto tokens = tokenize(req.prompt_text);
  PrefixCache::EntryLabels labels{req.cache_view_name, req.cache_param_hash, req.cache_version};
  std::size_t hit = cache.lookup_insert(tokens, labels);

  Value payload = build_payload(req, options_);
  std::string body = payload.dump();

  httplib::Client client(options_.base_url);
  client.set_connection_timeout(options_.timeout_s, 0);
  client.set_read_timeout(options_.timeout_s, 0);
  httplib::Headers headers;
  if (!options_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + options_.api_key);
  }

  std::string last_error;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    if (attempt > 0) {
      auto backoff = std::chrono::duration<double>(options_.retry_backoff_s * (1 << (attempt - 1)));
      std::this_thread::sleep_for(backoff);
    }
    auto started = std::chrono::steady_clock::now();
    auto result = client.Post(options_.path, headers, body, "application/json");
    if (!result) {
      last_error = httplib::to_string(result.error());
      continue;  // transport error: retry
    }
    if (result->status < 200 || result->status >= 300) {
      throw SpearError(Errc::ProtocolError,
                       "completion endpoint returned HTTP " + std::to_string(result->status));
    }
    Value parsed = Value::parse(result->body, nullptr, false);
    if (parsed.is_discarded()) {
      throw SpearError(Errc::ProtocolError, "completion endpoint returned invalid JSON");
    }
    BackendResponse resp = parse_response(parsed, tokens.size(), hit);
    resp.latency_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return resp;
  }
  throw SpearError(Errc::TransportError,
                   "completion request failed after retries: " + last_error);
}

}  // namespace spear
