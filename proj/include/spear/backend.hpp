#pragma once

#include <cstddef>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "spear/cost_model.hpp"
#include "spear/value.hpp"

namespace spear {

struct BackendRequest {
  std::string prompt_text;
  std::size_t max_completion_tokens = 256;
  std::string label;
  double temperature = 0.0;  // live backend only
  // Structured-cache index labels for the inserted prompt (optional).
  std::string cache_view_name;
  std::string cache_param_hash;
  std::string cache_version;
};

struct TokenUsage {
  std::size_t prompt_tokens = 0;
  std::size_t cached_prefix_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct BackendResponse {
  std::string text;
  double confidence = 0.0;  // in [0, 1]
  TokenUsage usage;
  double latency_s = 0.0;
};

// Token-level prefix cache with LRU eviction. Lookup returns the length of
// the longest previously-inserted exact token prefix of the query; capacity
// bounds the total token count of live sequences. Lookup+insert runs as one
// atomic step per request so hit accounting stays exact under concurrency.
class PrefixCache {
 public:
  struct EntryLabels {
    std::string view_name;
    std::string param_hash;
    std::string version;
  };

  explicit PrefixCache(std::size_t capacity_tokens = 262144)
      : capacity_tokens_(capacity_tokens) {}

  // Longest cached prefix of `tokens`, then insert the full sequence
  // (refreshing LRU order). Returns the hit length in tokens.
  std::size_t lookup_insert(const std::vector<std::string>& tokens,
                            const EntryLabels& labels = {});

  // Lookup without insertion; does not refresh LRU order.
  std::size_t peek(const std::vector<std::string>& tokens) const;

  // Structured index: cached sequences matching a view name / parameter
  // hash / refinement version label.
  std::vector<std::size_t> find_by_label(const std::string& view_name,
                                         const std::string& param_hash = "",
                                         const std::string& version = "") const;

  std::size_t live_entries() const;
  std::size_t live_tokens() const;
  std::size_t capacity() const { return capacity_tokens_; }
  void clear();

 private:
  struct Node {
    std::vector<std::string> tokens;
    EntryLabels labels;
    std::uint64_t last_use = 0;
  };

  void evict_locked();

  std::size_t capacity_tokens_;
  std::uint64_t tick_ = 0;
  std::size_t live_tokens_ = 0;
  std::list<Node> entries_;  // unordered; LRU tracked by last_use
  mutable std::mutex mutex_;
};

// Deterministic rules driving the mock backend. All behavior is a pure
// function of the request text and this rule set.
struct MockRuleSet {
  // word -> sentiment weight; negative weights pull toward "negative".
  std::map<std::string, double> lexicon;
  // words that raise the mock's reported confidence for QA-style prompts.
  std::map<std::string, double> hint_lexicon;
  // objective keyword -> directive line emitted by the compose transform.
  std::vector<std::pair<std::string, std::string>> objective_directives;
  std::size_t summary_token_limit = 10;

  static MockRuleSet defaults();
};

struct SentimentResult {
  std::string label;  // "positive" | "negative"
  double confidence = 0.0;
  double score = 0.0;
};

// score = sum of lexicon weights over tokens; label = negative iff score < 0
// (an exact zero ties to positive); confidence = |score| / (1 + |score|).
SentimentResult sentiment_of(const std::string& text, const MockRuleSet& rules);

// Pure text transforms shared by the mock backend and tests.
std::string mock_cleanup(const std::string& text);    // strip urls/@handles, normalize
std::string mock_summarize(const std::string& text, std::size_t limit);  // cleanup + truncate

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string kind() const = 0;

  // Tokenizes the prompt, consults/updates the prefix cache, and produces a
  // response with exact usage accounting.
  virtual BackendResponse complete(const BackendRequest& req, PrefixCache& cache) = 0;
};

// Offline stand-in: recognizes TASK directive prompts (cleanup, summarize,
// sentiment, section, refine, compose) and answers QA-style prompts with a
// deterministic extract. Latency follows the cost model formula.
class MockBackend : public Backend {
 public:
  explicit MockBackend(MockRuleSet rules = MockRuleSet::defaults(), CostModel model = {})
      : rules_(std::move(rules)), model_(model) {}

  std::string kind() const override { return "mock"; }
  BackendResponse complete(const BackendRequest& req, PrefixCache& cache) override;

  const MockRuleSet& rules() const { return rules_; }

 private:
  MockRuleSet rules_;
  CostModel model_;
};

// Replays fixture responses matched by (label, 16-hex prompt digest).
// A request with no matching fixture row raises FixtureMismatch.
class ScriptedBackend : public Backend {
 public:
  struct FixtureRow {
    std::string label;
    std::string prompt_sha;
    std::string text;
    double confidence = 0.5;
    std::optional<TokenUsage> usage;
  };

  explicit ScriptedBackend(std::vector<FixtureRow> rows, CostModel model = {});
  static ScriptedBackend from_jsonl(const std::string& path, CostModel model = {});

  std::string kind() const override { return "scripted"; }
  BackendResponse complete(const BackendRequest& req, PrefixCache& cache) override;

 private:
  std::map<std::pair<std::string, std::string>, FixtureRow> rows_;
  CostModel model_;
};

// OpenAI-compatible chat-completions client over HTTP. Endpoint from
// configuration, API key from SPEAR_API_KEY; transport errors retried with
// exponential backoff (x3). Providers that report no logprobs get a fixed
// 0.5 confidence.
class HttpBackend : public Backend {
 public:
  struct Options {
    std::string base_url;  // e.g. "http://localhost:8000"
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key;
    int max_retries = 3;
    int timeout_s = 60;
    double retry_backoff_s = 0.5;
  };

  explicit HttpBackend(Options options) : options_(std::move(options)) {}

  std::string kind() const override { return "http"; }
  BackendResponse complete(const BackendRequest& req, PrefixCache& cache) override;

  // Exposed for tests: payload construction and response parsing.
  static Value build_payload(const BackendRequest& req, const Options& options);
  static BackendResponse parse_response(const Value& body, std::size_t local_prompt_tokens,
                                        std::size_t local_cached_tokens);

 private:
  Options options_;
};

struct GenEventUsage {
  std::size_t prompt_tokens = 0;
  std::size_t cached_prefix_tokens = 0;
};

// Token-weighted cache hit rate over GEN events:
// sum(cached_prefix_tokens) / sum(prompt_tokens). Raises NoGenEvents on an
// empty event list.
double cache_hit_rate(const std::vector<GenEventUsage>& gen_events);
// Request-weighted variant (mean of per-call ratios), reported alongside.
double cache_hit_rate_request_weighted(const std::vector<GenEventUsage>& gen_events);

}  // namespace spear
