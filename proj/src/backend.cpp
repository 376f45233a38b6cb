#include "spear/backend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "spear/errors.hpp"
#include "spear/hashing.hpp"
#include "spear/tokenizer.hpp"

namespace spear {

// --- prefix cache ------------------------------------------------------------

std::size_t PrefixCache::lookup_insert(const std::vector<std::string>& tokens,
                                       const EntryLabels& labels) {
  std::lock_guard lock(mutex_);
  std::size_t best = 0;
  Node* best_node = nullptr;
  Node* exact = nullptr;
  for (auto& node : entries_) {
    std::size_t lcp = common_prefix_len(tokens, node.tokens);
    if (lcp > best || (lcp == best && best_node == nullptr)) {
      best = lcp;
      best_node = &node;
    }
    if (node.tokens.size() == tokens.size() && lcp == tokens.size()) exact = &node;
  }
  if (best_node != nullptr && best > 0) best_node->last_use = ++tick_;

  if (exact != nullptr) {
    exact->last_use = ++tick_;
    exact->labels = labels;
  } else {
    Node node;
    node.tokens = tokens;
    node.labels = labels;
    node.last_use = ++tick_;
    live_tokens_ += tokens.size();
    entries_.push_back(std::move(node));
    evict_locked();
  }
  return best;
}

std::size_t PrefixCache::peek(const std::vector<std::string>& tokens) const {
  std::lock_guard lock(mutex_);
  std::size_t best = 0;
  for (const auto& node : entries_) {
    best = std::max(best, common_prefix_len(tokens, node.tokens));
  }
  return best;
}

void PrefixCache::evict_locked() {
  while (live_tokens_ > capacity_tokens_ && !entries_.empty()) {
    auto victim = entries_.begin();
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
      if (it->last_use < victim->last_use) victim = it;
    }
    live_tokens_ -= victim->tokens.size();
    entries_.erase(victim);
  }
}

std::vector<std::size_t> PrefixCache::find_by_label(const std::string& view_name,
                                                    const std::string& param_hash,
                                                    const std::string& version) const {
  std::lock_guard lock(mutex_);
  std::vector<std::size_t> lengths;
  for (const auto& node : entries_) {
    bool match = (view_name.empty() || node.labels.view_name == view_name) &&
                 (param_hash.empty() || node.labels.param_hash == param_hash) &&
                 (version.empty() || node.labels.version == version);
    if (match && !(view_name.empty() && param_hash.empty() && version.empty())) {
      lengths.push_back(node.tokens.size());
    }
  }
  std::sort(lengths.begin(), lengths.end());
  return lengths;
}

std::size_t PrefixCache::live_entries() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::size_t PrefixCache::live_tokens() const {
  std::lock_guard lock(mutex_);
  return live_tokens_;
}

void PrefixCache::clear() {
  std::lock_guard lock(mutex_);
  entries_.clear();
  live_tokens_ = 0;
  tick_ = 0;
}

// --- mock rules ---------------------------------------------------------------

MockRuleSet MockRuleSet::defaults() {
  MockRuleSet rules;
  rules.lexicon = {
      {"hate", -1.5},   {"awful", -1.2},  {"worst", -1.5},  {"terrible", -1.3},
      {"sad", -1.0},    {"angry", -1.1},  {"fail", -1.2},   {"failed", -1.2},
      {"boring", -0.8}, {"tired", -0.7},  {"sick", -1.0},   {"ugh", -0.9},
      {"cry", -1.1},    {"stress", -0.9}, {"stressed", -0.9}, {"broke", -0.8},
      {"mess", -0.7},   {"gross", -0.9},  {"annoying", -0.8}, {"dread", -1.0},
      {"love", 1.5},    {"great", 1.2},   {"awesome", 1.4}, {"happy", 1.2},
      {"win", 1.0},     {"won", 1.0},     {"excited", 1.1}, {"fun", 1.0},
      {"nice", 0.8},    {"best", 1.3},    {"cool", 0.8},    {"thanks", 0.7},
      {"sunny", 0.5},   {"party", 0.6},   {"friend", 0.5},  {"proud", 1.0},
      {"enjoy", 0.9},   {"glad", 0.8},    {"amazing", 1.3}, {"relax", 0.7},
  };
  rules.hint_lexicon = {
      {"dosage", 1.0},   {"dose", 1.0},      {"timing", 1.0},   {"administered", 0.8},
      {"hours", 0.6},    {"lab", 0.6},       {"values", 0.4},   {"rationale", 0.8},
      {"risk", 0.6},     {"score", 0.4},     {"specific", 0.5}, {"evidence", 0.6},
      {"medication", 0.4}, {"history", 0.2}, {"indication", 0.8}, {"refined", 0.3},
  };
  rules.objective_directives = {
      {"clean", "TASK: cleanup"},
      {"summar", "TASK: summarize"},
      {"sentiment", "TASK: sentiment"},
      {"school", "FOCUS: school"},
  };
  rules.summary_token_limit = 10;
  return rules;
}

SentimentResult sentiment_of(const std::string& text, const MockRuleSet& rules) {
  double score = 0.0;
  for (const auto& tok : tokenize(text)) {
    auto it = rules.lexicon.find(tok);
    if (it != rules.lexicon.end()) score += it->second;
  }
  SentimentResult result;
  result.score = score;
  result.label = score < 0.0 ? "negative" : "positive";
  double mag = std::fabs(score);
  result.confidence = mag / (1.0 + mag);
  return result;
}

namespace {

bool is_noise_word(const std::string& word) {
  if (word.empty()) return false;
  if (word[0] == '@') return true;
  if (word.rfind("http://", 0) == 0 || word.rfind("https://", 0) == 0) return true;
  if (word.rfind("www.", 0) == 0) return true;
  return false;
}

std::vector<std::string> whitespace_split(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

std::string mock_cleanup(const std::string& text) {
  std::string out;
  for (const auto& word : whitespace_split(text)) {
    if (is_noise_word(word)) continue;
    if (!out.empty()) out.push_back(' ');
    out += lower(word);
  }
  return out;
}

std::string mock_summarize(const std::string& text, std::size_t limit) {
  std::string cleaned = mock_cleanup(text);
  std::vector<std::string> words = whitespace_split(cleaned);
  if (words.size() > limit) words.resize(limit);
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

// --- mock backend ---------------------------------------------------------------

namespace {

struct PromptShape {
  std::vector<std::string> tasks;   // TASK: directives, in order
  std::string payload;              // after INPUT:, or the pre-TASK block
  std::string hint;                 // HINT: line
  std::string signals;              // SIGNALS: line
  std::string objective;            // OBJECTIVE: line
  std::string original;             // after PROMPT: marker
};

std::vector<std::string> split_text_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  lines.push_back(cur);
  return lines;
}

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

PromptShape parse_prompt(const std::string& text) {
  PromptShape shape;
  auto lines = split_text_lines(text);

  std::vector<std::string> pre_task;
  std::vector<std::string> input_lines;
  std::vector<std::string> prompt_lines;
  bool in_input = false, in_prompt = false, seen_task = false;

  for (const auto& line : lines) {
    std::string t = strip(line);
    if (in_prompt) {
      prompt_lines.push_back(line);
      continue;
    }
    if (t.rfind("PROMPT:", 0) == 0) {
      in_prompt = true;
      std::string rest = strip(t.substr(7));
      if (!rest.empty()) prompt_lines.push_back(rest);
      continue;
    }
    if (in_input) {
      input_lines.push_back(line);
      continue;
    }
    if (t.rfind("TASK:", 0) == 0) {
      shape.tasks.push_back(strip(t.substr(5)));
      seen_task = true;
      continue;
    }
    if (t.rfind("INPUT:", 0) == 0) {
      in_input = true;
      continue;
    }
    if (t.rfind("HINT:", 0) == 0) {
      shape.hint = strip(t.substr(5));
      continue;
    }
    if (t.rfind("SIGNALS:", 0) == 0) {
      shape.signals = strip(t.substr(8));
      continue;
    }
    if (t.rfind("OBJECTIVE:", 0) == 0) {
      shape.objective = strip(t.substr(10));
      continue;
    }
    if (!seen_task) pre_task.push_back(line);
  }

  auto join = [](const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out.push_back('\n');
      out += v[i];
    }
    return out;
  };

  if (in_input) {
    shape.payload = join(input_lines);
  } else {
    shape.payload = strip(join(pre_task));
  }
  shape.original = join(prompt_lines);
  return shape;
}

std::string truncate_tokens(const std::string& text, std::size_t max_tokens) {
  if (token_count(text) <= max_tokens) return text;
  std::vector<std::string> words = whitespace_split(text);
  std::string out;
  std::size_t used = 0;
  for (const auto& w : words) {
    std::size_t n = token_count(w);
    if (used + n > max_tokens) break;
    if (!out.empty()) out.push_back(' ');
    out += w;
    used += n;
  }
  return out;
}

double squash(double x) { return x / (1.0 + x); }

}  // namespace

BackendResponse MockBackend::complete(const BackendRequest& req, PrefixCache& cache) {
  auto tokens = tokenize(req.prompt_text);
  PrefixCache::EntryLabels labels{req.cache_view_name, req.cache_param_hash, req.cache_version};
  std::size_t hit = cache.lookup_insert(tokens, labels);

  PromptShape shape = parse_prompt(req.prompt_text);
  std::string text;
  double confidence = 0.0;

  bool is_refine = std::find(shape.tasks.begin(), shape.tasks.end(), "refine") != shape.tasks.end();
  bool is_compose =
      std::find(shape.tasks.begin(), shape.tasks.end(), "compose") != shape.tasks.end();

  if (is_refine) {
    std::string hint;
    for (const std::string& part : {shape.hint, shape.signals, shape.objective}) {
      if (part.empty()) continue;
      if (!hint.empty()) hint += "; ";
      hint += part;
    }
    text = "REFINED: " + hint + " | " + shape.original;
    confidence = 0.9;
  } else if (is_compose) {
    std::string directives;
    std::string objective = lower(shape.objective);
    for (const auto& [keyword, line] : rules_.objective_directives) {
      if (objective.find(keyword) != std::string::npos) {
        directives += "\n" + line;
      }
    }
    text = shape.payload + directives;
    confidence = 0.9;
  } else if (!shape.tasks.empty()) {
    std::string payload = shape.payload;
    std::optional<SentimentResult> sentiment;
    std::vector<std::string> sections;
    bool transformed = false;
    for (const auto& task : shape.tasks) {
      if (task == "cleanup") {
        payload = mock_cleanup(payload);
        transformed = true;
      } else if (task == "summarize") {
        payload = mock_summarize(payload, rules_.summary_token_limit);
        transformed = true;
      } else if (task == "sentiment") {
        sentiment = sentiment_of(payload, rules_);
      } else if (task.rfind("section", 0) == 0) {
        std::string name = strip(task.substr(7));
        std::string body = mock_summarize(payload, rules_.summary_token_limit);
        sections.push_back("## " + name + "\n" + name + " notes: " + body);
      }
    }
    if (!sections.empty()) {
      for (std::size_t i = 0; i < sections.size(); ++i) {
        if (i) text.push_back('\n');
        text += sections[i];
      }
      confidence = 0.95;
    } else {
      if (transformed) text = payload;
      if (sentiment) {
        if (!text.empty()) text.push_back('\n');
        text += "LABEL: " + sentiment->label;
        confidence = sentiment->confidence;
      } else {
        confidence = 0.95;
      }
    }
  } else {
    // QA-style prompt: deterministic extract plus a specificity-driven
    // confidence from the hint lexicon.
    std::string basis = shape.payload.empty() ? req.prompt_text : shape.payload;
    std::string extract = truncate_tokens(mock_cleanup(basis), 24);
    text = "ANSWER[" + sha256_hex16(req.prompt_text).substr(0, 8) + "]: " + extract;
    double score = 0.0;
    for (const auto& tok : tokens) {
      auto it = rules_.hint_lexicon.find(tok);
      if (it != rules_.hint_lexicon.end()) score += it->second;
    }
    confidence = squash(score);
  }

  text = truncate_tokens(text, req.max_completion_tokens);

  BackendResponse resp;
  resp.text = text;
  resp.confidence = confidence;
  resp.usage.prompt_tokens = tokens.size();
  resp.usage.cached_prefix_tokens = hit;
  resp.usage.completion_tokens = token_count(text);
  resp.latency_s = model_.call_cost(tokens.size() - hit, hit, resp.usage.completion_tokens);
  return resp;
}

// --- scripted backend -------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<FixtureRow> rows, CostModel model)
    : model_(model) {
  for (auto& row : rows) {
    rows_[{row.label, row.prompt_sha}] = std::move(row);
  }
}

ScriptedBackend ScriptedBackend::from_jsonl(const std::string& path, CostModel model) {
  std::ifstream in(path);
  if (!in) throw SpearError(Errc::ConfigError, "cannot read fixture file '" + path + "'");
  std::vector<FixtureRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Value v = Value::parse(line);
    FixtureRow row;
    row.label = v.at("label").get<std::string>();
    row.prompt_sha = v.at("prompt_sha").get<std::string>();
    row.text = v.at("text").get<std::string>();
    row.confidence = v.value("confidence", 0.5);
    if (v.contains("usage")) {
      TokenUsage usage;
      usage.prompt_tokens = v.at("usage").value("prompt_tokens", 0);
      usage.cached_prefix_tokens = v.at("usage").value("cached_prefix_tokens", 0);
      usage.completion_tokens = v.at("usage").value("completion_tokens", 0);
      row.usage = usage;
    }
    rows.push_back(std::move(row));
  }
  return ScriptedBackend(std::move(rows), model);
}

BackendResponse ScriptedBackend::complete(const BackendRequest& req, PrefixCache& cache) {
  auto tokens = tokenize(req.prompt_text);
  PrefixCache::EntryLabels labels{req.cache_view_name, req.cache_param_hash, req.cache_version};
  std::size_t hit = cache.lookup_insert(tokens, labels);

  std::string sha = sha256_hex16(req.prompt_text);
  auto it = rows_.find({req.label, sha});
  if (it == rows_.end()) {
    throw SpearError(Errc::FixtureMismatch,
                     "no fixture for label '" + req.label + "' prompt_sha " + sha);
  }
  const FixtureRow& row = it->second;

  BackendResponse resp;
  resp.text = row.text;
  resp.confidence = row.confidence;
  if (row.usage) {
    resp.usage = *row.usage;
  } else {
    resp.usage.prompt_tokens = tokens.size();
    resp.usage.cached_prefix_tokens = hit;
    resp.usage.completion_tokens = token_count(row.text);
  }
  resp.latency_s = model_.call_cost(resp.usage.prompt_tokens - resp.usage.cached_prefix_tokens,
                                    resp.usage.cached_prefix_tokens,
                                    resp.usage.completion_tokens);
  return resp;
}

// --- shared accounting ---------------------------------------------------------------

double cache_hit_rate(const std::vector<GenEventUsage>& gen_events) {
  if (gen_events.empty()) {
    throw SpearError(Errc::NoGenEvents, "report contains no GEN events");
  }
  double prompt = 0.0, cached = 0.0;
  for (const auto& e : gen_events) {
    prompt += static_cast<double>(e.prompt_tokens);
    cached += static_cast<double>(e.cached_prefix_tokens);
  }
  return prompt == 0.0 ? 0.0 : cached / prompt;
}

double cache_hit_rate_request_weighted(const std::vector<GenEventUsage>& gen_events) {
  if (gen_events.empty()) {
    throw SpearError(Errc::NoGenEvents, "report contains no GEN events");
  }
  double sum = 0.0;
  for (const auto& e : gen_events) {
    sum += e.prompt_tokens == 0
               ? 0.0
               : static_cast<double>(e.cached_prefix_tokens) / static_cast<double>(e.prompt_tokens);
  }
  return sum / static_cast<double>(gen_events.size());
}

Value CostModel::to_json() const {
  Value v = Value::object();
  v["base_latency_s"] = base_latency_s;
  v["cached_prompt_token_cost_s"] = cached_prompt_token_cost_s;
  v["completion_token_cost_s"] = completion_token_cost_s;
  v["uncached_prompt_token_cost_s"] = uncached_prompt_token_cost_s;
  return v;
}

CostModel CostModel::from_json(const Value& v) {
  CostModel m;
  m.base_latency_s = v.value("base_latency_s", m.base_latency_s);
  m.cached_prompt_token_cost_s = v.value("cached_prompt_token_cost_s", m.cached_prompt_token_cost_s);
  m.completion_token_cost_s = v.value("completion_token_cost_s", m.completion_token_cost_s);
  m.uncached_prompt_token_cost_s =
      v.value("uncached_prompt_token_cost_s", m.uncached_prompt_token_cost_s);
  return m;
}

}  // namespace spear
