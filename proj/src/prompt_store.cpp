#include "spear/prompt_store.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>

#include "spear/errors.hpp"
#include "spear/hashing.hpp"

namespace spear {

const char* to_string(RefAction a) {
  switch (a) {
    case RefAction::Create: return "CREATE";
    case RefAction::Append: return "APPEND";
    case RefAction::Update: return "UPDATE";
    case RefAction::Merge: return "MERGE";
  }
  return "UPDATE";
}

const char* to_string(RefMode m) {
  switch (m) {
    case RefMode::Manual: return "MANUAL";
    case RefMode::Assisted: return "ASSISTED";
    case RefMode::Auto: return "AUTO";
  }
  return "MANUAL";
}

RefAction ref_action_from_string(const std::string& s) {
  if (s == "CREATE") return RefAction::Create;
  if (s == "APPEND") return RefAction::Append;
  if (s == "UPDATE") return RefAction::Update;
  if (s == "MERGE") return RefAction::Merge;
  throw SpearError(Errc::ValidationError, "unknown ref action '" + s + "'");
}

RefMode ref_mode_from_string(const std::string& s) {
  if (s == "MANUAL") return RefMode::Manual;
  if (s == "ASSISTED") return RefMode::Assisted;
  if (s == "AUTO") return RefMode::Auto;
  throw SpearError(Errc::ValidationError, "unknown ref mode '" + s + "'");
}

// --- serialization ---------------------------------------------------------

Value SubRecord::to_json() const {
  Value v = Value::object();
  v["action"] = action;
  v["payload"] = payload;
  v["refiner_id"] = refiner_id;
  return v;
}

SubRecord SubRecord::from_json(const Value& v) {
  SubRecord r;
  r.action = v.at("action").get<std::string>();
  r.refiner_id = v.at("refiner_id").get<std::string>();
  r.payload = v.at("payload").get<std::string>();
  return r;
}

Value RefLogRecord::to_json() const {
  Value v = Value::object();
  v["action"] = to_string(action);
  v["mode"] = to_string(mode);
  v["refiner_id"] = refiner_id;
  v["trigger"] = trigger.empty() ? Value(nullptr) : Value(trigger);
  v["pre_version"] = pre_version.empty() ? Value(nullptr) : Value(pre_version);
  v["post_version"] = post_version;
  v["metrics_snapshot"] = Value(metrics_snapshot);
  v["payload"] = payload;
  if (!sub_records.empty()) {
    Value subs = Value::array();
    for (const auto& s : sub_records) subs.push_back(s.to_json());
    v["sub_records"] = subs;
  }
  return v;
}

RefLogRecord RefLogRecord::from_json(const Value& v) {
  RefLogRecord r;
  r.action = ref_action_from_string(v.at("action").get<std::string>());
  r.mode = ref_mode_from_string(v.at("mode").get<std::string>());
  r.refiner_id = v.at("refiner_id").get<std::string>();
  if (v.contains("trigger") && !v.at("trigger").is_null()) {
    r.trigger = v.at("trigger").get<std::string>();
  }
  if (v.contains("pre_version") && !v.at("pre_version").is_null()) {
    r.pre_version = v.at("pre_version").get<std::string>();
  }
  r.post_version = v.at("post_version").get<std::string>();
  if (v.contains("metrics_snapshot")) {
    for (auto it = v.at("metrics_snapshot").begin(); it != v.at("metrics_snapshot").end(); ++it) {
      r.metrics_snapshot[it.key()] = it.value().get<double>();
    }
  }
  r.payload = v.at("payload").get<std::string>();
  if (v.contains("sub_records")) {
    for (const auto& s : v.at("sub_records")) r.sub_records.push_back(SubRecord::from_json(s));
  }
  return r;
}

Value PromptEntry::to_json() const {
  Value v = Value::object();
  v["params"] = params;
  Value log = Value::array();
  for (const auto& rec : ref_log) log.push_back(rec.to_json());
  v["ref_log"] = log;
  Value t = Value::array();
  for (const auto& tag : tags) t.push_back(tag);
  v["tags"] = t;
  v["text"] = text;
  v["version"] = version;
  return v;
}

PromptEntry PromptEntry::from_json(const std::string& key, const Value& v) {
  PromptEntry e;
  e.key = key;
  e.text = v.at("text").get<std::string>();
  e.params = v.contains("params") ? v.at("params") : Value::object();
  if (v.contains("tags")) {
    for (const auto& t : v.at("tags")) e.tags.insert(t.get<std::string>());
  }
  e.version = v.at("version").get<std::string>();
  if (v.contains("ref_log")) {
    for (const auto& rec : v.at("ref_log")) e.ref_log.push_back(RefLogRecord::from_json(rec));
  }
  return e;
}

Value ViewDef::to_json() const {
  Value v = Value::object();
  v["body"] = body;
  Value inc = Value::array();
  for (const auto& i : includes) inc.push_back(i);
  v["includes"] = inc;
  Value ps = Value::array();
  for (const auto& p : params) {
    Value pv = Value::object();
    pv["name"] = p.name;
    if (p.default_value) pv["default"] = *p.default_value;
    ps.push_back(pv);
  }
  v["params"] = ps;
  Value t = Value::array();
  for (const auto& tag : tags) t.push_back(tag);
  v["tags"] = t;
  return v;
}

ViewDef ViewDef::from_json(const std::string& name, const Value& v) {
  ViewDef d;
  d.name = name;
  d.body = v.at("body").get<std::string>();
  if (v.contains("includes")) {
    for (const auto& i : v.at("includes")) d.includes.push_back(i.get<std::string>());
  }
  if (v.contains("params")) {
    for (const auto& p : v.at("params")) {
      Param param;
      param.name = p.at("name").get<std::string>();
      if (p.contains("default")) param.default_value = p.at("default");
      d.params.push_back(param);
    }
  }
  if (v.contains("tags")) {
    for (const auto& t : v.at("tags")) d.tags.insert(t.get<std::string>());
  }
  return d;
}

bool DiffReport::empty() const {
  bool all_keep = std::all_of(edits.begin(), edits.end(),
                              [](const Edit& e) { return e.op == Edit::Op::Keep; });
  return all_keep && !divergence_index.has_value() && params_added.empty() &&
         params_removed.empty() && params_changed.empty();
}

Value DiffReport::to_json() const {
  Value v = Value::object();
  v["left_version"] = left_version;
  v["right_version"] = right_version;
  Value ed = Value::array();
  for (const auto& e : edits) {
    Value row = Value::object();
    row["op"] = e.op == Edit::Op::Keep ? "keep" : (e.op == Edit::Op::Insert ? "insert" : "delete");
    row["line"] = e.line;
    ed.push_back(row);
  }
  v["edits"] = ed;
  v["divergence_index"] =
      divergence_index ? Value(static_cast<std::uint64_t>(*divergence_index)) : Value(nullptr);
  v["params_added"] = params_added;
  v["params_removed"] = params_removed;
  v["params_changed"] = params_changed;
  v["empty"] = empty();
  return v;
}

// --- template scanning -------------------------------------------------------

namespace {

bool is_ident_name(const std::string& s) {
  if (s.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_';
  });
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string rtrim(const std::string& s) {
  std::size_t e = s.find_last_not_of(" \t\r\n");
  if (e == std::string::npos) return "";
  return s.substr(0, e + 1);
}

// Splits "view_name a=1 b="x y"" into the name and raw arg pairs.
PlaceholderRef parse_include(const std::string& inner) {
  PlaceholderRef ref;
  ref.kind = PlaceholderRef::Kind::Include;
  std::size_t i = 0;
  while (i < inner.size() && !std::isspace(static_cast<unsigned char>(inner[i]))) ++i;
  ref.name = inner.substr(0, i);
  while (i < inner.size()) {
    while (i < inner.size() && std::isspace(static_cast<unsigned char>(inner[i]))) ++i;
    if (i >= inner.size()) break;
    std::size_t eq = inner.find('=', i);
    if (eq == std::string::npos) {
      throw SpearError(Errc::TemplateSyntax, "malformed include argument in '" + inner + "'");
    }
    std::string arg_name = trim(inner.substr(i, eq - i));
    std::size_t v = eq + 1;
    std::string raw;
    if (v < inner.size() && inner[v] == '"') {
      std::size_t close = v + 1;
      while (close < inner.size() && inner[close] != '"') {
        if (inner[close] == '\\') ++close;
        ++close;
      }
      if (close >= inner.size()) {
        throw SpearError(Errc::TemplateSyntax, "unterminated string in include arguments");
      }
      raw = inner.substr(v, close - v + 1);
      i = close + 1;
    } else {
      std::size_t end = v;
      while (end < inner.size() && !std::isspace(static_cast<unsigned char>(inner[end]))) ++end;
      raw = inner.substr(v, end - v);
      i = end;
    }
    ref.include_args.emplace_back(arg_name, raw);
  }
  return ref;
}

}  // namespace

std::vector<PlaceholderRef> scan_placeholders(const std::string& templ) {
  std::vector<PlaceholderRef> refs;
  std::size_t i = 0;
  while (i < templ.size()) {
    if (templ[i] == '\\' && templ.compare(i + 1, 2, "{{") == 0) {
      i += 3;
      continue;
    }
    if (templ.compare(i, 2, "{{") == 0) {
      std::size_t close = templ.find("}}", i + 2);
      if (close == std::string::npos) {
        throw SpearError(Errc::TemplateSyntax, "unbalanced '{{' at offset " + std::to_string(i));
      }
      std::string inner = trim(templ.substr(i + 2, close - i - 2));
      if (inner.empty()) {
        throw SpearError(Errc::TemplateSyntax, "empty placeholder at offset " + std::to_string(i));
      }
      if (inner[0] == '>') {
        refs.push_back(parse_include(trim(inner.substr(1))));
      } else if (inner.rfind("C.", 0) == 0) {
        PlaceholderRef ref;
        ref.kind = PlaceholderRef::Kind::ContextPath;
        ref.name = inner.substr(2);
        refs.push_back(ref);
      } else {
        if (!is_ident_name(inner)) {
          throw SpearError(Errc::TemplateSyntax, "malformed placeholder '" + inner + "'");
        }
        PlaceholderRef ref;
        ref.kind = PlaceholderRef::Kind::Param;
        ref.name = inner;
        refs.push_back(ref);
      }
      i = close + 2;
      continue;
    }
    ++i;
  }
  return refs;
}

// --- store -------------------------------------------------------------------

PromptStore::PromptStore(const PromptStore& other) {
  std::shared_lock lock(other.mutex_);
  entries_ = other.entries_;
  views_ = other.views_;
}

PromptStore& PromptStore::operator=(const PromptStore& other) {
  if (this == &other) return *this;
  std::map<std::string, PromptEntry> entries;
  std::map<std::string, ViewDef> views;
  {
    std::shared_lock lock(other.mutex_);
    entries = other.entries_;
    views = other.views_;
  }
  std::unique_lock lock(mutex_);
  entries_ = std::move(entries);
  views_ = std::move(views);
  return *this;
}

void PromptStore::check_template_syntax(const std::string& text) const {
  scan_placeholders(text);  // throws TemplateSyntaxError on malformed input
}

const PromptEntry& PromptStore::append_record(PromptEntry& entry, RefLogRecord record) {
  entry.ref_log.push_back(std::move(record));
  return entry;
}

const PromptEntry& PromptStore::create_entry(const std::string& key, const std::string& text,
                                             const Value& params, RefMode mode, bool overwrite,
                                             const std::string& refiner_id,
                                             const std::map<std::string, double>& metrics) {
  if (key.empty()) throw SpearError(Errc::ValidationError, "entry key must be nonempty");
  check_template_syntax(text);
  Value p = params.is_null() ? Value::object() : params;

  std::unique_lock lock(mutex_);
  auto it = entries_.find(key);
  if (it != entries_.end()) {
    if (!overwrite) throw SpearError(Errc::DuplicateKey, "entry '" + key + "' already exists");
    // Overwrite is a forward UPDATE carrying the full (text, params) body.
    PromptEntry& entry = it->second;
    RefLogRecord rec;
    rec.action = RefAction::Update;
    rec.mode = mode;
    rec.refiner_id = refiner_id.empty() ? "literal" : refiner_id;
    rec.pre_version = entry.version;
    rec.payload = canonical_body(text, p);
    rec.metrics_snapshot = metrics;
    entry.text = text;
    entry.params = p;
    entry.version = version_hash(text, p);
    rec.post_version = entry.version;
    return append_record(entry, std::move(rec));
  }

  PromptEntry entry;
  entry.key = key;
  entry.text = text;
  entry.params = p;
  entry.version = version_hash(text, p);
  RefLogRecord rec;
  rec.action = RefAction::Create;
  rec.mode = mode;
  rec.refiner_id = refiner_id.empty() ? "literal" : refiner_id;
  rec.payload = canonical_body(text, p);
  rec.post_version = entry.version;
  rec.metrics_snapshot = metrics;
  entry.ref_log.push_back(std::move(rec));
  auto [pos, inserted] = entries_.emplace(key, std::move(entry));
  (void)inserted;
  return pos->second;
}

std::string append_fragment(const std::string& old_text, const std::string& fragment) {
  std::string base = rtrim(old_text);
  std::string frag = rtrim(fragment);
  if (frag.empty()) return base;
  if (base.empty()) return frag;
  return base + "\n" + frag;
}

namespace {

// UPDATE payloads are normally the replacement text; a canonical-body JSON
// object ({"params":..., "text":...}) replaces params as well (overwrite and
// rollback paths).
bool try_parse_body_payload(const std::string& payload, std::string* text, Value* params) {
  if (payload.empty() || payload[0] != '{') return false;
  Value v = Value::parse(payload, nullptr, false);
  if (v.is_discarded() || !v.is_object() || v.size() != 2 || !v.contains("text") ||
      !v.contains("params") || !v.at("text").is_string() || !v.at("params").is_object()) {
    return false;
  }
  *text = v.at("text").get<std::string>();
  *params = v.at("params");
  return true;
}

void apply_action_to_body(RefAction action, const std::string& payload, std::string* text,
                          Value* params) {
  switch (action) {
    case RefAction::Create: {
      if (!try_parse_body_payload(payload, text, params)) {
        throw SpearError(Errc::ValidationError, "CREATE record payload is not a canonical body");
      }
      break;
    }
    case RefAction::Append:
      *text = append_fragment(*text, payload);
      break;
    case RefAction::Update: {
      std::string t;
      Value p;
      if (try_parse_body_payload(payload, &t, &p)) {
        *text = t;
        *params = p;
      } else {
        *text = payload;
      }
      break;
    }
    case RefAction::Merge: {
      Value v = Value::parse(payload, nullptr, false);
      if (v.is_discarded() || !v.is_object() || !v.contains("text")) {
        throw SpearError(Errc::ValidationError, "MERGE record payload is not a merge body");
      }
      *text = v.at("text").get<std::string>();
      *params = v.contains("params") ? v.at("params") : Value::object();
      break;
    }
  }
}

void validate_metrics(const std::map<std::string, double>& metrics) {
  for (const auto& [k, val] : metrics) {
    if (!std::isfinite(val)) {
      throw SpearError(Errc::ValidationError, "metric '" + k + "' is not finite");
    }
  }
}

}  // namespace

const PromptEntry& PromptStore::apply_record(const std::string& key, RefAction action,
                                             RefMode mode, const std::string& refiner_id,
                                             const std::string& payload,
                                             const std::string& trigger,
                                             const std::map<std::string, double>& metrics,
                                             std::vector<SubRecord> sub_records) {
  if (action == RefAction::Create || action == RefAction::Merge) {
    throw SpearError(Errc::ValidationError,
                     "apply_record handles APPEND/UPDATE; use create_entry or record_merge");
  }
  validate_metrics(metrics);

  std::unique_lock lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) throw SpearError(Errc::UnknownKey, "no entry '" + key + "'");
  PromptEntry& entry = it->second;

  std::string new_text = entry.text;
  Value new_params = entry.params;
  apply_action_to_body(action, payload, &new_text, &new_params);

  RefLogRecord rec;
  rec.action = action;
  rec.mode = mode;
  rec.refiner_id = refiner_id;
  rec.trigger = trigger;
  rec.pre_version = entry.version;
  rec.payload = payload;
  rec.metrics_snapshot = metrics;
  rec.sub_records = std::move(sub_records);

  entry.text = new_text;
  entry.params = new_params;
  entry.version = version_hash(new_text, new_params);
  rec.post_version = entry.version;
  return append_record(entry, std::move(rec));
}

const PromptEntry& PromptStore::record_merge(const std::string& out_key,
                                             const std::string& left_key,
                                             const std::string& right_key,
                                             const std::string& policy_name,
                                             const std::string& merged_text,
                                             const Value& merged_params, RefMode mode,
                                             const std::map<std::string, double>& metrics) {
  validate_metrics(metrics);
  std::unique_lock lock(mutex_);
  auto left = entries_.find(left_key);
  auto right = entries_.find(right_key);
  if (left == entries_.end()) throw SpearError(Errc::UnknownKey, "no entry '" + left_key + "'");
  if (right == entries_.end()) throw SpearError(Errc::UnknownKey, "no entry '" + right_key + "'");

  Value payload = Value::object();
  payload["left"] = left->second.version;
  payload["params"] = merged_params.is_null() ? Value::object() : merged_params;
  payload["policy"] = policy_name;
  payload["right"] = right->second.version;
  payload["text"] = merged_text;

  auto it = entries_.find(out_key);
  if (it == entries_.end()) {
    // Seed with an empty CREATE so the first record keeps its invariant.
    PromptEntry entry;
    entry.key = out_key;
    entry.text = "";
    entry.params = Value::object();
    entry.version = version_hash("", Value::object());
    RefLogRecord create;
    create.action = RefAction::Create;
    create.mode = mode;
    create.refiner_id = "merge:init";
    create.payload = canonical_body("", Value::object());
    create.post_version = entry.version;
    entry.ref_log.push_back(std::move(create));
    it = entries_.emplace(out_key, std::move(entry)).first;
  }

  PromptEntry& entry = it->second;
  RefLogRecord rec;
  rec.action = RefAction::Merge;
  rec.mode = mode;
  rec.refiner_id = "merge:" + policy_name;
  rec.pre_version = entry.version;
  rec.payload = payload.dump();
  rec.metrics_snapshot = metrics;
  entry.text = merged_text;
  entry.params = merged_params.is_null() ? Value::object() : merged_params;
  entry.version = version_hash(entry.text, entry.params);
  rec.post_version = entry.version;
  return append_record(entry, std::move(rec));
}

bool PromptStore::has_entry(const std::string& key) const {
  std::shared_lock lock(mutex_);
  return entries_.count(key) > 0;
}

const PromptEntry& PromptStore::entry(const std::string& key) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) throw SpearError(Errc::UnknownKey, "no entry '" + key + "'");
  return it->second;
}

void PromptStore::set_tags(const std::string& key, std::set<std::string> tags) {
  std::unique_lock lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) throw SpearError(Errc::UnknownKey, "no entry '" + key + "'");
  it->second.tags = std::move(tags);
}

// --- views -------------------------------------------------------------------

void PromptStore::define_view(const ViewDef& input) {
  ViewDef view = input;
  auto refs = scan_placeholders(view.body);  // TemplateSyntaxError on bad body

  view.includes.clear();
  for (const auto& ref : refs) {
    if (ref.kind == PlaceholderRef::Kind::Include) view.includes.push_back(ref.name);
  }

  std::unique_lock lock(mutex_);
  if (views_.count(view.name)) {
    throw SpearError(Errc::DuplicateView, "view '" + view.name + "' already defined");
  }

  // Bare placeholders must be declared params; context paths are free.
  for (const auto& ref : refs) {
    if (ref.kind != PlaceholderRef::Kind::Param) continue;
    bool declared = std::any_of(view.params.begin(), view.params.end(),
                                [&](const ViewDef::Param& p) { return p.name == ref.name; });
    if (!declared) {
      throw SpearError(Errc::ValidationError, "view '" + view.name + "' uses undeclared param '" +
                                                  ref.name + "'");
    }
  }

  for (const auto& inc : view.includes) {
    if (inc != view.name && !views_.count(inc)) {
      throw SpearError(Errc::UnknownInclude,
                       "view '" + view.name + "' includes unknown view '" + inc + "'");
    }
  }

  // Cycle check by DFS over the include graph with the new view added.
  std::vector<std::string> stack{view.name};
  std::set<std::string> visiting;
  std::function<void(const std::string&)> dfs = [&](const std::string& name) {
    if (visiting.count(name)) {
      throw SpearError(Errc::IncludeCycle, "include cycle through view '" + name + "'");
    }
    visiting.insert(name);
    const std::vector<std::string>* includes = nullptr;
    if (name == view.name) {
      includes = &view.includes;
    } else {
      auto it = views_.find(name);
      if (it != views_.end()) includes = &it->second.includes;
    }
    if (includes) {
      for (const auto& inc : *includes) dfs(inc);
    }
    visiting.erase(name);
  };
  dfs(view.name);

  views_.emplace(view.name, std::move(view));
}

bool PromptStore::has_view(const std::string& name) const {
  std::shared_lock lock(mutex_);
  return views_.count(name) > 0;
}

const ViewDef& PromptStore::view(const std::string& name) const {
  std::shared_lock lock(mutex_);
  auto it = views_.find(name);
  if (it == views_.end()) throw SpearError(Errc::UnknownInclude, "no view '" + name + "'");
  return it->second;
}

// --- rendering -----------------------------------------------------------------

namespace {

Value parse_include_arg_value(const std::string& raw, const Value& scope_args,
                              const Value& scope_defaults, const Value& context) {
  if (!raw.empty() && raw[0] == '"') {
    std::string inner = raw.substr(1, raw.size() - 2);
    std::string out;
    for (std::size_t i = 0; i < inner.size(); ++i) {
      if (inner[i] == '\\' && i + 1 < inner.size()) {
        out.push_back(inner[i + 1]);
        ++i;
      } else {
        out.push_back(inner[i]);
      }
    }
    return Value(out);
  }
  if (!raw.empty() && (std::isdigit(static_cast<unsigned char>(raw[0])) || raw[0] == '-')) {
    return Value(std::stod(raw));
  }
  if (raw == "true") return Value(true);
  if (raw == "false") return Value(false);
  if (raw.rfind("C.", 0) == 0) {
    auto v = lookup_path(context, raw.substr(2));
    if (!v) throw SpearError(Errc::UnboundPlaceholder, "unbound context path '" + raw + "'");
    return *v;
  }
  // identifier: resolve like a param in the current scope
  if (scope_args.contains(raw)) return scope_args.at(raw);
  if (scope_defaults.contains(raw)) return scope_defaults.at(raw);
  auto v = lookup_path(context, raw);
  if (!v) throw SpearError(Errc::UnboundPlaceholder, "unbound include argument '" + raw + "'");
  return *v;
}

}  // namespace

struct RenderScope {
  const Value& args;
  const Value& defaults;
};

namespace {

std::string render_impl(const std::map<std::string, ViewDef>& views, const std::string& templ,
                        const Value& context, const Value& args, const Value& defaults,
                        std::vector<std::string>& view_stack) {
  std::string out;
  std::size_t i = 0;
  while (i < templ.size()) {
    if (templ[i] == '\\' && templ.compare(i + 1, 2, "{{") == 0) {
      out += "{{";
      i += 3;
      continue;
    }
    if (templ.compare(i, 2, "{{") == 0) {
      std::size_t close = templ.find("}}", i + 2);
      if (close == std::string::npos) {
        throw SpearError(Errc::TemplateSyntax, "unbalanced '{{' at offset " + std::to_string(i));
      }
      std::string inner = trim(templ.substr(i + 2, close - i - 2));
      i = close + 2;

      if (!inner.empty() && inner[0] == '>') {
        PlaceholderRef ref = parse_include(trim(inner.substr(1)));
        auto vit = views.find(ref.name);
        if (vit == views.end()) {
          throw SpearError(Errc::UnknownInclude, "unknown view '" + ref.name + "' in include");
        }
        if (std::find(view_stack.begin(), view_stack.end(), ref.name) != view_stack.end()) {
          throw SpearError(Errc::IncludeCycle,
                           "include cycle through view '" + ref.name + "' during render");
        }
        const ViewDef& view = vit->second;
        Value bound = Value::object();
        for (const auto& [an, raw] : ref.include_args) {
          bound[an] = parse_include_arg_value(raw, args, defaults, context);
        }
        Value view_defaults = Value::object();
        for (const auto& p : view.params) {
          if (p.default_value) view_defaults[p.name] = *p.default_value;
        }
        view_stack.push_back(ref.name);
        out += render_impl(views, view.body, context, bound, view_defaults, view_stack);
        view_stack.pop_back();
        continue;
      }

      if (inner.rfind("C.", 0) == 0) {
        auto v = lookup_path(context, inner.substr(2));
        if (!v) {
          throw SpearError(Errc::UnboundPlaceholder, "unbound placeholder '{{" + inner + "}}'");
        }
        out += value_to_text(*v);
        continue;
      }

      if (args.contains(inner)) {
        out += value_to_text(args.at(inner));
      } else if (defaults.contains(inner)) {
        out += value_to_text(defaults.at(inner));
      } else if (context.contains(inner)) {
        out += value_to_text(context.at(inner));
      } else {
        throw SpearError(Errc::UnboundPlaceholder, "unbound placeholder '{{" + inner + "}}'");
      }
      continue;
    }
    out.push_back(templ[i]);
    ++i;
  }
  return out;
}

}  // namespace

std::string PromptStore::render_text(const std::string& templ, const Value& context,
                                     const Value& args, const Value& param_defaults) const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> stack;
  return render_impl(views_, templ, context.is_null() ? Value::object() : context,
                     args.is_null() ? Value::object() : args,
                     param_defaults.is_null() ? Value::object() : param_defaults, stack);
}

std::string PromptStore::render(const PromptEntry& entry, const Value& context,
                                const Value& args) const {
  return render_text(entry.text, context, args, entry.params);
}

std::string PromptStore::render_view(const std::string& name, const Value& context,
                                     const Value& args) const {
  std::shared_lock lock(mutex_);
  auto it = views_.find(name);
  if (it == views_.end()) throw SpearError(Errc::UnknownInclude, "no view '" + name + "'");
  const ViewDef& view = it->second;
  Value defaults = Value::object();
  for (const auto& p : view.params) {
    if (p.default_value) defaults[p.name] = *p.default_value;
  }
  std::vector<std::string> stack{name};
  return render_impl(views_, view.body, context.is_null() ? Value::object() : context,
                     args.is_null() ? Value::object() : args, defaults, stack);
}

// --- history -------------------------------------------------------------------

const std::vector<RefLogRecord>* PromptStore::find_log_for_version(const std::string& version,
                                                                   std::size_t* upto) const {
  for (const auto& [key, entry] : entries_) {
    for (std::size_t i = 0; i < entry.ref_log.size(); ++i) {
      if (entry.ref_log[i].post_version == version) {
        *upto = i + 1;
        return &entry.ref_log;
      }
    }
  }
  return nullptr;
}

ResolvedPrompt PromptStore::resolve_version(const std::string& key_or_version) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(key_or_version);
  if (it != entries_.end()) {
    return ResolvedPrompt{it->second.text, it->second.params};
  }
  std::size_t upto = 0;
  const auto* log = find_log_for_version(key_or_version, &upto);
  if (!log) {
    throw SpearError(Errc::UnknownVersion, "cannot resolve '" + key_or_version + "'");
  }
  std::vector<RefLogRecord> prefix(log->begin(), log->begin() + static_cast<long>(upto));
  PromptEntry replayed = replay_log("::historical", prefix);
  return ResolvedPrompt{replayed.text, replayed.params};
}

namespace {

std::vector<std::string> split_lines(const std::string& text) {
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
  if (!cur.empty() || text.empty() || text.back() == '\n') {
    if (!text.empty() || !cur.empty()) lines.push_back(cur);
  }
  return lines;
}

std::optional<std::size_t> log_divergence(const std::vector<RefLogRecord>& a, std::size_t la,
                                          const std::vector<RefLogRecord>& b, std::size_t lb) {
  std::size_t n = std::min(la, lb);
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].to_json() != b[i].to_json()) return i;
  }
  if (la == lb) return std::nullopt;
  return n;  // one log is a proper prefix: diverges at the first extra record
}

}  // namespace

std::vector<DiffReport::Edit> lcs_edit_script(const std::vector<std::string>& left,
                                              const std::vector<std::string>& right) {
  const std::size_t n = left.size(), m = right.size();
  std::vector<std::vector<std::size_t>> dp(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      dp[i][j] = left[i] == right[j] ? dp[i + 1][j + 1] + 1
                                     : std::max(dp[i + 1][j], dp[i][j + 1]);
    }
  }
  std::vector<DiffReport::Edit> edits;
  std::size_t i = 0, j = 0;
  while (i < n && j < m) {
    if (left[i] == right[j]) {
      edits.push_back({DiffReport::Edit::Op::Keep, left[i]});
      ++i, ++j;
    } else if (dp[i + 1][j] >= dp[i][j + 1]) {
      edits.push_back({DiffReport::Edit::Op::Delete, left[i]});
      ++i;
    } else {
      edits.push_back({DiffReport::Edit::Op::Insert, right[j]});
      ++j;
    }
  }
  for (; i < n; ++i) edits.push_back({DiffReport::Edit::Op::Delete, left[i]});
  for (; j < m; ++j) edits.push_back({DiffReport::Edit::Op::Insert, right[j]});
  return edits;
}

DiffReport PromptStore::diff(const std::string& left, const std::string& right) const {
  ResolvedPrompt l = resolve_version(left);
  ResolvedPrompt r = resolve_version(right);

  DiffReport report;
  report.left_version = version_hash(l.text, l.params);
  report.right_version = version_hash(r.text, r.params);
  report.edits = lcs_edit_script(split_lines(l.text), split_lines(r.text));

  {
    std::shared_lock lock(mutex_);
    const std::vector<RefLogRecord>* la = nullptr;
    const std::vector<RefLogRecord>* lb = nullptr;
    std::size_t ua = 0, ub = 0;
    auto ita = entries_.find(left);
    if (ita != entries_.end()) {
      la = &ita->second.ref_log;
      ua = la->size();
    } else {
      la = find_log_for_version(left, &ua);
    }
    auto itb = entries_.find(right);
    if (itb != entries_.end()) {
      lb = &itb->second.ref_log;
      ub = lb->size();
    } else {
      lb = find_log_for_version(right, &ub);
    }
    if (la && lb) report.divergence_index = log_divergence(*la, ua, *lb, ub);
  }

  for (auto it = l.params.begin(); it != l.params.end(); ++it) {
    if (!r.params.contains(it.key())) {
      report.params_removed[it.key()] = it.value();
    } else if (r.params.at(it.key()) != it.value()) {
      Value pair = Value::object();
      pair["left"] = it.value();
      pair["right"] = r.params.at(it.key());
      report.params_changed[it.key()] = pair;
    }
  }
  for (auto it = r.params.begin(); it != r.params.end(); ++it) {
    if (!l.params.contains(it.key())) report.params_added[it.key()] = it.value();
  }
  return report;
}

PromptEntry replay_log(const std::string& key, const std::vector<RefLogRecord>& records) {
  if (records.empty() || records.front().action != RefAction::Create) {
    throw SpearError(Errc::MissingCreate, "ref_log must start with a CREATE record");
  }
  if (!records.front().pre_version.empty()) {
    throw SpearError(Errc::BrokenHashChain, "record 0: CREATE carries a pre_version");
  }

  std::string text;
  Value params = Value::object();
  std::string version;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const RefLogRecord& rec = records[i];
    if (i > 0) {
      if (rec.action == RefAction::Create) {
        throw SpearError(Errc::BrokenHashChain,
                         "record " + std::to_string(i) + ": unexpected CREATE");
      }
      if (rec.pre_version != version) {
        throw SpearError(Errc::BrokenHashChain,
                         "record " + std::to_string(i) + ": pre_version mismatch");
      }
    }
    apply_action_to_body(rec.action, rec.payload, &text, &params);
    version = version_hash(text, params);
    if (version != rec.post_version) {
      throw SpearError(Errc::BrokenHashChain,
                       "record " + std::to_string(i) + ": post_version mismatch");
    }
  }

  PromptEntry entry;
  entry.key = key;
  entry.text = text;
  entry.params = params;
  entry.version = version;
  entry.ref_log = records;
  return entry;
}

// --- persistence -----------------------------------------------------------------

std::string PromptStore::export_json() const {
  std::shared_lock lock(mutex_);
  Value doc = Value::object();
  Value entries = Value::object();
  for (const auto& [key, entry] : entries_) entries[key] = entry.to_json();
  Value views = Value::object();
  for (const auto& [name, view] : views_) views[name] = view.to_json();
  doc["entries"] = entries;
  doc["views"] = views;
  return doc.dump(2) + "\n";
}

PromptStore PromptStore::import_json(const std::string& text) {
  Value doc = Value::parse(text);
  PromptStore store;
  if (doc.contains("views")) {
    for (auto it = doc.at("views").begin(); it != doc.at("views").end(); ++it) {
      store.views_.emplace(it.key(), ViewDef::from_json(it.key(), it.value()));
    }
  }
  if (doc.contains("entries")) {
    for (auto it = doc.at("entries").begin(); it != doc.at("entries").end(); ++it) {
      store.entries_.emplace(it.key(), PromptEntry::from_json(it.key(), it.value()));
    }
  }
  return store;
}

void PromptStore::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SpearError(Errc::ConfigError, "cannot write store file '" + path + "'");
  out << export_json();
}

PromptStore PromptStore::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpearError(Errc::ConfigError, "cannot read store file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return import_json(buf.str());
}

}  // namespace spear
