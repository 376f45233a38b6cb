#include <algorithm>
#include <fstream>
#include <sstream>

#include "spear/algebra.hpp"
#include "spear/errors.hpp"
#include "spear/hashing.hpp"
#include "spear/tokenizer.hpp"

namespace spear {

// --- site assignment ---------------------------------------------------------

namespace {

void assign_sites_rec(NodeList& nodes, const std::string& prefix) {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    OperatorNode& node = nodes[i];
    std::string here = prefix + "/" + std::to_string(i);
    if (node.kind == OpKind::Check) {
      auto& args = node.as<CheckArgs>();
      if (args.site.empty()) args.site = here;
    } else if (node.kind == OpKind::Retry) {
      auto& args = node.as<RetryArgs>();
      if (args.site.empty()) args.site = here;
    } else if (node.kind == OpKind::Switch) {
      auto& args = node.as<SwitchArgs>();
      if (args.site.empty()) args.site = here;
      for (std::size_t b = 0; b < args.branches.size(); ++b) {
        assign_sites_rec(args.branches[b].body, here + ".b" + std::to_string(b));
      }
    }
    assign_sites_rec(node.children, here);
  }
}

}  // namespace

void assign_sites(Pipeline& pipeline) { assign_sites_rec(pipeline.nodes, pipeline.name); }

// --- registries ----------------------------------------------------------------

void SourceRegistry::add_inline(const std::string& name, Value items) {
  sources_[name] = [items = std::move(items)](const std::optional<std::string>& query) {
    Value result = items;
    if (query && items.is_array()) {
      auto query_tokens = tokenize(*query);
      Value filtered = Value::array();
      for (const auto& item : items) {
        std::string text = item.is_string() ? item.get<std::string>()
                                            : (item.is_object() && item.contains("text")
                                                   ? item.at("text").get<std::string>()
                                                   : item.dump());
        auto item_tokens = tokenize(text);
        bool match = std::any_of(query_tokens.begin(), query_tokens.end(), [&](const auto& q) {
          return std::find(item_tokens.begin(), item_tokens.end(), q) != item_tokens.end();
        });
        if (match) filtered.push_back(item);
      }
      result = filtered;
    }
    std::size_t count = result.is_array() ? result.size() : 1;
    return RetrievalResult{result, count};
  };
}

void SourceRegistry::add_jsonl_file(const std::string& name, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpearError(Errc::UnknownSource, "cannot read source file '" + path + "'");
  Value items = Value::array();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    items.push_back(Value::parse(line));
  }
  add_inline(name, std::move(items));
}

void SourceRegistry::add_fn(const std::string& name, Fn fn) { sources_[name] = std::move(fn); }

bool SourceRegistry::has(const std::string& name) const { return sources_.count(name) > 0; }

RetrievalResult SourceRegistry::retrieve(const std::string& name,
                                         const std::optional<std::string>& query) const {
  auto it = sources_.find(name);
  if (it == sources_.end()) throw SpearError(Errc::UnknownSource, "no source '" + name + "'");
  return it->second(query);
}

void AgentRegistry::add(const std::string& name, Fn fn) { agents_[name] = std::move(fn); }

void AgentRegistry::alias(const std::string& name, const std::string& target) {
  auto it = agents_.find(target);
  if (it == agents_.end()) throw SpearError(Errc::UnknownAgent, "no builtin agent '" + target + "'");
  agents_[name] = it->second;
}

bool AgentRegistry::has(const std::string& name) const { return agents_.count(name) > 0; }

Value AgentRegistry::invoke(const std::string& name, const Value& payload,
                            const ExecState& state) const {
  auto it = agents_.find(name);
  if (it == agents_.end()) throw SpearError(Errc::UnknownAgent, "no agent '" + name + "'");
  return it->second(payload, state);
}

void AgentRegistry::register_builtins(AgentRegistry& reg, const MockRuleSet& rules) {
  reg.add("identity", [](const Value& payload, const ExecState&) { return payload; });

  reg.add("evidence_scorer", [rules](const Value& payload, const ExecState&) {
    double score = 0.0;
    for (const auto& tok : tokenize(value_to_text(payload))) {
      auto it = rules.hint_lexicon.find(tok);
      if (it != rules.hint_lexicon.end()) score += it->second;
      auto lx = rules.lexicon.find(tok);
      if (lx != rules.lexicon.end()) score += std::abs(lx->second) * 0.25;
    }
    return Value(score / (1.0 + score));
  });

  reg.add("spear::diff", [](const Value& payload, const ExecState& state) {
    if (!payload.is_array() || payload.size() != 2) {
      throw SpearError(Errc::AgentFailure, "diff agent expects [left, right]");
    }
    DiffReport report = state.store.diff(payload.at(0).get<std::string>(),
                                         payload.at(1).get<std::string>());
    return report.to_json();
  });
}

// --- events ---------------------------------------------------------------------

Value RunEvent::to_json() const {
  Value v = Value::object();
  v["index"] = index;
  v["op"] = to_string(kind);
  v["site"] = site;
  v["label"] = label;
  v["prompt_key"] = prompt_key;
  v["refiner_id"] = refiner_id;
  v["trigger"] = trigger;
  v["duration_s"] = duration_s;
  if (fired) v["fired"] = *fired;
  if (confidence >= 0.0) v["confidence"] = confidence;
  Value usage_v = Value::object();
  usage_v["prompt_tokens"] = usage.prompt_tokens;
  usage_v["cached_prefix_tokens"] = usage.cached_prefix_tokens;
  usage_v["completion_tokens"] = usage.completion_tokens;
  v["usage"] = usage_v;
  v["context_written"] = context_written;
  v["metadata_written"] = metadata_written;
  v["prompts_written"] = prompts_written;
  return v;
}

RunEvent RunEvent::from_json(const Value& v) {
  RunEvent e;
  e.index = v.value("index", 0);
  std::string op = v.value("op", "RET");
  static const std::map<std::string, OpKind> kinds = {
      {"RET", OpKind::Ret},           {"GEN", OpKind::Gen},     {"REF", OpKind::Ref},
      {"CHECK", OpKind::Check},       {"MERGE", OpKind::Merge}, {"DELEGATE", OpKind::Delegate},
      {"FUSED_GEN", OpKind::FusedGen}};
  auto it = kinds.find(op);
  e.kind = it == kinds.end() ? OpKind::Ret : it->second;
  e.site = v.value("site", "");
  e.label = v.value("label", "");
  e.prompt_key = v.value("prompt_key", "");
  e.refiner_id = v.value("refiner_id", "");
  e.trigger = v.value("trigger", "");
  e.duration_s = v.value("duration_s", 0.0);
  if (v.contains("fired")) e.fired = v.at("fired").get<bool>();
  e.confidence = v.value("confidence", -1.0);
  if (v.contains("usage")) {
    e.usage.prompt_tokens = v.at("usage").value("prompt_tokens", 0);
    e.usage.cached_prefix_tokens = v.at("usage").value("cached_prefix_tokens", 0);
    e.usage.completion_tokens = v.at("usage").value("completion_tokens", 0);
  }
  if (v.contains("context_written")) {
    e.context_written = v.at("context_written").get<std::vector<std::string>>();
  }
  if (v.contains("metadata_written")) {
    e.metadata_written = v.at("metadata_written").get<std::vector<std::string>>();
  }
  if (v.contains("prompts_written")) {
    e.prompts_written = v.at("prompts_written").get<std::vector<std::string>>();
  }
  return e;
}

std::vector<GenEventUsage> RunReport::gen_usages() const {
  std::vector<GenEventUsage> out;
  for (const auto& e : events) {
    if (e.kind == OpKind::Gen || e.kind == OpKind::FusedGen) {
      out.push_back({e.usage.prompt_tokens, e.usage.cached_prefix_tokens});
    }
  }
  return out;
}

Value RunReport::to_json(bool include_state) const {
  Value v = Value::object();
  v["pipeline"] = pipeline;
  v["ok"] = ok;
  v["error"] = error;
  Value evs = Value::array();
  for (const auto& e : events) evs.push_back(e.to_json());
  v["events"] = evs;
  v["applied_rewrites"] = applied_rewrites;
  v["total_simulated_latency_s"] = total_simulated_latency_s;
  v["metadata"] = metadata_to_json(final_state.metadata);
  if (include_state) {
    v["context"] = final_state.context;
    v["prompts"] = Value::parse(final_state.store.export_json());
  }
  return v;
}

// --- engine ----------------------------------------------------------------------

struct Engine::RunCtx {
  const RunOptions* options = nullptr;
  std::string pipeline_name;
  std::string current_prompt;
  std::vector<std::string> trigger_stack;
  std::vector<RunEvent> events;
  std::unique_ptr<std::ofstream> event_stream;
  double total_latency_s = 0.0;

  RunEvent& begin_event(OpKind kind) {
    events.emplace_back();
    RunEvent& e = events.back();
    e.index = events.size() - 1;
    e.kind = kind;
    if (!trigger_stack.empty()) e.trigger = trigger_stack.back();
    return e;
  }

  void finish_event(RunEvent& e) {
    total_latency_s += e.duration_s;
    if (event_stream && event_stream->is_open()) {
      (*event_stream) << e.to_json().dump() << "\n";
    }
  }
};

Engine::Engine(Backend& backend, PrefixCache& cache) : backend_(backend), cache_(cache) {
  MockRuleSet rules = MockRuleSet::defaults();
  if (auto* mock = dynamic_cast<MockBackend*>(&backend_)) rules = mock->rules();
  AgentRegistry::register_builtins(agents_, rules);
}

RunReport Engine::run(const Pipeline& pipeline, ExecState initial, const RunOptions& options) {
  RunReport report;
  report.pipeline = pipeline.name;

  if (pipeline.nodes.empty()) {
    throw SpearError(Errc::ValidationError, "pipeline '" + pipeline.name + "' has an empty body");
  }

  Pipeline prepared = pipeline;
  assign_sites(prepared);

  RunCtx ctx;
  ctx.options = &options;
  ctx.pipeline_name = prepared.name;
  if (!options.event_log_path.empty()) {
    ctx.event_stream = std::make_unique<std::ofstream>(options.event_log_path, std::ios::app);
  }

  PromptStore pre_store;
  if (options.shadow) pre_store = initial.store;

  ExecState state = std::move(initial);
  try {
    exec_nodes(prepared.nodes, state, ctx);
  } catch (const SpearError& err) {
    report.ok = false;
    report.error = err.what();
  }

  if (options.shadow) state.store = pre_store;  // discard P writes

  report.events = std::move(ctx.events);
  report.final_state = std::move(state);
  report.total_simulated_latency_s = ctx.total_latency_s;
  return report;
}

void Engine::exec_nodes(const NodeList& nodes, ExecState& state, RunCtx& ctx) {
  for (const auto& node : nodes) exec_node(node, state, ctx);
}

void Engine::exec_node(const OperatorNode& node, ExecState& state, RunCtx& ctx) {
  if (is_derived(node.kind)) {
    exec_nodes(desugar(node), state, ctx);
    return;
  }
  switch (node.kind) {
    case OpKind::Ret: op_ret(node.as<RetArgs>(), state, ctx); break;
    case OpKind::Gen: op_gen(node.as<GenArgs>(), state, ctx); break;
    case OpKind::FusedGen: op_fused_gen(node.as<FusedGenArgs>(), state, ctx); break;
    case OpKind::Ref: op_ref(node.as<RefArgs>(), state, ctx); break;
    case OpKind::Check: op_check(node, state, ctx); break;
    case OpKind::Merge: op_merge(node.as<MergeArgs>(), state, ctx); break;
    case OpKind::Delegate: op_delegate(node.as<DelegateArgs>(), state, ctx); break;
    default: break;
  }
  if (ctx.options->debug_invariants) state.check_invariants();
}

void Engine::op_ret(const RetArgs& args, ExecState& state, RunCtx& ctx) {
  RunEvent& event = ctx.begin_event(OpKind::Ret);
  event.label = args.source;

  std::optional<std::string> query;
  if (args.prompt_key) {
    const PromptEntry& entry = state.store.entry(*args.prompt_key);  // UnknownKey when absent
    query = state.store.render(entry, state.context, Value::object());
    event.prompt_key = *args.prompt_key;
  }

  RetrievalResult result = sources_.retrieve(args.source, query);
  state.context[args.source] = result.value;
  state.metadata["ret_items:" + args.source] = static_cast<double>(result.item_count);
  state.metadata["latency:ret:" + args.source] = 0.0;

  event.context_written = {args.source};
  event.metadata_written = {"ret_items:" + args.source, "latency:ret:" + args.source};
  ctx.finish_event(event);
}

void Engine::op_gen(const GenArgs& args, ExecState& state, RunCtx& ctx) {
  std::string prompt_key;
  if (args.prompt_key) {
    prompt_key = *args.prompt_key;
  } else if (!ctx.current_prompt.empty()) {
    prompt_key = ctx.current_prompt;
  } else {
    throw SpearError(Errc::UnknownKey, "GEN[\"" + args.label + "\"] has no prompt to read");
  }

  const PromptEntry& entry = state.store.entry(prompt_key);
  std::string prompt_text = state.store.render(entry, state.context, Value::object());

  RunEvent& event = ctx.begin_event(OpKind::Gen);
  event.label = args.label;
  event.prompt_key = prompt_key;

  BackendRequest req;
  req.prompt_text = prompt_text;
  req.max_completion_tokens = args.max_tokens;
  req.label = args.label;
  req.cache_view_name = prompt_key;
  req.cache_param_hash = sha256_hex16(entry.params.dump());
  req.cache_version = entry.version;

  BackendResponse resp;
  try {
    resp = backend_.complete(req, cache_);
  } catch (const SpearError& err) {
    if (err.code() == Errc::TransportError || err.code() == Errc::ProtocolError ||
        err.code() == Errc::BackendError) {
      // Transport-level failure: no C mutation, marker in M, pipeline
      // continues so CHECK logic can react.
      state.metadata["error:" + args.label] = 1.0;
      event.metadata_written = {"error:" + args.label};
      ctx.finish_event(event);
      return;
    }
    throw;
  }

  state.context[args.label] = resp.text;
  state.metadata["confidence"] = resp.confidence;
  state.metadata["confidence:" + args.label] = resp.confidence;
  state.metadata["latency"] = resp.latency_s;
  state.metadata["latency:" + args.label] = resp.latency_s;
  state.metadata["prompt_tokens:" + args.label] = static_cast<double>(resp.usage.prompt_tokens);
  state.metadata["cached_prefix_tokens:" + args.label] =
      static_cast<double>(resp.usage.cached_prefix_tokens);
  state.metadata["completion_tokens:" + args.label] =
      static_cast<double>(resp.usage.completion_tokens);
  // Last-GEN metrics per prompt key, consulted by MERGE's metric policy.
  state.metadata["prompt_metric:confidence:" + prompt_key] = resp.confidence;
  state.metadata["prompt_metric:latency:" + prompt_key] = resp.latency_s;

  event.duration_s = resp.latency_s;
  event.usage = resp.usage;
  event.confidence = resp.confidence;
  event.context_written = {args.label};
  event.metadata_written = {"confidence", "confidence:" + args.label, "latency",
                            "latency:" + args.label};
  ctx.finish_event(event);
}

namespace {

std::pair<std::string, std::string> split_at_input_marker(const std::string& text) {
  // Returns (pre-INPUT block, payload). Missing marker: whole text is pre.
  std::istringstream in(text);
  std::string line;
  std::string pre, payload;
  bool in_payload = false;
  while (std::getline(in, line)) {
    if (!in_payload && line.rfind("INPUT:", 0) == 0) {
      in_payload = true;
      continue;
    }
    std::string& dst = in_payload ? payload : pre;
    if (!dst.empty()) dst.push_back('\n');
    dst += line;
  }
  return {pre, payload};
}

std::vector<std::string> directive_lines(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    if (line.rfind("TASK:", 0) == 0) out.push_back(line);
  }
  return out;
}

}  // namespace

void Engine::op_fused_gen(const FusedGenArgs& args, ExecState& state, RunCtx& ctx) {
  if (args.parts.size() < 2) {
    throw SpearError(Errc::ValidationError, "fused GEN needs at least two parts");
  }

  const PromptEntry& first = state.store.entry(args.parts[0].prompt_key);
  std::string rendered0 = state.store.render(first, state.context, Value::object());
  auto [pre0, payload0] = split_at_input_marker(rendered0);

  std::string fused_text = pre0;
  for (std::size_t i = 1; i < args.parts.size(); ++i) {
    const PromptEntry& entry = state.store.entry(args.parts[i].prompt_key);
    std::vector<std::string> directives;
    if (args.layout == FusedGenArgs::Layout::Sections) {
      std::string rendered = state.store.render(entry, state.context, Value::object());
      directives = directive_lines(split_at_input_marker(rendered).first);
    } else {
      // The consumer part's payload references the producer's output; only
      // its static directive block joins the fused prompt.
      directives = directive_lines(split_at_input_marker(entry.text).first);
    }
    for (const auto& d : directives) fused_text += "\n" + d;
  }
  fused_text += "\nINPUT:\n" + payload0;

  std::string joined_label;
  for (std::size_t i = 0; i < args.parts.size(); ++i) {
    if (i) joined_label += "+";
    joined_label += args.parts[i].label;
  }

  RunEvent& event = ctx.begin_event(OpKind::FusedGen);
  event.label = joined_label;
  event.prompt_key = args.parts[0].prompt_key;

  BackendRequest req;
  req.prompt_text = fused_text;
  req.max_completion_tokens = args.max_tokens;
  req.label = joined_label;
  req.cache_view_name = args.parts[0].prompt_key;
  req.cache_version = first.version;
  BackendResponse resp = backend_.complete(req, cache_);

  if (args.layout == FusedGenArgs::Layout::Sections) {
    // Response is a sequence of "## <name>" blocks, one per part, in order.
    std::vector<std::string> blocks;
    std::istringstream in(resp.text);
    std::string line, cur;
    while (std::getline(in, line)) {
      if (line.rfind("## ", 0) == 0 && !cur.empty()) {
        blocks.push_back(cur);
        cur.clear();
      }
      if (!cur.empty()) cur.push_back('\n');
      cur += line;
    }
    if (!cur.empty()) blocks.push_back(cur);
    if (blocks.size() != args.parts.size()) {
      throw SpearError(Errc::BackendError, "fused section response has " +
                                               std::to_string(blocks.size()) + " blocks for " +
                                               std::to_string(args.parts.size()) + " parts");
    }
    for (std::size_t i = 0; i < args.parts.size(); ++i) {
      state.context[args.parts[i].label] = blocks[i];
      event.context_written.push_back(args.parts[i].label);
    }
  } else {
    // Final "LABEL:" line routes to the filter part; the rest is the map
    // part's summary.
    std::string text = resp.text;
    std::string label_line;
    std::size_t nl = text.find_last_of('\n');
    if (nl != std::string::npos && text.compare(nl + 1, 6, "LABEL:") == 0) {
      label_line = text.substr(nl + 1);
      text = text.substr(0, nl);
    } else if (text.rfind("LABEL:", 0) == 0) {
      label_line = text;
      text.clear();
    } else {
      throw SpearError(Errc::BackendError, "fused response lacks a LABEL line");
    }

    const auto& map_part =
        args.layout == FusedGenArgs::Layout::MapFilter ? args.parts[0] : args.parts[1];
    const auto& filter_part =
        args.layout == FusedGenArgs::Layout::MapFilter ? args.parts[1] : args.parts[0];

    state.context[filter_part.label] = label_line;
    event.context_written.push_back(filter_part.label);
    bool keep_summary = !args.keep_when_label || label_line == *args.keep_when_label;
    if (keep_summary) {
      state.context[map_part.label] = text;
      event.context_written.push_back(map_part.label);
    }
    state.metadata["confidence:" + filter_part.label] = resp.confidence;
  }

  state.metadata["confidence"] = resp.confidence;
  state.metadata["latency"] = resp.latency_s;
  state.metadata["latency:" + joined_label] = resp.latency_s;
  state.metadata["prompt_tokens:" + joined_label] = static_cast<double>(resp.usage.prompt_tokens);
  state.metadata["cached_prefix_tokens:" + joined_label] =
      static_cast<double>(resp.usage.cached_prefix_tokens);
  state.metadata["completion_tokens:" + joined_label] =
      static_cast<double>(resp.usage.completion_tokens);

  event.duration_s = resp.latency_s;
  event.usage = resp.usage;
  event.confidence = resp.confidence;
  ctx.finish_event(event);
}

ResolvedRefinement Engine::resolve_refinement(const RefInvocation& invocation,
                                              const std::string& current_text,
                                              const ExecState& state) {
  ResolvedRefinement out;

  if (invocation.is_literal()) {
    out.output = *invocation.literal_text;
    out.mode = RefMode::Manual;
    return out;
  }

  RefinerSpec spec;
  if (refiners_.has(invocation.refiner_id)) {
    spec = refiners_.get(invocation.refiner_id);
  } else if (invocation.refiner_id.rfind("view:", 0) == 0) {
    // Synthetic view-materialization refiner: render the view with the
    // bound arguments.
    std::string view_name = invocation.refiner_id.substr(5);
    Value args = Value::object();
    for (const auto& [k, v] : invocation.kwargs) args[k] = v;
    out.output = state.store.render_view(view_name, state.context, args);
    out.mode = RefMode::Manual;
    return out;
  } else if (invocation.refiner_id == "auto:default") {
    spec.id = "auto:default";
    spec.mode = RefMode::Auto;
    spec.objective = "improve the prompt";
    if (auto it = invocation.kwargs.find("signals"); it != invocation.kwargs.end()) {
      for (const auto& s : it->second) spec.signals.push_back(s.get<std::string>());
    }
  } else {
    throw SpearError(Errc::UnknownRefiner, "no refiner '" + invocation.refiner_id + "'");
  }

  out.mode = spec.mode;

  if (spec.mode == RefMode::Manual) {
    Value bound = Value::object();
    for (std::size_t i = 0; i < invocation.args.size() && i < spec.params.size(); ++i) {
      bound[spec.params[i]] = invocation.args[i];
    }
    for (const auto& [k, v] : invocation.kwargs) bound[k] = v;
    out.output = state.store.render_text(spec.body, state.context, bound);
    return out;
  }

  // Assisted / auto: one backend meta-call; its resolved output becomes the
  // record payload so replay stays offline.
  std::string meta_prompt;
  if (spec.mode == RefMode::Assisted) {
    std::string hint = spec.hint;
    if (!invocation.args.empty() && invocation.args[0].is_string()) {
      hint = invocation.args[0].get<std::string>();
    }
    if (auto it = invocation.kwargs.find("hint"); it != invocation.kwargs.end()) {
      hint = it->second.get<std::string>();
    }
    meta_prompt = spec.meta_template.empty()
                      ? assisted_meta_prompt(hint, current_text)
                      : state.store.render_text(spec.meta_template, state.context,
                                                Value{{"hint", hint}, {"prompt", current_text}});
  } else {
    std::string signal_text;
    for (const auto& key : spec.signals) {
      auto it = state.metadata.find(key);
      if (!signal_text.empty()) signal_text += ", ";
      if (it != state.metadata.end()) {
        signal_text += key + "=" + Value(it->second).dump();
        out.metrics[key] = it->second;
      } else {
        signal_text += key + "=?";
      }
    }
    meta_prompt = spec.meta_template.empty()
                      ? auto_meta_prompt(signal_text, spec.objective, current_text)
                      : state.store.render_text(
                            spec.meta_template, state.context,
                            Value{{"signals", signal_text},
                                  {"objective", spec.objective},
                                  {"prompt", current_text}});
  }

  BackendRequest req;
  req.prompt_text = meta_prompt;
  req.max_completion_tokens = 512;
  req.label = "ref:" + spec.id;
  try {
    BackendResponse resp = backend_.complete(req, cache_);
    out.output = resp.text;
    out.backend_latency_s = resp.latency_s;
  } catch (const SpearError& err) {
    throw SpearError(Errc::RefinerFailure,
                     "refiner '" + spec.id + "' backend call failed: " + err.what());
  }
  return out;
}

void Engine::op_ref(const RefArgs& args, ExecState& state, RunCtx& ctx) {
  // Target key: explicit, derived from the refiner id for CREATE
  // ("f_qa_prompt" creates "qa_prompt"), else the current prompt.
  std::string key;
  if (args.key) {
    key = *args.key;
  } else if (args.action == RefAction::Create) {
    const std::string& id = args.refiner.display_id();
    key = id.rfind("f_", 0) == 0 ? id.substr(2) : id;
  } else if (!ctx.current_prompt.empty()) {
    key = ctx.current_prompt;
  } else {
    throw SpearError(Errc::UnknownKey, "REF has no target prompt key");
  }

  RunEvent& event = ctx.begin_event(OpKind::Ref);
  event.label = key;
  event.prompt_key = key;

  std::string trigger = ctx.trigger_stack.empty() ? "" : ctx.trigger_stack.back();

  auto snapshot_metrics = [&](const std::map<std::string, double>& extra) {
    std::map<std::string, double> metrics = extra;
    if (auto it = state.metadata.find("confidence"); it != state.metadata.end()) {
      metrics.emplace("confidence", it->second);
    }
    if (auto it = state.metadata.find("latency"); it != state.metadata.end()) {
      metrics.emplace("latency", it->second);
    }
    return metrics;
  };

  if (!args.chain.empty()) {
    // Composite refinement: apply every step in order in memory, then emit
    // one UPDATE record whose sub-records keep the step-level provenance.
    // The final text is byte-identical to the unfused sequential chain.
    std::string text = state.store.entry(key).text;
    std::vector<SubRecord> subs;
    double latency = 0.0;
    std::map<std::string, double> metrics;
    RefMode mode = RefMode::Manual;
    std::string combined_id;
    for (const auto& [action, invocation] : args.chain) {
      ResolvedRefinement resolved = resolve_refinement(invocation, text, state);
      latency += resolved.backend_latency_s;
      for (const auto& [k, v] : resolved.metrics) metrics[k] = v;
      if (resolved.mode != RefMode::Manual) mode = resolved.mode;
      SubRecord sub;
      sub.action = to_string(action);
      sub.refiner_id = invocation.display_id();
      sub.payload = resolved.output;
      subs.push_back(std::move(sub));
      if (!combined_id.empty()) combined_id += "+";
      combined_id += invocation.display_id();
      text = action == RefAction::Append ? append_fragment(text, resolved.output)
                                         : resolved.output;
    }
    event.refiner_id = "composite:" + combined_id;
    event.duration_s = latency;
    state.store.apply_record(key, RefAction::Update, mode, event.refiner_id, text, trigger,
                             snapshot_metrics(metrics), std::move(subs));
    ctx.current_prompt = key;
    event.prompts_written = {key};
    ctx.finish_event(event);
    return;
  }

  std::string current_text;
  if (args.action != RefAction::Create && state.store.has_entry(key)) {
    current_text = state.store.entry(key).text;
  }
  ResolvedRefinement resolved = resolve_refinement(args.refiner, current_text, state);

  event.refiner_id = args.refiner.display_id();
  event.duration_s = resolved.backend_latency_s;

  if (args.action == RefAction::Create) {
    Value params = Value::object();
    if (!args.refiner.is_literal() && refiners_.has(args.refiner.refiner_id)) {
      const RefinerSpec& spec = refiners_.get(args.refiner.refiner_id);
      if (spec.mode == RefMode::Manual) {
        // A parameterized manual refiner creates a template entry; binding
        // args become the entry's default params.
        for (std::size_t i = 0; i < args.refiner.args.size() && i < spec.params.size(); ++i) {
          params[spec.params[i]] = args.refiner.args[i];
        }
        for (const auto& [k, v] : args.refiner.kwargs) params[k] = v;
        resolved.output = spec.body;
      }
    }
    state.store.create_entry(key, resolved.output, params, resolved.mode, args.upsert,
                             args.refiner.display_id(), snapshot_metrics(resolved.metrics));
  } else {
    state.store.apply_record(key, args.action, resolved.mode, args.refiner.display_id(),
                             resolved.output, trigger, snapshot_metrics(resolved.metrics));
  }

  ctx.current_prompt = key;
  event.prompts_written = {key};
  ctx.finish_event(event);
}

void Engine::op_check(const OperatorNode& node, ExecState& state, RunCtx& ctx) {
  const auto& args = node.as<CheckArgs>();
  bool fired = eval_condition(args.cond, state);

  RunEvent& event = ctx.begin_event(OpKind::Check);
  event.site = args.site;
  event.fired = fired;
  state.metadata["check_fired:" + args.site] = fired ? 1.0 : 0.0;
  event.metadata_written = {"check_fired:" + args.site};

  if (args.retry_label) {
    std::string key = "retries:" + *args.retry_label;
    auto it = state.metadata.find(key);
    double count = it == state.metadata.end() ? 0.0 : it->second;
    state.metadata[key] = count + (fired ? 1.0 : 0.0);
    event.metadata_written.push_back(key);
  }
  ctx.finish_event(event);

  if (fired) {
    ctx.trigger_stack.push_back(to_string(args.cond));
    exec_nodes(node.children, state, ctx);
    ctx.trigger_stack.pop_back();
  }
}

void Engine::op_merge(const MergeArgs& args, ExecState& state, RunCtx& ctx) {
  const PromptEntry& left = state.store.entry(args.left);
  const PromptEntry& right = state.store.entry(args.right);
  std::string out_key = args.out.empty() ? default_merge_key(args.left, args.right) : args.out;

  auto metric_of = [&](const std::string& key) -> std::optional<double> {
    auto it = state.metadata.find("prompt_metric:" + args.policy.metric_key + ":" + key);
    if (it == state.metadata.end()) return std::nullopt;
    return it->second;
  };

  std::string text;
  Value params;
  std::map<std::string, double> metrics;
  switch (args.policy.kind) {
    case MergePolicyKind::PickLeft:
      text = left.text;
      params = left.params;
      break;
    case MergePolicyKind::PickRight:
      text = right.text;
      params = right.params;
      break;
    case MergePolicyKind::PickByMetric: {
      auto lv = metric_of(args.left);
      auto rv = metric_of(args.right);
      if (lv) metrics["left:" + args.policy.metric_key] = *lv;
      if (rv) metrics["right:" + args.policy.metric_key] = *rv;
      bool pick_right;
      if (!lv && !rv) {
        pick_right = false;  // metric absent on both sides: fall back to left
      } else if (lv && !rv) {
        pick_right = false;
      } else if (!lv && rv) {
        pick_right = true;
      } else {
        pick_right = args.policy.higher_is_better ? (*rv > *lv) : (*rv < *lv);  // ties to left
      }
      text = pick_right ? right.text : left.text;
      params = pick_right ? right.params : left.params;
      break;
    }
    case MergePolicyKind::ConcatSections: {
      if (left.text == right.text) {
        text = left.text;  // merging identical fragments is a no-op
      } else {
        text = left.text + args.policy.separator + right.text;
      }
      params = left.params;
      for (auto it = right.params.begin(); it != right.params.end(); ++it) {
        if (!params.contains(it.key())) params[it.key()] = it.value();
      }
      break;
    }
  }

  RunEvent& event = ctx.begin_event(OpKind::Merge);
  event.label = out_key;
  state.store.record_merge(out_key, args.left, args.right, args.policy.name(), text, params,
                           RefMode::Manual, metrics);
  ctx.current_prompt = out_key;
  event.prompts_written = {out_key};
  ctx.finish_event(event);
}

void Engine::op_delegate(const DelegateArgs& args, ExecState& state, RunCtx& ctx) {
  if (!agents_.has(args.agent)) {
    throw SpearError(Errc::UnknownAgent, "no agent '" + args.agent + "'");
  }

  Value payload;
  if (args.payload.context_path) {
    auto v = lookup_path(state.context, *args.payload.context_path);
    if (!v) {
      throw SpearError(Errc::ValidationError,
                       "DELEGATE payload path '" + *args.payload.context_path +
                           "' not found in context");
    }
    payload = *v;
  } else {
    payload = args.payload.literal;
  }

  RunEvent& event = ctx.begin_event(OpKind::Delegate);
  event.label = args.agent;

  try {
    Value result = agents_.invoke(args.agent, payload, state);
    state.context[args.out_key] = result;
    state.metadata["latency:" + args.agent] = 0.0;
    event.context_written = {args.out_key};
    event.metadata_written = {"latency:" + args.agent};
  } catch (const SpearError& err) {
    if (err.code() == Errc::UnknownAgent) throw;
    // Agent failure: C unchanged, marker in M, pipeline continues.
    state.metadata["error:" + args.agent] = 1.0;
    event.metadata_written = {"error:" + args.agent};
  }
  ctx.finish_event(event);
}

}  // namespace spear
