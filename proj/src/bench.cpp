#include "spear/bench.hpp"

#include <algorithm>
#include <sstream>

#include "spear/errors.hpp"
#include "spear/program.hpp"
#include "spear/tokenizer.hpp"

namespace spear::bench {

namespace {

constexpr const char* kKeepLabel = "LABEL: negative";

OperatorNode gen_node(const std::string& label, const std::string& prompt_key) {
  OperatorNode node;
  node.kind = OpKind::Gen;
  GenArgs args;
  args.label = label;
  args.prompt_key = prompt_key;
  node.args = std::move(args);
  return node;
}

OperatorNode ref_create_literal(const std::string& key, const std::string& text) {
  OperatorNode node;
  node.kind = OpKind::Ref;
  RefArgs args;
  args.action = RefAction::Create;
  args.refiner = RefInvocation::literal(text);
  args.key = key;
  node.args = std::move(args);
  return node;
}

PromptStore fusion_store() {
  PromptStore store;
  store.create_entry("map_stage",
                     "TASK: summarize\nGUIDE: condense the post into a short plain summary\n"
                     "INPUT:\n{{C.item}}",
                     Value::object(), RefMode::Manual);
  store.create_entry("filter_stage",
                     "TASK: sentiment\nGUIDE: answer with a single label line\n"
                     "INPUT:\n{{C.clean}}",
                     Value::object(), RefMode::Manual);
  store.create_entry("filter_stage_raw",
                     "TASK: sentiment\nGUIDE: answer with a single label line\n"
                     "INPUT:\n{{C.item}}",
                     Value::object(), RefMode::Manual);
  return store;
}

Pipeline map_filter_sequential() {
  Pipeline p;
  p.name = "map_filter_seq";
  OperatorNode map = gen_node("clean", "map_stage");
  auto& margs = map.as<GenArgs>();
  margs.context_deps = {"item"};
  margs.fusion_class = GenArgs::FusionClass::TaskDirective;
  OperatorNode filter = gen_node("sent", "filter_stage");
  auto& fargs = filter.as<GenArgs>();
  fargs.context_deps = {"clean"};
  fargs.fusion_class = GenArgs::FusionClass::TaskDirective;
  p.nodes = {map, filter};
  return p;
}

Pipeline map_filter_fused() {
  Pipeline p;
  p.name = "map_filter_fused";
  OperatorNode fused;
  fused.kind = OpKind::FusedGen;
  FusedGenArgs args;
  args.parts = {{"clean", "map_stage"}, {"sent", "filter_stage"}};
  args.layout = FusedGenArgs::Layout::MapFilter;
  fused.args = std::move(args);
  p.nodes = {fused};
  return p;
}

Pipeline filter_map_sequential() {
  Pipeline p;
  p.name = "filter_map_seq";
  OperatorNode filter = gen_node("sent", "filter_stage_raw");
  auto& fargs = filter.as<GenArgs>();
  fargs.context_deps = {"item"};
  fargs.fusion_class = GenArgs::FusionClass::TaskDirective;

  OperatorNode check;
  check.kind = OpKind::Check;
  CheckArgs cargs;
  cargs.cond = ConditionExpr::context_cmp("sent", CmpOp::Eq, Value(kKeepLabel));
  cargs.site = "keep";
  check.args = std::move(cargs);
  OperatorNode map = gen_node("clean", "map_stage");
  auto& margs = map.as<GenArgs>();
  margs.context_deps = {"item"};
  margs.fusion_class = GenArgs::FusionClass::TaskDirective;
  check.children.push_back(std::move(map));

  p.nodes = {filter, check};
  return p;
}

Pipeline filter_map_fused() {
  Pipeline p;
  p.name = "filter_map_fused";
  OperatorNode fused;
  fused.kind = OpKind::FusedGen;
  FusedGenArgs args;
  args.parts = {{"sent", "filter_stage_raw"}, {"clean", "map_stage"}};
  args.layout = FusedGenArgs::Layout::FilterMap;
  args.keep_when_label = kKeepLabel;
  fused.args = std::move(args);
  p.nodes = {fused};
  return p;
}

struct ItemOutcome {
  std::string sent;
  std::optional<std::string> clean;
  bool operator==(const ItemOutcome&) const = default;
};

struct VariantRun {
  std::vector<ItemOutcome> outcomes;
  double simulated_s = 0.0;
  // per-GEN-label token means measured from events (first-call cache misses
  // excluded from the cached/uncached split)
  std::map<std::string, plan::GenSiteStats> measured_sites;
};

VariantRun run_variant(const Pipeline& pipeline, const std::vector<CorpusItem>& items,
                       const PromptStore& store, const CostModel& model,
                       std::size_t cache_capacity) {
  MockBackend backend(MockRuleSet::defaults(), model);
  PrefixCache cache(cache_capacity);
  Engine engine(backend, cache);

  VariantRun run;
  std::map<std::string, std::vector<TokenUsage>> usages;

  for (const auto& item : items) {
    ExecState state;
    state.store = store;
    state.context["item"] = item.text;
    RunReport report = engine.run(pipeline, std::move(state));
    if (!report.ok) {
      throw SpearError(Errc::ValidationError,
                       "bench pipeline '" + pipeline.name + "' failed: " + report.error);
    }
    run.simulated_s += report.total_simulated_latency_s;

    ItemOutcome outcome;
    const Value& ctx = report.final_state.context;
    outcome.sent = ctx.value("sent", "");
    if (ctx.contains("clean")) outcome.clean = ctx.at("clean").get<std::string>();
    run.outcomes.push_back(std::move(outcome));

    for (const auto& e : report.events) {
      if (e.kind == OpKind::Gen || e.kind == OpKind::FusedGen) usages[e.label].push_back(e.usage);
    }
  }

  for (const auto& [label, rows] : usages) {
    plan::GenSiteStats site;
    double cached = 0.0, uncached = 0.0, completion = 0.0;
    std::size_t warm = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      completion += static_cast<double>(rows[i].completion_tokens);
      if (i == 0) continue;  // cold call: instruction block not yet cached
      cached += static_cast<double>(rows[i].cached_prefix_tokens);
      uncached += static_cast<double>(rows[i].prompt_tokens - rows[i].cached_prefix_tokens);
      ++warm;
    }
    site.completion_tokens = completion / static_cast<double>(rows.size());
    if (warm > 0) {
      site.cached_prompt_tokens = cached / static_cast<double>(warm);
      site.uncached_prompt_tokens = uncached / static_cast<double>(warm);
    }
    run.measured_sites[label] = site;
  }
  return run;
}

}  // namespace

plan::GainMatrix FusionSweepResult::gain_matrix() const {
  plan::GainMatrix m{};
  for (std::size_t j = 0; j < plan::kSelectivityLevels.size() && j < map_filter.size(); ++j) {
    m[0][j] = map_filter[j].gain;
  }
  for (std::size_t j = 0; j < plan::kSelectivityLevels.size() && j < filter_map.size(); ++j) {
    m[1][j] = filter_map[j].gain;
  }
  return m;
}

Value FusionSweepResult::to_json() const {
  auto cell_json = [](const FusionCell& c) {
    Value v = Value::object();
    v["selectivity"] = c.selectivity;
    v["sequential_s"] = c.sequential_s;
    v["fused_s"] = c.fused_s;
    v["gain"] = c.gain;
    v["planner_would_fuse"] = c.planner_would_fuse;
    return v;
  };
  Value v = Value::object();
  Value mf = Value::array(), fm = Value::array();
  for (const auto& c : map_filter) mf.push_back(cell_json(c));
  for (const auto& c : filter_map) fm.push_back(cell_json(c));
  v["map_filter"] = mf;
  v["filter_map"] = fm;
  v["map_filter_equivalent"] = map_filter_equivalent;
  v["filter_map_equivalent"] = filter_map_equivalent;
  v["measured_mean_item_tokens"] = measured_mean_item_tokens;
  v["measured_mean_summary_tokens"] = measured_mean_summary_tokens;
  return v;
}

std::string FusionSweepResult::to_csv() const {
  std::ostringstream os;
  os << "order,selectivity,sequential_s,fused_s,gain_pct,planner_would_fuse\n";
  for (const auto& c : map_filter) {
    os << "map_filter," << c.selectivity << "," << c.sequential_s << "," << c.fused_s << ","
       << c.gain * 100.0 << "," << (c.planner_would_fuse ? 1 : 0) << "\n";
  }
  for (const auto& c : filter_map) {
    os << "filter_map," << c.selectivity << "," << c.sequential_s << "," << c.fused_s << ","
       << c.gain * 100.0 << "," << (c.planner_would_fuse ? 1 : 0) << "\n";
  }
  return os.str();
}

FusionSweepResult run_fusion_sweep(const RunConfig& config, std::uint64_t seed,
                                   std::size_t n_items) {
  FusionSweepResult result;
  MockRuleSet rules = MockRuleSet::defaults();
  PromptStore store = fusion_store();

  Pipeline seq_mf = map_filter_sequential();
  Pipeline fused_mf = map_filter_fused();
  Pipeline seq_fm = filter_map_sequential();
  Pipeline fused_fm = filter_map_fused();

  result.map_filter_equivalent = true;
  result.filter_map_equivalent = true;

  double item_tokens = 0.0, summary_tokens = 0.0;
  std::size_t measured_items = 0;

  for (std::size_t j = 0; j < plan::kSelectivityLevels.size(); ++j) {
    double s = plan::kSelectivityLevels[j];
    CorpusGenerator gen(seed + j, rules);
    std::vector<CorpusItem> items = gen.generate(n_items, s);

    for (const auto& item : items) {
      item_tokens += static_cast<double>(token_count(item.text));
      summary_tokens += static_cast<double>(
          token_count(mock_summarize(item.text, rules.summary_token_limit)));
      ++measured_items;
    }

    VariantRun mf_seq = run_variant(seq_mf, items, store, config.cost_model,
                                    config.cache_capacity_tokens);
    VariantRun mf_fused = run_variant(fused_mf, items, store, config.cost_model,
                                      config.cache_capacity_tokens);
    VariantRun fm_seq = run_variant(seq_fm, items, store, config.cost_model,
                                    config.cache_capacity_tokens);
    VariantRun fm_fused = run_variant(fused_fm, items, store, config.cost_model,
                                      config.cache_capacity_tokens);

    result.map_filter_equivalent &= mf_seq.outcomes == mf_fused.outcomes;
    result.filter_map_equivalent &= fm_seq.outcomes == fm_fused.outcomes;

    // Planner decision at this selectivity, from sequential-run measurements.
    plan::PlanStats stats;
    stats.gen_sites = mf_seq.measured_sites;
    for (const auto& [label, site] : fm_seq.measured_sites) {
      if (!stats.gen_sites.count(label)) stats.gen_sites[label] = site;
    }
    stats.selectivity["keep"] = s;

    FusionCell mf_cell;
    mf_cell.selectivity = s;
    mf_cell.sequential_s = mf_seq.simulated_s;
    mf_cell.fused_s = mf_fused.simulated_s;
    mf_cell.gain = (mf_seq.simulated_s - mf_fused.simulated_s) / mf_seq.simulated_s;
    plan::Plan mf_plan = plan::apply_fusion(seq_mf, stats, config.cost_model, n_items);
    mf_cell.planner_would_fuse =
        std::any_of(mf_plan.applied.begin(), mf_plan.applied.end(),
                    [](const plan::AppliedRewrite& r) { return r.rule == "R1_MAP_FILTER_FUSE"; });
    result.map_filter.push_back(mf_cell);

    FusionCell fm_cell;
    fm_cell.selectivity = s;
    fm_cell.sequential_s = fm_seq.simulated_s;
    fm_cell.fused_s = fm_fused.simulated_s;
    fm_cell.gain = (fm_seq.simulated_s - fm_fused.simulated_s) / fm_seq.simulated_s;
    plan::PlanStats fm_stats;
    fm_stats.gen_sites = fm_seq.measured_sites;
    // The dropped-item runs never execute "clean"; reuse the map-stage shape
    // from the map->filter order with the raw-item payload.
    if (fm_stats.gen_sites.count("clean") == 0 && mf_seq.measured_sites.count("clean")) {
      fm_stats.gen_sites["clean"] = mf_seq.measured_sites.at("clean");
    }
    fm_stats.selectivity["keep"] = s;
    plan::Plan fm_plan = plan::apply_fusion(seq_fm, fm_stats, config.cost_model, n_items);
    fm_cell.planner_would_fuse =
        std::any_of(fm_plan.applied.begin(), fm_plan.applied.end(),
                    [](const plan::AppliedRewrite& r) { return r.rule == "R2_FILTER_MAP_FUSE"; });
    result.filter_map.push_back(fm_cell);
  }

  result.measured_mean_item_tokens = item_tokens / static_cast<double>(measured_items);
  result.measured_mean_summary_tokens = summary_tokens / static_cast<double>(measured_items);
  return result;
}

// --- refinement strategies -----------------------------------------------------------

const char* to_string(RefinementStrategy s) {
  switch (s) {
    case RefinementStrategy::Static: return "static_prompt";
    case RefinementStrategy::AgenticRewrite: return "agentic_rewrite";
    case RefinementStrategy::Manual: return "manual_refinement";
    case RefinementStrategy::Assisted: return "assisted_refinement";
    case RefinementStrategy::Auto: return "auto_refinement";
  }
  return "?";
}

namespace {

// The reusable base view V: a deliberately substantial instruction block
// (examples included) whose rendered prefix is stable across items.
const char* kBaseViewText =
    "TASK: summarize\n"
    "TASK: sentiment\n"
    "GUIDE: condense the post into a short plain summary of at most ten words\n"
    "GUIDE: keep the original meaning and tone without any added commentary\n"
    "GUIDE: prefer plain everyday words over jargon or slang\n"
    "GUIDE: drop handles, links, and other boilerplate from the summary\n"
    "GUIDE: never invent details that the post does not state\n"
    "GUIDE: end with exactly one label line naming the sentiment\n"
    "EXAMPLE:\n"
    "post: the train was delayed again and the platform stayed crowded\n"
    "summary: delayed train and a crowded platform\n"
    "LABEL: negative\n"
    "EXAMPLE:\n"
    "post: the picnic by the lake went smoothly under clear skies\n"
    "summary: a smooth lakeside picnic under clear skies\n"
    "LABEL: positive\n"
    "EXAMPLE:\n"
    "post: the printer jammed twice before the report finally went out\n"
    "summary: printer jammed twice before the report shipped\n"
    "LABEL: negative\n"
    "EXAMPLE:\n"
    "post: dinner with the whole crew ran long and every plate came back empty\n"
    "summary: a long dinner where every plate emptied\n"
    "LABEL: positive\n"
    "INPUT:\n"
    "{{C.item}}";

// What a user hand-writes fresh for every item (post first, then the ask).
std::string static_prompt_text(const CorpusItem& item) {
  return item.text +
         "\nTASK: summarize\n"
         "TASK: sentiment\n"
         "GUIDE: condense the post above into one short plain summary\n"
         "GUIDE: then add exactly one label line naming the sentiment\n"
         "GUIDE: focus on school related content when present";
}

struct StrategyOutcome {
  double time_s = 0.0;
  std::vector<GenEventUsage> gen_usages;
  std::size_t gen_calls = 0;
};

StrategyOutcome run_strategy(RefinementStrategy strategy, const std::vector<CorpusItem>& items,
                             const RunConfig& config) {
  MockBackend backend(MockRuleSet::defaults(), config.cost_model);
  PrefixCache cache(config.cache_capacity_tokens);
  Engine engine(backend, cache);

  RefinerSpec assisted;
  assisted.id = "f_school_hint";
  assisted.mode = RefMode::Assisted;
  assisted.hint = "focus on school related content";
  engine.refiners().add(assisted);

  RefinerSpec auto_ref;
  auto_ref.id = "f_school_auto";
  auto_ref.mode = RefMode::Auto;
  auto_ref.signals = {"confidence"};
  auto_ref.objective = "focus on school related content";
  engine.refiners().add(auto_ref);

  RefinerSpec composer;
  composer.id = "f_agentic_composer";
  composer.mode = RefMode::Auto;
  composer.meta_template =
      "TASK: compose\nOBJECTIVE: summarize the post and label sentiment, focus on school\n"
      "INPUT:\n{{C.item}}";
  engine.refiners().add(composer);

  ExecState state;
  bool uses_view = strategy == RefinementStrategy::Manual ||
                   strategy == RefinementStrategy::Assisted ||
                   strategy == RefinementStrategy::Auto;
  if (uses_view) {
    state.store.create_entry("task_view", kBaseViewText, Value::object(), RefMode::Manual);
  }

  StrategyOutcome outcome;
  auto absorb = [&](RunReport&& report) {
    if (!report.ok) {
      throw SpearError(Errc::ValidationError, "refinement bench run failed: " + report.error);
    }
    outcome.time_s += report.total_simulated_latency_s;
    for (const auto& e : report.events) {
      if (e.kind == OpKind::Gen || e.kind == OpKind::FusedGen) {
        outcome.gen_usages.push_back({e.usage.prompt_tokens, e.usage.cached_prefix_tokens});
        ++outcome.gen_calls;
      }
    }
    state = std::move(report.final_state);
  };

  // One-time view refinement for the view-based strategies.
  if (uses_view) {
    Pipeline setup;
    setup.name = "setup";
    OperatorNode ref;
    ref.kind = OpKind::Ref;
    RefArgs args;
    args.key = "task_view";
    switch (strategy) {
      case RefinementStrategy::Manual:
        args.action = RefAction::Append;
        args.refiner = RefInvocation::literal("Focus on school related content.");
        break;
      case RefinementStrategy::Assisted:
        args.action = RefAction::Update;
        args.refiner = RefInvocation::named("f_school_hint");
        break;
      case RefinementStrategy::Auto:
        args.action = RefAction::Update;
        args.refiner = RefInvocation::named("f_school_auto");
        break;
      default:
        break;
    }
    ref.args = std::move(args);
    setup.nodes = {ref};
    absorb(engine.run(setup, std::move(state)));
  }

  for (const auto& item : items) {
    state.context["item"] = item.text;
    Pipeline per_item;
    per_item.name = "item";
    switch (strategy) {
      case RefinementStrategy::Static: {
        std::string key = "static:" + item.id;
        per_item.nodes = {ref_create_literal(key, static_prompt_text(item)),
                          gen_node("ans", key)};
        break;
      }
      case RefinementStrategy::AgenticRewrite: {
        std::string key = "agentic:" + item.id;
        OperatorNode ref;
        ref.kind = OpKind::Ref;
        RefArgs args;
        args.action = RefAction::Create;
        args.refiner = RefInvocation::named("f_agentic_composer");
        args.key = key;
        ref.args = std::move(args);
        per_item.nodes = {ref, gen_node("ans", key)};
        break;
      }
      default:
        per_item.nodes = {gen_node("ans", "task_view")};
        break;
    }
    absorb(engine.run(per_item, std::move(state)));
  }
  return outcome;
}

}  // namespace

Value RefinementSuiteResult::to_json() const {
  Value rows_json = Value::array();
  for (const auto& row : rows) {
    Value v = Value::object();
    v["strategy"] = to_string(row.strategy);
    v["time_s"] = row.time_s;
    v["speedup"] = row.speedup;
    v["cache_hit"] = row.cache_hit;
    v["cache_hit_requests"] = row.cache_hit_requests;
    v["gen_calls"] = row.gen_calls;
    if (row.f1 >= 0.0) v["f1"] = row.f1;
    rows_json.push_back(v);
  }
  Value v = Value::object();
  v["rows"] = rows_json;
  return v;
}

std::string RefinementSuiteResult::to_csv() const {
  std::ostringstream os;
  os << "strategy,time_s,speedup,cache_hit_pct,cache_hit_requests_pct,gen_calls,f1\n";
  for (const auto& row : rows) {
    os << to_string(row.strategy) << "," << row.time_s << "," << row.speedup << ","
       << row.cache_hit * 100.0 << "," << row.cache_hit_requests * 100.0 << "," << row.gen_calls
       << ",";
    if (row.f1 >= 0.0) os << row.f1;
    os << "\n";
  }
  return os.str();
}

RefinementSuiteResult run_refinement_suite(const RunConfig& config, std::uint64_t seed,
                                           std::size_t n_items) {
  MockRuleSet rules = MockRuleSet::defaults();
  CorpusGenerator gen(seed, rules);
  std::vector<CorpusItem> items = gen.generate(n_items, 0.5, 0.5);

  RefinementSuiteResult result;
  const RefinementStrategy strategies[] = {
      RefinementStrategy::Static, RefinementStrategy::AgenticRewrite, RefinementStrategy::Manual,
      RefinementStrategy::Assisted, RefinementStrategy::Auto};

  double static_time = 0.0;
  for (RefinementStrategy strategy : strategies) {
    StrategyOutcome outcome = run_strategy(strategy, items, config);
    StrategyRow row;
    row.strategy = strategy;
    row.time_s = outcome.time_s;
    row.cache_hit = cache_hit_rate(outcome.gen_usages);
    row.cache_hit_requests = cache_hit_rate_request_weighted(outcome.gen_usages);
    row.gen_calls = outcome.gen_calls;
    if (strategy == RefinementStrategy::Static) static_time = row.time_s;
    result.rows.push_back(row);
  }
  for (auto& row : result.rows) {
    row.speedup = row.time_s > 0.0 ? static_time / row.time_s : 0.0;
  }
  return result;
}

}  // namespace spear::bench
