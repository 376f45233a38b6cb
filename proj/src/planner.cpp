#include "spear/planner.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "spear/dsl.hpp"
#include "spear/errors.hpp"
#include "spear/tokenizer.hpp"

namespace spear::plan {

double PlanStats::selectivity_for(const std::string& site) const {
  auto it = selectivity.find(site);
  return it == selectivity.end() ? default_selectivity : it->second;
}

const GenSiteStats* PlanStats::site_stats(const std::string& label) const {
  auto it = gen_sites.find(label);
  return it == gen_sites.end() ? nullptr : &it->second;
}

Value PlanStats::to_json() const {
  Value v = Value::object();
  v["default_selectivity"] = default_selectivity;
  Value sel = Value::object();
  for (const auto& [k, s] : selectivity) sel[k] = s;
  v["selectivity"] = sel;
  Value sites = Value::object();
  for (const auto& [label, s] : gen_sites) {
    Value row = Value::object();
    row["cached_prompt_tokens"] = s.cached_prompt_tokens;
    row["uncached_prompt_tokens"] = s.uncached_prompt_tokens;
    row["completion_tokens"] = s.completion_tokens;
    sites[label] = row;
  }
  v["gen_sites"] = sites;
  return v;
}

PlanStats PlanStats::from_json(const Value& v) {
  PlanStats stats;
  stats.default_selectivity = v.value("default_selectivity", 0.5);
  if (v.contains("selectivity")) {
    for (auto it = v.at("selectivity").begin(); it != v.at("selectivity").end(); ++it) {
      stats.selectivity[it.key()] = it.value().get<double>();
    }
  }
  if (v.contains("gen_sites")) {
    for (auto it = v.at("gen_sites").begin(); it != v.at("gen_sites").end(); ++it) {
      GenSiteStats s;
      s.cached_prompt_tokens = it.value().value("cached_prompt_tokens", 16.0);
      s.uncached_prompt_tokens = it.value().value("uncached_prompt_tokens", 16.0);
      s.completion_tokens = it.value().value("completion_tokens", 16.0);
      stats.gen_sites[it.key()] = s;
    }
  }
  return stats;
}

Value AppliedRewrite::to_json() const {
  Value v = Value::object();
  v["rule"] = rule;
  v["site"] = site;
  v["estimated_gain_s"] = estimated_gain_s;
  return v;
}

// --- cost estimation ------------------------------------------------------------

namespace {

GenSiteStats stats_or_default(const PlanStats& stats, const std::string& label) {
  if (const GenSiteStats* s = stats.site_stats(label)) return *s;
  if (!stats.allow_defaults) {
    throw SpearError(Errc::MissingStats, "no token stats for GEN site '" + label + "'");
  }
  return GenSiteStats{};
}

double gen_call_cost(const CostModel& model, const GenSiteStats& s) {
  return model.base_latency_s + model.uncached_prompt_token_cost_s * s.uncached_prompt_tokens +
         model.cached_prompt_token_cost_s * s.cached_prompt_tokens +
         model.completion_token_cost_s * s.completion_tokens;
}

double cost_of_nodes(const NodeList& nodes, const PlanStats& stats, const CostModel& model);

double cost_of_node(const OperatorNode& node, const PlanStats& stats, const CostModel& model) {
  switch (node.kind) {
    case OpKind::Gen:
      return gen_call_cost(model, stats_or_default(stats, node.as<GenArgs>().label));
    case OpKind::FusedGen: {
      const auto& args = node.as<FusedGenArgs>();
      GenSiteStats fused;
      fused.uncached_prompt_tokens =
          stats_or_default(stats, args.parts.at(0).label).uncached_prompt_tokens;
      fused.cached_prompt_tokens = 0;
      fused.completion_tokens = 0;
      for (const auto& part : args.parts) {
        GenSiteStats s = stats_or_default(stats, part.label);
        fused.cached_prompt_tokens += s.cached_prompt_tokens;
        fused.completion_tokens += s.completion_tokens;
      }
      return gen_call_cost(model, fused);
    }
    case OpKind::Ref: {
      const auto& args = node.as<RefArgs>();
      double cost = 0.0;
      if (!args.chain.empty()) {
        for (const auto& [action, inv] : args.chain) {
          (void)action;
          auto it = stats.refiner_latency_s.find(inv.display_id());
          if (it != stats.refiner_latency_s.end()) cost += it->second;
        }
        return cost;
      }
      auto it = stats.refiner_latency_s.find(args.refiner.display_id());
      return it == stats.refiner_latency_s.end() ? 0.0 : it->second;
    }
    case OpKind::Check: {
      const auto& args = node.as<CheckArgs>();
      return stats.selectivity_for(args.site) * cost_of_nodes(node.children, stats, model);
    }
    case OpKind::Ret:
    case OpKind::Merge:
    case OpKind::Delegate:
      return 0.0;
    default:
      // Derived operators cost what their desugaring costs.
      return cost_of_nodes(desugar(node), stats, model);
  }
}

double cost_of_nodes(const NodeList& nodes, const PlanStats& stats, const CostModel& model) {
  double total = 0.0;
  for (const auto& node : nodes) total += cost_of_node(node, stats, model);
  return total;
}

}  // namespace

double estimate_cost(const NodeList& nodes, const PlanStats& stats, const CostModel& model,
                     std::size_t n_items) {
  return static_cast<double>(n_items) * cost_of_nodes(nodes, stats, model);
}

double estimate_cost(const Pipeline& pipeline, const PlanStats& stats, const CostModel& model,
                     std::size_t n_items) {
  return estimate_cost(pipeline.nodes, stats, model, n_items);
}

// --- rewrite rules -----------------------------------------------------------------

std::string RewriteSite::describe() const { return rule + "@" + std::to_string(index); }

namespace {

bool directive_gen(const OperatorNode& node) {
  return node.kind == OpKind::Gen && node.as<GenArgs>().prompt_key &&
         node.as<GenArgs>().fusion_class == GenArgs::FusionClass::TaskDirective;
}

bool sectioned_gen(const OperatorNode& node) {
  return node.kind == OpKind::Gen && node.as<GenArgs>().prompt_key &&
         node.as<GenArgs>().fusion_class == GenArgs::FusionClass::Sectioned;
}

bool deps_exactly(const GenArgs& args, const std::string& label) {
  return args.context_deps.size() == 1 && args.context_deps[0] == label;
}

bool deps_contain(const GenArgs& args, const std::string& label) {
  return std::find(args.context_deps.begin(), args.context_deps.end(), label) !=
         args.context_deps.end();
}

// Shared "view:<name>:" prefix marks two sections of one base view.
bool same_base_view(const std::string& key_a, const std::string& key_b) {
  if (key_a.rfind("view:", 0) != 0 || key_b.rfind("view:", 0) != 0) return false;
  std::size_t a = key_a.rfind(':');
  std::size_t b = key_b.rfind(':');
  return a != std::string::npos && b != std::string::npos &&
         key_a.substr(0, a) == key_b.substr(0, b);
}

// R2 guard shape: CHECK[ C["<label>"] == "<literal>" ] { GEN }.
const ConditionExpr* keep_guard(const OperatorNode& check, const std::string& filter_label) {
  const auto& cond = check.as<CheckArgs>().cond;
  if (cond.kind != ConditionExpr::Kind::ContextCmp || cond.key != filter_label ||
      cond.op != CmpOp::Eq || !cond.literal.is_string()) {
    return nullptr;
  }
  return &cond;
}

bool ref_on_known_key(const OperatorNode& node, std::string* key) {
  if (node.kind != OpKind::Ref) return false;
  const auto& args = node.as<RefArgs>();
  if (args.key) {
    *key = *args.key;
    return true;
  }
  if (args.action == RefAction::Create && args.chain.empty()) {
    const std::string& id = args.refiner.display_id();
    *key = id.rfind("f_", 0) == 0 ? id.substr(2) : id;
    return true;
  }
  return false;
}

}  // namespace

std::vector<RewriteSite> applicable_rewrites(const NodeList& nodes) {
  std::vector<RewriteSite> sites;
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    const OperatorNode& a = nodes[i];
    const OperatorNode& b = nodes[i + 1];

    if (directive_gen(a) && directive_gen(b) &&
        deps_exactly(b.as<GenArgs>(), a.as<GenArgs>().label)) {
      sites.push_back({"R1_MAP_FILTER_FUSE", i});
    }

    if (directive_gen(a) && b.kind == OpKind::Check && b.children.size() == 1 &&
        directive_gen(b.children[0]) &&
        !deps_contain(b.children[0].as<GenArgs>(), a.as<GenArgs>().label) &&
        keep_guard(b, a.as<GenArgs>().label) != nullptr) {
      sites.push_back({"R2_FILTER_MAP_FUSE", i});
    }

    if (sectioned_gen(a) && sectioned_gen(b) &&
        same_base_view(*a.as<GenArgs>().prompt_key, *b.as<GenArgs>().prompt_key)) {
      sites.push_back({"R3_GEN_GEN_FUSE", i});
    }

    std::string key_a, key_b;
    if (ref_on_known_key(a, &key_a)) {
      bool b_is_ref = b.kind == OpKind::Ref;
      if (b_is_ref) {
        const auto& rb = b.as<RefArgs>();
        bool same_key = (rb.key && *rb.key == key_a) ||
                        (!rb.key && rb.action != RefAction::Create);
        if (same_key && rb.action != RefAction::Create && rb.chain.empty() &&
            nodes[i].as<RefArgs>().action != RefAction::Create) {
          sites.push_back({"R4_REF_CHAIN_FUSE", i});
        }
      }
    }
  }
  return sites;
}

NodeList apply_rewrite(const NodeList& nodes, const RewriteSite& site) {
  NodeList out(nodes.begin(), nodes.begin() + static_cast<long>(site.index));
  const OperatorNode& a = nodes[site.index];
  const OperatorNode& b = nodes[site.index + 1];

  if (site.rule == "R1_MAP_FILTER_FUSE" || site.rule == "R3_GEN_GEN_FUSE") {
    const auto& ga = a.as<GenArgs>();
    const auto& gb = b.as<GenArgs>();
    OperatorNode fused;
    fused.kind = OpKind::FusedGen;
    FusedGenArgs fa;
    fa.parts = {{ga.label, *ga.prompt_key}, {gb.label, *gb.prompt_key}};
    fa.layout = site.rule == "R1_MAP_FILTER_FUSE" ? FusedGenArgs::Layout::MapFilter
                                                  : FusedGenArgs::Layout::Sections;
    fa.max_tokens = std::max(ga.max_tokens, gb.max_tokens);
    fused.args = std::move(fa);
    out.push_back(std::move(fused));
  } else if (site.rule == "R2_FILTER_MAP_FUSE") {
    const auto& gf = a.as<GenArgs>();
    const auto& gm = b.children[0].as<GenArgs>();
    const ConditionExpr* guard = keep_guard(b, gf.label);
    OperatorNode fused;
    fused.kind = OpKind::FusedGen;
    FusedGenArgs fa;
    fa.parts = {{gf.label, *gf.prompt_key}, {gm.label, *gm.prompt_key}};
    fa.layout = FusedGenArgs::Layout::FilterMap;
    fa.keep_when_label = guard->literal.get<std::string>();
    fa.max_tokens = std::max(gf.max_tokens, gm.max_tokens);
    fused.args = std::move(fa);
    out.push_back(std::move(fused));
  } else if (site.rule == "R4_REF_CHAIN_FUSE") {
    const auto& ra = a.as<RefArgs>();
    const auto& rb = b.as<RefArgs>();
    OperatorNode composite;
    composite.kind = OpKind::Ref;
    RefArgs args;
    std::string key;
    ref_on_known_key(a, &key);
    args.key = ra.key ? *ra.key : key;
    args.action = RefAction::Update;
    if (ra.chain.empty()) {
      args.chain.emplace_back(ra.action, ra.refiner);
    } else {
      args.chain = ra.chain;
    }
    args.chain.emplace_back(rb.action, rb.refiner);
    composite.args = std::move(args);
    out.push_back(std::move(composite));
  } else {
    throw SpearError(Errc::ValidationError, "unknown rewrite rule '" + site.rule + "'");
  }

  out.insert(out.end(), nodes.begin() + static_cast<long>(site.index) + 2, nodes.end());
  return out;
}

// --- fusion planner ---------------------------------------------------------------

namespace {

std::string plan_signature(const NodeList& nodes) {
  std::string sig;
  for (const auto& node : nodes) {
    sig += dsl::pretty_print_node(node);
    sig += ";";
  }
  return sig;
}

std::size_t count_gen_sites(const NodeList& nodes) {
  std::size_t n = 0;
  for (const auto& node : nodes) {
    if (node.kind == OpKind::Gen || node.kind == OpKind::FusedGen) ++n;
    n += count_gen_sites(node.children);
    if (node.kind == OpKind::Switch) {
      for (const auto& branch : node.as<SwitchArgs>().branches) n += count_gen_sites(branch.body);
    }
  }
  return n;
}

struct SearchEntry {
  NodeList nodes;
  std::vector<AppliedRewrite> applied;
  double cost = 0.0;
};

}  // namespace

Plan apply_fusion(const Pipeline& pipeline, const PlanStats& stats, const CostModel& model,
                  std::size_t n_items) {
  Plan plan;
  plan.pipeline = pipeline;

  // Normalization pre-pass: consecutive refinements of one key always
  // collapse into a composite application.
  NodeList nodes = pipeline.nodes;
  std::vector<AppliedRewrite> applied;
  for (;;) {
    auto sites = applicable_rewrites(nodes);
    auto it = std::find_if(sites.begin(), sites.end(), [](const RewriteSite& s) {
      return s.rule == "R4_REF_CHAIN_FUSE";
    });
    if (it == sites.end()) break;
    double before = estimate_cost(nodes, stats, model, n_items);
    nodes = apply_rewrite(nodes, *it);
    double after = estimate_cost(nodes, stats, model, n_items);
    applied.push_back({it->rule, it->describe(), before - after});
  }

  const bool exhaustive = count_gen_sites(nodes) <= 8;

  if (exhaustive) {
    // Closure over all rewrite-reachable variants; minimal estimated cost
    // wins, ties prefer fewer rewrites then signature order.
    std::map<std::string, SearchEntry> seen;
    std::deque<std::string> queue;
    SearchEntry root{nodes, applied, estimate_cost(nodes, stats, model, n_items)};
    std::string root_sig = plan_signature(nodes);
    seen.emplace(root_sig, root);
    queue.push_back(root_sig);
    while (!queue.empty() && seen.size() < 512) {
      SearchEntry cur = seen.at(queue.front());
      queue.pop_front();
      for (const auto& site : applicable_rewrites(cur.nodes)) {
        if (site.rule == "R4_REF_CHAIN_FUSE") continue;  // handled by the pre-pass
        NodeList next = apply_rewrite(cur.nodes, site);
        std::string sig = plan_signature(next);
        if (seen.count(sig)) continue;
        SearchEntry entry;
        entry.cost = estimate_cost(next, stats, model, n_items);
        entry.applied = cur.applied;
        entry.applied.push_back({site.rule, site.describe(), cur.cost - entry.cost});
        entry.nodes = std::move(next);
        seen.emplace(sig, std::move(entry));
        queue.push_back(sig);
      }
    }
    const SearchEntry* best = nullptr;
    const std::string* best_sig = nullptr;
    for (const auto& [sig, entry] : seen) {
      if (best == nullptr || entry.cost < best->cost - 1e-12 ||
          (std::abs(entry.cost - best->cost) <= 1e-12 &&
           (entry.applied.size() < best->applied.size() ||
            (entry.applied.size() == best->applied.size() && sig < *best_sig)))) {
        best = &entry;
        best_sig = &sig;
      }
    }
    plan.pipeline.nodes = best->nodes;
    plan.applied = best->applied;
    plan.estimated_cost_s = best->cost;
    return plan;
  }

  // Greedy fallback for large pipelines: apply the best-gain rewrite until
  // no rewrite improves the estimate.
  double cost = estimate_cost(nodes, stats, model, n_items);
  for (;;) {
    auto sites = applicable_rewrites(nodes);
    const RewriteSite* best_site = nullptr;
    NodeList best_nodes;
    double best_cost = cost;
    for (const auto& site : sites) {
      if (site.rule == "R4_REF_CHAIN_FUSE") continue;
      NodeList next = apply_rewrite(nodes, site);
      double next_cost = estimate_cost(next, stats, model, n_items);
      if (next_cost < best_cost - 1e-12) {
        best_cost = next_cost;
        best_site = &site;
        best_nodes = std::move(next);
      }
    }
    if (best_site == nullptr) break;
    applied.push_back({best_site->rule, best_site->describe(), cost - best_cost});
    nodes = std::move(best_nodes);
    cost = best_cost;
  }
  plan.pipeline.nodes = std::move(nodes);
  plan.applied = std::move(applied);
  plan.estimated_cost_s = cost;
  return plan;
}

// --- refinement planning ------------------------------------------------------------

namespace {

double refiner_token_cost(const meta::RefinerStats& r) {
  return std::max(0.0, r.mean_token_delta);
}

double refiner_marginal_cost(const meta::RefinerStats& r) {
  // Token growth folded into seconds-equivalent units so latency-free
  // refiners still rank by footprint.
  return std::max(0.0, r.mean_latency_s) + refiner_token_cost(r) / 1000.0;
}

double ratio_of(const meta::RefinerStats& r) {
  return r.mean_confidence_delta / (refiner_marginal_cost(r) + 1e-9);
}

bool ratio_order(const meta::RefinerStats& a, const meta::RefinerStats& b) {
  double ra = ratio_of(a), rb = ratio_of(b);
  if (ra != rb) return ra > rb;
  return a.refiner_id < b.refiner_id;
}

bool fits(const std::vector<const meta::RefinerStats*>& chosen, const RefinementBudget& budget) {
  double tokens = 0.0, latency = 0.0;
  for (const auto* r : chosen) {
    tokens += refiner_token_cost(*r);
    latency += std::max(0.0, r->mean_latency_s);
  }
  return tokens <= budget.max_tokens + 1e-9 && latency <= budget.max_latency_s + 1e-9;
}

}  // namespace

double refinement_objective(const std::vector<meta::RefinerStats>& selection) {
  double total = 0.0;
  for (const auto& r : selection) total += r.mean_confidence_delta;
  return total;
}

std::vector<meta::RefinerStats> plan_refinements(const std::vector<meta::RefinerStats>& candidates,
                                                 const RefinementBudget& budget,
                                                 std::size_t exact_limit) {
  std::vector<meta::RefinerStats> selection;
  const std::size_t n = candidates.size();
  if (n == 0) return selection;

  if (n <= exact_limit) {
    // Exact subset search: maximize total confidence gain within budget.
    // Deterministic tie-break: fewer refiners, then lexicographic ids.
    std::uint64_t best_mask = 0;
    double best_gain = 0.0;
    auto mask_ids = [&](std::uint64_t mask) {
      std::vector<std::string> ids;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (1ull << i)) ids.push_back(candidates[i].refiner_id);
      }
      std::sort(ids.begin(), ids.end());
      return ids;
    };
    for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
      double tokens = 0.0, latency = 0.0, gain = 0.0;
      int count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(mask & (1ull << i))) continue;
        tokens += refiner_token_cost(candidates[i]);
        latency += std::max(0.0, candidates[i].mean_latency_s);
        gain += candidates[i].mean_confidence_delta;
        ++count;
      }
      if (tokens > budget.max_tokens + 1e-9 || latency > budget.max_latency_s + 1e-9) continue;
      bool better = gain > best_gain + 1e-12;
      if (!better && std::abs(gain - best_gain) <= 1e-12 && mask != best_mask) {
        int best_count = __builtin_popcountll(best_mask);
        better = count < best_count ||
                 (count == best_count && mask_ids(mask) < mask_ids(best_mask));
      }
      if (better) {
        best_gain = gain;
        best_mask = mask;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (best_mask & (1ull << i)) selection.push_back(candidates[i]);
    }
  } else {
    // Greedy admission by gain/cost ratio.
    std::vector<meta::RefinerStats> order = candidates;
    std::sort(order.begin(), order.end(), ratio_order);
    std::vector<const meta::RefinerStats*> chosen;
    for (const auto& r : order) {
      if (r.mean_confidence_delta <= 0.0) continue;
      chosen.push_back(&r);
      if (!fits(chosen, budget)) {
        chosen.pop_back();
        continue;
      }
      selection.push_back(r);
    }
  }

  std::sort(selection.begin(), selection.end(), ratio_order);
  return selection;
}

// --- view selection ------------------------------------------------------------------

const ViewDef& select_view(const std::set<std::string>& task_tags,
                           const std::vector<ViewDef>& views, const Value& args,
                           const PromptStore& store) {
  const ViewDef* best = nullptr;
  double best_cost = 0.0;
  for (const auto& view : views) {
    bool tag_match = std::any_of(view.tags.begin(), view.tags.end(),
                                 [&](const std::string& t) { return task_tags.count(t) > 0; });
    if (!tag_match) continue;
    double cost;
    try {
      cost = static_cast<double>(token_count(store.render_view(view.name, Value::object(), args)));
    } catch (const SpearError&) {
      cost = static_cast<double>(token_count(view.body));
    }
    if (best == nullptr || cost < best_cost ||
        (cost == best_cost && view.name < best->name)) {
      best = &view;
      best_cost = cost;
    }
  }
  if (best == nullptr) {
    throw SpearError(Errc::NoCandidateView, "no view shares a tag with the task");
  }
  return *best;
}

// --- calibration -----------------------------------------------------------------------

CalibrationGrid CalibrationGrid::defaults() {
  CalibrationGrid grid;
  grid.base_latency_s = {0.04, 0.05, 0.06, 0.08};
  grid.uncached_token_cost_s = {0.003, 0.004, 0.005};
  grid.cached_token_cost_s = {0.0006, 0.0008, 0.001};
  grid.completion_token_cost_s = {0.006, 0.008, 0.01};
  return grid;
}

Value CalibrationGrid::to_json() const {
  Value v = Value::object();
  v["base_latency_s"] = base_latency_s;
  v["cached_token_cost_s"] = cached_token_cost_s;
  v["completion_token_cost_s"] = completion_token_cost_s;
  v["uncached_token_cost_s"] = uncached_token_cost_s;
  return v;
}

CalibrationGrid CalibrationGrid::from_json(const Value& v) {
  CalibrationGrid grid = defaults();
  if (v.contains("base_latency_s")) grid.base_latency_s = v.at("base_latency_s").get<std::vector<double>>();
  if (v.contains("uncached_token_cost_s")) {
    grid.uncached_token_cost_s = v.at("uncached_token_cost_s").get<std::vector<double>>();
  }
  if (v.contains("cached_token_cost_s")) {
    grid.cached_token_cost_s = v.at("cached_token_cost_s").get<std::vector<double>>();
  }
  if (v.contains("completion_token_cost_s")) {
    grid.completion_token_cost_s = v.at("completion_token_cost_s").get<std::vector<double>>();
  }
  return grid;
}

bool gain_pattern_satisfied(const GainMatrix& gains, std::string* why) {
  auto explain = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  for (std::size_t j = 0; j < kSelectivityLevels.size(); ++j) {
    if (gains[0][j] < 0.15 || gains[0][j] > 0.30) {
      return explain("Map->Filter gain outside [15%,30%] at s=" +
                     std::to_string(kSelectivityLevels[j]));
    }
  }
  if (!(gains[1][0] < 0.0)) return explain("Filter->Map gain not negative at s=0.1");
  if (!(gains[1][1] < 0.0)) return explain("Filter->Map gain not negative at s=0.3");
  if (!(gains[1][2] >= 0.0)) return explain("Filter->Map gain negative at s=0.5");
  if (!(gains[1][4] > 0.15)) return explain("Filter->Map gain not above 15% at s=1.0");
  for (std::size_t j = 0; j + 1 < kSelectivityLevels.size(); ++j) {
    if (gains[1][j] > gains[1][j + 1] + 1e-12) {
      return explain("Filter->Map gain not monotone nondecreasing");
    }
  }
  if (why) why->clear();
  return true;
}

namespace {

PlanStats workload_stats(const WorkloadShape& shape, double selectivity) {
  PlanStats stats;
  stats.gen_sites["map"] = {shape.map_instruction_tokens, shape.item_tokens,
                            shape.summary_tokens};
  stats.gen_sites["filter_on_summary"] = {shape.filter_instruction_tokens, shape.summary_tokens,
                                          shape.label_tokens};
  stats.gen_sites["filter_on_item"] = {shape.filter_instruction_tokens, shape.item_tokens,
                                       shape.label_tokens};
  stats.selectivity["keep"] = selectivity;
  return stats;
}

OperatorNode gen_node(const std::string& label) {
  OperatorNode node;
  node.kind = OpKind::Gen;
  GenArgs args;
  args.label = label;
  args.prompt_key = label;
  node.args = std::move(args);
  return node;
}

OperatorNode fused_node(const std::string& first, const std::string& second,
                        FusedGenArgs::Layout layout) {
  OperatorNode node;
  node.kind = OpKind::FusedGen;
  FusedGenArgs args;
  args.parts = {{first, first}, {second, second}};
  args.layout = layout;
  node.args = std::move(args);
  return node;
}

}  // namespace

GainMatrix estimated_gain_matrix(const CostModel& model, const WorkloadShape& shape) {
  GainMatrix gains{};
  for (std::size_t j = 0; j < kSelectivityLevels.size(); ++j) {
    double s = kSelectivityLevels[j];
    PlanStats stats = workload_stats(shape, s);

    // Map -> Filter: both stages run for every item.
    NodeList seq_mf{gen_node("map"), gen_node("filter_on_summary")};
    NodeList fused_mf{fused_node("map", "filter_on_summary", FusedGenArgs::Layout::MapFilter)};
    double seq = estimate_cost(seq_mf, stats, model, 1);
    double fused = estimate_cost(fused_mf, stats, model, 1);
    gains[0][j] = (seq - fused) / seq;

    // Filter -> Map: sequential skips Map for dropped items.
    NodeList seq_fm;
    seq_fm.push_back(gen_node("filter_on_item"));
    OperatorNode check;
    check.kind = OpKind::Check;
    CheckArgs ca;
    ca.cond = ConditionExpr::context_cmp("filter_on_item", CmpOp::Eq, Value("LABEL: negative"));
    ca.site = "keep";
    check.args = std::move(ca);
    check.children.push_back(gen_node("map"));
    seq_fm.push_back(std::move(check));
    NodeList fused_fm{fused_node("filter_on_item", "map", FusedGenArgs::Layout::FilterMap)};
    seq = estimate_cost(seq_fm, stats, model, 1);
    fused = estimate_cost(fused_fm, stats, model, 1);
    gains[1][j] = (seq - fused) / seq;
  }
  return gains;
}

CostModel calibrate(const CalibrationGrid& grid, const WorkloadShape& shape) {
  for (double base : grid.base_latency_s) {
    for (double uncached : grid.uncached_token_cost_s) {
      for (double cached : grid.cached_token_cost_s) {
        for (double completion : grid.completion_token_cost_s) {
          CostModel model;
          model.base_latency_s = base;
          model.uncached_prompt_token_cost_s = uncached;
          model.cached_prompt_token_cost_s = cached;
          model.completion_token_cost_s = completion;
          if (!model.valid()) continue;
          if (gain_pattern_satisfied(estimated_gain_matrix(model, shape))) return model;
        }
      }
    }
  }
  throw SpearError(Errc::CalibrationFailed,
                   "no grid point satisfies the selectivity gain pattern");
}

CostModel default_cost_model() {
  static const CostModel model = calibrate(CalibrationGrid::defaults(), WorkloadShape{});
  return model;
}

}  // namespace spear::plan
