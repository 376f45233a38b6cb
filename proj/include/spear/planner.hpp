#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spear/algebra.hpp"
#include "spear/cost_model.hpp"
#include "spear/meta.hpp"

namespace spear::plan {

// Mean token shape of one GEN site: the stable instruction prefix (cached on
// repeat calls), the per-item payload (uncached), and the completion.
struct GenSiteStats {
  double cached_prompt_tokens = 16.0;
  double uncached_prompt_tokens = 16.0;
  double completion_tokens = 16.0;
};

struct PlanStats {
  std::map<std::string, double> selectivity;       // filter site -> s in [0,1]
  std::map<std::string, GenSiteStats> gen_sites;   // GEN label -> token means
  std::map<std::string, double> refiner_latency_s; // assisted/auto meta calls
  double default_selectivity = 0.5;
  bool allow_defaults = true;

  double selectivity_for(const std::string& site) const;
  const GenSiteStats* site_stats(const std::string& label) const;

  Value to_json() const;
  static PlanStats from_json(const Value& v);
};

struct AppliedRewrite {
  std::string rule;   // R1_MAP_FILTER_FUSE .. R4_REF_CHAIN_FUSE
  std::string site;   // node position, e.g. "2+3"
  double estimated_gain_s = 0.0;

  Value to_json() const;
};

struct Plan {
  Pipeline pipeline;
  std::vector<AppliedRewrite> applied;
  double estimated_cost_s = 0.0;
};

// Expected latency in seconds for n_items sequential per-item executions.
// Per call: c = base + uncached*u + cached*k + completion*m; operators inside
// CHECK bodies weigh by the site's selectivity estimate. Raises MissingStats
// only when stats.allow_defaults is false.
double estimate_cost(const NodeList& nodes, const PlanStats& stats, const CostModel& model,
                     std::size_t n_items = 1);
double estimate_cost(const Pipeline& pipeline, const PlanStats& stats, const CostModel& model,
                     std::size_t n_items = 1);

// One rewrite applicable at one location.
struct RewriteSite {
  std::string rule;
  std::size_t index = 0;  // first node of the matched window
  std::string describe() const;
};

std::vector<RewriteSite> applicable_rewrites(const NodeList& nodes);
NodeList apply_rewrite(const NodeList& nodes, const RewriteSite& site);

// Fusion planner. Rewrite rules:
//   R1 MAP-FILTER-FUSE   adjacent directive GENs where the second consumes
//                        the first's output; fold into one FusedGen
//   R2 FILTER-MAP-FUSE   GEN + CHECK[C[label]=="..."]{GEN}; fused only when
//                        the estimate beats sequential at current selectivity
//   R3 GEN-GEN-FUSE      adjacent sectioned GENs over one base prompt with
//                        no CHECK/REF between
//   R4 REF-CHAIN-FUSE    consecutive REFs on one key collapse into a single
//                        composite record (normalization pre-pass)
// The chosen plan minimizes estimated cost over all rewrite-reachable
// variants (exhaustive closure at desk scale, greedy above the cap).
Plan apply_fusion(const Pipeline& pipeline, const PlanStats& stats, const CostModel& model,
                  std::size_t n_items = 1);

// Budgeted refinement selection. Maximizes total expected confidence gain
// subject to cumulative token and latency budgets; exact subset search up to
// exact_limit candidates, greedy by gain/cost ratio beyond. Output ordered
// by gain/cost ratio (ties by refiner id).
struct RefinementBudget {
  double max_tokens = 0.0;
  double max_latency_s = 0.0;
};

std::vector<meta::RefinerStats> plan_refinements(const std::vector<meta::RefinerStats>& candidates,
                                                 const RefinementBudget& budget,
                                                 std::size_t exact_limit = 12);

// Total confidence gain of a refinement plan (the planner's objective).
double refinement_objective(const std::vector<meta::RefinerStats>& selection);

// Tag-matching view with minimal estimated token cost after parameter
// interpolation; ties break lexicographically by name. Raises
// NoCandidateView when no view shares a tag with the task.
const ViewDef& select_view(const std::set<std::string>& task_tags,
                           const std::vector<ViewDef>& views, const Value& args,
                           const PromptStore& store);

// Grid search over cost-model constants until the estimated fusion-gain
// table satisfies the selectivity pattern constraints; deterministic grid
// order, first satisfying point wins. Raises CalibrationFailed when the grid
// is exhausted.
struct CalibrationGrid {
  std::vector<double> base_latency_s;
  std::vector<double> uncached_token_cost_s;
  std::vector<double> cached_token_cost_s;
  std::vector<double> completion_token_cost_s;

  static CalibrationGrid defaults();
  Value to_json() const;
  static CalibrationGrid from_json(const Value& v);
};

// Gain matrix rows: [0] = Map->Filter, [1] = Filter->Map, columns over
// selectivities {0.1, 0.3, 0.5, 0.8, 1.0}; entries are fractional gains.
using GainMatrix = std::array<std::array<double, 5>, 2>;
inline constexpr std::array<double, 5> kSelectivityLevels = {0.1, 0.3, 0.5, 0.8, 1.0};

// Constraint set: Map->Filter gain within [0.15, 0.30] everywhere;
// Filter->Map negative at 0.1, zero-crossing within (0.3, 0.5], above 0.15
// at 1.0, monotone nondecreasing in s.
bool gain_pattern_satisfied(const GainMatrix& gains, std::string* why = nullptr);

// Token shape of the synthetic tweet workload used for calibration; the
// defaults match the shipped generator and bench views (measured means).
struct WorkloadShape {
  double item_tokens = 21.0;       // raw tweet payload
  double summary_tokens = 10.0;    // map output (truncation limit)
  double map_instruction_tokens = 12.0;
  double filter_instruction_tokens = 10.0;
  double label_tokens = 2.0;       // filter completion
};

GainMatrix estimated_gain_matrix(const CostModel& model, const WorkloadShape& shape);

CostModel calibrate(const CalibrationGrid& grid, const WorkloadShape& shape);

// The shipped default model: the first grid point satisfying the pattern.
CostModel default_cost_model();

}  // namespace spear::plan
