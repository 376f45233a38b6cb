#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spear/config.hpp"
#include "spear/corpus.hpp"
#include "spear/planner.hpp"

namespace spear::bench {

// --- fusion / selectivity sweep -------------------------------------------

struct FusionCell {
  double selectivity = 0.0;
  double sequential_s = 0.0;
  double fused_s = 0.0;
  double gain = 0.0;  // (sequential - fused) / sequential
  bool planner_would_fuse = false;
};

struct FusionSweepResult {
  std::vector<FusionCell> map_filter;
  std::vector<FusionCell> filter_map;
  // Exact-equality checks between fused and sequential runs, per order.
  bool map_filter_equivalent = false;
  bool filter_map_equivalent = false;
  double measured_mean_item_tokens = 0.0;
  double measured_mean_summary_tokens = 0.0;

  plan::GainMatrix gain_matrix() const;
  Value to_json() const;
  std::string to_csv() const;
};

FusionSweepResult run_fusion_sweep(const RunConfig& config, std::uint64_t seed,
                                   std::size_t n_items);

// --- refinement strategies -------------------------------------------------

enum class RefinementStrategy { Static, AgenticRewrite, Manual, Assisted, Auto };
const char* to_string(RefinementStrategy s);

struct StrategyRow {
  RefinementStrategy strategy;
  double time_s = 0.0;           // simulated latency over the whole run
  double speedup = 0.0;          // vs. the Static row
  double cache_hit = 0.0;        // token-weighted, GEN events only
  double cache_hit_requests = 0.0;
  std::size_t gen_calls = 0;
  double f1 = -1.0;              // only populated under a live backend
};

struct RefinementSuiteResult {
  std::vector<StrategyRow> rows;

  Value to_json() const;
  std::string to_csv() const;
};

// Runs the five strategies over the synthetic corpus with a private prefix
// cache per strategy: Static authors a fresh prompt per item; Agentic
// rewrites the prompt from the objective per item; Manual appends to the
// base view once; Assisted/Auto update the view once via the backend.
RefinementSuiteResult run_refinement_suite(const RunConfig& config, std::uint64_t seed,
                                           std::size_t n_items);

}  // namespace spear::bench
