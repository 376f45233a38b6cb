#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spear/condition.hpp"
#include "spear/prompt_store.hpp"
#include "spear/value.hpp"

namespace spear {
struct RunEvent;
}

namespace spear::meta {

// Aggregated effectiveness of one refiner under one trigger expression.
struct RefinerStats {
  std::string refiner_id;
  std::string trigger;  // canonical condition text; empty when untriggered
  std::size_t n_applied = 0;
  double mean_confidence_delta = 0.0;
  double mean_token_delta = 0.0;
  double mean_latency_s = 0.0;
  // Fraction of applications followed by another refinement of the same key
  // (the retry chain continued).
  double retry_follow_rate = 0.0;

  Value to_json() const;
  static RefinerStats from_json(const Value& v);
};

struct StatsTable {
  std::vector<RefinerStats> rows;  // sorted by mean_confidence_delta desc
  std::size_t unmeasured_applications = 0;

  Value to_json() const;
  std::string to_csv() const;
};

// Folds run-report event streams into per-(refiner, trigger) statistics.
// The confidence delta of one application is the confidence of the first GEN
// reading the refined key after the refinement minus that of the last GEN
// reading it before; applications without both measurements land in the
// unmeasured bucket. Pure: recomputation yields identical tables.
StatsTable refiner_stats(const std::vector<std::vector<RunEvent>>& runs);

// Best refiner historically applied under an equal (string-canonical)
// trigger with at least `support` applications; nullopt when none qualifies.
std::optional<std::string> recommend_refiner(const StatsTable& stats, const ConditionExpr& trigger,
                                             std::size_t support = 3);

struct TraceRow {
  std::size_t index = 0;
  std::string action;
  std::string mode;
  std::string refiner_id;
  std::string trigger;
  long long text_size_delta = 0;  // bytes
  std::map<std::string, double> metrics;

  Value to_json() const;
};

// Per-record evolution data for CLI inspection (no graphics).
std::vector<TraceRow> history_trace(const PromptEntry& entry);

}  // namespace spear::meta
