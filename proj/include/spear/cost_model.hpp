#pragma once

#include <cstddef>

#include "spear/value.hpp"

namespace spear {

// Latency model for one LLM invocation:
//   c = base + uncached_tokens*u + cached_tokens*k + completion_tokens*m
// Cached-token cost must stay below uncached cost; all terms nonnegative.
struct CostModel {
  double base_latency_s = 0.05;
  double uncached_prompt_token_cost_s = 0.004;
  double cached_prompt_token_cost_s = 0.0008;
  double completion_token_cost_s = 0.008;

  bool valid() const {
    return base_latency_s >= 0 && uncached_prompt_token_cost_s >= 0 &&
           cached_prompt_token_cost_s >= 0 && completion_token_cost_s >= 0 &&
           cached_prompt_token_cost_s < uncached_prompt_token_cost_s;
  }

  double call_cost(std::size_t uncached_tokens, std::size_t cached_tokens,
                   std::size_t completion_tokens) const {
    return base_latency_s + uncached_prompt_token_cost_s * static_cast<double>(uncached_tokens) +
           cached_prompt_token_cost_s * static_cast<double>(cached_tokens) +
           completion_token_cost_s * static_cast<double>(completion_tokens);
  }

  Value to_json() const;
  static CostModel from_json(const Value& v);
};

}  // namespace spear
