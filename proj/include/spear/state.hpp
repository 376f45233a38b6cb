#pragma once

#include <map>
#include <string>

#include "spear/prompt_store.hpp"
#include "spear/value.hpp"

namespace spear {

// M: numeric control signals and diagnostics keyed by name, e.g.
// "confidence", "confidence:answer_0", "prompt_tokens:answer_0",
// "check_fired:qa/1", "retries:answer".
using Metadata = std::map<std::string, double>;

// The (P, C, M) triple every operator consumes and produces.
struct ExecState {
  PromptStore store;
  Value context = Value::object();
  Metadata metadata;

  // Canonical serialization: object keys sorted, numbers in shortest
  // round-trip form. Equal states serialize to identical bytes.
  std::string canonical_serialize() const;
  std::string state_hash() const;

  // Re-checks structural invariants (finite metrics, confidence range,
  // nonempty context keys, per-entry hash chains). Used by debug-mode
  // closure checks after each operator.
  void check_invariants() const;
};

Value metadata_to_json(const Metadata& m);
Metadata metadata_from_json(const Value& v);

}  // namespace spear
