#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spear/prompt_store.hpp"
#include "spear/value.hpp"

namespace spear {

class Backend;
class PrefixCache;
struct ExecState;

// A registered refinement function f.
//
// MANUAL bodies are pure templates over declared params (same input, same
// output). ASSISTED bodies send "instruction + current prompt + user hint"
// to the backend; AUTO bodies send "instruction + current prompt +
// serialized signal values". Assisted/auto record their resolved output as
// the ref_log payload so replay never re-invokes a backend.
struct RefinerSpec {
  std::string id;
  RefMode mode = RefMode::Manual;
  std::vector<std::string> params;       // manual template parameters
  std::string body;                      // manual template text
  std::optional<RefAction> default_action;
  std::string hint;                      // assisted default hint
  std::vector<std::string> signals;      // auto: metadata keys to serialize
  std::string objective;                 // auto: high-level goal text
  std::string meta_template;             // assisted/auto custom meta prompt
};

// A refiner use site: registered id plus bound arguments, or a literal.
struct RefInvocation {
  std::string refiner_id;                 // empty for pure literals
  std::vector<Value> args;                // positional, bound to spec.params
  std::map<std::string, Value> kwargs;
  std::optional<std::string> literal_text;

  static RefInvocation literal(std::string text);
  static RefInvocation named(std::string id);
  bool is_literal() const { return literal_text.has_value(); }
  std::string display_id() const;
  bool operator==(const RefInvocation&) const = default;
};

struct ResolvedRefinement {
  std::string output;                     // fragment (APPEND) or full text
  RefMode mode = RefMode::Manual;
  std::map<std::string, double> metrics;  // signal snapshot for the record
  double backend_latency_s = 0.0;         // 0 for pure manual refiners
};

class RefinerRegistry {
 public:
  void add(RefinerSpec spec);
  bool has(const std::string& id) const;
  const RefinerSpec& get(const std::string& id) const;
  const std::map<std::string, RefinerSpec>& all() const { return specs_; }

 private:
  std::map<std::string, RefinerSpec> specs_;
};

// Default meta prompt layouts recognized by the mock backend.
std::string assisted_meta_prompt(const std::string& hint, const std::string& current_text);
std::string auto_meta_prompt(const std::string& signal_text, const std::string& objective,
                             const std::string& current_text);

}  // namespace spear
