#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "spear/backend.hpp"
#include "spear/condition.hpp"
#include "spear/refiner.hpp"
#include "spear/state.hpp"
#include "spear/value.hpp"

namespace spear {

// Core operators close over (P, C, M); derived operators carry a canonical
// desugaring into core sequences (see desugar()).
enum class OpKind {
  Ret,
  Gen,
  Ref,
  Check,
  Merge,
  Delegate,
  // derived
  Expand,
  Retry,
  Map,
  Switch,
  View,
  Diff,
  // planner-introduced
  FusedGen,
};

const char* to_string(OpKind k);
bool is_core(OpKind k);
bool is_derived(OpKind k);

enum class MergePolicyKind { PickLeft, PickRight, PickByMetric, ConcatSections };

struct MergePolicy {
  MergePolicyKind kind = MergePolicyKind::PickByMetric;
  std::string metric_key = "confidence";  // PickByMetric
  bool higher_is_better = true;
  std::string separator = "\n---\n";      // ConcatSections

  std::string name() const;
  bool operator==(const MergePolicy&) const = default;
};

// Payload expression for DELEGATE: a context path or a literal value.
struct PayloadExpr {
  std::optional<std::string> context_path;
  Value literal;

  static PayloadExpr context(std::string path);
  static PayloadExpr value(Value v);
  bool operator==(const PayloadExpr&) const = default;
};

struct OperatorNode;
using NodeList = std::vector<OperatorNode>;

struct RetArgs {
  std::string source;
  std::optional<std::string> prompt_key;  // prompt-based retrieval
  bool operator==(const RetArgs&) const = default;
};

struct GenArgs {
  std::string label;
  std::optional<std::string> prompt_key;  // defaults to the current prompt
  std::size_t max_tokens = 256;
  // Filled by validation for the planner: context keys the prompt reads and
  // whether the template is a TASK-directive / sectioned layout.
  std::vector<std::string> context_deps;
  enum class FusionClass { None, TaskDirective, Sectioned };
  FusionClass fusion_class = FusionClass::None;
  bool operator==(const GenArgs&) const = default;
};

struct RefArgs {
  RefAction action = RefAction::Update;
  RefInvocation refiner;
  std::optional<std::string> key;  // default: CREATE derives from refiner id,
                                   // otherwise the current prompt key
  bool upsert = false;  // view materialization: CREATE-or-UPDATE
  // Composite refinement (REF-chain fusion): steps applied in order with a
  // single composite log record carrying ordered sub-records.
  std::vector<std::pair<RefAction, RefInvocation>> chain;
  bool operator==(const RefArgs&) const = default;
};

struct CheckArgs {
  ConditionExpr cond;
  std::string site;  // stable id for M["check_fired:<site>"]
  std::optional<std::string> retry_label;  // set by RETRY desugaring
};

struct MergeArgs {
  std::string left;
  std::string right;
  std::string out;  // default "merge:<left>:<right>"
  MergePolicy policy;
  bool operator==(const MergeArgs&) const = default;
};

struct DelegateArgs {
  std::string agent;
  PayloadExpr payload;
  std::string out_key;
  bool operator==(const DelegateArgs&) const = default;
};

struct ExpandArgs {
  std::string key;
  std::string text;
  bool operator==(const ExpandArgs&) const = default;
};

struct RetryArgs {
  // retried operator lives in children[0]
  ConditionExpr cond;
  std::optional<RefInvocation> refiner;  // default: auto-refine the read prompt
  int max_retries = 1;
  std::string site;
};

struct SwitchBranch {
  std::optional<ConditionExpr> guard;  // nullopt = default arm
  NodeList body;
};

struct SwitchArgs {
  std::vector<SwitchBranch> branches;
  std::string site;
};

struct MapArgs {
  std::vector<std::string> keys;
  RefInvocation refiner;
  bool operator==(const MapArgs&) const = default;
};

struct ViewArgs {
  std::string view;
  std::map<std::string, Value> args;
  std::optional<std::string> key;  // default "view:<name>:<hash(args)>"
  bool operator==(const ViewArgs&) const = default;
};

struct DiffArgs {
  std::string left;
  std::string right;
  bool operator==(const DiffArgs&) const = default;
};

// One LLM call standing in for several fused GEN sites. The response splits
// into a summary part and a final "LABEL:" line; each part routes back to
// the context key its unfused GEN would have written. With a keep guard the
// summary is written only when the label matches, preserving the sequential
// plan's conditional behavior. Sectioned fusions split on "## " headings.
struct FusedGenArgs {
  struct Part {
    std::string label;
    std::string prompt_key;
    bool operator==(const Part&) const = default;
  };
  enum class Layout { MapFilter, FilterMap, Sections };

  std::vector<Part> parts;
  Layout layout = Layout::MapFilter;
  std::optional<std::string> keep_when_label;  // e.g. "LABEL: negative"
  std::size_t max_tokens = 256;
  bool operator==(const FusedGenArgs&) const = default;
};

using OpArgs = std::variant<RetArgs, GenArgs, RefArgs, CheckArgs, MergeArgs, DelegateArgs,
                            ExpandArgs, RetryArgs, MapArgs, SwitchArgs, ViewArgs, DiffArgs,
                            FusedGenArgs>;

struct SourceSpan {
  std::size_t offset = 0;
  std::size_t length = 0;
  int line = 0;
  int column = 0;
};

struct OperatorNode {
  OpKind kind = OpKind::Ret;
  OpArgs args = RetArgs{};
  NodeList children;  // CHECK body / RETRY inner op
  SourceSpan span;

  template <typename T>
  const T& as() const {
    return std::get<T>(args);
  }
  template <typename T>
  T& as() {
    return std::get<T>(args);
  }
};

bool node_equal(const OperatorNode& a, const OperatorNode& b);
bool operator==(const OperatorNode& a, const OperatorNode& b);
bool node_list_equal(const NodeList& a, const NodeList& b);

struct Pipeline {
  std::string name;
  NodeList nodes;
  SourceSpan span;
};

// Canonical core-op expansion of a derived node. Site names for generated
// CHECKs derive from the node's own site so a pre-desugared pipeline runs
// byte-identically to the derived form. Raises NotDerived for core kinds.
NodeList desugar(const OperatorNode& node);

// Recursively desugars every derived node in a list (children included).
NodeList desugar_all(const NodeList& nodes);

// Fills empty CHECK/RETRY/SWITCH site ids deterministically from the node's
// position ("<pipeline>/<index path>"). Runs before execution so derived
// forms and their pre-desugared equivalents produce identical M keys.
void assign_sites(Pipeline& pipeline);

// --- registries ----------------------------------------------------------

struct RetrievalResult {
  Value value;
  std::size_t item_count = 0;
};

class SourceRegistry {
 public:
  using Fn = std::function<RetrievalResult(const std::optional<std::string>& query)>;

  void add_inline(const std::string& name, Value items);
  void add_jsonl_file(const std::string& name, const std::string& path);
  void add_fn(const std::string& name, Fn fn);
  bool has(const std::string& name) const;
  RetrievalResult retrieve(const std::string& name, const std::optional<std::string>& query) const;

 private:
  std::map<std::string, Fn> sources_;
};

// Agents receive the payload and a read-only view of the state; results flow
// back only through the declared context key.
class AgentRegistry {
 public:
  using Fn = std::function<Value(const Value& payload, const ExecState& state)>;

  void add(const std::string& name, Fn fn);
  void alias(const std::string& name, const std::string& target);
  bool has(const std::string& name) const;
  Value invoke(const std::string& name, const Value& payload, const ExecState& state) const;

  // identity, evidence_scorer, spear::diff
  static void register_builtins(AgentRegistry& reg, const MockRuleSet& rules);

 private:
  std::map<std::string, Fn> agents_;
};

// --- execution -------------------------------------------------------------

struct RunOptions {
  bool shadow = false;
  bool debug_invariants = false;
  bool include_state_in_report = false;
  std::string event_log_path;  // JSONL stream when nonempty
};

struct RunEvent {
  std::size_t index = 0;
  OpKind kind = OpKind::Ret;
  std::string site;
  std::string label;       // GEN label / REF key / agent / source
  std::string prompt_key;  // GEN + REF sites
  std::string refiner_id;
  std::string trigger;     // REF under CHECK: canonical condition
  double duration_s = 0.0;  // simulated backend latency (0 for pure ops)
  std::optional<bool> fired;  // CHECK outcome
  TokenUsage usage;           // GEN / FusedGen calls
  double confidence = -1.0;   // GEN confidence, -1 when n/a
  std::vector<std::string> context_written;
  std::vector<std::string> metadata_written;
  std::vector<std::string> prompts_written;

  Value to_json() const;
  static RunEvent from_json(const Value& v);
};

struct RunReport {
  std::string pipeline;
  bool ok = true;
  std::string error;
  std::vector<RunEvent> events;
  ExecState final_state;
  Value applied_rewrites = Value::array();
  double total_simulated_latency_s = 0.0;

  std::vector<GenEventUsage> gen_usages() const;
  Value to_json(bool include_state) const;
};

// Executes pipelines over an ExecState. Derived operators run through their
// desugaring; the engine interprets core kinds plus FusedGen.
class Engine {
 public:
  Engine(Backend& backend, PrefixCache& cache);

  SourceRegistry& sources() { return sources_; }
  AgentRegistry& agents() { return agents_; }
  RefinerRegistry& refiners() { return refiners_; }

  RunReport run(const Pipeline& pipeline, ExecState initial, const RunOptions& options = {});

  // Resolves a refiner invocation to its output text (manual templates are
  // pure; assisted/auto call the backend). Exposed for REF execution and the
  // prompt-store CLI paths.
  ResolvedRefinement resolve_refinement(const RefInvocation& invocation,
                                        const std::string& current_text,
                                        const ExecState& state);

 private:
  struct RunCtx;

  void exec_nodes(const NodeList& nodes, ExecState& state, RunCtx& ctx);
  void exec_node(const OperatorNode& node, ExecState& state, RunCtx& ctx);

  void op_ret(const RetArgs& args, ExecState& state, RunCtx& ctx);
  void op_gen(const GenArgs& args, ExecState& state, RunCtx& ctx);
  void op_fused_gen(const FusedGenArgs& args, ExecState& state, RunCtx& ctx);
  void op_ref(const RefArgs& args, ExecState& state, RunCtx& ctx);
  void op_check(const OperatorNode& node, ExecState& state, RunCtx& ctx);
  void op_merge(const MergeArgs& args, ExecState& state, RunCtx& ctx);
  void op_delegate(const DelegateArgs& args, ExecState& state, RunCtx& ctx);

  Backend& backend_;
  PrefixCache& cache_;
  SourceRegistry sources_;
  AgentRegistry agents_;
  RefinerRegistry refiners_;
};

// Deterministic default key for merge output and view materialization.
std::string default_merge_key(const std::string& left, const std::string& right);
std::string view_materialization_key(const std::string& view, const Value& args);

}  // namespace spear
