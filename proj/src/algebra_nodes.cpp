#include <algorithm>

#include "spear/algebra.hpp"
#include "spear/errors.hpp"
#include "spear/hashing.hpp"

namespace spear {

const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::Ret: return "RET";
    case OpKind::Gen: return "GEN";
    case OpKind::Ref: return "REF";
    case OpKind::Check: return "CHECK";
    case OpKind::Merge: return "MERGE";
    case OpKind::Delegate: return "DELEGATE";
    case OpKind::Expand: return "EXPAND";
    case OpKind::Retry: return "RETRY";
    case OpKind::Map: return "MAP";
    case OpKind::Switch: return "SWITCH";
    case OpKind::View: return "VIEW";
    case OpKind::Diff: return "DIFF";
    case OpKind::FusedGen: return "FUSED_GEN";
  }
  return "?";
}

bool is_core(OpKind k) {
  switch (k) {
    case OpKind::Ret:
    case OpKind::Gen:
    case OpKind::Ref:
    case OpKind::Check:
    case OpKind::Merge:
    case OpKind::Delegate:
    case OpKind::FusedGen:
      return true;
    default:
      return false;
  }
}

bool is_derived(OpKind k) { return !is_core(k); }

std::string MergePolicy::name() const {
  switch (kind) {
    case MergePolicyKind::PickLeft: return "pick_left";
    case MergePolicyKind::PickRight: return "pick_right";
    case MergePolicyKind::PickByMetric:
      return "by_metric(" + metric_key + (higher_is_better ? "" : ",lower") + ")";
    case MergePolicyKind::ConcatSections: return "concat";
  }
  return "?";
}

PayloadExpr PayloadExpr::context(std::string path) {
  PayloadExpr e;
  e.context_path = std::move(path);
  return e;
}

PayloadExpr PayloadExpr::value(Value v) {
  PayloadExpr e;
  e.literal = std::move(v);
  return e;
}

// --- structural equality -----------------------------------------------------

bool operator==(const CheckArgs& a, const CheckArgs& b) {
  return a.cond == b.cond && a.site == b.site && a.retry_label == b.retry_label;
}

bool operator==(const RetryArgs& a, const RetryArgs& b) {
  return a.cond == b.cond && a.refiner == b.refiner && a.max_retries == b.max_retries &&
         a.site == b.site;
}

bool operator==(const OperatorNode& a, const OperatorNode& b);

bool node_list_equal(const NodeList& a, const NodeList& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(),
                    [](const OperatorNode& x, const OperatorNode& y) { return x == y; }) &&
         a.size() == b.size();
}

bool operator==(const SwitchBranch& a, const SwitchBranch& b) {
  if (a.guard.has_value() != b.guard.has_value()) return false;
  if (a.guard && !(*a.guard == *b.guard)) return false;
  return node_list_equal(a.body, b.body);
}

bool operator==(const SwitchArgs& a, const SwitchArgs& b) {
  return a.site == b.site &&
         std::equal(a.branches.begin(), a.branches.end(), b.branches.begin(), b.branches.end()) &&
         a.branches.size() == b.branches.size();
}

bool operator==(const OperatorNode& a, const OperatorNode& b) {
  return a.kind == b.kind && a.args == b.args && node_list_equal(a.children, b.children);
}

bool node_equal(const OperatorNode& a, const OperatorNode& b) { return a == b; }

// --- default keys --------------------------------------------------------------

std::string default_merge_key(const std::string& left, const std::string& right) {
  return "merge:" + left + ":" + right;
}

std::string view_materialization_key(const std::string& view, const Value& args) {
  return "view:" + view + ":" + sha256_hex16(args.is_null() ? "{}" : args.dump());
}

// --- desugaring ------------------------------------------------------------------

namespace {

// Prompt key a retried operator reads, when statically known.
std::optional<std::string> retried_prompt_key(const OperatorNode& op) {
  if (op.kind == OpKind::Gen) return op.as<GenArgs>().prompt_key;
  if (op.kind == OpKind::Ret) return op.as<RetArgs>().prompt_key;
  return std::nullopt;
}

std::string retried_label(const OperatorNode& op) {
  if (op.kind == OpKind::Gen) return op.as<GenArgs>().label;
  if (op.kind == OpKind::Ret) return op.as<RetArgs>().source;
  return "op";
}

// Metric keys referenced by a condition, for the default auto refiner.
void collect_signal_keys(const ConditionExpr& cond, std::vector<std::string>& out) {
  if (cond.kind == ConditionExpr::Kind::MetricCmp ||
      cond.kind == ConditionExpr::Kind::MemberMetadata) {
    if (std::find(out.begin(), out.end(), cond.key) == out.end()) out.push_back(cond.key);
  }
  for (const auto& child : cond.children) collect_signal_keys(child, out);
}

OperatorNode make_check(ConditionExpr cond, std::string site, NodeList body,
                        std::optional<std::string> retry_label = std::nullopt) {
  OperatorNode node;
  node.kind = OpKind::Check;
  CheckArgs args;
  args.cond = std::move(cond);
  args.site = std::move(site);
  args.retry_label = std::move(retry_label);
  node.args = std::move(args);
  node.children = std::move(body);
  return node;
}

}  // namespace

NodeList desugar(const OperatorNode& node) {
  switch (node.kind) {
    case OpKind::Expand: {
      const auto& args = node.as<ExpandArgs>();
      OperatorNode ref;
      ref.kind = OpKind::Ref;
      RefArgs ra;
      ra.action = RefAction::Append;
      ra.refiner = RefInvocation::literal(args.text);
      ra.key = args.key;
      ref.args = std::move(ra);
      return {ref};
    }

    case OpKind::Retry: {
      const auto& args = node.as<RetryArgs>();
      const OperatorNode& op = node.children.at(0);
      NodeList out;
      out.push_back(op);

      RefInvocation refiner;
      if (args.refiner) {
        refiner = *args.refiner;
      } else {
        refiner = RefInvocation::named("auto:default");
        std::vector<std::string> signals;
        collect_signal_keys(args.cond, signals);
        Value sig = Value::array();
        for (const auto& s : signals) sig.push_back(s);
        refiner.kwargs["signals"] = sig;
      }

      OperatorNode ref;
      ref.kind = OpKind::Ref;
      RefArgs ra;
      ra.action = RefAction::Update;
      ra.refiner = refiner;
      ra.key = retried_prompt_key(op);
      ref.args = std::move(ra);

      std::string label = retried_label(op);
      for (int i = 1; i <= args.max_retries; ++i) {
        NodeList body;
        body.push_back(ref);
        body.push_back(op);
        out.push_back(make_check(args.cond, args.site + ".r" + std::to_string(i),
                                 std::move(body), label));
      }
      return out;
    }

    case OpKind::Map: {
      const auto& args = node.as<MapArgs>();
      NodeList out;
      for (const auto& key : args.keys) {
        OperatorNode ref;
        ref.kind = OpKind::Ref;
        RefArgs ra;
        ra.action = RefAction::Update;
        ra.refiner = args.refiner;
        ra.key = key;
        ref.args = std::move(ra);
        out.push_back(std::move(ref));
      }
      return out;
    }

    case OpKind::Switch: {
      const auto& args = node.as<SwitchArgs>();
      NodeList out;
      for (std::size_t i = 0; i < args.branches.size(); ++i) {
        const SwitchBranch& branch = args.branches[i];
        // First-match: a branch fires only when no earlier branch did. The
        // earlier checks' fired markers exist by evaluation time, so the
        // conjunction short-circuits before touching this branch's guard.
        std::vector<ConditionExpr> parts;
        for (std::size_t j = 0; j < i; ++j) {
          parts.push_back(ConditionExpr::metric_cmp(
              "check_fired:" + args.site + ".b" + std::to_string(j), CmpOp::Eq, 0.0));
        }
        if (branch.guard) parts.push_back(*branch.guard);
        ConditionExpr cond = parts.empty()
                                 ? ConditionExpr::always_true()
                                 : (parts.size() == 1 ? parts[0] : ConditionExpr::conj(parts));
        out.push_back(make_check(std::move(cond), args.site + ".b" + std::to_string(i),
                                 branch.body));
      }
      return out;
    }

    case OpKind::View: {
      const auto& args = node.as<ViewArgs>();
      OperatorNode ref;
      ref.kind = OpKind::Ref;
      RefArgs ra;
      ra.action = RefAction::Create;
      ra.upsert = true;
      RefInvocation inv = RefInvocation::named("view:" + args.view);
      for (const auto& [k, v] : args.args) inv.kwargs[k] = v;
      ra.refiner = std::move(inv);
      ra.key = args.key ? *args.key : view_materialization_key(args.view, Value(args.args));
      ref.args = std::move(ra);
      return {ref};
    }

    case OpKind::Diff: {
      const auto& args = node.as<DiffArgs>();
      OperatorNode del;
      del.kind = OpKind::Delegate;
      DelegateArgs da;
      da.agent = "spear::diff";
      Value payload = Value::array();
      payload.push_back(args.left);
      payload.push_back(args.right);
      da.payload = PayloadExpr::value(payload);
      da.out_key = "diff:" + args.left + ":" + args.right;
      del.args = std::move(da);
      return {del};
    }

    default:
      throw SpearError(Errc::NotDerived,
                       std::string(to_string(node.kind)) + " has no desugaring");
  }
}

NodeList desugar_all(const NodeList& nodes) {
  NodeList out;
  for (const auto& node : nodes) {
    if (is_derived(node.kind)) {
      for (auto& expanded : desugar_all(desugar(node))) out.push_back(std::move(expanded));
    } else {
      OperatorNode copy = node;
      copy.children = desugar_all(node.children);
      if (copy.kind == OpKind::Check) {
        // keep body as-is; already desugared above
      }
      out.push_back(std::move(copy));
    }
  }
  return out;
}

}  // namespace spear
