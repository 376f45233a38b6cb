#pragma once

#include <memory>
#include <string>
#include <vector>

#include "spear/value.hpp"

namespace spear {

struct ExecState;

enum class CmpOp { Lt, Le, Gt, Ge, Eq, Ne };

// Boolean expression over the run state, as used by CHECK/SWITCH/RETRY.
//
// Atoms:
//   M["k"] <op> literal      metric comparison (absent key -> false)
//   C["k"] <op> literal      context comparison (absent key -> TypeMismatch)
//   "k" in C / "k" not in C  membership (also supported for M)
//   some_flag                bare identifier: true iff C["some_flag"] is
//                            present and boolean true
// Connectives: and / or / not, with parentheses. `not` binds tightest,
// then `and`, then `or`.
struct ConditionExpr {
  enum class Kind {
    True,
    MetricCmp,
    ContextCmp,
    MemberContext,
    MemberMetadata,
    Flag,
    And,
    Or,
    Not,
  };

  Kind kind = Kind::True;
  std::string key;
  CmpOp op = CmpOp::Eq;
  Value literal;
  bool negate_membership = false;
  std::vector<ConditionExpr> children;

  static ConditionExpr always_true() { return ConditionExpr{}; }
  static ConditionExpr metric_cmp(std::string key, CmpOp op, double literal);
  static ConditionExpr context_cmp(std::string key, CmpOp op, Value literal);
  static ConditionExpr member(std::string key, bool in_context, bool negated);
  static ConditionExpr flag(std::string key);
  static ConditionExpr conj(std::vector<ConditionExpr> parts);
  static ConditionExpr disj(std::vector<ConditionExpr> parts);
  static ConditionExpr negate(ConditionExpr inner);
};

// Parses the condition grammar above. Throws SpearError{ValidationError}
// with a position-annotated message on malformed input.
ConditionExpr parse_condition(const std::string& text);

// Canonical text form; parse_condition(to_string(c)) reproduces c.
std::string to_string(const ConditionExpr& cond);

// Pure evaluation against (C, M). Never mutates state. Throws
// SpearError{TypeMismatch} for ill-typed context comparisons.
bool eval_condition(const ConditionExpr& cond, const ExecState& state);

bool operator==(const ConditionExpr& a, const ConditionExpr& b);

}  // namespace spear
