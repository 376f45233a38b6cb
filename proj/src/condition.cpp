#include "spear/condition.hpp"

#include <sstream>

#include "lexer.hpp"
#include "spear/errors.hpp"
#include "spear/state.hpp"

namespace spear {

using detail::Tok;

ConditionExpr ConditionExpr::metric_cmp(std::string key, CmpOp op, double literal) {
  ConditionExpr e;
  e.kind = Kind::MetricCmp;
  e.key = std::move(key);
  e.op = op;
  e.literal = literal;
  return e;
}

ConditionExpr ConditionExpr::context_cmp(std::string key, CmpOp op, Value literal) {
  ConditionExpr e;
  e.kind = Kind::ContextCmp;
  e.key = std::move(key);
  e.op = op;
  e.literal = std::move(literal);
  return e;
}

ConditionExpr ConditionExpr::member(std::string key, bool in_context, bool negated) {
  ConditionExpr e;
  e.kind = in_context ? Kind::MemberContext : Kind::MemberMetadata;
  e.key = std::move(key);
  e.negate_membership = negated;
  return e;
}

ConditionExpr ConditionExpr::flag(std::string key) {
  ConditionExpr e;
  e.kind = Kind::Flag;
  e.key = std::move(key);
  return e;
}

ConditionExpr ConditionExpr::conj(std::vector<ConditionExpr> parts) {
  ConditionExpr e;
  e.kind = Kind::And;
  e.children = std::move(parts);
  return e;
}

ConditionExpr ConditionExpr::disj(std::vector<ConditionExpr> parts) {
  ConditionExpr e;
  e.kind = Kind::Or;
  e.children = std::move(parts);
  return e;
}

ConditionExpr ConditionExpr::negate(ConditionExpr inner) {
  ConditionExpr e;
  e.kind = Kind::Not;
  e.children.push_back(std::move(inner));
  return e;
}

namespace {

[[noreturn]] void fail(const Tok& at, const std::string& message) {
  std::ostringstream os;
  os << "condition at " << at.line << ":" << at.column << ": " << message;
  throw SpearError(Errc::ValidationError, os.str());
}

CmpOp cmp_from_text(const Tok& t) {
  if (t.text == "<") return CmpOp::Lt;
  if (t.text == "<=") return CmpOp::Le;
  if (t.text == ">") return CmpOp::Gt;
  if (t.text == ">=") return CmpOp::Ge;
  if (t.text == "==") return CmpOp::Eq;
  if (t.text == "!=") return CmpOp::Ne;
  fail(t, "expected a comparison operator");
}

const char* cmp_text(CmpOp op) {
  switch (op) {
    case CmpOp::Lt: return "<";
    case CmpOp::Le: return "<=";
    case CmpOp::Gt: return ">";
    case CmpOp::Ge: return ">=";
    case CmpOp::Eq: return "==";
    case CmpOp::Ne: return "!=";
  }
  return "==";
}

bool is_punct(const Tok& t, const char* text) {
  return t.type == Tok::T::Punct && t.text == text;
}
bool is_ident(const Tok& t, const char* text) {
  return t.type == Tok::T::Ident && t.text == text;
}

}  // namespace

namespace detail {

// Recursive-descent condition parser over a shared token stream; also used
// by the DSL parser for bracketed condition arguments.
ConditionExpr parse_condition_tokens(const std::vector<Tok>& toks, std::size_t& pos);

namespace {

Value parse_literal(const std::vector<Tok>& toks, std::size_t& pos) {
  const Tok& t = toks[pos];
  if (t.type == Tok::T::Num) {
    ++pos;
    return Value(t.num);
  }
  if (t.type == Tok::T::Str) {
    ++pos;
    return Value(t.text);
  }
  if (is_ident(t, "true")) {
    ++pos;
    return Value(true);
  }
  if (is_ident(t, "false")) {
    ++pos;
    return Value(false);
  }
  fail(t, "expected a literal (number, string, or boolean)");
}

std::string parse_bracket_key(const std::vector<Tok>& toks, std::size_t& pos) {
  if (!is_punct(toks[pos], "[")) fail(toks[pos], "expected '['");
  ++pos;
  if (toks[pos].type != Tok::T::Str) fail(toks[pos], "expected a quoted key");
  std::string key = toks[pos].text;
  ++pos;
  if (!is_punct(toks[pos], "]")) fail(toks[pos], "expected ']'");
  ++pos;
  return key;
}

ConditionExpr parse_atom(const std::vector<Tok>& toks, std::size_t& pos) {
  const Tok& t = toks[pos];

  if (is_punct(t, "(")) {
    ++pos;
    ConditionExpr inner = parse_condition_tokens(toks, pos);
    if (!is_punct(toks[pos], ")")) fail(toks[pos], "expected ')'");
    ++pos;
    return inner;
  }

  if (is_ident(t, "not")) {
    ++pos;
    return ConditionExpr::negate(parse_atom(toks, pos));
  }

  if (is_ident(t, "M") || is_ident(t, "C")) {
    bool metric = t.text == "M";
    ++pos;
    std::string key = parse_bracket_key(toks, pos);
    CmpOp op = cmp_from_text(toks[pos]);
    ++pos;
    Value lit = parse_literal(toks, pos);
    if (metric) {
      if (!lit.is_number()) fail(toks[pos - 1], "metric comparisons take a numeric literal");
      return ConditionExpr::metric_cmp(key, op, lit.get<double>());
    }
    return ConditionExpr::context_cmp(key, op, lit);
  }

  if (t.type == Tok::T::Str) {
    std::string key = t.text;
    ++pos;
    bool negated = false;
    if (is_ident(toks[pos], "not")) {
      negated = true;
      ++pos;
    }
    if (!is_ident(toks[pos], "in")) fail(toks[pos], "expected 'in'");
    ++pos;
    if (is_ident(toks[pos], "C")) {
      ++pos;
      return ConditionExpr::member(key, /*in_context=*/true, negated);
    }
    if (is_ident(toks[pos], "M")) {
      ++pos;
      return ConditionExpr::member(key, /*in_context=*/false, negated);
    }
    fail(toks[pos], "expected 'C' or 'M'");
  }

  if (is_ident(t, "true")) {
    ++pos;
    return ConditionExpr::always_true();
  }

  if (t.type == Tok::T::Ident) {
    std::string name = t.text;
    ++pos;
    return ConditionExpr::flag(name);
  }

  fail(t, "expected a condition atom");
}

ConditionExpr parse_and(const std::vector<Tok>& toks, std::size_t& pos) {
  std::vector<ConditionExpr> parts;
  parts.push_back(parse_atom(toks, pos));
  while (is_ident(toks[pos], "and")) {
    ++pos;
    parts.push_back(parse_atom(toks, pos));
  }
  if (parts.size() == 1) return std::move(parts[0]);
  return ConditionExpr::conj(std::move(parts));
}

}  // namespace

ConditionExpr parse_condition_tokens(const std::vector<Tok>& toks, std::size_t& pos) {
  std::vector<ConditionExpr> parts;
  parts.push_back(parse_and(toks, pos));
  while (is_ident(toks[pos], "or")) {
    ++pos;
    parts.push_back(parse_and(toks, pos));
  }
  if (parts.size() == 1) return std::move(parts[0]);
  return ConditionExpr::disj(std::move(parts));
}

}  // namespace detail

ConditionExpr parse_condition(const std::string& text) {
  std::vector<detail::LexError> lex_errors;
  auto toks = detail::lex(text, lex_errors);
  if (!lex_errors.empty()) {
    throw SpearError(Errc::ValidationError, "condition lex error: " + lex_errors.front().message);
  }
  std::size_t pos = 0;
  ConditionExpr expr = detail::parse_condition_tokens(toks, pos);
  if (toks[pos].type != Tok::T::End) {
    fail(toks[pos], "trailing input after condition");
  }
  return expr;
}

namespace {

int precedence(ConditionExpr::Kind k) {
  switch (k) {
    case ConditionExpr::Kind::Or: return 1;
    case ConditionExpr::Kind::And: return 2;
    case ConditionExpr::Kind::Not: return 3;
    default: return 4;
  }
}

void print(const ConditionExpr& c, int parent_prec, std::string& out) {
  int prec = precedence(c.kind);
  bool parens = prec < parent_prec;
  if (parens) out.push_back('(');
  switch (c.kind) {
    case ConditionExpr::Kind::True:
      out += "true";
      break;
    case ConditionExpr::Kind::MetricCmp:
      out += "M[" + detail::quote_string(c.key) + "] " + cmp_text(c.op) + " " +
             detail::format_number(c.literal.get<double>());
      break;
    case ConditionExpr::Kind::ContextCmp: {
      out += "C[" + detail::quote_string(c.key) + "] " + cmp_text(c.op) + " ";
      if (c.literal.is_string()) {
        out += detail::quote_string(c.literal.get<std::string>());
      } else if (c.literal.is_boolean()) {
        out += c.literal.get<bool>() ? "true" : "false";
      } else {
        out += detail::format_number(c.literal.get<double>());
      }
      break;
    }
    case ConditionExpr::Kind::MemberContext:
      out += detail::quote_string(c.key) + (c.negate_membership ? " not in C" : " in C");
      break;
    case ConditionExpr::Kind::MemberMetadata:
      out += detail::quote_string(c.key) + (c.negate_membership ? " not in M" : " in M");
      break;
    case ConditionExpr::Kind::Flag:
      out += c.key;
      break;
    case ConditionExpr::Kind::Not:
      out += "not ";
      print(c.children[0], precedence(ConditionExpr::Kind::Not) + 1, out);
      break;
    case ConditionExpr::Kind::And:
    case ConditionExpr::Kind::Or: {
      const char* sep = c.kind == ConditionExpr::Kind::And ? " and " : " or ";
      for (std::size_t i = 0; i < c.children.size(); ++i) {
        if (i) out += sep;
        print(c.children[i], prec + (i ? 1 : 1), out);
      }
      break;
    }
  }
  if (parens) out.push_back(')');
}

bool compare_numbers(double lhs, CmpOp op, double rhs) {
  switch (op) {
    case CmpOp::Lt: return lhs < rhs;
    case CmpOp::Le: return lhs <= rhs;
    case CmpOp::Gt: return lhs > rhs;
    case CmpOp::Ge: return lhs >= rhs;
    case CmpOp::Eq: return lhs == rhs;
    case CmpOp::Ne: return lhs != rhs;
  }
  return false;
}

template <typename T>
bool compare_ordered(const T& lhs, CmpOp op, const T& rhs) {
  switch (op) {
    case CmpOp::Lt: return lhs < rhs;
    case CmpOp::Le: return lhs <= rhs;
    case CmpOp::Gt: return lhs > rhs;
    case CmpOp::Ge: return lhs >= rhs;
    case CmpOp::Eq: return lhs == rhs;
    case CmpOp::Ne: return lhs != rhs;
  }
  return false;
}

}  // namespace

std::string to_string(const ConditionExpr& cond) {
  std::string out;
  print(cond, 0, out);
  return out;
}

bool eval_condition(const ConditionExpr& cond, const ExecState& state) {
  switch (cond.kind) {
    case ConditionExpr::Kind::True:
      return true;
    case ConditionExpr::Kind::MetricCmp: {
      auto it = state.metadata.find(cond.key);
      if (it == state.metadata.end()) return false;  // absent metric: false
      return compare_numbers(it->second, cond.op, cond.literal.get<double>());
    }
    case ConditionExpr::Kind::ContextCmp: {
      if (!state.context.contains(cond.key)) {
        throw SpearError(Errc::TypeMismatch,
                         "context comparison references absent key \"" + cond.key + "\"");
      }
      const Value& v = state.context.at(cond.key);
      if (cond.literal.is_number()) {
        if (!v.is_number()) {
          throw SpearError(Errc::TypeMismatch, "context key \"" + cond.key +
                                                   "\" is not numeric in a numeric comparison");
        }
        return compare_numbers(v.get<double>(), cond.op, cond.literal.get<double>());
      }
      if (cond.literal.is_string()) {
        if (!v.is_string()) {
          throw SpearError(Errc::TypeMismatch, "context key \"" + cond.key +
                                                   "\" is not a string in a string comparison");
        }
        return compare_ordered(v.get<std::string>(), cond.op, cond.literal.get<std::string>());
      }
      if (cond.literal.is_boolean()) {
        if (!v.is_boolean() || (cond.op != CmpOp::Eq && cond.op != CmpOp::Ne)) {
          throw SpearError(Errc::TypeMismatch,
                           "boolean comparison on context key \"" + cond.key + "\"");
        }
        bool eq = v.get<bool>() == cond.literal.get<bool>();
        return cond.op == CmpOp::Eq ? eq : !eq;
      }
      throw SpearError(Errc::TypeMismatch, "unsupported literal type in condition");
    }
    case ConditionExpr::Kind::MemberContext: {
      bool present = state.context.contains(cond.key);
      return cond.negate_membership ? !present : present;
    }
    case ConditionExpr::Kind::MemberMetadata: {
      bool present = state.metadata.count(cond.key) > 0;
      return cond.negate_membership ? !present : present;
    }
    case ConditionExpr::Kind::Flag: {
      if (!state.context.contains(cond.key)) return false;
      const Value& v = state.context.at(cond.key);
      return v.is_boolean() && v.get<bool>();
    }
    case ConditionExpr::Kind::Not:
      return !eval_condition(cond.children[0], state);
    case ConditionExpr::Kind::And:
      for (const auto& child : cond.children) {
        if (!eval_condition(child, state)) return false;
      }
      return true;
    case ConditionExpr::Kind::Or:
      for (const auto& child : cond.children) {
        if (eval_condition(child, state)) return true;
      }
      return false;
  }
  return false;
}

bool operator==(const ConditionExpr& a, const ConditionExpr& b) {
  if (a.kind != b.kind || a.key != b.key) return false;
  if (a.kind == ConditionExpr::Kind::MetricCmp || a.kind == ConditionExpr::Kind::ContextCmp) {
    if (a.op != b.op || a.literal != b.literal) return false;
  }
  if (a.negate_membership != b.negate_membership) return false;
  if (a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    if (!(a.children[i] == b.children[i])) return false;
  }
  return true;
}

}  // namespace spear
