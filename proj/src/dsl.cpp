#include "spear/dsl.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include "lexer.hpp"
#include "spear/errors.hpp"

namespace spear::detail {
ConditionExpr parse_condition_tokens(const std::vector<Tok>& toks, std::size_t& pos);
}

namespace spear::dsl {

using detail::Tok;

std::string ParseDiagnostic::format() const {
  std::ostringstream os;
  os << (severity == Severity::Error ? "error" : "warning") << " " << line << ":" << column
     << ": " << message;
  return os.str();
}

bool has_errors(const std::vector<ParseDiagnostic>& diags) {
  return std::any_of(diags.begin(), diags.end(), [](const ParseDiagnostic& d) {
    return d.severity == ParseDiagnostic::Severity::Error;
  });
}

const Pipeline* SourceProgram::find_pipeline(const std::string& name) const {
  for (const auto& p : pipelines) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

// --- parser ---------------------------------------------------------------------

namespace {

struct ParseFail {
  Tok at;
  std::string message;
};

const std::map<std::string, OpKind>& op_kinds() {
  static const std::map<std::string, OpKind> kinds = {
      {"RET", OpKind::Ret},       {"GEN", OpKind::Gen},     {"REF", OpKind::Ref},
      {"CHECK", OpKind::Check},   {"MERGE", OpKind::Merge}, {"DELEGATE", OpKind::Delegate},
      {"EXPAND", OpKind::Expand}, {"RETRY", OpKind::Retry}, {"MAP", OpKind::Map},
      {"SWITCH", OpKind::Switch}, {"VIEW", OpKind::View},   {"DIFF", OpKind::Diff},
  };
  return kinds;
}

class Parser {
 public:
  explicit Parser(const std::string& text) : text_(text) {
    std::vector<detail::LexError> lex_errors;
    toks_ = detail::lex(text, lex_errors);
    for (const auto& e : lex_errors) {
      diags_.push_back({ParseDiagnostic::Severity::Error, e.line, e.column, 1, e.message});
    }
  }

  ParseResult run() {
    while (!at_end()) {
      std::size_t before = pos_;
      try {
        parse_decl();
      } catch (const ParseFail& fail) {
        diags_.push_back({ParseDiagnostic::Severity::Error, fail.at.line, fail.at.column,
                          std::max<std::size_t>(fail.at.length, 1), fail.message});
        recover_to_next_decl();
      } catch (const SpearError& err) {
        const Tok& at = toks_[std::min(pos_, toks_.size() - 1)];
        diags_.push_back({ParseDiagnostic::Severity::Error, at.line, at.column,
                          std::max<std::size_t>(at.length, 1), err.what()});
        recover_to_next_decl();
      }
      if (pos_ == before) ++pos_;  // always make progress
    }
    ParseResult result;
    result.program = std::move(program_);
    result.diagnostics = std::move(diags_);
    return result;
  }

 private:
  // --- token helpers ---

  const Tok& peek(std::size_t ahead = 0) const {
    std::size_t i = std::min(pos_ + ahead, toks_.size() - 1);
    return toks_[i];
  }
  bool at_end() const { return peek().type == Tok::T::End; }
  const Tok& advance() { return toks_[pos_++]; }

  bool check_punct(const char* p, std::size_t ahead = 0) const {
    const Tok& t = peek(ahead);
    return t.type == Tok::T::Punct && t.text == p;
  }
  bool check_arrow(std::size_t ahead = 0) const { return peek(ahead).type == Tok::T::Arrow; }
  bool check_ident(const char* name, std::size_t ahead = 0) const {
    const Tok& t = peek(ahead);
    return t.type == Tok::T::Ident && t.text == name;
  }

  [[noreturn]] void fail(const std::string& message) { throw ParseFail{peek(), message}; }

  void expect_punct(const char* p) {
    if (!check_punct(p)) fail(std::string("expected '") + p + "'");
    ++pos_;
  }
  std::string expect_string(const char* what) {
    if (peek().type != Tok::T::Str) fail(std::string("expected ") + what + " (quoted string)");
    return advance().text;
  }
  std::string expect_ident(const char* what) {
    if (peek().type != Tok::T::Ident) fail(std::string("expected ") + what + " (identifier)");
    return advance().text;
  }

  bool consume_kv_sep() {
    if (check_punct(":") || check_punct("=")) {
      ++pos_;
      return true;
    }
    return false;
  }

  SourceSpan span_from(const Tok& start) const {
    const Tok& end = toks_[pos_ == 0 ? 0 : pos_ - 1];
    SourceSpan s;
    s.offset = start.offset;
    s.length = end.offset + end.length - start.offset;
    s.line = start.line;
    s.column = start.column;
    return s;
  }

  void recover_to_next_decl() {
    while (!at_end()) {
      const Tok& t = peek();
      if (t.type == Tok::T::Ident &&
          (t.text == "view" || t.text == "refiner" || t.text == "source" || t.text == "agent" ||
           t.text == "pipeline")) {
        return;
      }
      ++pos_;
    }
  }

  // --- declarations ---

  void parse_decl() {
    const Tok& t = peek();
    if (t.type != Tok::T::Ident) fail("expected a declaration (view/refiner/source/agent/pipeline)");
    if (t.text == "view") {
      parse_view_decl();
    } else if (t.text == "refiner") {
      parse_refiner_decl();
    } else if (t.text == "source") {
      parse_source_decl();
    } else if (t.text == "agent") {
      parse_agent_decl();
    } else if (t.text == "pipeline") {
      parse_pipeline_decl();
    } else {
      fail("unknown declaration '" + t.text + "'");
    }
  }

  std::vector<ViewDef::Param> parse_param_list() {
    std::vector<ViewDef::Param> params;
    expect_punct("(");
    if (!check_punct(")")) {
      while (true) {
        ViewDef::Param p;
        p.name = expect_ident("parameter name");
        if (check_punct("=")) {
          ++pos_;
          p.default_value = parse_value_literal();
        }
        params.push_back(std::move(p));
        if (check_punct(",")) {
          ++pos_;
          continue;
        }
        break;
      }
    }
    expect_punct(")");
    return params;
  }

  Value parse_value_literal() {
    const Tok& t = peek();
    if (t.type == Tok::T::Str) return Value(advance().text);
    if (t.type == Tok::T::Num) return Value(advance().num);
    if (check_ident("true")) {
      ++pos_;
      return Value(true);
    }
    if (check_ident("false")) {
      ++pos_;
      return Value(false);
    }
    fail("expected a literal value");
  }

  std::set<std::string> parse_tags() {
    std::set<std::string> tags;
    if (!check_ident("tags")) return tags;
    ++pos_;
    expect_punct("(");
    while (true) {
      tags.insert(expect_string("tag"));
      if (check_punct(",")) {
        ++pos_;
        continue;
      }
      break;
    }
    expect_punct(")");
    return tags;
  }

  void parse_view_decl() {
    const Tok& start = advance();  // "view"
    ViewDecl decl;
    decl.def.name = expect_ident("view name");
    if (check_punct("(")) decl.def.params = parse_param_list();
    decl.def.tags = parse_tags();
    if (!check_ident("template")) fail("expected 'template' in view declaration");
    ++pos_;
    decl.def.body = expect_string("view body");
    decl.span = span_from(start);
    program_.order.emplace_back(SourceProgram::DeclKind::View, program_.views.size());
    program_.views.push_back(std::move(decl));
  }

  void parse_refiner_decl() {
    const Tok& start = advance();  // "refiner"
    RefinerDecl decl;
    decl.spec.id = expect_ident("refiner name");
    if (check_punct("(")) {
      for (auto& p : parse_param_list()) decl.spec.params.push_back(p.name);
    }
    std::string mode = expect_ident("refiner mode (manual/assisted/auto)");
    if (mode == "manual") {
      decl.spec.mode = RefMode::Manual;
      if (check_ident("append")) {
        ++pos_;
        decl.spec.default_action = RefAction::Append;
      } else if (check_ident("update")) {
        ++pos_;
        decl.spec.default_action = RefAction::Update;
      }
      if (check_ident("template")) ++pos_;
      decl.spec.body = expect_string("refiner template");
    } else if (mode == "assisted") {
      decl.spec.mode = RefMode::Assisted;
      if (check_ident("hint")) {
        ++pos_;
        decl.spec.hint = expect_string("hint");
      }
      if (check_ident("template")) {
        ++pos_;
        decl.spec.meta_template = expect_string("meta template");
      }
    } else if (mode == "auto") {
      decl.spec.mode = RefMode::Auto;
      expect_punct("(");
      if (!check_ident("signal")) fail("expected 'signal:' in auto refiner");
      ++pos_;
      if (!consume_kv_sep()) fail("expected ':' after 'signal'");
      while (true) {
        if (!check_ident("M")) fail("expected M[\"key\"] signal");
        ++pos_;
        expect_punct("[");
        decl.spec.signals.push_back(expect_string("signal key"));
        expect_punct("]");
        if (check_punct(",")) {
          ++pos_;
          continue;
        }
        break;
      }
      expect_punct(")");
      if (check_ident("objective")) {
        ++pos_;
        decl.spec.objective = expect_string("objective");
      }
      if (check_ident("template")) {
        ++pos_;
        decl.spec.meta_template = expect_string("meta template");
      }
    } else {
      fail("unknown refiner mode '" + mode + "'");
    }
    decl.span = span_from(start);
    program_.order.emplace_back(SourceProgram::DeclKind::Refiner, program_.refiners.size());
    program_.refiners.push_back(std::move(decl));
  }

  void parse_source_decl() {
    const Tok& start = advance();  // "source"
    SourceDecl decl;
    decl.name = expect_ident("source name");
    std::string kind = expect_ident("source kind (file/inline/agent)");
    if (kind == "file") {
      decl.kind = SourceDecl::Kind::File;
      decl.file_path = expect_string("file path");
    } else if (kind == "inline") {
      decl.kind = SourceDecl::Kind::Inline;
      std::string raw = expect_string("inline JSON");
      Value v = Value::parse(raw, nullptr, false);
      if (v.is_discarded()) fail("inline source is not valid JSON");
      decl.inline_value = v;
    } else if (kind == "agent") {
      decl.kind = SourceDecl::Kind::Agent;
      decl.agent_name = expect_ident("agent name");
    } else {
      fail("unknown source kind '" + kind + "'");
    }
    decl.span = span_from(start);
    program_.order.emplace_back(SourceProgram::DeclKind::Source, program_.sources.size());
    program_.sources.push_back(std::move(decl));
  }

  void parse_agent_decl() {
    const Tok& start = advance();  // "agent"
    AgentDecl decl;
    decl.name = expect_ident("agent name");
    if (!check_ident("builtin")) fail("expected 'builtin' in agent declaration");
    ++pos_;
    decl.builtin = expect_string("builtin agent id");
    decl.span = span_from(start);
    program_.order.emplace_back(SourceProgram::DeclKind::Agent, program_.agents.size());
    program_.agents.push_back(std::move(decl));
  }

  void parse_pipeline_decl() {
    const Tok& start = advance();  // "pipeline"
    Pipeline pipeline;
    pipeline.name = expect_string("pipeline name");
    expect_punct("{");
    pipeline.nodes = parse_chain();
    expect_punct("}");
    pipeline.span = span_from(start);
    if (pipeline.nodes.empty()) {
      diags_.push_back({ParseDiagnostic::Severity::Error, start.line, start.column, start.length,
                        "pipeline '" + pipeline.name + "' has an empty body"});
    }
    program_.order.emplace_back(SourceProgram::DeclKind::Pipeline, program_.pipelines.size());
    program_.pipelines.push_back(std::move(pipeline));
  }

  // --- chains and operators ---

  NodeList parse_chain() {
    NodeList nodes;
    OperatorNode first = parse_op();

    if (check_arrow() && check_ident("C", 1) && check_punct("[", 2)) {
      bind_output(first);
    }

    if (!check_arrow()) {
      nodes.push_back(std::move(first));
      return nodes;
    }
    ++pos_;  // consume '->'

    NodeList rest = parse_chain();
    // A blockless CHECK guards the remainder of its chain.
    if (first.kind == OpKind::Check && first.children.empty()) {
      first.children = std::move(rest);
      nodes.push_back(std::move(first));
      return nodes;
    }
    nodes.push_back(std::move(first));
    for (auto& n : rest) nodes.push_back(std::move(n));
    return nodes;
  }

  void bind_output(OperatorNode& node) {
    // "-> C[\"key\"]" output binding after DELEGATE
    ++pos_;  // arrow
    ++pos_;  // C
    expect_punct("[");
    std::string out = expect_string("output key");
    expect_punct("]");
    if (node.kind == OpKind::Delegate) {
      node.as<DelegateArgs>().out_key = out;
    } else {
      fail("output binding '-> C[\"...\"]' only follows DELEGATE");
    }
  }

  OperatorNode parse_op() {
    const Tok& start = peek();
    std::string kind_name = expect_ident("operator");
    auto it = op_kinds().find(kind_name);
    if (it == op_kinds().end()) fail("unknown operator '" + kind_name + "'");
    OpKind kind = it->second;

    OperatorNode node;
    node.kind = kind;
    expect_punct("[");
    switch (kind) {
      case OpKind::Ret: node.args = parse_ret_args(); break;
      case OpKind::Gen: node.args = parse_gen_args(); break;
      case OpKind::Ref: node.args = parse_ref_args(); break;
      case OpKind::Check: node.args = parse_check_args(); break;
      case OpKind::Merge: node.args = parse_merge_args(); break;
      case OpKind::Delegate: node.args = parse_delegate_args(); break;
      case OpKind::Expand: node.args = parse_expand_args(); break;
      case OpKind::Retry: node.args = parse_retry_args(node); break;
      case OpKind::Map: node.args = parse_map_args(); break;
      case OpKind::Switch: node.args = parse_switch_args(); break;
      case OpKind::View: node.args = parse_view_args(); break;
      case OpKind::Diff: node.args = parse_diff_args(); break;
      default: fail("operator not expressible in the DSL");
    }
    expect_punct("]");

    if (kind == OpKind::View && check_punct("(")) {
      parse_view_call_args(node.as<ViewArgs>());
    }

    if (check_punct("{")) {
      if (kind != OpKind::Check) fail("only CHECK takes a body block");
      ++pos_;
      node.children = parse_chain();
      expect_punct("}");
    }
    node.span = span_from(start);
    return node;
  }

  std::string parse_prompt_ref() {
    // "key" or P["key"]
    if (check_ident("P")) {
      ++pos_;
      expect_punct("[");
      std::string key = expect_string("prompt key");
      expect_punct("]");
      return key;
    }
    return expect_string("prompt key");
  }

  RetArgs parse_ret_args() {
    RetArgs args;
    args.source = expect_string("source name");
    while (check_punct(",")) {
      ++pos_;
      std::string name = expect_ident("argument name");
      if (!consume_kv_sep()) fail("expected ':' after argument name");
      if (name == "prompt") {
        args.prompt_key = parse_prompt_ref();
      } else {
        fail("unknown RET argument '" + name + "'");
      }
    }
    return args;
  }

  GenArgs parse_gen_args() {
    GenArgs args;
    args.label = expect_string("generation label");
    while (check_punct(",")) {
      ++pos_;
      std::string name = expect_ident("argument name");
      if (!consume_kv_sep()) fail("expected ':' after argument name");
      if (name == "prompt") {
        args.prompt_key = parse_prompt_ref();
      } else if (name == "max_tokens") {
        if (peek().type != Tok::T::Num) fail("max_tokens takes a number");
        args.max_tokens = static_cast<std::size_t>(advance().num);
      } else {
        fail("unknown GEN argument '" + name + "'");
      }
    }
    return args;
  }

  RefInvocation parse_invocation() {
    std::string id = expect_ident("refiner name");
    if (id == "literal") {
      expect_punct("(");
      std::string text = expect_string("literal text");
      expect_punct(")");
      return RefInvocation::literal(text);
    }
    RefInvocation inv = RefInvocation::named(id);
    if (check_punct("(")) {
      ++pos_;
      if (!check_punct(")")) {
        while (true) {
          // name: value  |  positional literal
          if (peek().type == Tok::T::Ident && (check_punct(":", 1) || check_punct("=", 1))) {
            std::string name = expect_ident("argument name");
            consume_kv_sep();
            inv.kwargs[name] = parse_value_literal();
          } else {
            inv.args.push_back(parse_value_literal());
          }
          if (check_punct(",")) {
            ++pos_;
            continue;
          }
          break;
        }
      }
      expect_punct(")");
    }
    return inv;
  }

  RefArgs parse_ref_args() {
    RefArgs args;
    std::string action = expect_ident("REF action (CREATE/APPEND/UPDATE)");
    if (action == "CREATE") {
      args.action = RefAction::Create;
    } else if (action == "APPEND") {
      args.action = RefAction::Append;
    } else if (action == "UPDATE") {
      args.action = RefAction::Update;
    } else {
      fail("unknown REF action '" + action + "'");
    }
    expect_punct(",");
    args.refiner = parse_invocation();
    while (check_punct(",")) {
      ++pos_;
      std::string name = expect_ident("argument name");
      if (!consume_kv_sep()) fail("expected ':' after argument name");
      if (name == "key") {
        args.key = expect_string("prompt key");
      } else {
        fail("unknown REF argument '" + name + "'");
      }
    }
    return args;
  }

  CheckArgs parse_check_args() {
    CheckArgs args;
    args.cond = detail::parse_condition_tokens(toks_, pos_);
    return args;
  }

  MergePolicy parse_policy() {
    std::string name = expect_ident("merge policy");
    MergePolicy policy;
    if (name == "pick_left") {
      policy.kind = MergePolicyKind::PickLeft;
    } else if (name == "pick_right") {
      policy.kind = MergePolicyKind::PickRight;
    } else if (name == "by_metric") {
      policy.kind = MergePolicyKind::PickByMetric;
      expect_punct("(");
      policy.metric_key = expect_string("metric key");
      if (check_punct(",")) {
        ++pos_;
        std::string dir = expect_ident("metric direction");
        if (dir == "lower") {
          policy.higher_is_better = false;
        } else if (dir != "higher") {
          fail("metric direction must be 'higher' or 'lower'");
        }
      }
      expect_punct(")");
    } else if (name == "concat") {
      policy.kind = MergePolicyKind::ConcatSections;
      if (check_punct("(")) {
        ++pos_;
        policy.separator = expect_string("separator");
        expect_punct(")");
      }
    } else {
      fail("unknown merge policy '" + name + "'");
    }
    return policy;
  }

  std::string parse_merge_operand() {
    if (peek().type == Tok::T::Str) return advance().text;
    // Bare identifiers name prompt keys (P_fallback style).
    return expect_ident("prompt key");
  }

  MergeArgs parse_merge_args() {
    MergeArgs args;
    args.left = parse_merge_operand();
    expect_punct(",");
    args.right = parse_merge_operand();
    while (check_punct(",")) {
      ++pos_;
      std::string name = expect_ident("argument name");
      if (!consume_kv_sep()) fail("expected ':' after argument name");
      if (name == "into") {
        args.out = expect_string("output key");
      } else if (name == "policy") {
        args.policy = parse_policy();
      } else {
        fail("unknown MERGE argument '" + name + "'");
      }
    }
    return args;
  }

  DelegateArgs parse_delegate_args() {
    DelegateArgs args;
    args.agent = expect_string("agent name");
    expect_punct(",");
    if (check_ident("C")) {
      ++pos_;
      expect_punct("[");
      args.payload = PayloadExpr::context(expect_string("context path"));
      expect_punct("]");
    } else {
      args.payload = PayloadExpr::value(parse_value_literal());
    }
    args.out_key = "delegate:" + args.agent;
    return args;
  }

  ExpandArgs parse_expand_args() {
    ExpandArgs args;
    args.key = expect_string("prompt key");
    expect_punct(",");
    args.text = expect_string("appended text");
    return args;
  }

  RetryArgs parse_retry_args(OperatorNode& node) {
    RetryArgs args;
    node.children.push_back(parse_op());
    expect_punct(",");
    args.cond = detail::parse_condition_tokens(toks_, pos_);
    while (check_punct(",")) {
      ++pos_;
      std::string name = expect_ident("argument name");
      if (!consume_kv_sep()) fail("expected ':' after argument name");
      if (name == "refiner") {
        args.refiner = parse_invocation();
      } else if (name == "max") {
        if (peek().type != Tok::T::Num) fail("max takes a number");
        args.max_retries = static_cast<int>(advance().num);
      } else {
        fail("unknown RETRY argument '" + name + "'");
      }
    }
    return args;
  }

  MapArgs parse_map_args() {
    MapArgs args;
    expect_punct("[");
    while (true) {
      args.keys.push_back(expect_string("prompt key"));
      if (check_punct(",")) {
        ++pos_;
        continue;
      }
      break;
    }
    expect_punct("]");
    expect_punct(",");
    args.refiner = parse_invocation();
    return args;
  }

  SwitchArgs parse_switch_args() {
    SwitchArgs args;
    while (true) {
      SwitchBranch branch;
      if (check_ident("default") && check_arrow(1)) {
        ++pos_;
      } else {
        branch.guard = detail::parse_condition_tokens(toks_, pos_);
      }
      if (!check_arrow()) fail("expected '->' in SWITCH branch");
      ++pos_;
      if (check_punct("{")) {
        ++pos_;
        branch.body = parse_chain();
        expect_punct("}");
      } else {
        branch.body.push_back(parse_op());
      }
      args.branches.push_back(std::move(branch));
      if (check_punct(",")) {
        ++pos_;
        continue;
      }
      break;
    }
    return args;
  }

  ViewArgs parse_view_args() {
    ViewArgs args;
    args.view = expect_string("view name");
    while (check_punct(",")) {
      ++pos_;
      std::string name = expect_ident("argument name");
      if (!consume_kv_sep()) fail("expected ':' after argument name");
      if (name == "key") {
        args.key = expect_string("prompt key");
      } else {
        fail("unknown VIEW argument '" + name + "'");
      }
    }
    return args;
  }

  void parse_view_call_args(ViewArgs& args) {
    expect_punct("(");
    if (!check_punct(")")) {
      while (true) {
        std::string name = expect_ident("view argument name");
        if (!consume_kv_sep()) fail("expected ':' after view argument name");
        args.args[name] = parse_value_literal();
        if (check_punct(",")) {
          ++pos_;
          continue;
        }
        break;
      }
    }
    expect_punct(")");
  }

  DiffArgs parse_diff_args() {
    DiffArgs args;
    args.left = expect_string("left key or version");
    expect_punct(",");
    args.right = expect_string("right key or version");
    return args;
  }

  const std::string& text_;
  std::vector<Tok> toks_;
  std::size_t pos_ = 0;
  SourceProgram program_;
  std::vector<ParseDiagnostic> diags_;
};

}  // namespace

ParseResult parse(const std::string& text) { return Parser(text).run(); }

ParseResult parse_files(const std::vector<std::string>& paths) {
  ParseResult merged;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) {
      merged.diagnostics.push_back({ParseDiagnostic::Severity::Error, 1, 1, 0,
                                    "cannot read program file '" + path + "'"});
      continue;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    ParseResult one = parse(buf.str());
    for (auto& d : one.diagnostics) {
      d.message = path + ": " + d.message;
      merged.diagnostics.push_back(std::move(d));
    }
    auto& prog = merged.program;
    const auto& other = one.program;
    for (const auto& [kind, index] : other.order) {
      switch (kind) {
        case SourceProgram::DeclKind::View:
          prog.order.emplace_back(kind, prog.views.size());
          prog.views.push_back(other.views[index]);
          break;
        case SourceProgram::DeclKind::Refiner:
          prog.order.emplace_back(kind, prog.refiners.size());
          prog.refiners.push_back(other.refiners[index]);
          break;
        case SourceProgram::DeclKind::Source:
          prog.order.emplace_back(kind, prog.sources.size());
          prog.sources.push_back(other.sources[index]);
          break;
        case SourceProgram::DeclKind::Agent:
          prog.order.emplace_back(kind, prog.agents.size());
          prog.agents.push_back(other.agents[index]);
          break;
        case SourceProgram::DeclKind::Pipeline:
          prog.order.emplace_back(kind, prog.pipelines.size());
          prog.pipelines.push_back(other.pipelines[index]);
          break;
      }
    }
  }
  return merged;
}

// --- pretty printer -----------------------------------------------------------------

namespace {

std::string quote(const std::string& s) { return detail::quote_string(s); }

std::string value_literal_text(const Value& v) {
  if (v.is_string()) return quote(v.get<std::string>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return detail::format_number(v.get<double>());
}

std::string invocation_text(const RefInvocation& inv) {
  if (inv.is_literal()) return "literal(" + quote(*inv.literal_text) + ")";
  std::string out = inv.refiner_id;
  if (!inv.args.empty() || !inv.kwargs.empty()) {
    out += "(";
    bool first = true;
    for (const auto& a : inv.args) {
      if (!first) out += ", ";
      out += value_literal_text(a);
      first = false;
    }
    for (const auto& [k, v] : inv.kwargs) {
      if (!first) out += ", ";
      out += k + ": " + value_literal_text(v);
      first = false;
    }
    out += ")";
  }
  return out;
}

std::string policy_text(const MergePolicy& policy) {
  switch (policy.kind) {
    case MergePolicyKind::PickLeft: return "pick_left";
    case MergePolicyKind::PickRight: return "pick_right";
    case MergePolicyKind::PickByMetric:
      return "by_metric(" + quote(policy.metric_key) +
             (policy.higher_is_better ? "" : ", lower") + ")";
    case MergePolicyKind::ConcatSections:
      return "concat(" + quote(policy.separator) + ")";
  }
  return "pick_left";
}

std::string op_header_text(const OperatorNode& node);

std::string chain_text(const NodeList& nodes, int indent);

std::string indent_str(int n) { return std::string(static_cast<std::size_t>(n), ' '); }

std::string op_text(const OperatorNode& node, int indent) {
  std::string out = op_header_text(node);
  if (node.kind == OpKind::Check && !node.children.empty()) {
    out += " {\n" + chain_text(node.children, indent + 2) + "\n" + indent_str(indent) + "}";
  }
  return out;
}

std::string op_header_text(const OperatorNode& node) {
  switch (node.kind) {
    case OpKind::Ret: {
      const auto& a = node.as<RetArgs>();
      std::string out = "RET[" + quote(a.source);
      if (a.prompt_key) out += ", prompt: " + quote(*a.prompt_key);
      return out + "]";
    }
    case OpKind::Gen: {
      const auto& a = node.as<GenArgs>();
      std::string out = "GEN[" + quote(a.label);
      if (a.prompt_key) out += ", prompt: " + quote(*a.prompt_key);
      if (a.max_tokens != 256) out += ", max_tokens: " + std::to_string(a.max_tokens);
      return out + "]";
    }
    case OpKind::Ref: {
      const auto& a = node.as<RefArgs>();
      std::string out = std::string("REF[") + to_string(a.action) + ", " +
                        invocation_text(a.refiner);
      if (a.key) out += ", key: " + quote(*a.key);
      return out + "]";
    }
    case OpKind::Check: {
      const auto& a = node.as<CheckArgs>();
      return "CHECK[" + to_string(a.cond) + "]";
    }
    case OpKind::Merge: {
      const auto& a = node.as<MergeArgs>();
      std::string out = "MERGE[" + quote(a.left) + ", " + quote(a.right);
      if (!a.out.empty()) out += ", into: " + quote(a.out);
      MergePolicy defaults;
      if (!(a.policy == defaults)) out += ", policy: " + policy_text(a.policy);
      return out + "]";
    }
    case OpKind::Delegate: {
      const auto& a = node.as<DelegateArgs>();
      std::string payload = a.payload.context_path
                                ? "C[" + quote(*a.payload.context_path) + "]"
                                : value_literal_text(a.payload.literal);
      std::string out = "DELEGATE[" + quote(a.agent) + ", " + payload + "]";
      out += " -> C[" + quote(a.out_key) + "]";
      return out;
    }
    case OpKind::Expand: {
      const auto& a = node.as<ExpandArgs>();
      return "EXPAND[" + quote(a.key) + ", " + quote(a.text) + "]";
    }
    case OpKind::Retry: {
      const auto& a = node.as<RetryArgs>();
      std::string out = "RETRY[" + op_header_text(node.children.at(0)) + ", " + to_string(a.cond);
      if (a.refiner) out += ", refiner: " + invocation_text(*a.refiner);
      if (a.max_retries != 1) out += ", max: " + std::to_string(a.max_retries);
      return out + "]";
    }
    case OpKind::Map: {
      const auto& a = node.as<MapArgs>();
      std::string out = "MAP[[";
      for (std::size_t i = 0; i < a.keys.size(); ++i) {
        if (i) out += ", ";
        out += quote(a.keys[i]);
      }
      out += "], " + invocation_text(a.refiner);
      return out + "]";
    }
    case OpKind::Switch: {
      const auto& a = node.as<SwitchArgs>();
      std::string out = "SWITCH[";
      for (std::size_t i = 0; i < a.branches.size(); ++i) {
        if (i) out += ", ";
        const auto& branch = a.branches[i];
        out += branch.guard ? to_string(*branch.guard) : "default";
        out += " -> ";
        if (branch.body.size() == 1 && branch.body[0].children.empty()) {
          out += op_header_text(branch.body[0]);
        } else {
          out += "{ ";
          for (std::size_t j = 0; j < branch.body.size(); ++j) {
            if (j) out += " -> ";
            out += op_header_text(branch.body[j]);
          }
          out += " }";
        }
      }
      return out + "]";
    }
    case OpKind::View: {
      const auto& a = node.as<ViewArgs>();
      std::string out = "VIEW[" + quote(a.view);
      if (a.key) out += ", key: " + quote(*a.key);
      out += "]";
      if (!a.args.empty()) {
        out += "(";
        bool first = true;
        for (const auto& [k, v] : a.args) {
          if (!first) out += ", ";
          out += k + ": " + value_literal_text(v);
          first = false;
        }
        out += ")";
      }
      return out;
    }
    case OpKind::Diff: {
      const auto& a = node.as<DiffArgs>();
      return "DIFF[" + quote(a.left) + ", " + quote(a.right) + "]";
    }
    case OpKind::FusedGen: {
      const auto& a = node.as<FusedGenArgs>();
      std::string out = "FUSED_GEN[";
      for (std::size_t i = 0; i < a.parts.size(); ++i) {
        if (i) out += ", ";
        out += quote(a.parts[i].label) + ": " + quote(a.parts[i].prompt_key);
      }
      return out + "]";
    }
  }
  return "?";
}

std::string chain_text(const NodeList& nodes, int indent) {
  std::string out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    out += indent_str(indent);
    if (i) out += "-> ";
    out += op_text(nodes[i], indent);
    if (i + 1 < nodes.size()) out += "\n";
  }
  return out;
}

}  // namespace

std::string pretty_print_node(const OperatorNode& node, int indent) {
  return indent_str(indent) + op_text(node, indent);
}

std::string pretty_print(const Pipeline& pipeline) {
  std::string out = "pipeline " + quote(pipeline.name) + " {\n";
  out += chain_text(pipeline.nodes, 2);
  out += "\n}\n";
  return out;
}

std::string pretty_print(const SourceProgram& program) {
  std::string out;
  bool first = true;
  for (const auto& [kind, index] : program.order) {
    if (!first) out += "\n";
    first = false;
    switch (kind) {
      case SourceProgram::DeclKind::View: {
        const ViewDef& v = program.views[index].def;
        out += "view " + v.name;
        if (!v.params.empty()) {
          out += "(";
          for (std::size_t i = 0; i < v.params.size(); ++i) {
            if (i) out += ", ";
            out += v.params[i].name;
            if (v.params[i].default_value) {
              out += " = " + value_literal_text(*v.params[i].default_value);
            }
          }
          out += ")";
        }
        if (!v.tags.empty()) {
          out += " tags(";
          bool f = true;
          for (const auto& t : v.tags) {
            if (!f) out += ", ";
            out += quote(t);
            f = false;
          }
          out += ")";
        }
        out += " template " + quote(v.body) + "\n";
        break;
      }
      case SourceProgram::DeclKind::Refiner: {
        const RefinerSpec& r = program.refiners[index].spec;
        out += "refiner " + r.id;
        if (!r.params.empty()) {
          out += "(";
          for (std::size_t i = 0; i < r.params.size(); ++i) {
            if (i) out += ", ";
            out += r.params[i];
          }
          out += ")";
        }
        switch (r.mode) {
          case RefMode::Manual:
            out += " manual";
            if (r.default_action == RefAction::Append) out += " append";
            if (r.default_action == RefAction::Update) out += " update";
            out += " " + quote(r.body);
            break;
          case RefMode::Assisted:
            out += " assisted hint " + quote(r.hint);
            if (!r.meta_template.empty()) out += " template " + quote(r.meta_template);
            break;
          case RefMode::Auto: {
            out += " auto(signal: ";
            for (std::size_t i = 0; i < r.signals.size(); ++i) {
              if (i) out += ", ";
              out += "M[" + quote(r.signals[i]) + "]";
            }
            out += ")";
            if (!r.objective.empty()) out += " objective " + quote(r.objective);
            if (!r.meta_template.empty()) out += " template " + quote(r.meta_template);
            break;
          }
        }
        out += "\n";
        break;
      }
      case SourceProgram::DeclKind::Source: {
        const SourceDecl& s = program.sources[index];
        out += "source " + s.name + " ";
        switch (s.kind) {
          case SourceDecl::Kind::File: out += "file " + quote(s.file_path); break;
          case SourceDecl::Kind::Inline: out += "inline " + quote(s.inline_value.dump()); break;
          case SourceDecl::Kind::Agent: out += "agent " + s.agent_name; break;
        }
        out += "\n";
        break;
      }
      case SourceProgram::DeclKind::Agent: {
        const AgentDecl& a = program.agents[index];
        out += "agent " + a.name + " builtin " + quote(a.builtin) + "\n";
        break;
      }
      case SourceProgram::DeclKind::Pipeline:
        out += pretty_print(program.pipelines[index]);
        break;
    }
  }
  return out;
}

// --- structural equality -----------------------------------------------------------

namespace {

bool view_def_equal(const ViewDef& a, const ViewDef& b) {
  if (a.name != b.name || a.body != b.body || a.tags != b.tags ||
      a.params.size() != b.params.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].name != b.params[i].name ||
        a.params[i].default_value != b.params[i].default_value) {
      return false;
    }
  }
  return true;
}

bool refiner_equal(const RefinerSpec& a, const RefinerSpec& b) {
  return a.id == b.id && a.mode == b.mode && a.params == b.params && a.body == b.body &&
         a.default_action == b.default_action && a.hint == b.hint && a.signals == b.signals &&
         a.objective == b.objective && a.meta_template == b.meta_template;
}

}  // namespace

bool pipeline_equal(const Pipeline& a, const Pipeline& b) {
  return a.name == b.name && node_list_equal(a.nodes, b.nodes);
}

bool program_equal(const SourceProgram& a, const SourceProgram& b) {
  if (a.order.size() != b.order.size()) return false;
  for (std::size_t i = 0; i < a.order.size(); ++i) {
    if (a.order[i].first != b.order[i].first) return false;
  }
  if (a.views.size() != b.views.size() || a.refiners.size() != b.refiners.size() ||
      a.sources.size() != b.sources.size() || a.agents.size() != b.agents.size() ||
      a.pipelines.size() != b.pipelines.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.views.size(); ++i) {
    if (!view_def_equal(a.views[i].def, b.views[i].def)) return false;
  }
  for (std::size_t i = 0; i < a.refiners.size(); ++i) {
    if (!refiner_equal(a.refiners[i].spec, b.refiners[i].spec)) return false;
  }
  for (std::size_t i = 0; i < a.sources.size(); ++i) {
    const auto& x = a.sources[i];
    const auto& y = b.sources[i];
    if (x.name != y.name || x.kind != y.kind || x.file_path != y.file_path ||
        x.inline_value != y.inline_value || x.agent_name != y.agent_name) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    if (a.agents[i].name != b.agents[i].name || a.agents[i].builtin != b.agents[i].builtin) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.pipelines.size(); ++i) {
    if (!pipeline_equal(a.pipelines[i], b.pipelines[i])) return false;
  }
  return true;
}

}  // namespace spear::dsl
