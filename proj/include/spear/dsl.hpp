#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spear/algebra.hpp"
#include "spear/prompt_store.hpp"
#include "spear/refiner.hpp"

namespace spear::dsl {

struct ParseDiagnostic {
  enum class Severity { Error, Warning };
  Severity severity = Severity::Error;
  int line = 1;
  int column = 1;
  std::size_t length = 0;
  std::string message;

  std::string format() const;
};

bool has_errors(const std::vector<ParseDiagnostic>& diags);

struct SourceDecl {
  enum class Kind { File, Inline, Agent };
  std::string name;
  Kind kind = Kind::Inline;
  std::string file_path;   // File
  Value inline_value;      // Inline
  std::string agent_name;  // Agent
  SourceSpan span;
};

struct AgentDecl {
  std::string name;
  std::string builtin;  // id in the builtin agent registry
  SourceSpan span;
};

struct ViewDecl {
  ViewDef def;
  SourceSpan span;
};

struct RefinerDecl {
  RefinerSpec spec;
  SourceSpan span;
};

// Declarations in source order; pipelines reference only declared names.
struct SourceProgram {
  std::vector<ViewDecl> views;
  std::vector<RefinerDecl> refiners;
  std::vector<SourceDecl> sources;
  std::vector<AgentDecl> agents;
  std::vector<Pipeline> pipelines;
  // Original declaration order for pretty-printing: (kind, index) pairs.
  enum class DeclKind { View, Refiner, Source, Agent, Pipeline };
  std::vector<std::pair<DeclKind, std::size_t>> order;

  const Pipeline* find_pipeline(const std::string& name) const;
};

struct ParseResult {
  SourceProgram program;
  std::vector<ParseDiagnostic> diagnostics;
  bool ok() const { return !has_errors(diagnostics); }
};

// Parses SPEAR-DL text. Never throws on bad input: errors land in the
// diagnostics list and recovery continues at the next declaration. The ASCII
// token "->" writes the pipeline arrow; '#' starts a line comment.
ParseResult parse(const std::string& text);

// Merges several parsed files into one program namespace (CLI entry point).
ParseResult parse_files(const std::vector<std::string>& paths);

// Canonical formatting: one op per line inside chains, two-space indent.
// pretty∘parse∘pretty is a fixed point.
std::string pretty_print(const SourceProgram& program);
std::string pretty_print(const Pipeline& pipeline);
std::string pretty_print_node(const OperatorNode& node, int indent = 0);

// Name resolution, view acyclicity, def-before-use for prompt keys (warning
// when only decidable at runtime), RETRY bounds, SWITCH guard shape. Also
// fills GenArgs::context_deps / fusion_class for the planner.
std::vector<ParseDiagnostic> validate(SourceProgram& program);

// Structural equality ignoring spans (round-trip oracle).
bool program_equal(const SourceProgram& a, const SourceProgram& b);
bool pipeline_equal(const Pipeline& a, const Pipeline& b);

}  // namespace spear::dsl
