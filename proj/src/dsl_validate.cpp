#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>

#include "spear/dsl.hpp"
#include "spear/errors.hpp"

namespace spear::dsl {

namespace {

struct Checker {
  SourceProgram& program;
  std::vector<ParseDiagnostic> diags;

  std::set<std::string> view_names;
  std::set<std::string> refiner_names;
  std::set<std::string> source_names;
  std::set<std::string> agent_names;

  void error(const SourceSpan& span, const std::string& message) {
    diags.push_back({ParseDiagnostic::Severity::Error, span.line, span.column, span.length,
                     message});
  }
  void warn(const SourceSpan& span, const std::string& message) {
    diags.push_back({ParseDiagnostic::Severity::Warning, span.line, span.column, span.length,
                     message});
  }

  // --- declaration-level checks ---

  void check_unique_names() {
    std::set<std::string> seen;
    for (const auto& v : program.views) {
      if (!seen.insert("view:" + v.def.name).second) {
        error(v.span, "duplicate view '" + v.def.name + "'");
      }
      view_names.insert(v.def.name);
    }
    seen.clear();
    for (const auto& r : program.refiners) {
      if (!seen.insert(r.spec.id).second) error(r.span, "duplicate refiner '" + r.spec.id + "'");
      refiner_names.insert(r.spec.id);
    }
    seen.clear();
    for (const auto& s : program.sources) {
      if (!seen.insert(s.name).second) error(s.span, "duplicate source '" + s.name + "'");
      source_names.insert(s.name);
    }
    seen.clear();
    for (const auto& a : program.agents) {
      if (!seen.insert(a.name).second) error(a.span, "duplicate agent '" + a.name + "'");
      agent_names.insert(a.name);
    }
    seen.clear();
    for (const auto& p : program.pipelines) {
      if (!seen.insert(p.name).second) error(p.span, "duplicate pipeline '" + p.name + "'");
    }
  }

  void check_views() {
    // Template syntax, declared params, include resolution, acyclicity.
    std::map<std::string, std::vector<std::string>> includes;
    for (const auto& v : program.views) {
      std::vector<PlaceholderRef> refs;
      try {
        refs = scan_placeholders(v.def.body);
      } catch (const SpearError& err) {
        error(v.span, std::string("view '") + v.def.name + "': " + err.what());
        continue;
      }
      for (const auto& ref : refs) {
        if (ref.kind == PlaceholderRef::Kind::Include) {
          includes[v.def.name].push_back(ref.name);
          if (!view_names.count(ref.name)) {
            error(v.span, "view '" + v.def.name + "' includes unknown view '" + ref.name + "'");
          }
        } else if (ref.kind == PlaceholderRef::Kind::Param) {
          bool declared = std::any_of(
              v.def.params.begin(), v.def.params.end(),
              [&](const ViewDef::Param& p) { return p.name == ref.name; });
          if (!declared) {
            error(v.span, "view '" + v.def.name + "' uses undeclared param '" + ref.name + "'");
          }
        }
      }
    }
    // DFS cycle detection over the include graph.
    std::set<std::string> done;
    std::set<std::string> visiting;
    std::function<bool(const std::string&)> dfs = [&](const std::string& name) -> bool {
      if (done.count(name)) return true;
      if (!visiting.insert(name).second) return false;
      for (const auto& inc : includes[name]) {
        if (!dfs(inc)) return false;
      }
      visiting.erase(name);
      done.insert(name);
      return true;
    };
    for (const auto& v : program.views) {
      visiting.clear();
      if (!dfs(v.def.name)) {
        error(v.span, "include cycle through view '" + v.def.name + "'");
        break;
      }
    }
  }

  void check_refiners() {
    for (const auto& r : program.refiners) {
      try {
        if (!r.spec.body.empty()) scan_placeholders(r.spec.body);
        if (!r.spec.meta_template.empty()) scan_placeholders(r.spec.meta_template);
      } catch (const SpearError& err) {
        error(r.span, std::string("refiner '") + r.spec.id + "': " + err.what());
      }
    }
  }

  // --- pipeline walk ---

  struct WalkState {
    // prompt key -> statically known template text (nullopt once unknown)
    std::map<std::string, std::optional<std::string>> templates;
    std::string current_prompt;
  };

  bool refiner_resolvable(const RefInvocation& inv) {
    if (inv.is_literal()) return true;
    if (refiner_names.count(inv.refiner_id)) return true;
    if (inv.refiner_id == "auto:default") return true;
    if (inv.refiner_id.rfind("view:", 0) == 0) {
      return view_names.count(inv.refiner_id.substr(5)) > 0;
    }
    return false;
  }

  const RefinerSpec* find_refiner(const std::string& id) {
    for (const auto& r : program.refiners) {
      if (r.spec.id == id) return &r.spec;
    }
    return nullptr;
  }

  std::optional<std::string> view_template(const std::string& name, std::set<std::string> stack) {
    if (stack.count(name)) return std::nullopt;
    stack.insert(name);
    for (const auto& v : program.views) {
      if (v.def.name != name) continue;
      std::string body = v.def.body;
      // Inline includes conservatively for dependency scanning.
      std::vector<PlaceholderRef> refs;
      try {
        refs = scan_placeholders(body);
      } catch (const SpearError&) {
        return std::nullopt;
      }
      for (const auto& ref : refs) {
        if (ref.kind != PlaceholderRef::Kind::Include) continue;
        auto inner = view_template(ref.name, stack);
        if (inner) body += "\n" + *inner;
      }
      return body;
    }
    return std::nullopt;
  }

  void fill_gen_hints(GenArgs& args, const WalkState& walk) {
    std::string key = args.prompt_key ? *args.prompt_key : walk.current_prompt;
    if (key.empty()) return;
    auto it = walk.templates.find(key);
    if (it == walk.templates.end() || !it->second) return;
    const std::string& templ = *it->second;

    std::vector<PlaceholderRef> refs;
    try {
      refs = scan_placeholders(templ);
    } catch (const SpearError&) {
      return;
    }
    std::set<std::string> deps;
    for (const auto& ref : refs) {
      if (ref.kind == PlaceholderRef::Kind::ContextPath) {
        deps.insert(ref.name.substr(0, ref.name.find('.')));
      } else if (ref.kind == PlaceholderRef::Kind::Param) {
        deps.insert(ref.name);  // conservatively: may resolve from context
      }
    }
    args.context_deps.assign(deps.begin(), deps.end());

    bool has_task = false, has_section = false;
    std::istringstream in(templ);
    std::string line, pre_input;
    bool before_input = true;
    while (std::getline(in, line)) {
      if (line.rfind("INPUT:", 0) == 0) before_input = false;
      if (line.rfind("TASK:", 0) == 0) {
        has_task = true;
        if (line.find("section") != std::string::npos) has_section = true;
      }
      if (before_input) pre_input += line + "\n";
    }
    if (has_section) {
      args.fusion_class = GenArgs::FusionClass::Sectioned;
    } else if (has_task && pre_input.find("{{") == std::string::npos) {
      args.fusion_class = GenArgs::FusionClass::TaskDirective;
    }
  }

  void note_ref_write(const RefArgs& args, WalkState& walk) {
    std::string key;
    if (args.key) {
      key = *args.key;
    } else if (args.action == RefAction::Create) {
      const std::string& id = args.refiner.display_id();
      key = id.rfind("f_", 0) == 0 ? id.substr(2) : id;
    } else {
      key = walk.current_prompt;
    }
    if (key.empty()) return;

    std::optional<std::string> templ;
    if (args.refiner.is_literal()) {
      if (args.action == RefAction::Create) {
        templ = *args.refiner.literal_text;
      } else if (args.action == RefAction::Append) {
        auto it = walk.templates.find(key);
        if (it != walk.templates.end() && it->second) {
          templ = append_fragment(*it->second, *args.refiner.literal_text);
        }
      }
    } else if (args.refiner.refiner_id.rfind("view:", 0) == 0) {
      templ = view_template(args.refiner.refiner_id.substr(5), {});
    } else if (const RefinerSpec* spec = find_refiner(args.refiner.refiner_id)) {
      if (spec->mode == RefMode::Manual) {
        if (args.action == RefAction::Create) {
          templ = spec->body;
        } else if (args.action == RefAction::Append) {
          auto it = walk.templates.find(key);
          if (it != walk.templates.end() && it->second) {
            templ = append_fragment(*it->second, spec->body);
          }
        }
      }
    }
    walk.templates[key] = templ;  // nullopt marks dynamic content
    walk.current_prompt = key;
  }

  void walk_nodes(NodeList& nodes, WalkState& walk, const std::string& pipeline_name) {
    for (auto& node : nodes) {
      switch (node.kind) {
        case OpKind::Ret: {
          const auto& args = node.as<RetArgs>();
          if (!source_names.count(args.source)) {
            error(node.span, "pipeline '" + pipeline_name + "' references undeclared source '" +
                                 args.source + "'");
          }
          if (args.prompt_key && !walk.templates.count(*args.prompt_key)) {
            warn(node.span, "retrieval prompt '" + *args.prompt_key +
                                "' is not created statically; the store file must supply it");
          }
          break;
        }
        case OpKind::Gen: {
          auto& args = node.as<GenArgs>();
          if (args.prompt_key) {
            if (!walk.templates.count(*args.prompt_key)) {
              warn(node.span, "GEN[\"" + args.label + "\"] reads prompt '" + *args.prompt_key +
                                  "' that no earlier operator creates; the store file must "
                                  "supply it");
            }
          } else if (walk.current_prompt.empty()) {
            warn(node.span, "GEN[\"" + args.label +
                                "\"] has no prompt argument and no preceding REF/VIEW/MERGE");
          }
          fill_gen_hints(args, walk);
          break;
        }
        case OpKind::Ref: {
          const auto& args = node.as<RefArgs>();
          if (!refiner_resolvable(args.refiner)) {
            error(node.span, "unknown refiner '" + args.refiner.display_id() + "'");
          }
          note_ref_write(args, walk);
          break;
        }
        case OpKind::Check: {
          walk_nodes(node.children, walk, pipeline_name);
          break;
        }
        case OpKind::Merge: {
          const auto& args = node.as<MergeArgs>();
          for (const std::string& key : {args.left, args.right}) {
            if (!walk.templates.count(key)) {
              warn(node.span, "MERGE operand '" + key +
                                  "' is not created statically; the store file must supply it");
            }
          }
          std::string out = args.out.empty() ? default_merge_key(args.left, args.right) : args.out;
          walk.templates[out] = std::nullopt;
          walk.current_prompt = out;
          break;
        }
        case OpKind::Delegate: {
          const auto& args = node.as<DelegateArgs>();
          static const std::set<std::string> builtins = {"identity", "evidence_scorer",
                                                         "spear::diff"};
          if (!agent_names.count(args.agent) && !builtins.count(args.agent)) {
            error(node.span, "unknown agent '" + args.agent + "'");
          }
          break;
        }
        case OpKind::Expand: {
          const auto& args = node.as<ExpandArgs>();
          if (!walk.templates.count(args.key)) {
            warn(node.span, "EXPAND target '" + args.key +
                                "' is not created statically; the store file must supply it");
          } else if (walk.templates[args.key]) {
            walk.templates[args.key] =
                append_fragment(*walk.templates[args.key], args.text);
          }
          walk.current_prompt = args.key;
          break;
        }
        case OpKind::Retry: {
          auto& args = node.as<RetryArgs>();
          if (args.max_retries < 1) {
            error(node.span, "RETRY bound must be at least 1");
          }
          if (args.refiner && !refiner_resolvable(*args.refiner)) {
            error(node.span, "unknown refiner '" + args.refiner->display_id() + "'");
          }
          if (!node.children.empty() && !node.children[0].children.empty()) {
            error(node.span, "RETRY cannot wrap an operator with a body block");
          }
          walk_nodes(node.children, walk, pipeline_name);
          break;
        }
        case OpKind::Map: {
          const auto& args = node.as<MapArgs>();
          if (!refiner_resolvable(args.refiner)) {
            error(node.span, "unknown refiner '" + args.refiner.display_id() + "'");
          }
          for (const auto& key : args.keys) {
            if (!walk.templates.count(key)) {
              warn(node.span, "MAP target '" + key +
                                  "' is not created statically; the store file must supply it");
            }
            walk.templates[key] = std::nullopt;
          }
          if (!args.keys.empty()) walk.current_prompt = args.keys.back();
          break;
        }
        case OpKind::Switch: {
          auto& args = node.as<SwitchArgs>();
          if (args.branches.empty()) {
            error(node.span, "SWITCH needs at least one branch");
          }
          for (std::size_t i = 0; i < args.branches.size(); ++i) {
            if (!args.branches[i].guard && i + 1 != args.branches.size()) {
              error(node.span, "SWITCH default arm must be last");
            }
            walk_nodes(args.branches[i].body, walk, pipeline_name);
          }
          break;
        }
        case OpKind::View: {
          const auto& args = node.as<ViewArgs>();
          if (!view_names.count(args.view)) {
            error(node.span, "unknown view '" + args.view + "'");
          } else {
            Value argv = Value::object();
            for (const auto& [k, v] : args.args) argv[k] = v;
            std::string key =
                args.key ? *args.key : view_materialization_key(args.view, Value(args.args));
            walk.templates[key] = view_template(args.view, {});
            walk.current_prompt = key;
          }
          break;
        }
        case OpKind::Diff: {
          const auto& args = node.as<DiffArgs>();
          for (const std::string& key : {args.left, args.right}) {
            if (!walk.templates.count(key)) {
              warn(node.span, "DIFF operand '" + key +
                                  "' is not created statically; it must resolve at runtime");
            }
          }
          break;
        }
        case OpKind::FusedGen:
          break;
      }
    }
  }

  void run() {
    check_unique_names();
    check_views();
    check_refiners();
    for (auto& pipeline : program.pipelines) {
      WalkState walk;
      walk_nodes(pipeline.nodes, walk, pipeline.name);
    }
  }
};

}  // namespace

std::vector<ParseDiagnostic> validate(SourceProgram& program) {
  Checker checker{program, {}, {}, {}, {}, {}};
  checker.run();
  return checker.diags;
}

}  // namespace spear::dsl
