#include "spear/program.hpp"

#include <filesystem>

#include "spear/errors.hpp"

namespace spear {

void install_program(const dsl::SourceProgram& program, Engine& engine, ExecState& state,
                     const std::string& base_dir) {
  for (const auto& view : program.views) {
    state.store.define_view(view.def);
  }
  for (const auto& refiner : program.refiners) {
    engine.refiners().add(refiner.spec);
  }
  for (const auto& source : program.sources) {
    switch (source.kind) {
      case dsl::SourceDecl::Kind::File: {
        std::filesystem::path path(source.file_path);
        if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
        engine.sources().add_jsonl_file(source.name, path.string());
        break;
      }
      case dsl::SourceDecl::Kind::Inline:
        engine.sources().add_inline(source.name, source.inline_value);
        break;
      case dsl::SourceDecl::Kind::Agent: {
        std::string agent = source.agent_name;
        Engine* eng = &engine;
        engine.sources().add_fn(
            source.name, [agent, eng](const std::optional<std::string>& query) {
              Value payload = query ? Value(*query) : Value(nullptr);
              ExecState empty;
              Value result = eng->agents().invoke(agent, payload, empty);
              std::size_t count = result.is_array() ? result.size() : 1;
              return RetrievalResult{result, count};
            });
        break;
      }
    }
  }
  for (const auto& agent : program.agents) {
    engine.agents().alias(agent.name, agent.builtin);
  }
}

}  // namespace spear
