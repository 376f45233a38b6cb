#pragma once

#include <string>

#include "spear/algebra.hpp"
#include "spear/dsl.hpp"
#include "spear/state.hpp"

namespace spear {

// Installs a parsed program into an engine and a seed state: views into the
// store, refiners/sources/agents into the engine registries. File-backed
// sources resolve relative to base_dir.
void install_program(const dsl::SourceProgram& program, Engine& engine, ExecState& state,
                     const std::string& base_dir = ".");

}  // namespace spear
