#pragma once

#include <optional>
#include <string>

#include <json.hpp>

namespace spear {

// Runtime data values: string | number | boolean | list | map (JSON model).
using Value = nlohmann::json;

// Looks up a dot-separated path ("notes.0.text") inside a Value tree.
// Numeric segments index arrays. Returns nullopt when any segment is missing.
std::optional<Value> lookup_path(const Value& root, const std::string& path);

// Deterministic string form used when interpolating a Value into a template:
// strings verbatim, scalars via canonical JSON, containers as compact JSON.
std::string value_to_text(const Value& v);

}  // namespace spear
