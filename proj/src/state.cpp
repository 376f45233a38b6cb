#include "spear/state.hpp"

#include <cmath>

#include "spear/errors.hpp"
#include "spear/hashing.hpp"

namespace spear {

Value metadata_to_json(const Metadata& m) {
  Value v = Value::object();
  for (const auto& [k, val] : m) v[k] = val;
  return v;
}

Metadata metadata_from_json(const Value& v) {
  Metadata m;
  for (auto it = v.begin(); it != v.end(); ++it) m[it.key()] = it.value().get<double>();
  return m;
}

std::string ExecState::canonical_serialize() const {
  Value doc = Value::object();
  doc["context"] = context.is_null() ? Value::object() : context;
  doc["metadata"] = metadata_to_json(metadata);
  doc["prompts"] = Value::parse(store.export_json());
  return doc.dump();
}

std::string ExecState::state_hash() const { return sha256_hex16(canonical_serialize()); }

namespace {

void check_finite(const Value& v, const std::string& where) {
  if (v.is_number_float() && !std::isfinite(v.get<double>())) {
    throw SpearError(Errc::ValidationError, "non-finite number in " + where);
  }
  if (v.is_array() || v.is_object()) {
    for (const auto& child : v) check_finite(child, where);
  }
}

}  // namespace

void ExecState::check_invariants() const {
  const Value& ctx = context;
  if (!ctx.is_null()) {
    if (!ctx.is_object()) {
      throw SpearError(Errc::ValidationError, "context is not a map");
    }
    for (auto it = ctx.begin(); it != ctx.end(); ++it) {
      if (it.key().empty()) {
        throw SpearError(Errc::ValidationError, "context key is empty");
      }
      check_finite(it.value(), "context[" + it.key() + "]");
    }
  }
  for (const auto& [k, v] : metadata) {
    if (!std::isfinite(v)) {
      throw SpearError(Errc::ValidationError, "metadata '" + k + "' is not finite");
    }
    if (k.rfind("confidence", 0) == 0 && (v < 0.0 || v > 1.0)) {
      throw SpearError(Errc::ValidationError, "confidence metric '" + k + "' outside [0,1]");
    }
    bool token_metric = k.rfind("prompt_tokens", 0) == 0 ||
                        k.rfind("cached_prefix_tokens", 0) == 0 ||
                        k.rfind("completion_tokens", 0) == 0;
    if (token_metric && (v < 0.0 || v != std::floor(v))) {
      throw SpearError(Errc::ValidationError, "token metric '" + k + "' is not a whole count");
    }
  }
  // Hash-chain integrity per entry: replaying each log must land on the
  // entry's current version.
  for (const auto& [key, entry] : store.entries()) {
    PromptEntry replayed = replay_log(key, entry.ref_log);
    if (replayed.version != entry.version) {
      throw SpearError(Errc::BrokenHashChain, "entry '" + key + "' diverges from its ref_log");
    }
  }
}

}  // namespace spear
