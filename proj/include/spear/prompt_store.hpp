#pragma once

#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "spear/value.hpp"

namespace spear {

enum class RefAction { Create, Append, Update, Merge };
enum class RefMode { Manual, Assisted, Auto };

const char* to_string(RefAction a);
const char* to_string(RefMode m);
RefAction ref_action_from_string(const std::string& s);
RefMode ref_mode_from_string(const std::string& s);

// One collapsed step inside a composite refinement record (REF-chain fusion
// keeps the individual steps here while emitting a single log record).
struct SubRecord {
  std::string action;
  std::string refiner_id;
  std::string payload;

  Value to_json() const;
  static SubRecord from_json(const Value& v);
  bool operator==(const SubRecord&) const = default;
};

// Append-only provenance record. The payload always carries enough resolved
// data to reproduce the step offline:
//   CREATE  canonical JSON of the initial (text, params)
//   APPEND  the appended fragment (resolved refiner output)
//   UPDATE  the full replacement text (resolved refiner output)
//   MERGE   JSON {left, right, policy, text, params} naming both parents
struct RefLogRecord {
  RefAction action = RefAction::Create;
  RefMode mode = RefMode::Manual;
  std::string refiner_id;
  std::string trigger;  // canonical condition text; empty when untriggered
  std::string pre_version;  // empty only for CREATE
  std::string post_version;
  std::map<std::string, double> metrics_snapshot;
  std::string payload;
  std::vector<SubRecord> sub_records;  // nonempty only for composite records

  Value to_json() const;
  static RefLogRecord from_json(const Value& v);
};

// A versioned, provenance-carrying prompt fragment.
struct PromptEntry {
  std::string key;
  std::string text;
  Value params = Value::object();  // parameter name -> default value
  std::set<std::string> tags;
  std::string version;  // hash of (text, params), recomputable at any time
  std::vector<RefLogRecord> ref_log;

  Value to_json() const;
  static PromptEntry from_json(const std::string& key, const Value& v);
};

// A reusable named prompt template.
struct ViewDef {
  struct Param {
    std::string name;
    std::optional<Value> default_value;
  };

  std::string name;
  std::vector<Param> params;
  std::string body;
  std::vector<std::string> includes;  // derived from body at registration
  std::set<std::string> tags;

  Value to_json() const;
  static ViewDef from_json(const std::string& name, const Value& v);
};

// Line-level difference between two prompt versions plus the provenance
// divergence point. Semantic (LLM-scored) diff is out of scope here.
struct DiffReport {
  struct Edit {
    enum class Op { Keep, Insert, Delete };
    Op op;
    std::string line;
  };

  std::string left_version;
  std::string right_version;
  std::vector<Edit> edits;
  // Index of the first differing ref_log record; nullopt when one log is a
  // prefix of the other (including the identity case).
  std::optional<std::size_t> divergence_index;
  Value params_added = Value::object();
  Value params_removed = Value::object();
  Value params_changed = Value::object();  // name -> {left, right}

  bool empty() const;
  Value to_json() const;
};

struct ResolvedPrompt {
  std::string text;
  Value params;
};

// P: the structured, versioned store of prompt fragments and views.
//
// Writes are serialized per store; readers see immutable snapshots (copying
// the store clones entries and views). ref_logs are append-only; rollback is
// a forward UPDATE whose payload is a historical version's text.
class PromptStore {
 public:
  PromptStore() = default;
  PromptStore(const PromptStore& other);
  PromptStore& operator=(const PromptStore& other);

  // --- entries ---------------------------------------------------------

  // Creates a new entry with a single CREATE record. With overwrite=true an
  // existing entry is replaced via an UPDATE record instead of failing.
  const PromptEntry& create_entry(const std::string& key, const std::string& text,
                                  const Value& params, RefMode mode,
                                  bool overwrite = false,
                                  const std::string& refiner_id = "",
                                  const std::map<std::string, double>& metrics = {});

  // Appends one record with resolved payload; text/params updated per action.
  // APPEND joins with exactly one newline and normalizes trailing whitespace.
  const PromptEntry& apply_record(const std::string& key, RefAction action, RefMode mode,
                                  const std::string& refiner_id, const std::string& payload,
                                  const std::string& trigger = "",
                                  const std::map<std::string, double>& metrics = {},
                                  std::vector<SubRecord> sub_records = {});

  // Merge result written under out_key with a MERGE record naming both
  // parents. A fresh out_key is seeded with an empty CREATE record first so
  // the first-record-is-CREATE invariant holds.
  const PromptEntry& record_merge(const std::string& out_key, const std::string& left_key,
                                  const std::string& right_key, const std::string& policy_name,
                                  const std::string& merged_text, const Value& merged_params,
                                  RefMode mode = RefMode::Manual,
                                  const std::map<std::string, double>& metrics = {});

  bool has_entry(const std::string& key) const;
  const PromptEntry& entry(const std::string& key) const;
  const std::map<std::string, PromptEntry>& entries() const { return entries_; }
  void set_tags(const std::string& key, std::set<std::string> tags);

  // --- views -----------------------------------------------------------

  // Registers a view; rejects duplicates, unknown includes, and any
  // registration that would create an include cycle.
  void define_view(const ViewDef& view);
  bool has_view(const std::string& name) const;
  const ViewDef& view(const std::string& name) const;
  const std::map<std::string, ViewDef>& views() const { return views_; }

  // --- rendering -------------------------------------------------------

  // Substitutes every placeholder. Resolution order for {{name}}: call args,
  // then entry params, then context; {{C.path}} reads context only; includes
  // expand depth-first in pre-order.
  std::string render(const PromptEntry& entry, const Value& context, const Value& args) const;
  std::string render_text(const std::string& templ, const Value& context, const Value& args,
                          const Value& param_defaults = Value::object()) const;
  std::string render_view(const std::string& name, const Value& context, const Value& args) const;

  // --- history ---------------------------------------------------------

  // Resolves a key or a 16-hex version digest to a concrete (text, params),
  // reconstructing historical versions by replay when needed.
  ResolvedPrompt resolve_version(const std::string& key_or_version) const;

  DiffReport diff(const std::string& left, const std::string& right) const;

  // --- persistence -----------------------------------------------------

  // One JSON document {entries: {...}, views: {...}}. export/import
  // round-trips bit-exactly after canonicalization.
  std::string export_json() const;
  static PromptStore import_json(const std::string& text);
  void save_file(const std::string& path) const;
  static PromptStore load_file(const std::string& path);

 private:
  const PromptEntry& append_record(PromptEntry& entry, RefLogRecord record);
  void check_template_syntax(const std::string& text) const;
  const std::vector<RefLogRecord>* find_log_for_version(const std::string& version,
                                                        std::size_t* upto) const;

  std::map<std::string, PromptEntry> entries_;
  std::map<std::string, ViewDef> views_;
  mutable std::shared_mutex mutex_;
};

// Reconstructs an entry purely from its records (assisted/auto steps replay
// from the recorded payload; no backend is ever invoked). Validates the
// CREATE head and the pre/post hash chain, naming the offending index.
PromptEntry replay_log(const std::string& key, const std::vector<RefLogRecord>& records);

// Line-level LCS edit script (left -> right).
std::vector<DiffReport::Edit> lcs_edit_script(const std::vector<std::string>& left,
                                              const std::vector<std::string>& right);

// APPEND semantics shared by the store and composite refinements: one
// newline separator, trailing whitespace normalized on both sides.
std::string append_fragment(const std::string& old_text, const std::string& fragment);

// Template scanning helpers shared with the DSL validator.
struct PlaceholderRef {
  enum class Kind { Param, ContextPath, Include };
  Kind kind;
  std::string name;                          // param name / context path / view name
  std::vector<std::pair<std::string, std::string>> include_args;  // raw arg text
};
std::vector<PlaceholderRef> scan_placeholders(const std::string& templ);

}  // namespace spear
