#include "spear/config.hpp"

#include <fstream>
#include <sstream>

#include "spear/errors.hpp"

namespace spear {

RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpearError(Errc::ConfigError, "cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  Value v = Value::parse(buf.str(), nullptr, false);
  if (v.is_discarded()) {
    throw SpearError(Errc::ConfigError, "config file '" + path + "' is not valid JSON");
  }
  return from_json(v);
}

RunConfig RunConfig::from_json(const Value& v) {
  RunConfig config;
  static const std::set<std::string> known = {"backend", "cache",  "cost_model", "calibration",
                                              "workload", "planner", "meta",      "bench"};
  for (auto it = v.begin(); it != v.end(); ++it) {
    if (!known.count(it.key())) {
      throw SpearError(Errc::ConfigError, "unknown config key '" + it.key() + "'");
    }
  }

  if (v.contains("backend")) {
    const Value& b = v.at("backend");
    config.backend.kind = b.value("kind", config.backend.kind);
    if (config.backend.kind != "mock" && config.backend.kind != "scripted" &&
        config.backend.kind != "http") {
      throw SpearError(Errc::ConfigError, "backend.kind must be mock, scripted, or http");
    }
    config.backend.scripted_fixture_path =
        b.value("fixture_path", config.backend.scripted_fixture_path);
    config.backend.base_url = b.value("base_url", config.backend.base_url);
    config.backend.model = b.value("model", config.backend.model);
    config.backend.temperature = b.value("temperature", config.backend.temperature);
    config.backend.max_completion_tokens =
        b.value("max_completion_tokens", config.backend.max_completion_tokens);
  }
  if (v.contains("cache")) {
    config.cache_capacity_tokens =
        v.at("cache").value("capacity_tokens", config.cache_capacity_tokens);
  }
  if (v.contains("cost_model")) {
    config.cost_model = CostModel::from_json(v.at("cost_model"));
    if (!config.cost_model.valid()) {
      throw SpearError(Errc::ConfigError,
                       "cost model invalid: cached cost must stay below uncached cost and all "
                       "terms nonnegative");
    }
  }
  if (v.contains("calibration")) {
    config.calibration = plan::CalibrationGrid::from_json(v.at("calibration"));
  }
  if (v.contains("workload")) {
    const Value& w = v.at("workload");
    config.workload.item_tokens = w.value("item_tokens", config.workload.item_tokens);
    config.workload.summary_tokens = w.value("summary_tokens", config.workload.summary_tokens);
    config.workload.map_instruction_tokens =
        w.value("map_instruction_tokens", config.workload.map_instruction_tokens);
    config.workload.filter_instruction_tokens =
        w.value("filter_instruction_tokens", config.workload.filter_instruction_tokens);
    config.workload.label_tokens = w.value("label_tokens", config.workload.label_tokens);
  }
  if (v.contains("planner")) {
    config.default_selectivity =
        v.at("planner").value("default_selectivity", config.default_selectivity);
    config.exact_subset_limit =
        v.at("planner").value("exact_subset_limit", config.exact_subset_limit);
  }
  if (v.contains("meta")) {
    config.meta_support_threshold =
        v.at("meta").value("support_threshold", config.meta_support_threshold);
  }
  if (v.contains("bench")) {
    config.bench_fusion_items = v.at("bench").value("fusion_items", config.bench_fusion_items);
    config.bench_refinement_items =
        v.at("bench").value("refinement_items", config.bench_refinement_items);
  }
  return config;
}

Value RunConfig::to_json() const {
  Value v = Value::object();
  Value b = Value::object();
  b["kind"] = backend.kind;
  b["fixture_path"] = backend.scripted_fixture_path;
  b["base_url"] = backend.base_url;
  b["model"] = backend.model;
  b["temperature"] = backend.temperature;
  b["max_completion_tokens"] = backend.max_completion_tokens;
  v["backend"] = b;
  Value cache = Value::object();
  cache["capacity_tokens"] = cache_capacity_tokens;
  v["cache"] = cache;
  v["cost_model"] = cost_model.to_json();
  v["calibration"] = calibration.to_json();
  Value w = Value::object();
  w["item_tokens"] = workload.item_tokens;
  w["summary_tokens"] = workload.summary_tokens;
  w["map_instruction_tokens"] = workload.map_instruction_tokens;
  w["filter_instruction_tokens"] = workload.filter_instruction_tokens;
  w["label_tokens"] = workload.label_tokens;
  v["workload"] = w;
  Value p = Value::object();
  p["default_selectivity"] = default_selectivity;
  p["exact_subset_limit"] = exact_subset_limit;
  v["planner"] = p;
  Value m = Value::object();
  m["support_threshold"] = meta_support_threshold;
  v["meta"] = m;
  Value bench = Value::object();
  bench["fusion_items"] = bench_fusion_items;
  bench["refinement_items"] = bench_refinement_items;
  v["bench"] = bench;
  return v;
}

}  // namespace spear
