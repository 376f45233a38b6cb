#pragma once

#include <cstdint>
#include <string>

#include "spear/backend.hpp"
#include "spear/cost_model.hpp"
#include "spear/planner.hpp"
#include "spear/value.hpp"

namespace spear {

// Run configuration, loaded from a JSON document; unknown keys rejected at
// the top level, missing keys fall back to the defaults below. The API key
// for the http backend comes from SPEAR_API_KEY, never from the file.
struct RunConfig {
  struct BackendConfig {
    std::string kind = "mock";  // mock | scripted | http
    std::string scripted_fixture_path;
    std::string base_url;
    std::string model;
    double temperature = 0.0;
    std::size_t max_completion_tokens = 256;
  };

  BackendConfig backend;
  std::size_t cache_capacity_tokens = 262144;
  CostModel cost_model = plan::default_cost_model();
  plan::CalibrationGrid calibration = plan::CalibrationGrid::defaults();
  plan::WorkloadShape workload;
  double default_selectivity = 0.5;
  std::size_t exact_subset_limit = 12;
  std::size_t meta_support_threshold = 3;
  std::size_t bench_fusion_items = 1000;
  std::size_t bench_refinement_items = 120;

  static RunConfig load_file(const std::string& path);
  static RunConfig from_json(const Value& v);
  Value to_json() const;
};

}  // namespace spear
