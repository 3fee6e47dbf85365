#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "multienv/data.hpp"
#include "multienv/eval.hpp"

namespace multienv {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SweepSpec {
  std::string param;  // alpha | delta | gamma | alpha0 | labeled | ridge_weight
  std::vector<double> values;
};

struct CompareSpec {
  MethodSpec method_b;
  std::vector<double> delta_grid;
};

struct OutputSpec {
  std::string report;
  std::string sweep_csv;
  std::string dataset;
};

struct RunConfig {
  std::optional<HierGenConfig> generator;
  std::optional<std::string> csv_path;
  OutcomeKind outcome;
  MethodSpec method;
  std::size_t trials = 100;
  std::size_t train_envs = 10;
  std::size_t test_envs = 5;
  CoverageRule rule = CoverageRule::kConformalCount;
  std::optional<ClipRange> clip;
  std::optional<SweepSpec> sweep;
  std::optional<CompareSpec> compare;
  OutputSpec output;
  std::uint64_t seed = 0;
  int workers = 1;
};

// Strict: unknown keys and out-of-range values raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

HierGenConfig parse_generator(const nlohmann::json& j);
MethodSpec parse_method_spec(const nlohmann::json& j);

nlohmann::json to_json(const HierGenConfig& cfg);
nlohmann::json to_json(const MethodSpec& spec);
// Echo of everything that determines the results; the worker count is left out.
nlohmann::json to_json(const RunConfig& cfg);

void apply_param(MethodSpec& spec, const std::string& param, double value);

// Loads the CSV source if any. Does not validate.
TrialPlan make_plan(const RunConfig& cfg);

}  // namespace multienv
