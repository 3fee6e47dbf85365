#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "multienv/algorithms.hpp"
#include "multienv/data.hpp"
#include "multienv/nested_sets.hpp"

namespace multienv {

// When a test environment counts as covered.
enum class CoverageRule {
  kConformalCount,  // covered >= ceil((1 - alpha)(n + 1))
  kFraction,        // covered / n >= 1 - alpha
  kScore,           // covered / n > 1 - alpha, i.e. env_score <= tau
};

std::string rule_name(CoverageRule rule);
CoverageRule parse_rule(const std::string& name);

// Minimal covered count for the environment to count as covered; may exceed n.
std::size_t required_count(std::size_t n, double alpha, CoverageRule rule);

struct EnvRecord {
  std::size_t trial = 0;
  std::string env_id;
  std::size_t n = 0;
  std::size_t covered = 0;
  double mean_measure = 0.0;
  bool env_covered = false;
  int group = -1;  // generator outlier flag when known
};

struct CoverageAggregates {
  std::size_t pairs = 0;
  std::size_t covered_pairs = 0;
  std::size_t points = 0;
  std::size_t covered_points = 0;
  double emp_one_minus_delta = 0.0;
  std::optional<double> emp_one_minus_alpha;  // null when no environment is covered
  double emp_set_length = 0.0;
  double marginal_coverage = 0.0;  // covered test points / all test points
};

CoverageAggregates aggregate(std::span<const EnvRecord> records);

struct CoverageReport {
  double alpha = 0.1;
  CoverageRule rule = CoverageRule::kConformalCount;
  std::vector<EnvRecord> records;
  CoverageAggregates aggregates;

  nlohmann::json to_json() const;
};

CoverageReport make_report(std::vector<EnvRecord> records, double alpha, CoverageRule rule);

EnvRecord evaluate_env(const ConfidenceMapping& mapping, const EnvironmentSample& env,
                       double alpha, std::optional<ClipRange> clip = std::nullopt,
                       CoverageRule rule = CoverageRule::kConformalCount, std::size_t trial = 0);

CoverageReport evaluate_mapping(const ConfidenceMapping& mapping,
                                std::span<const EnvironmentSample> test_envs, double alpha,
                                std::optional<ClipRange> clip = std::nullopt,
                                CoverageRule rule = CoverageRule::kConformalCount);

// ---------------------------------------------------------------------------
// Trials

enum class Method {
  kJackknifeMinmax,
  kSplitConformal,
  kHierJackknifePlus,
  kHcp,
  kResizedSplitConformal,
  kJackknifePlusQuantile,
  kWeighted,
};

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct MethodSpec {
  Method method = Method::kSplitConformal;
  double alpha = 0.1;
  double delta = 0.2;
  double gamma = 0.5;
  double alpha0 = 0.05;
  std::size_t labeled = 30;
  std::vector<double> lambda_grid;  // empty means the default grid
  std::string family = "symmetric";  // symmetric | band (regression); classification uses loss sets
  double band_lower = 0.05;
  double band_upper = 0.95;
  double softmax_l2 = 1e-3;
  std::string feature_map = "constant";  // constant | outlier
  double ridge_weight = 0.0;
  bool randomized = false;

  void validate() const;
};

struct TrialPlan {
  std::optional<HierGenConfig> generator;  // m is replaced by train_envs + test_envs
  std::shared_ptr<const MultiEnvDataset> dataset;
  std::size_t train_envs = 10;
  std::size_t test_envs = 5;
  MethodSpec method;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::optional<ClipRange> clip;
  CoverageRule rule = CoverageRule::kConformalCount;
  int workers = 1;

  void validate() const;
};

struct TrialSeeds {
  std::uint64_t data;
  std::uint64_t algorithm;
};

// Derived from (master seed, trial) only.
TrialSeeds trial_seeds(std::uint64_t master, std::size_t trial);

struct TrialLog {
  std::size_t trial;
  TrialSeeds seeds;
  nlohmann::json mapping;  // info() of the fitted mapping (first test env for per-env kinds)
};

struct TrialRun {
  CoverageReport report;
  std::vector<TrialLog> logs;
};

class TrialError : public std::runtime_error {
 public:
  TrialError(std::size_t trial, const std::string& what)
      : std::runtime_error("trial " + std::to_string(trial) + ": " + what), trial_(trial) {}
  std::size_t trial() const { return trial_; }

 private:
  std::size_t trial_;
};

// One trial: draw data, fit, evaluate. Records carry the trial index.
std::vector<EnvRecord> run_trial(const TrialPlan& plan, std::size_t trial,
                                 TrialLog* log = nullptr);

// Deterministic in (plan, seed); independent of plan.workers.
TrialRun run_trials(const TrialPlan& plan);

// ---------------------------------------------------------------------------
// Delta matching

struct MatchResult {
  double delta = 0.0;
  bool found = false;
  std::vector<double> fractions_a;  // aligned with the grid
  double fraction_b = 0.0;
};

// Largest grid delta with fractions_a >= fraction_b; the smallest grid value
// with found = false otherwise. The grid must be non-empty and ascending.
MatchResult match_delta_from_fractions(std::span<const double> grid,
                                       std::span<const double> fractions_a, double fraction_b);

struct MatchRun {
  MatchResult result;
  std::vector<TrialRun> runs_a;  // aligned with the grid
  TrialRun run_b;
};

MatchRun match_delta(const MethodSpec& a, const MethodSpec& b, std::span<const double> delta_grid,
                     const TrialPlan& plan);

}  // namespace multienv
