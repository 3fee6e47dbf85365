#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace multienv {

using Rng = std::mt19937_64;

struct OutcomeKind {
  enum class Type { kRegression, kClassification };
  Type type = Type::kRegression;
  int num_classes = 0;  // meaningful for classification only

  static OutcomeKind regression() { return {}; }
  static OutcomeKind classification(int k) { return {Type::kClassification, k}; }
  bool is_classification() const { return type == Type::kClassification; }
  bool operator==(const OutcomeKind&) const = default;
};

// One environment's observations. Class labels are stored as exact small
// integers in `y`.
struct EnvironmentSample {
  std::string env_id;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
  // Rows picked by `rows`, in the given order.
  EnvironmentSample subset(std::span<const std::size_t> rows) const;
};

class MultiEnvDataset {
 public:
  // Validates shapes, finiteness, labels, and m >= 2.
  MultiEnvDataset(std::vector<EnvironmentSample> environments, OutcomeKind kind);

  std::size_t num_environments() const { return envs_.size(); }
  int dim() const { return p_; }
  const OutcomeKind& outcome_kind() const { return kind_; }
  const EnvironmentSample& env(std::size_t i) const { return envs_.at(i); }
  std::span<const EnvironmentSample> environments() const { return envs_; }
  std::size_t total_rows() const;

  // Datasets restricted to some environments (still m >= 2).
  MultiEnvDataset select(std::span<const std::size_t> env_indices) const;

 private:
  std::vector<EnvironmentSample> envs_;
  int p_ = 0;
  OutcomeKind kind_;
};

// Rows of several environments stacked in index order.
struct Samples {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
};

Samples pool(std::span<const EnvironmentSample> envs);
Samples pool(const MultiEnvDataset& data, std::span<const std::size_t> env_indices);
// All environments except `excluded`.
Samples pool_except(const MultiEnvDataset& data, std::size_t excluded);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Header `env_id,y,x_1,...,x_p`. Rows are grouped by env_id in order of first
// appearance; row order within an environment follows the file.
MultiEnvDataset load_csv(const std::filesystem::path& path, OutcomeKind kind);
MultiEnvDataset parse_csv(std::string_view text, OutcomeKind kind);
// Shortest round-trip decimal representation for every value.
std::string to_csv(const MultiEnvDataset& data);
void write_csv(const MultiEnvDataset& data, const std::filesystem::path& path);

struct HierGenConfig {
  std::size_t m = 10;
  std::size_t n_min = 50;  // n_min == n_max fixes every environment's size
  std::size_t n_max = 50;
  int p = 5;
  std::vector<double> beta;  // empty means all ones
  double env_effect_scale = 0.5;
  double noise_scale = 1.0;
  double outlier_frac = 0.0;
  double outlier_noise_multiplier = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  Eigen::VectorXd beta_vector() const;
};

struct GeneratedData {
  MultiEnvDataset dataset;
  std::vector<Eigen::VectorXd> env_effects;  // theta_i
  std::vector<bool> outlier;
};

// Per environment: theta ~ N(0, s^2 I), outlier ~ Bernoulli(outlier_frac),
// X ~ N(0, I), y = X (beta + theta) + sigma_i * eps.
GeneratedData generate_hierarchical_detailed(const HierGenConfig& cfg);
MultiEnvDataset generate_hierarchical(const HierGenConfig& cfg);

struct EnvSplit {
  std::vector<std::size_t> d1;  // sorted
  std::vector<std::size_t> d2;  // sorted
};

// |D1| = round-half-up(gamma * m); uniform over such partitions.
EnvSplit split_environments(std::size_t m, double gamma, Rng& rng);
std::size_t split_size(std::size_t m, double gamma);

struct Holdout {
  std::vector<std::size_t> labeled;    // sorted
  std::vector<std::size_t> remainder;  // sorted
};

// Uniform L-subset of [n]; requires 1 <= L < n.
Holdout holdout_labels(std::size_t n, std::size_t L, Rng& rng);

}  // namespace multienv
