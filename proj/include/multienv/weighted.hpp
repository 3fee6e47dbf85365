#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "multienv/algorithms.hpp"
#include "multienv/data.hpp"
#include "multienv/nested_sets.hpp"

namespace multienv {

// phi(E_i) for an environment index of the full dataset.
using EnvFeatureMap = std::function<Eigen::VectorXd(std::size_t env_index)>;

EnvFeatureMap constant_features();
// [1, flag_i]: an intercept plus a group indicator.
EnvFeatureMap indicator_features(std::vector<bool> flags);

// Least k with k / n > 1 - alpha.
std::size_t env_score_rank(std::size_t n, double alpha);
// k-th smallest coverage threshold with k = env_score_rank(n, alpha).
double env_score(std::vector<double> thresholds, double alpha);
double env_score(const EnvironmentSample& env, const NestedFamily& family, double alpha);

// l_delta(t) = (1 - delta) max(t, 0) + delta max(-t, 0).
double env_pinball_loss(double t, double delta);

struct PinballEnvFit {
  Eigen::VectorXd theta;
  double objective = 0.0;  // mean pinball loss + ridge_weight * |theta|^2
  double predict(const Eigen::Ref<const Eigen::VectorXd>& phi) const { return theta.dot(phi); }
};

struct DualSolution {
  Eigen::VectorXd eta;    // in [-delta, 1 - delta]
  Eigen::VectorXd theta;  // primal coefficients recovered from eta
  double objective = 0.0;  // dual objective (scaled by the number of scores)
  double gap = 0.0;        // primal minus dual, same scaling
};

// maximize c'eta - |Phi' eta|^2 / (4 N w) over the box, or subject to
// Phi' eta = 0 when w = 0. Rows of `features` align with `c`.
DualSolution solve_env_dual(const Eigen::VectorXd& c, const Eigen::MatrixXd& features,
                            double delta, double ridge_weight, double tolerance = 1e-11);

// argmin_theta (1/N) sum l_delta(S_i - theta' phi_i) + w |theta|^2.
PinballEnvFit fit_pinball_env(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                              double delta, double ridge_weight, double tolerance = 1e-11);

// The dual with the (m+1)-th score set to s. `features` has m + 1 rows, the
// last one for the test environment.
DualSolution dual_eta(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                      double delta, double ridge_weight, double s, double tolerance = 1e-11);

struct WeightedOptions {
  double ridge_weight = 0.0;
  double solver_tolerance = 1e-11;
  double search_tolerance = 1e-9;
  int max_expansions = 60;
};

// sup { s : eta_{m+1}(s) < 1 - delta }, +inf when the set is unbounded.
ExtendedReal weighted_threshold(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                                double delta, const WeightedOptions& opts = {});
// sup { s : eta_{m+1}(s) <= u - delta }.
ExtendedReal randomized_threshold_at(const Eigen::VectorXd& scores,
                                     const Eigen::MatrixXd& features, double delta, double u,
                                     const WeightedOptions& opts = {});
// Draws u ~ U(0, 1) from rng.
ExtendedReal randomized_threshold(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                                  double delta, Rng& rng, const WeightedOptions& opts = {});

struct WeightedCalibration {
  NestedFamily family;
  EnvSplit split;
  std::vector<double> scores;  // env_score for each i in D2
  Eigen::MatrixXd features;    // |D2| x k
  double alpha;
  double delta;
  WeightedOptions opts;

  Eigen::MatrixXd with_test(const Eigen::VectorXd& test_features) const;
  ExtendedReal threshold(const Eigen::VectorXd& test_features) const;
  ExtendedReal randomized(const Eigen::VectorXd& test_features, double u) const;
};

WeightedCalibration calibrate_weighted(const MultiEnvDataset& data, const FamilyBuilder& builder,
                                       double alpha, double delta, const EnvSplit& split,
                                       const EnvFeatureMap& features,
                                       const WeightedOptions& opts = {});

class WeightedMapping : public ConfidenceMapping {
 public:
  // `u` selects the randomized threshold.
  WeightedMapping(std::shared_ptr<const WeightedCalibration> calibration,
                  Eigen::VectorXd test_features, std::optional<double> u = std::nullopt);

  PredictionSet evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  nlohmann::json info() const override;
  ExtendedReal tau() const { return tau_; }

 private:
  std::shared_ptr<const WeightedCalibration> cal_;
  Eigen::VectorXd test_features_;
  std::optional<double> u_;
  ExtendedReal tau_;
};

}  // namespace multienv
