#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "multienv/data.hpp"
#include "multienv/nested_sets.hpp"
#include "multienv/quantiles.hpp"

namespace multienv {

// A fitted set-valued predictor x -> C(x).
class ConfidenceMapping {
 public:
  virtual ~ConfidenceMapping() = default;
  virtual PredictionSet evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const = 0;
  // Algorithm name, levels, thresholds and per-environment scores.
  virtual nlohmann::json info() const = 0;
};

using MappingPtr = std::shared_ptr<const ConfidenceMapping>;

// Coverage thresholds of every row of `env` under `family`.
std::vector<double> coverage_thresholds(const NestedFamily& family, const EnvironmentSample& env);

// Leave-one-environment-out fits shared by the jackknife-type methods.
struct LeaveOneOut {
  std::vector<NestedFamily> families;           // families[i] never saw environment i
  std::vector<std::vector<double>> thresholds;  // thresholds[i][j] for row j of environment i
};

// `workers` > 1 fits environments on a thread pool; the result does not
// depend on the worker count.
LeaveOneOut fit_leave_one_out(const MultiEnvDataset& data, const FamilyBuilder& builder,
                              int workers = 1);

// quant_plus(thresholds[i], alpha) for each environment.
std::vector<double> residual_quantiles(const std::vector<std::vector<double>>& thresholds,
                                       double alpha);

// ---------------------------------------------------------------------------
// Jackknife-minmax

class JackknifeMinmaxMapping : public ConfidenceMapping {
 public:
  JackknifeMinmaxMapping(std::vector<NestedFamily> families, std::vector<double> scores,
                         double alpha, double delta);

  // Closed form [min f - tau, max f + tau] for symmetric families, the union
  // of the leave-one-out sets otherwise.
  PredictionSet evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  PredictionSet evaluate_union(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  PredictionSet evaluate_closed_form(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  nlohmann::json info() const override;

  ExtendedReal tau() const { return tau_; }
  const std::vector<double>& scores() const { return scores_; }

 private:
  std::vector<NestedFamily> families_;
  std::vector<double> scores_;
  double alpha_;
  double delta_;
  ExtendedReal tau_;
  bool symmetric_;
};

std::shared_ptr<JackknifeMinmaxMapping> fit_jackknife_minmax(const MultiEnvDataset& data,
                                                             const FamilyBuilder& builder,
                                                             double alpha, double delta,
                                                             int workers = 1);
std::shared_ptr<JackknifeMinmaxMapping> fit_jackknife_minmax(const LeaveOneOut& loo,
                                                             double alpha, double delta);

// ---------------------------------------------------------------------------
// Split conformal

class SplitConformalMapping : public ConfidenceMapping {
 public:
  SplitConformalMapping(NestedFamily family, std::vector<double> scores, EnvSplit split,
                        double alpha, double delta, double gamma);

  PredictionSet evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  nlohmann::json info() const override;

  ExtendedReal tau() const { return tau_; }
  const NestedFamily& family() const { return family_; }
  const std::vector<double>& scores() const { return scores_; }
  const EnvSplit& split() const { return split_; }

 private:
  NestedFamily family_;
  std::vector<double> scores_;  // S^i for i in D2
  EnvSplit split_;
  double alpha_;
  double delta_;
  double gamma_;
  ExtendedReal tau_;
};

std::shared_ptr<SplitConformalMapping> fit_split_conformal(const MultiEnvDataset& data,
                                                           const FamilyBuilder& builder,
                                                           double alpha, double delta,
                                                           double gamma, Rng& rng);
std::shared_ptr<SplitConformalMapping> fit_split_conformal(const MultiEnvDataset& data,
                                                           const FamilyBuilder& builder,
                                                           double alpha, double delta,
                                                           const EnvSplit& split);

// ---------------------------------------------------------------------------
// Hierarchical jackknife+

class HierJackknifePlusMapping : public ConfidenceMapping {
 public:
  HierJackknifePlusMapping(std::vector<RegressionFn> predictors,
                           std::vector<std::vector<double>> residuals, double alpha);

  // [right quantile at alpha of {f_-i(x) - R} + a -inf atom,
  //  left quantile at 1 - alpha of {f_-i(x) + R} + a +inf atom].
  PredictionSet evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  nlohmann::json info() const override;

 private:
  std::vector<RegressionFn> predictors_;
  std::vector<std::vector<double>> residuals_;
  double alpha_;
};

std::shared_ptr<HierJackknifePlusMapping> fit_hier_jackknife_plus(
    const MultiEnvDataset& data, const PredictorBuilder& builder, double alpha);

// ---------------------------------------------------------------------------
// Hierarchical conformal prediction

class HcpMapping : public ConfidenceMapping {
 public:
  HcpMapping(RegressionFn predictor, ExtendedReal threshold, EnvSplit split, double alpha);

  PredictionSet evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  nlohmann::json info() const override;

  ExtendedReal threshold() const { return threshold_; }

 private:
  RegressionFn predictor_;
  ExtendedReal threshold_;
  EnvSplit split_;
  double alpha_;
};

// Left quantile at 1 - alpha of the residual atoms, each environment carrying
// mass 1 / (|D2| + 1), plus a +inf atom of mass 1 / (|D2| + 1).
ExtendedReal hcp_threshold(const std::vector<std::vector<double>>& residuals, double alpha);

std::shared_ptr<HcpMapping> fit_hcp(const MultiEnvDataset& data, const PredictorBuilder& builder,
                                    double alpha, double gamma, Rng& rng);
std::shared_ptr<HcpMapping> fit_hcp(const MultiEnvDataset& data, const PredictorBuilder& builder,
                                    double alpha, const EnvSplit& split);

// ---------------------------------------------------------------------------
// Resized split conformal

// r / s with 0 / 0 = 0 and r / 0 = +inf for r > 0.
double resize(double r, double s, bool* degenerate = nullptr);

// The calibration half of resized split conformal; independent of the test
// environment.
struct ResizedCalibration {
  NestedFamily family;
  EnvSplit split;
  std::vector<double> factors;  // s^i for i in D2
  std::vector<double> scores;   // resized S^i for i in D2
  ExtendedReal score_quantile;  // quant_plus(scores, delta)
  std::size_t labeled_size;
  double alpha;
  double delta;
  double alpha0;
  bool degenerate;  // some s^i was zero

  // quant_plus at alpha0 of the labeled test rows' thresholds.
  double test_factor(const EnvironmentSample& labeled) const;
};

ResizedCalibration calibrate_resized(const MultiEnvDataset& data, const FamilyBuilder& builder,
                                     double alpha, double delta, double alpha0,
                                     std::size_t labeled_size, const EnvSplit& split, Rng& rng);

class ResizedMapping : public ConfidenceMapping {
 public:
  ResizedMapping(std::shared_ptr<const ResizedCalibration> calibration, double test_factor);

  PredictionSet evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  nlohmann::json info() const override;

  ExtendedReal tau() const { return tau_; }
  double test_factor() const { return test_factor_; }
  bool degenerate() const { return degenerate_; }

 private:
  std::shared_ptr<const ResizedCalibration> cal_;
  double test_factor_;
  ExtendedReal tau_;
  bool degenerate_;
};

std::shared_ptr<ResizedMapping> resized_for_test(
    std::shared_ptr<const ResizedCalibration> calibration, const EnvironmentSample& labeled);

std::shared_ptr<ResizedMapping> fit_resized_split_conformal(
    const MultiEnvDataset& data, const EnvironmentSample& test_labeled,
    const FamilyBuilder& builder, double alpha, double delta, double gamma, double alpha0,
    Rng& rng);

// ---------------------------------------------------------------------------
// Jackknife+ quantile

class JackknifePlusQuantileMapping : public ConfidenceMapping {
 public:
  JackknifePlusQuantileMapping(std::vector<NestedFamily> families, std::vector<double> scores,
                               double alpha, double delta);

  // [quant_minus({f_-i(x) - S^i}, delta), quant_plus({f_-i(x) + S^i}, delta)].
  PredictionSet evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  nlohmann::json info() const override;

 private:
  std::vector<NestedFamily> families_;
  std::vector<double> scores_;
  double alpha_;
  double delta_;
};

std::shared_ptr<JackknifePlusQuantileMapping> fit_jackknife_plus_quantile(
    const MultiEnvDataset& data, const PredictorBuilder& builder, double alpha, double delta,
    int workers = 1);
// Requires symmetric leave-one-out families.
std::shared_ptr<JackknifePlusQuantileMapping> fit_jackknife_plus_quantile(const LeaveOneOut& loo,
                                                                          double alpha,
                                                                          double delta);

}  // namespace multienv
