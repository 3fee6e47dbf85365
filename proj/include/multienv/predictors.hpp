#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "multienv/data.hpp"

namespace multienv {

std::vector<double> default_lambda_grid();  // 10^-4 .. 10^4

struct RidgeModel {
  Eigen::VectorXd coefficients;
  double intercept = 0.0;
  double lambda = 0.0;
  // Set when lambda = 0 was singular and a positive grid value was used.
  bool singular_fallback = false;
  std::vector<double> loocv_errors;  // aligned with the lambda grid

  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

// Mean squared leave-one-out error of a ridge fit with unpenalized
// intercept, via the hat-matrix shortcut e_i / (1 - h_ii). Returns +inf when
// the normal equations are singular or some h_ii = 1.
double ridge_loocv_error(const Samples& s, double lambda);

// Picks lambda from `lambda_grid` by exact LOOCV (ties go to the smaller
// lambda) and refits on all rows.
RidgeModel fit_ridge(const Samples& s, std::span<const double> lambda_grid);
RidgeModel fit_ridge_fixed(const Samples& s, double lambda);

double predict_ridge(const RidgeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

// Pinball loss rho_level(t) = level * max(t, 0) + (1 - level) * max(-t, 0).
double pinball_loss(double residual, double level);

struct PinballModel {
  Eigen::VectorXd theta;  // [intercept, coefficients...]
  double level = 0.5;
  double objective = 0.0;  // mean pinball loss at the fit

  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

// Linear quantile regression. The LP is solved exactly by a bounded simplex,
// so `tolerance` only governs the simplex optimality test.
PinballModel fit_pinball(const Samples& s, double level, double tolerance = 1e-9);
double mean_pinball_objective(const Samples& s, const Eigen::VectorXd& theta, double level);

struct SoftmaxModel {
  Eigen::MatrixXd weights;  // k x (p + 1), column 0 is the bias

  int num_classes() const { return static_cast<int>(weights.rows()); }
  Eigen::VectorXd predict_logits(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

struct SoftmaxOptions {
  double initial_step = 1.0;  // Armijo backtracking starts here each iteration
  double tolerance = 1e-6;    // gradient-norm stopping rule
  double l2 = 1e-3;           // keeps separable problems bounded
  int max_iterations = 5000;
};

// log(sum_i exp(v_i - v_y)), evaluated without overflow.
double multiclass_loss(int y, const Eigen::Ref<const Eigen::VectorXd>& logits);
// d loss / d logits = softmax(v) - e_y.
Eigen::VectorXd multiclass_loss_gradient(int y, const Eigen::Ref<const Eigen::VectorXd>& logits);

SoftmaxModel fit_softmax(const Samples& s, int num_classes, const SoftmaxOptions& opts = {});
// Mean loss plus l2/2 * ||W||^2, and its gradient.
double softmax_objective(const Samples& s, const Eigen::MatrixXd& weights, double l2,
                         Eigen::MatrixXd* gradient = nullptr);

}  // namespace multienv
