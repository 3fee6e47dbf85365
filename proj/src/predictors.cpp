#include "multienv/predictors.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "multienv/box_lp.hpp"

namespace multienv {
namespace {

Eigen::MatrixXd design(const Samples& s) {
  Eigen::MatrixXd Z(s.X.rows(), s.X.cols() + 1);
  Z.col(0).setOnes();
  Z.rightCols(s.X.cols()) = s.X;
  return Z;
}

// Penalized Gram matrix with the intercept left unpenalized.
Eigen::MatrixXd penalized_gram(const Eigen::MatrixXd& gram, double lambda) {
  Eigen::MatrixXd A = gram;
  A.diagonal().tail(A.rows() - 1).array() += lambda;
  return A;
}

bool nearly_singular(const Eigen::LDLT<Eigen::MatrixXd>& ldlt) {
  if (ldlt.info() != Eigen::Success) return true;
  const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
  return d.minCoeff() <= 1e-12 * std::max(1.0, d.maxCoeff());
}

}  // namespace

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int j = -4; j <= 4; ++j) grid.push_back(std::pow(10.0, j));
  return grid;
}

double RidgeModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != coefficients.size()) {
    throw std::invalid_argument("ridge predict: dimension mismatch");
  }
  return intercept + coefficients.dot(x);
}

double predict_ridge(const RidgeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return model.predict(x);
}

double ridge_loocv_error(const Samples& s, double lambda) {
  const Eigen::MatrixXd Z = design(s);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(penalized_gram(Z.transpose() * Z, lambda));
  if (nearly_singular(ldlt)) return std::numeric_limits<double>::infinity();
  const Eigen::VectorXd theta = ldlt.solve(Z.transpose() * s.y);
  const Eigen::MatrixXd solved = ldlt.solve(Z.transpose());  // (p+1) x n
  double total = 0.0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double h = Z.row(i).dot(solved.col(i));
    const double denom = 1.0 - h;
    if (std::abs(denom) < 1e-12) return std::numeric_limits<double>::infinity();
    const double e = (s.y(i) - Z.row(i).dot(theta)) / denom;
    total += e * e;
  }
  return total / static_cast<double>(Z.rows());
}

RidgeModel fit_ridge_fixed(const Samples& s, double lambda) {
  if (s.size() < 1) throw std::invalid_argument("fit_ridge: no rows");
  const Eigen::MatrixXd Z = design(s);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(penalized_gram(Z.transpose() * Z, lambda));
  if (nearly_singular(ldlt)) throw std::invalid_argument("fit_ridge: singular normal equations");
  const Eigen::VectorXd theta = ldlt.solve(Z.transpose() * s.y);
  RidgeModel model;
  model.intercept = theta(0);
  model.coefficients = theta.tail(theta.size() - 1);
  model.lambda = lambda;
  return model;
}

RidgeModel fit_ridge(const Samples& s, std::span<const double> lambda_grid) {
  if (s.size() < 2) throw std::invalid_argument("fit_ridge: need at least 2 rows");
  if (lambda_grid.empty()) throw std::invalid_argument("fit_ridge: empty lambda grid");
  for (double l : lambda_grid) {
    if (!(l >= 0) || !std::isfinite(l)) throw std::invalid_argument("fit_ridge: bad lambda");
  }
  std::vector<double> errors;
  errors.reserve(lambda_grid.size());
  bool singular_zero = false;
  for (double l : lambda_grid) {
    const double err = ridge_loocv_error(s, l);
    if (l == 0.0 && !std::isfinite(err)) singular_zero = true;
    errors.push_back(err);
  }
  std::size_t best = lambda_grid.size();
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (!std::isfinite(errors[i])) continue;
    if (best == lambda_grid.size() || errors[i] < errors[best] ||
        (errors[i] == errors[best] && lambda_grid[i] < lambda_grid[best])) {
      best = i;
    }
  }
  if (best == lambda_grid.size()) {
    // Every candidate was singular: fall back to the smallest positive lambda.
    double smallest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
      if (lambda_grid[i] > 0 && lambda_grid[i] < smallest) {
        smallest = lambda_grid[i];
        best = i;
      }
    }
    if (best == lambda_grid.size()) {
      throw std::invalid_argument("fit_ridge: singular at lambda = 0 and no positive lambda");
    }
  }
  RidgeModel model = fit_ridge_fixed(s, lambda_grid[best]);
  model.singular_fallback = singular_zero;
  model.loocv_errors = std::move(errors);
  return model;
}

// ---------------------------------------------------------------------------

double pinball_loss(double residual, double level) {
  return residual >= 0 ? level * residual : (level - 1.0) * residual;
}

double PinballModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() + 1 != theta.size()) {
    throw std::invalid_argument("pinball predict: dimension mismatch");
  }
  return theta(0) + theta.tail(x.size()).dot(x);
}

double mean_pinball_objective(const Samples& s, const Eigen::VectorXd& theta, double level) {
  const Eigen::VectorXd fit = design(s) * theta;
  double total = 0.0;
  for (Eigen::Index i = 0; i < fit.size(); ++i) total += pinball_loss(s.y(i) - fit(i), level);
  return total / static_cast<double>(fit.size());
}

PinballModel fit_pinball(const Samples& s, double level, double tolerance) {
  if (!(level > 0 && level < 1)) throw std::invalid_argument("fit_pinball: level in (0,1)");
  if (s.size() < static_cast<std::size_t>(s.X.cols()) + 2) {
    throw std::invalid_argument("fit_pinball: need at least p + 2 rows");
  }
  // Dual: max y'a  s.t.  Z'a = 0,  a in [level - 1, level]^n. The simplex
  // multipliers of the equality rows are the primal coefficients.
  const Eigen::MatrixXd Z = design(s);
  const Eigen::Index n = Z.rows();
  BoxLpOptions opts;
  opts.tolerance = tolerance;
  BoxLpResult lp;
  try {
    lp = solve_box_lp(Z.transpose(), Eigen::VectorXd::Zero(Z.cols()), s.y,
                      Eigen::VectorXd::Constant(n, level - 1.0),
                      Eigen::VectorXd::Constant(n, level), opts);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError("fit_pinball did not converge", e.last_objective() / n);
  }
  PinballModel model;
  model.theta = lp.duals;
  model.level = level;
  model.objective = mean_pinball_objective(s, model.theta, level);
  return model;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd SoftmaxModel::predict_logits(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() + 1 != weights.cols()) {
    throw std::invalid_argument("softmax predict: dimension mismatch");
  }
  return weights.col(0) + weights.rightCols(x.size()) * x;
}

double multiclass_loss(int y, const Eigen::Ref<const Eigen::VectorXd>& logits) {
  if (y < 0 || y >= logits.size()) throw std::invalid_argument("multiclass_loss: bad label");
  Eigen::Index top = 0;
  const double vmax = logits.maxCoeff(&top);
  double rest = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (i != top) rest += std::exp(logits(i) - vmax);
  }
  // log-sum-exp(v) - v_y with the dominant term factored out.
  return (vmax - logits(y)) + std::log1p(rest);
}

Eigen::VectorXd multiclass_loss_gradient(int y, const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double vmax = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - vmax).exp();
  p /= p.sum();
  p(y) -= 1.0;
  return p;
}

double softmax_objective(const Samples& s, const Eigen::MatrixXd& weights, double l2,
                         Eigen::MatrixXd* gradient) {
  const Eigen::MatrixXd Z = design(s);
  const Eigen::MatrixXd logits = Z * weights.transpose();  // n x k
  double total = 0.0;
  if (gradient) gradient->setZero(weights.rows(), weights.cols());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const int label = static_cast<int>(s.y(i));
    total += multiclass_loss(label, logits.row(i).transpose());
    if (gradient) {
      *gradient += multiclass_loss_gradient(label, logits.row(i).transpose()) * Z.row(i);
    }
  }
  const double n = static_cast<double>(Z.rows());
  if (gradient) {
    *gradient /= n;
    *gradient += l2 * weights;
  }
  return total / n + 0.5 * l2 * weights.squaredNorm();
}

SoftmaxModel fit_softmax(const Samples& s, int num_classes, const SoftmaxOptions& opts) {
  if (num_classes < 2) throw std::invalid_argument("fit_softmax: need k >= 2");
  if (s.size() < 1) throw std::invalid_argument("fit_softmax: no rows");
  for (double v : s.y) {
    if (v != std::floor(v) || v < 0 || v >= num_classes) {
      throw std::invalid_argument("fit_softmax: label outside [k]");
    }
  }
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(num_classes, s.X.cols() + 1);
  Eigen::MatrixXd grad;
  double f = softmax_objective(s, W, opts.l2, &grad);
  for (int it = 0; it < opts.max_iterations; ++it) {
    const double gnorm2 = grad.squaredNorm();
    if (std::sqrt(gnorm2) < opts.tolerance) return SoftmaxModel{W};
    double step = opts.initial_step;
    Eigen::MatrixXd candidate;
    Eigen::MatrixXd candidate_grad;
    double fc = 0.0;
    while (true) {
      candidate = W - step * grad;
      fc = softmax_objective(s, candidate, opts.l2, &candidate_grad);
      if (std::isfinite(fc) && fc <= f - 0.5 * step * gnorm2) break;
      step *= 0.5;
      if (step < 1e-16) throw ConvergenceError("fit_softmax: line search failed", f);
    }
    if (!std::isfinite(fc)) throw ConvergenceError("fit_softmax diverged", f);
    W = std::move(candidate);
    grad = std::move(candidate_grad);
    f = fc;
  }
  throw ConvergenceError("fit_softmax: iteration cap reached", f);
}

}  // namespace multienv
