#include "multienv/weighted.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "multienv/box_lp.hpp"

namespace multienv {
namespace {

constexpr double kBoundSlack = 1e-9;
constexpr int kMaxSweeps = 200000;

void check_inputs(const Eigen::VectorXd& c, const Eigen::MatrixXd& features, double delta,
                  double ridge_weight) {
  if (c.size() < 1) throw std::invalid_argument("weighted: need at least one score");
  if (features.rows() != c.size() || features.cols() < 1) {
    throw std::invalid_argument("weighted: features must have one row per score");
  }
  if (!(delta > 0 && delta < 1)) throw std::invalid_argument("weighted: delta in (0, 1)");
  if (!(ridge_weight >= 0) || !std::isfinite(ridge_weight)) {
    throw std::invalid_argument("weighted: ridge weight must be finite and nonnegative");
  }
  if (!features.allFinite()) throw std::invalid_argument("weighted: non-finite features");
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (std::isnan(c(i))) throw std::invalid_argument("weighted: NaN score");
  }
}

double primal_value(const Eigen::VectorXd& c, const Eigen::MatrixXd& features,
                    const Eigen::VectorXd& theta, double delta, double ridge_weight) {
  const Eigen::VectorXd fit = features * theta;
  double total = 0.0;
  for (Eigen::Index i = 0; i < c.size(); ++i) total += env_pinball_loss(c(i) - fit(i), delta);
  return total + static_cast<double>(c.size()) * ridge_weight * theta.squaredNorm();
}

DualSolution solve_lp(const Eigen::VectorXd& c, const Eigen::MatrixXd& features, double delta,
                      double tolerance) {
  const Eigen::Index n = c.size();
  BoxLpOptions opts;
  opts.tolerance = std::max(tolerance, 1e-12);
  const BoxLpResult lp = solve_box_lp(
      features.transpose(), Eigen::VectorXd::Zero(features.cols()), c,
      Eigen::VectorXd::Constant(n, -delta), Eigen::VectorXd::Constant(n, 1.0 - delta), opts);
  DualSolution out;
  out.eta = lp.x;
  out.theta = lp.duals;
  out.objective = c.dot(out.eta);
  out.gap = primal_value(c, features, out.theta, delta, 0.0) - out.objective;
  return out;
}

DualSolution solve_qp(const Eigen::VectorXd& c, const Eigen::MatrixXd& features, double delta,
                      double ridge_weight, double tolerance) {
  const Eigen::Index n = c.size();
  const double a = 1.0 / (2.0 * static_cast<double>(n) * ridge_weight);
  const double lb = -delta;
  const double ub = 1.0 - delta;
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(features.cols());
  const Eigen::VectorXd norms = features.rowwise().squaredNorm();
  double primal = 0.0;
  double dual = 0.0;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double g = c(i) - a * features.row(i).dot(v);
      const double h = a * norms(i);
      double next = eta(i);
      if (h > 0) {
        next = std::clamp(eta(i) + g / h, lb, ub);
      } else if (g > 0) {
        next = ub;
      } else if (g < 0) {
        next = lb;
      }
      if (next != eta(i)) {
        v += features.row(i).transpose() * (next - eta(i));
        eta(i) = next;
      }
    }
    v = features.transpose() * eta;  // curb drift
    const Eigen::VectorXd theta = a * v;
    primal = primal_value(c, features, theta, delta, ridge_weight);
    dual = c.dot(eta) - 0.5 * a * v.squaredNorm();
    if (primal - dual <= tolerance * std::max(1.0, std::abs(primal))) {
      DualSolution out;
      out.eta = eta;
      out.theta = theta;
      out.objective = dual;
      out.gap = primal - dual;
      return out;
    }
  }
  throw ConvergenceError("weighted dual: coordinate ascent hit the sweep cap",
                         dual / static_cast<double>(n));
}

// sup { s : in_set(s) } for a predicate that holds for small s and fails for
// large s. `hint` is the score range used to seed the bracket.
template <class Pred>
ExtendedReal search_sup(const Eigen::VectorXd& hint, Pred in_set, const WeightedOptions& opts) {
  const double smin = hint.minCoeff();
  const double smax = hint.maxCoeff();
  const double span = std::max(smax - smin, 1.0);
  double lo = smin - span;
  double hi = smax + span;
  double step = span;
  int expansions = 0;
  while (in_set(hi)) {
    if (++expansions > opts.max_expansions) {
      throw std::runtime_error("weighted threshold: upper bracket not found");
    }
    lo = hi;
    step *= 2.0;
    hi += step;
  }
  step = span;
  expansions = 0;
  while (!in_set(lo)) {
    if (++expansions > opts.max_expansions) {
      throw std::runtime_error("weighted threshold: lower bracket not found");
    }
    hi = lo;
    step *= 2.0;
    lo -= step;
  }
  while (hi - lo > opts.search_tolerance) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    (in_set(mid) ? lo : hi) = mid;
  }
  // Breakpoints sit on calibration scores whenever the features allow it.
  // Near a tie the LP may pick either vertex, so widen the window a little.
  const double slack = 1e-7 * std::max({1.0, std::abs(smin), std::abs(smax)});
  double snapped = hi;
  bool found = false;
  for (Eigen::Index i = 0; i < hint.size(); ++i) {
    if (hint(i) >= lo - slack && hint(i) <= hi + slack && (!found || hint(i) > snapped)) {
      snapped = hint(i);
      found = true;
    }
  }
  return snapped;
}

// Largest attainable eta_{m+1} under Phi' eta = 0 and the box.
double max_test_eta(const Eigen::MatrixXd& features, double delta, double tolerance) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(features.rows());
  c(c.size() - 1) = 1.0;
  return solve_lp(c, features, delta, tolerance).eta(c.size() - 1);
}

ExtendedReal threshold_at_level(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                                double delta, double level, bool strict,
                                const WeightedOptions& opts) {
  if (scores.size() + 1 != features.rows()) {
    throw std::invalid_argument("weighted threshold: features need m + 1 rows");
  }
  if (scores.size() < 1) throw std::invalid_argument("weighted threshold: no scores");
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores(i))) {
      throw std::invalid_argument("weighted threshold: calibration scores must be finite");
    }
  }
  const Eigen::Index last = features.rows() - 1;
  auto eta_last = [&](double s) {
    return dual_eta(scores, features, delta, opts.ridge_weight, s, opts.solver_tolerance)
        .eta(last);
  };
  auto in_set = [&](double s) {
    const double e = eta_last(s);
    return strict ? e < level - kBoundSlack : e <= level + kBoundSlack;
  };
  const double top = 1.0 - delta;
  if (!strict && level >= top - kBoundSlack) return kPosInf;
  if (opts.ridge_weight == 0.0) {
    const double best = max_test_eta(features, delta, opts.solver_tolerance);
    if (strict ? best < level - kBoundSlack : best <= level + kBoundSlack) return kPosInf;
  }
  return search_sup(scores, in_set, opts);
}

}  // namespace

EnvFeatureMap constant_features() {
  return [](std::size_t) { return Eigen::VectorXd::Ones(1); };
}

EnvFeatureMap indicator_features(std::vector<bool> flags) {
  return [flags = std::move(flags)](std::size_t i) {
    Eigen::VectorXd phi(2);
    phi << 1.0, flags.at(i) ? 1.0 : 0.0;
    return phi;
  };
}

std::size_t env_score_rank(std::size_t n, double alpha) {
  if (n == 0) throw std::invalid_argument("env_score: empty environment");
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("env_score: alpha in (0, 1)");
  const double t = (1.0 - alpha) * static_cast<double>(n);
  const double r = std::round(t);
  std::size_t k;
  if (std::abs(t - r) <= 1e-10 * std::max(1.0, t)) {
    k = static_cast<std::size_t>(r) + 1;
  } else {
    k = static_cast<std::size_t>(std::floor(t)) + 1;
  }
  return std::min(k, n);
}

double env_score(std::vector<double> thresholds, double alpha) {
  const std::size_t k = env_score_rank(thresholds.size(), alpha);
  std::nth_element(thresholds.begin(), thresholds.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   thresholds.end());
  return thresholds[k - 1];
}

double env_score(const EnvironmentSample& env, const NestedFamily& family, double alpha) {
  return env_score(coverage_thresholds(family, env), alpha);
}

double env_pinball_loss(double t, double delta) {
  return t >= 0 ? (1.0 - delta) * t : -delta * t;
}

DualSolution solve_env_dual(const Eigen::VectorXd& c, const Eigen::MatrixXd& features,
                            double delta, double ridge_weight, double tolerance) {
  check_inputs(c, features, delta, ridge_weight);
  if (ridge_weight == 0.0) return solve_lp(c, features, delta, tolerance);
  return solve_qp(c, features, delta, ridge_weight, tolerance);
}

PinballEnvFit fit_pinball_env(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                              double delta, double ridge_weight, double tolerance) {
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores(i))) throw std::invalid_argument("fit_pinball_env: non-finite score");
  }
  const DualSolution d = solve_env_dual(scores, features, delta, ridge_weight, tolerance);
  PinballEnvFit fit;
  fit.theta = d.theta;
  fit.objective = primal_value(scores, features, d.theta, delta, ridge_weight) /
                  static_cast<double>(scores.size());
  return fit;
}

DualSolution dual_eta(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                      double delta, double ridge_weight, double s, double tolerance) {
  if (features.rows() != scores.size() + 1) {
    throw std::invalid_argument("dual_eta: features need m + 1 rows");
  }
  Eigen::VectorXd c(scores.size() + 1);
  c << scores, s;
  return solve_env_dual(c, features, delta, ridge_weight, tolerance);
}

ExtendedReal weighted_threshold(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                                double delta, const WeightedOptions& opts) {
  return threshold_at_level(scores, features, delta, 1.0 - delta, true, opts);
}

ExtendedReal randomized_threshold_at(const Eigen::VectorXd& scores,
                                     const Eigen::MatrixXd& features, double delta, double u,
                                     const WeightedOptions& opts) {
  if (!(u >= 0 && u <= 1)) throw std::invalid_argument("randomized_threshold: u in [0, 1]");
  return threshold_at_level(scores, features, delta, u - delta, false, opts);
}

ExtendedReal randomized_threshold(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                                  double delta, Rng& rng, const WeightedOptions& opts) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return randomized_threshold_at(scores, features, delta, unif(rng), opts);
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd WeightedCalibration::with_test(const Eigen::VectorXd& test_features) const {
  if (test_features.size() != features.cols()) {
    throw std::invalid_argument("weighted: test feature dimension mismatch");
  }
  Eigen::MatrixXd phi(features.rows() + 1, features.cols());
  phi.topRows(features.rows()) = features;
  phi.row(features.rows()) = test_features.transpose();
  return phi;
}

ExtendedReal WeightedCalibration::threshold(const Eigen::VectorXd& test_features) const {
  const Eigen::Map<const Eigen::VectorXd> s(scores.data(), static_cast<Eigen::Index>(scores.size()));
  return weighted_threshold(s, with_test(test_features), delta, opts);
}

ExtendedReal WeightedCalibration::randomized(const Eigen::VectorXd& test_features,
                                             double u) const {
  const Eigen::Map<const Eigen::VectorXd> s(scores.data(), static_cast<Eigen::Index>(scores.size()));
  return randomized_threshold_at(s, with_test(test_features), delta, u, opts);
}

WeightedCalibration calibrate_weighted(const MultiEnvDataset& data, const FamilyBuilder& builder,
                                       double alpha, double delta, const EnvSplit& split,
                                       const EnvFeatureMap& features,
                                       const WeightedOptions& opts) {
  if (split.d1.empty() || split.d2.empty()) {
    throw std::invalid_argument("weighted: both sides of the split must be non-empty");
  }
  WeightedCalibration cal{builder(pool(data, split.d1)), split, {}, {}, alpha, delta, opts};
  for (std::size_t r = 0; r < split.d2.size(); ++r) {
    const std::size_t i = split.d2[r];
    cal.scores.push_back(env_score(data.env(i), cal.family, alpha));
    const Eigen::VectorXd phi = features(i);
    if (r == 0) cal.features.resize(static_cast<Eigen::Index>(split.d2.size()), phi.size());
    if (phi.size() != cal.features.cols()) {
      throw std::invalid_argument("weighted: feature map changed dimension");
    }
    cal.features.row(static_cast<Eigen::Index>(r)) = phi.transpose();
  }
  return cal;
}

WeightedMapping::WeightedMapping(std::shared_ptr<const WeightedCalibration> calibration,
                                 Eigen::VectorXd test_features, std::optional<double> u)
    : cal_(std::move(calibration)), test_features_(std::move(test_features)), u_(u) {
  tau_ = u_ ? cal_->randomized(test_features_, *u_) : cal_->threshold(test_features_);
}

PredictionSet WeightedMapping::evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return cal_->family.set_at(x, tau_);
}

nlohmann::json WeightedMapping::info() const {
  nlohmann::json scores = nlohmann::json::array();
  for (double s : cal_->scores) scores.push_back(encode_real(s));
  nlohmann::json out{{"algorithm", "weighted"},
                     {"alpha", cal_->alpha},
                     {"delta", cal_->delta},
                     {"ridge_weight", cal_->opts.ridge_weight},
                     {"tau", encode_real(tau_)},
                     {"scores", scores},
                     {"test_features", std::vector<double>(test_features_.data(),
                                                           test_features_.data() +
                                                               test_features_.size())}};
  if (u_) out["u"] = *u_;
  return out;
}

}  // namespace multienv
