#include "multienv/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "parallel.hpp"

namespace multienv {
namespace {

void check_level(double v, const char* name) {
  if (!(v > 0 && v < 1)) throw std::invalid_argument(std::string(name) + " must lie in (0, 1)");
}

nlohmann::json encode_all(const std::vector<double>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (double x : v) out.push_back(encode_real(x));
  return out;
}

nlohmann::json split_json(const EnvSplit& s) { return {{"d1", s.d1}, {"d2", s.d2}}; }

void require_regression(const MultiEnvDataset& data, const char* who) {
  if (data.outcome_kind().is_classification()) {
    throw std::invalid_argument(std::string(who) + ": regression outcome required");
  }
}

std::vector<double> abs_residuals(const RegressionFn& f, const EnvironmentSample& env) {
  std::vector<double> r(env.size());
  for (std::size_t j = 0; j < env.size(); ++j) {
    r[j] = std::abs(env.y(static_cast<Eigen::Index>(j)) - f(env.X.row(static_cast<Eigen::Index>(j)).transpose()));
  }
  return r;
}

}  // namespace

std::vector<double> coverage_thresholds(const NestedFamily& family, const EnvironmentSample& env) {
  std::vector<double> out(env.size());
  for (std::size_t j = 0; j < env.size(); ++j) {
    const auto row = static_cast<Eigen::Index>(j);
    out[j] = family.coverage_threshold(env.X.row(row).transpose(), env.y(row));
  }
  return out;
}

LeaveOneOut fit_leave_one_out(const MultiEnvDataset& data, const FamilyBuilder& builder,
                              int workers) {
  const std::size_t m = data.num_environments();
  std::vector<std::optional<NestedFamily>> fams(m);
  std::vector<std::vector<double>> thresholds(m);
  detail::parallel_for(m, workers, [&](std::size_t i) {
    NestedFamily f = builder(pool_except(data, i));
    thresholds[i] = coverage_thresholds(f, data.env(i));
    fams[i].emplace(std::move(f));
  });
  LeaveOneOut out;
  out.families.reserve(m);
  for (auto& f : fams) out.families.push_back(std::move(*f));
  out.thresholds = std::move(thresholds);
  return out;
}

std::vector<double> residual_quantiles(const std::vector<std::vector<double>>& thresholds,
                                       double alpha) {
  std::vector<double> s;
  s.reserve(thresholds.size());
  for (const auto& t : thresholds) s.push_back(quant_plus(t, alpha));
  return s;
}

// ---------------------------------------------------------------------------

JackknifeMinmaxMapping::JackknifeMinmaxMapping(std::vector<NestedFamily> families,
                                               std::vector<double> scores, double alpha,
                                               double delta)
    : families_(std::move(families)), scores_(std::move(scores)), alpha_(alpha), delta_(delta) {
  if (families_.size() < 2 || families_.size() != scores_.size()) {
    throw std::invalid_argument("jackknife-minmax: need m >= 2 families with one score each");
  }
  tau_ = quant_plus(scores_, delta_);
  symmetric_ = std::all_of(families_.begin(), families_.end(), [](const NestedFamily& f) {
    return f.kind() == NestedFamily::Kind::kSymmetric;
  });
}

PredictionSet JackknifeMinmaxMapping::evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return symmetric_ ? evaluate_closed_form(x) : evaluate_union(x);
}

PredictionSet JackknifeMinmaxMapping::evaluate_union(
    const Eigen::Ref<const Eigen::VectorXd>& x) const {
  std::vector<PredictionSet> sets;
  sets.reserve(families_.size());
  for (const auto& f : families_) sets.push_back(f.set_at(x, tau_));
  return union_sets(sets);
}

PredictionSet JackknifeMinmaxMapping::evaluate_closed_form(
    const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (!symmetric_) throw std::invalid_argument("closed form needs symmetric families");
  double lo = kPosInf;
  double hi = kNegInf;
  for (const auto& f : families_) {
    const double c = f.center(x);
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  return symmetric_interval(lo, hi, tau_);
}

nlohmann::json JackknifeMinmaxMapping::info() const {
  return {{"algorithm", "jackknife_minmax"}, {"alpha", alpha_},          {"delta", delta_},
          {"tau", encode_real(tau_)},       {"scores", encode_all(scores_)}};
}

std::shared_ptr<JackknifeMinmaxMapping> fit_jackknife_minmax(const LeaveOneOut& loo, double alpha,
                                                             double delta) {
  check_level(alpha, "alpha");
  check_level(delta, "delta");
  return std::make_shared<JackknifeMinmaxMapping>(loo.families,
                                                  residual_quantiles(loo.thresholds, alpha),
                                                  alpha, delta);
}

std::shared_ptr<JackknifeMinmaxMapping> fit_jackknife_minmax(const MultiEnvDataset& data,
                                                             const FamilyBuilder& builder,
                                                             double alpha, double delta,
                                                             int workers) {
  check_level(alpha, "alpha");
  check_level(delta, "delta");
  return fit_jackknife_minmax(fit_leave_one_out(data, builder, workers), alpha, delta);
}

// ---------------------------------------------------------------------------

SplitConformalMapping::SplitConformalMapping(NestedFamily family, std::vector<double> scores,
                                             EnvSplit split, double alpha, double delta,
                                             double gamma)
    : family_(std::move(family)),
      scores_(std::move(scores)),
      split_(std::move(split)),
      alpha_(alpha),
      delta_(delta),
      gamma_(gamma),
      tau_(quant_plus(scores_, delta)) {}

PredictionSet SplitConformalMapping::evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return family_.set_at(x, tau_);
}

nlohmann::json SplitConformalMapping::info() const {
  return {{"algorithm", "split_conformal"},
          {"alpha", alpha_},
          {"delta", delta_},
          {"gamma", gamma_},
          {"tau", encode_real(tau_)},
          {"scores", encode_all(scores_)},
          {"split", split_json(split_)}};
}

std::shared_ptr<SplitConformalMapping> fit_split_conformal(const MultiEnvDataset& data,
                                                           const FamilyBuilder& builder,
                                                           double alpha, double delta,
                                                           const EnvSplit& split) {
  check_level(alpha, "alpha");
  check_level(delta, "delta");
  if (split.d1.empty() || split.d2.empty()) {
    throw std::invalid_argument("split conformal: both sides of the split must be non-empty");
  }
  NestedFamily family = builder(pool(data, split.d1));
  std::vector<double> scores;
  scores.reserve(split.d2.size());
  for (std::size_t i : split.d2) {
    scores.push_back(quant_plus(coverage_thresholds(family, data.env(i)), alpha));
  }
  const double gamma =
      static_cast<double>(split.d1.size()) / static_cast<double>(data.num_environments());
  return std::make_shared<SplitConformalMapping>(std::move(family), std::move(scores), split,
                                                 alpha, delta, gamma);
}

std::shared_ptr<SplitConformalMapping> fit_split_conformal(const MultiEnvDataset& data,
                                                           const FamilyBuilder& builder,
                                                           double alpha, double delta,
                                                           double gamma, Rng& rng) {
  check_level(gamma, "gamma");
  const EnvSplit split = split_environments(data.num_environments(), gamma, rng);
  auto out = fit_split_conformal(data, builder, alpha, delta, split);
  return std::make_shared<SplitConformalMapping>(out->family(), out->scores(), split, alpha,
                                                 delta, gamma);
}

// ---------------------------------------------------------------------------

HierJackknifePlusMapping::HierJackknifePlusMapping(std::vector<RegressionFn> predictors,
                                                   std::vector<std::vector<double>> residuals,
                                                   double alpha)
    : predictors_(std::move(predictors)), residuals_(std::move(residuals)), alpha_(alpha) {
  if (predictors_.size() < 2 || predictors_.size() != residuals_.size()) {
    throw std::invalid_argument("hierarchical jackknife+: need m >= 2 environments");
  }
}

PredictionSet HierJackknifePlusMapping::evaluate(
    const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const std::size_t m = predictors_.size();
  const double outer = 1.0 / static_cast<double>(m + 1);
  std::vector<Atom> low;
  std::vector<Atom> high;
  for (std::size_t i = 0; i < m; ++i) {
    const double f = predictors_[i](x);
    const double w = outer / static_cast<double>(residuals_[i].size());
    for (double r : residuals_[i]) {
      low.push_back({f - r, w});
      high.push_back({f + r, w});
    }
  }
  low.push_back({kNegInf, outer});
  high.push_back({kPosInf, outer});
  const double lo = right_quantile(DiscreteDistribution(std::move(low)), alpha_);
  const double hi = left_quantile(DiscreteDistribution(std::move(high)), 1.0 - alpha_);
  if (lo > hi) return empty_interval_set();
  return Interval{lo, hi};
}

nlohmann::json HierJackknifePlusMapping::info() const {
  return {{"algorithm", "hier_jackknife_plus"},
          {"alpha", alpha_},
          {"environments", predictors_.size()}};
}

std::shared_ptr<HierJackknifePlusMapping> fit_hier_jackknife_plus(const MultiEnvDataset& data,
                                                                  const PredictorBuilder& builder,
                                                                  double alpha) {
  check_level(alpha, "alpha");
  require_regression(data, "hierarchical jackknife+");
  const std::size_t m = data.num_environments();
  std::vector<RegressionFn> predictors;
  std::vector<std::vector<double>> residuals;
  for (std::size_t i = 0; i < m; ++i) {
    RegressionFn f = builder(pool_except(data, i));
    residuals.push_back(abs_residuals(f, data.env(i)));
    predictors.push_back(std::move(f));
  }
  return std::make_shared<HierJackknifePlusMapping>(std::move(predictors), std::move(residuals),
                                                    alpha);
}

// ---------------------------------------------------------------------------

HcpMapping::HcpMapping(RegressionFn predictor, ExtendedReal threshold, EnvSplit split,
                       double alpha)
    : predictor_(std::move(predictor)),
      threshold_(threshold),
      split_(std::move(split)),
      alpha_(alpha) {}

PredictionSet HcpMapping::evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const double f = predictor_(x);
  return symmetric_interval(f, f, threshold_);
}

nlohmann::json HcpMapping::info() const {
  return {{"algorithm", "hcp"},
          {"alpha", alpha_},
          {"tau", encode_real(threshold_)},
          {"split", split_json(split_)}};
}

ExtendedReal hcp_threshold(const std::vector<std::vector<double>>& residuals, double alpha) {
  check_level(alpha, "alpha");
  if (residuals.empty()) throw std::invalid_argument("hcp_threshold: no calibration environments");
  const double outer = 1.0 / static_cast<double>(residuals.size() + 1);
  std::vector<Atom> atoms;
  for (const auto& env : residuals) {
    if (env.empty()) throw std::invalid_argument("hcp_threshold: empty environment");
    const double w = outer / static_cast<double>(env.size());
    for (double r : env) atoms.push_back({r, w});
  }
  atoms.push_back({kPosInf, outer});
  return left_quantile(DiscreteDistribution(std::move(atoms)), 1.0 - alpha);
}

std::shared_ptr<HcpMapping> fit_hcp(const MultiEnvDataset& data, const PredictorBuilder& builder,
                                    double alpha, const EnvSplit& split) {
  require_regression(data, "hcp");
  if (split.d1.empty() || split.d2.empty()) {
    throw std::invalid_argument("hcp: both sides of the split must be non-empty");
  }
  RegressionFn f = builder(pool(data, split.d1));
  std::vector<std::vector<double>> residuals;
  for (std::size_t i : split.d2) residuals.push_back(abs_residuals(f, data.env(i)));
  const ExtendedReal t = hcp_threshold(residuals, alpha);
  return std::make_shared<HcpMapping>(std::move(f), t, split, alpha);
}

std::shared_ptr<HcpMapping> fit_hcp(const MultiEnvDataset& data, const PredictorBuilder& builder,
                                    double alpha, double gamma, Rng& rng) {
  check_level(gamma, "gamma");
  return fit_hcp(data, builder, alpha, split_environments(data.num_environments(), gamma, rng));
}

// ---------------------------------------------------------------------------

double resize(double r, double s, bool* degenerate) {
  if (s != 0.0) return r / s;
  if (degenerate) *degenerate = true;
  if (r == 0.0) return 0.0;
  return r > 0 ? kPosInf : kNegInf;
}

double ResizedCalibration::test_factor(const EnvironmentSample& labeled) const {
  if (labeled.size() == 0) throw std::invalid_argument("resized: empty labeled test set");
  const double s = quant_plus(coverage_thresholds(family, labeled), alpha0);
  if (s < 0) throw std::invalid_argument("resized: negative resizing factor");
  return s;
}

ResizedCalibration calibrate_resized(const MultiEnvDataset& data, const FamilyBuilder& builder,
                                     double alpha, double delta, double alpha0,
                                     std::size_t labeled_size, const EnvSplit& split, Rng& rng) {
  check_level(alpha, "alpha");
  check_level(delta, "delta");
  check_level(alpha0, "alpha0");
  if (labeled_size < 1) throw std::invalid_argument("resized: labeled set must be non-empty");
  if (split.d1.empty() || split.d2.empty()) {
    throw std::invalid_argument("resized: both sides of the split must be non-empty");
  }
  for (std::size_t i : split.d2) {
    if (data.env(i).size() <= labeled_size) {
      throw std::invalid_argument("resized: calibration environment " + data.env(i).env_id +
                                  " has n <= |L|");
    }
  }
  ResizedCalibration cal{builder(pool(data, split.d1)), split, {}, {}, 0.0, labeled_size,
                         alpha, delta, alpha0, false};
  for (std::size_t i : split.d2) {
    const std::vector<double> t = coverage_thresholds(cal.family, data.env(i));
    const Holdout h = holdout_labels(t.size(), labeled_size, rng);
    std::vector<double> lab;
    for (std::size_t j : h.labeled) lab.push_back(t[j]);
    const double s = quant_plus(lab, alpha0);
    if (s < 0) throw std::invalid_argument("resized: negative resizing factor");
    std::vector<double> rest;
    for (std::size_t j : h.remainder) rest.push_back(resize(t[j], s, &cal.degenerate));
    cal.factors.push_back(s);
    cal.scores.push_back(quant_plus(rest, alpha));
  }
  cal.score_quantile = quant_plus(cal.scores, delta);
  return cal;
}

ResizedMapping::ResizedMapping(std::shared_ptr<const ResizedCalibration> calibration,
                               double test_factor)
    : cal_(std::move(calibration)), test_factor_(test_factor), degenerate_(cal_->degenerate) {
  const double q = cal_->score_quantile;
  if ((test_factor_ == 0.0 && std::isinf(q)) || (std::isinf(test_factor_) && q == 0.0)) {
    tau_ = kPosInf;
    degenerate_ = true;
  } else {
    tau_ = test_factor_ * q;
  }
}

PredictionSet ResizedMapping::evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return cal_->family.set_at(x, tau_);
}

nlohmann::json ResizedMapping::info() const {
  return {{"algorithm", "resized_split_conformal"},
          {"alpha", cal_->alpha},
          {"delta", cal_->delta},
          {"alpha0", cal_->alpha0},
          {"labeled", cal_->labeled_size},
          {"tau", encode_real(tau_)},
          {"score_quantile", encode_real(cal_->score_quantile)},
          {"test_factor", encode_real(test_factor_)},
          {"factors", encode_all(cal_->factors)},
          {"scores", encode_all(cal_->scores)},
          {"degenerate", degenerate_},
          {"split", split_json(cal_->split)}};
}

std::shared_ptr<ResizedMapping> resized_for_test(
    std::shared_ptr<const ResizedCalibration> calibration, const EnvironmentSample& labeled) {
  const double s = calibration->test_factor(labeled);
  return std::make_shared<ResizedMapping>(std::move(calibration), s);
}

std::shared_ptr<ResizedMapping> fit_resized_split_conformal(
    const MultiEnvDataset& data, const EnvironmentSample& test_labeled,
    const FamilyBuilder& builder, double alpha, double delta, double gamma, double alpha0,
    Rng& rng) {
  check_level(gamma, "gamma");
  const EnvSplit split = split_environments(data.num_environments(), gamma, rng);
  auto cal = std::make_shared<const ResizedCalibration>(calibrate_resized(
      data, builder, alpha, delta, alpha0, test_labeled.size(), split, rng));
  return resized_for_test(std::move(cal), test_labeled);
}

// ---------------------------------------------------------------------------

JackknifePlusQuantileMapping::JackknifePlusQuantileMapping(std::vector<NestedFamily> families,
                                                           std::vector<double> scores,
                                                           double alpha, double delta)
    : families_(std::move(families)), scores_(std::move(scores)), alpha_(alpha), delta_(delta) {
  if (families_.size() < 2 || families_.size() != scores_.size()) {
    throw std::invalid_argument("jackknife+ quantile: need m >= 2 families with one score each");
  }
  for (const auto& f : families_) {
    if (f.kind() != NestedFamily::Kind::kSymmetric) {
      throw std::invalid_argument("jackknife+ quantile: symmetric families required");
    }
  }
}

PredictionSet JackknifePlusQuantileMapping::evaluate(
    const Eigen::Ref<const Eigen::VectorXd>& x) const {
  std::vector<double> lower(families_.size());
  std::vector<double> upper(families_.size());
  for (std::size_t i = 0; i < families_.size(); ++i) {
    const double f = families_[i].center(x);
    lower[i] = f - scores_[i];
    upper[i] = f + scores_[i];
  }
  const double lo = quant_minus(lower, delta_);
  const double hi = quant_plus(upper, delta_);
  if (lo > hi) return empty_interval_set();
  return Interval{lo, hi};
}

nlohmann::json JackknifePlusQuantileMapping::info() const {
  return {{"algorithm", "jackknife_plus_quantile"},
          {"alpha", alpha_},
          {"delta", delta_},
          {"scores", encode_all(scores_)}};
}

std::shared_ptr<JackknifePlusQuantileMapping> fit_jackknife_plus_quantile(const LeaveOneOut& loo,
                                                                          double alpha,
                                                                          double delta) {
  check_level(alpha, "alpha");
  check_level(delta, "delta");
  return std::make_shared<JackknifePlusQuantileMapping>(
      loo.families, residual_quantiles(loo.thresholds, alpha), alpha, delta);
}

std::shared_ptr<JackknifePlusQuantileMapping> fit_jackknife_plus_quantile(
    const MultiEnvDataset& data, const PredictorBuilder& builder, double alpha, double delta,
    int workers) {
  require_regression(data, "jackknife+ quantile");
  return fit_jackknife_plus_quantile(
      fit_leave_one_out(data, symmetric_builder(builder), workers), alpha, delta);
}

}  // namespace multienv
