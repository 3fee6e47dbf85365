#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "multienv/data.hpp"
#include "multienv/quantiles.hpp"

namespace multienv {

// ---------------------------------------------------------------------------
// Prediction sets

struct Interval {
  ExtendedReal lo = 0.0;
  ExtendedReal hi = 0.0;
  bool operator==(const Interval&) const = default;
};

// Sorted, pairwise disjoint components. No components means the empty set.
struct IntervalUnion {
  std::vector<Interval> parts;
  bool operator==(const IntervalUnion&) const = default;
};

// Sorted, duplicate-free subset of {0, ..., k-1}.
struct LabelSet {
  std::vector<int> labels;
  bool operator==(const LabelSet&) const = default;
};

using PredictionSet = std::variant<Interval, IntervalUnion, LabelSet>;

PredictionSet empty_interval_set();
// [lo_center - tau, hi_center + tau] over the doubles: the endpoints are the
// extreme y with |c - y| <= tau in floating point, so membership agrees with
// the symmetric coverage threshold exactly. Empty when tau < 0.
PredictionSet symmetric_interval(double lo_center, double hi_center, ExtendedReal tau);
bool contains(const PredictionSet& set, double y);
bool is_empty(const PredictionSet& set);

// Normalized union. Interval and IntervalUnion mix freely; mixing them with
// LabelSet throws std::invalid_argument.
PredictionSet union_sets(std::span<const PredictionSet> sets);

struct ClipRange {
  double lo;
  double hi;
};

// Lebesgue length (optionally after intersecting with `clip`) or label count.
double measure(const PredictionSet& set, std::optional<ClipRange> clip = std::nullopt);

// Smallest closed interval containing the set (intervals only).
Interval hull(const PredictionSet& set);

// Finite values as JSON numbers, infinities as "inf" / "-inf".
nlohmann::json encode_real(ExtendedReal v);
ExtendedReal decode_real(const nlohmann::json& j);

nlohmann::json to_json(const PredictionSet& set);
PredictionSet prediction_set_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Nested families {C_tau}

using RegressionFn = std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)>;
using LogitFn = std::function<Eigen::VectorXd(const Eigen::Ref<const Eigen::VectorXd>&)>;

// C_tau(x) = [f(x) - tau, f(x) + tau].
struct SymmetricFamily {
  RegressionFn f;
};

// C_tau(x) = [l(x) - tau, u(x) + tau].
struct BandFamily {
  RegressionFn lower;
  RegressionFn upper;
};

// C_tau(x) = { y in [k] : loss(y, f(x)) <= tau } with the multiclass log loss.
struct LossSublevelFamily {
  LogitFn logits;
  int num_classes = 0;
};

class NestedFamily {
 public:
  enum class Kind { kSymmetric, kBand, kLossSublevel };

  static NestedFamily symmetric(RegressionFn f);
  static NestedFamily band(RegressionFn lower, RegressionFn upper);
  static NestedFamily loss_sublevel(LogitFn logits, int num_classes);

  Kind kind() const;

  // inf { tau : y in C_tau(x) }.
  double coverage_threshold(const Eigen::Ref<const Eigen::VectorXd>& x, double y) const;

  // The member of the family at level tau. y is in set_at(x, tau) exactly when
  // coverage_threshold(x, y) <= tau.
  PredictionSet set_at(const Eigen::Ref<const Eigen::VectorXd>& x, ExtendedReal tau) const;

  // Point prediction of a symmetric family; throws for other kinds.
  double center(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  using Impl = std::variant<SymmetricFamily, BandFamily, LossSublevelFamily>;
  explicit NestedFamily(Impl impl) : impl_(std::move(impl)) {}
  Impl impl_;
};

// A fitting algorithm: rows in, fitted family out.
using FamilyBuilder = std::function<NestedFamily(const Samples&)>;
// A fitting algorithm returning a point predictor.
using PredictorBuilder = std::function<RegressionFn(const Samples&)>;

PredictorBuilder ridge_predictor_builder(std::vector<double> lambda_grid);
FamilyBuilder symmetric_builder(PredictorBuilder predictor);
FamilyBuilder ridge_symmetric_builder(std::vector<double> lambda_grid);
// Lower/upper linear quantile regressions at the two pinball levels.
FamilyBuilder pinball_band_builder(double lower_level, double upper_level);
FamilyBuilder softmax_sublevel_builder(int num_classes, double l2 = 1e-3);

}  // namespace multienv
