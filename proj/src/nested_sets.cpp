#include "multienv/nested_sets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "multienv/predictors.hpp"

namespace multienv {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

namespace {

// Rounded endpoints c - tau, c + tau can be an ulp off the exact float range
// {y : fl(c - y) <= tau}. Step them so that membership agrees with the
// closed-form threshold bit for bit. `inside` must be monotone across the edge.
template <class Inside>
double snap_upper(double hi, Inside inside) {
  if (std::isinf(hi)) return hi;
  while (!inside(hi) && hi > kNegInf) hi = std::nextafter(hi, kNegInf);
  for (double n = std::nextafter(hi, kPosInf); inside(n); n = std::nextafter(hi, kPosInf)) hi = n;
  return hi;
}

template <class Inside>
double snap_lower(double lo, Inside inside) {
  if (std::isinf(lo)) return lo;
  while (!inside(lo) && lo < kPosInf) lo = std::nextafter(lo, kPosInf);
  for (double n = std::nextafter(lo, kNegInf); inside(n); n = std::nextafter(lo, kNegInf)) lo = n;
  return lo;
}

}  // namespace

PredictionSet empty_interval_set() { return IntervalUnion{}; }

PredictionSet symmetric_interval(double lo_center, double hi_center, ExtendedReal tau) {
  if (tau < 0) return empty_interval_set();
  if (std::isinf(tau)) return Interval{kNegInf, kPosInf};
  return Interval{snap_lower(lo_center - tau, [&](double y) { return lo_center - y <= tau; }),
                  snap_upper(hi_center + tau, [&](double y) { return y - hi_center <= tau; })};
}

bool contains(const PredictionSet& set, double y) {
  return std::visit(
      Overloaded{
          [y](const Interval& iv) { return iv.lo <= y && y <= iv.hi; },
          [y](const IntervalUnion& u) {
            return std::any_of(u.parts.begin(), u.parts.end(),
                               [y](const Interval& iv) { return iv.lo <= y && y <= iv.hi; });
          },
          [y](const LabelSet& s) {
            const double r = std::round(y);
            if (r != y) return false;
            return std::binary_search(s.labels.begin(), s.labels.end(), static_cast<int>(r));
          },
      },
      set);
}

bool is_empty(const PredictionSet& set) {
  return std::visit(Overloaded{
                        [](const Interval& iv) { return iv.lo > iv.hi; },
                        [](const IntervalUnion& u) { return u.parts.empty(); },
                        [](const LabelSet& s) { return s.labels.empty(); },
                    },
                    set);
}

PredictionSet union_sets(std::span<const PredictionSet> sets) {
  if (sets.empty()) return empty_interval_set();
  const bool labels = std::holds_alternative<LabelSet>(sets.front());
  for (const auto& s : sets) {
    if (std::holds_alternative<LabelSet>(s) != labels) {
      throw std::invalid_argument("union_sets: cannot mix label sets and intervals");
    }
  }
  if (labels) {
    LabelSet out;
    for (const auto& s : sets) {
      const auto& l = std::get<LabelSet>(s).labels;
      out.labels.insert(out.labels.end(), l.begin(), l.end());
    }
    std::sort(out.labels.begin(), out.labels.end());
    out.labels.erase(std::unique(out.labels.begin(), out.labels.end()), out.labels.end());
    return out;
  }

  std::vector<Interval> parts;
  for (const auto& s : sets) {
    if (const auto* iv = std::get_if<Interval>(&s)) {
      if (iv->lo <= iv->hi) parts.push_back(*iv);
    } else {
      const auto& u = std::get<IntervalUnion>(s).parts;
      parts.insert(parts.end(), u.begin(), u.end());
    }
  }
  if (parts.empty()) return empty_interval_set();
  std::sort(parts.begin(), parts.end(), [](const Interval& a, const Interval& b) {
    return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
  });
  std::vector<Interval> merged{parts.front()};
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].lo <= merged.back().hi) {
      merged.back().hi = std::max(merged.back().hi, parts[i].hi);
    } else {
      merged.push_back(parts[i]);
    }
  }
  if (merged.size() == 1) return merged.front();
  return IntervalUnion{std::move(merged)};
}

namespace {

double clipped_length(const Interval& iv, std::optional<ClipRange> clip) {
  double lo = iv.lo;
  double hi = iv.hi;
  if (clip) {
    lo = std::max(lo, clip->lo);
    hi = std::min(hi, clip->hi);
  }
  if (!(hi > lo)) return 0.0;
  return hi - lo;
}

}  // namespace

nlohmann::json encode_real(ExtendedReal v) {
  if (v == kPosInf) return "inf";
  if (v == kNegInf) return "-inf";
  return v;
}

ExtendedReal decode_real(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kPosInf;
    if (s == "-inf") return kNegInf;
    throw std::invalid_argument("bad extended real '" + s + "'");
  }
  return j.get<double>();
}

double measure(const PredictionSet& set, std::optional<ClipRange> clip) {
  return std::visit(
      Overloaded{
          [&](const Interval& iv) { return clipped_length(iv, clip); },
          [&](const IntervalUnion& u) {
            double total = 0.0;
            for (const auto& iv : u.parts) total += clipped_length(iv, clip);
            return total;
          },
          [](const LabelSet& s) { return static_cast<double>(s.labels.size()); },
      },
      set);
}

Interval hull(const PredictionSet& set) {
  if (const auto* iv = std::get_if<Interval>(&set)) return *iv;
  if (const auto* u = std::get_if<IntervalUnion>(&set)) {
    if (u->parts.empty()) throw std::invalid_argument("hull of the empty set");
    return {u->parts.front().lo, u->parts.back().hi};
  }
  throw std::invalid_argument("hull: label sets have no interval hull");
}

nlohmann::json to_json(const PredictionSet& set) {
  return std::visit(
      Overloaded{
          [](const Interval& iv) {
            return nlohmann::json{
                {"kind", "interval"}, {"lo", encode_real(iv.lo)}, {"hi", encode_real(iv.hi)}};
          },
          [](const IntervalUnion& u) {
            nlohmann::json parts = nlohmann::json::array();
            for (const auto& iv : u.parts) {
              parts.push_back({{"lo", encode_real(iv.lo)}, {"hi", encode_real(iv.hi)}});
            }
            return nlohmann::json{{"kind", "union"}, {"parts", parts}};
          },
          [](const LabelSet& s) {
            return nlohmann::json{{"kind", "labels"}, {"labels", s.labels}};
          },
      },
      set);
}

PredictionSet prediction_set_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "interval") return Interval{decode_real(j.at("lo")), decode_real(j.at("hi"))};
  if (kind == "union") {
    IntervalUnion u;
    for (const auto& p : j.at("parts")) {
      u.parts.push_back({decode_real(p.at("lo")), decode_real(p.at("hi"))});
    }
    return u;
  }
  if (kind == "labels") return LabelSet{j.at("labels").get<std::vector<int>>()};
  throw std::invalid_argument("unknown prediction set kind '" + kind + "'");
}

// ---------------------------------------------------------------------------

NestedFamily NestedFamily::symmetric(RegressionFn f) { return NestedFamily(SymmetricFamily{std::move(f)}); }

NestedFamily NestedFamily::band(RegressionFn lower, RegressionFn upper) {
  return NestedFamily(BandFamily{std::move(lower), std::move(upper)});
}

NestedFamily NestedFamily::loss_sublevel(LogitFn logits, int num_classes) {
  if (num_classes < 2) throw std::invalid_argument("loss_sublevel: need k >= 2");
  return NestedFamily(LossSublevelFamily{std::move(logits), num_classes});
}

NestedFamily::Kind NestedFamily::kind() const {
  return static_cast<Kind>(impl_.index());
}

double NestedFamily::coverage_threshold(const Eigen::Ref<const Eigen::VectorXd>& x,
                                        double y) const {
  return std::visit(
      Overloaded{
          [&](const SymmetricFamily& s) { return std::abs(s.f(x) - y); },
          [&](const BandFamily& b) { return std::max(b.lower(x) - y, y - b.upper(x)); },
          [&](const LossSublevelFamily& l) {
            return multiclass_loss(static_cast<int>(y), l.logits(x));
          },
      },
      impl_);
}

PredictionSet NestedFamily::set_at(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   ExtendedReal tau) const {
  return std::visit(
      Overloaded{
          [&](const SymmetricFamily& s) -> PredictionSet {
            const double c = s.f(x);
            return symmetric_interval(c, c, tau);
          },
          [&](const BandFamily& b) -> PredictionSet {
            const double l = b.lower(x);
            const double u = b.upper(x);
            double lo = l - tau;
            double hi = u + tau;
            if (std::isfinite(tau)) {
              lo = snap_lower(lo, [&](double y) { return l - y <= tau; });
              hi = snap_upper(hi, [&](double y) { return y - u <= tau; });
            }
            if (!(lo <= hi)) return empty_interval_set();
            return Interval{lo, hi};
          },
          [&](const LossSublevelFamily& l) -> PredictionSet {
            const Eigen::VectorXd v = l.logits(x);
            LabelSet out;
            for (int y = 0; y < l.num_classes; ++y) {
              if (multiclass_loss(y, v) <= tau) out.labels.push_back(y);
            }
            return out;
          },
      },
      impl_);
}

double NestedFamily::center(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (const auto* s = std::get_if<SymmetricFamily>(&impl_)) return s->f(x);
  throw std::invalid_argument("center: only symmetric families have a point prediction");
}

// ---------------------------------------------------------------------------

PredictorBuilder ridge_predictor_builder(std::vector<double> lambda_grid) {
  return [grid = std::move(lambda_grid)](const Samples& s) -> RegressionFn {
    RidgeModel model = fit_ridge(s, grid);
    return [model = std::move(model)](const Eigen::Ref<const Eigen::VectorXd>& x) {
      return model.predict(x);
    };
  };
}

FamilyBuilder symmetric_builder(PredictorBuilder predictor) {
  return [predictor = std::move(predictor)](const Samples& s) {
    return NestedFamily::symmetric(predictor(s));
  };
}

FamilyBuilder ridge_symmetric_builder(std::vector<double> lambda_grid) {
  return symmetric_builder(ridge_predictor_builder(std::move(lambda_grid)));
}

FamilyBuilder pinball_band_builder(double lower_level, double upper_level) {
  if (!(lower_level > 0 && lower_level < upper_level && upper_level < 1)) {
    throw std::invalid_argument("pinball_band_builder: need 0 < lower < upper < 1");
  }
  return [lower_level, upper_level](const Samples& s) {
    PinballModel lo = fit_pinball(s, lower_level);
    PinballModel hi = fit_pinball(s, upper_level);
    return NestedFamily::band(
        [lo = std::move(lo)](const Eigen::Ref<const Eigen::VectorXd>& x) { return lo.predict(x); },
        [hi = std::move(hi)](const Eigen::Ref<const Eigen::VectorXd>& x) { return hi.predict(x); });
  };
}

FamilyBuilder softmax_sublevel_builder(int num_classes, double l2) {
  return [num_classes, l2](const Samples& s) {
    SoftmaxOptions opts;
    opts.l2 = l2;
    SoftmaxModel model = fit_softmax(s, num_classes, opts);
    return NestedFamily::loss_sublevel(
        [model = std::move(model)](const Eigen::Ref<const Eigen::VectorXd>& x) {
          return model.predict_logits(x);
        },
        num_classes);
  };
}

}  // namespace multienv
