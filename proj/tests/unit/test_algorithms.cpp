#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "multienv/algorithms.hpp"
#include "multienv/predictors.hpp"

using namespace multienv;

namespace {

using Vec = Eigen::VectorXd;

// Predicts the mean outcome of the rows it was fitted on.
PredictorBuilder mean_builder() {
  return [](const Samples& s) {
    const double m = s.y.mean();
    return RegressionFn([m](const Eigen::Ref<const Vec>&) { return m; });
  };
}

PredictorBuilder zero_builder() {
  return [](const Samples&) { return RegressionFn([](const Eigen::Ref<const Vec>&) { return 0.0; }); };
}

EnvironmentSample env_of(const std::string& id, std::vector<double> ys, int p = 1) {
  const int n = static_cast<int>(ys.size());
  EnvironmentSample e{id, Eigen::MatrixXd::Zero(n, p), Vec(n)};
  for (int i = 0; i < n; ++i) e.y(i) = ys[i];
  return e;
}

MultiEnvDataset generated(std::uint64_t seed, std::size_t m = 8, std::size_t n = 20,
                          double outlier = 0.0) {
  HierGenConfig cfg;
  cfg.m = m;
  cfg.n_min = cfg.n_max = n;
  cfg.p = 3;
  cfg.outlier_frac = outlier;
  cfg.outlier_noise_multiplier = outlier > 0 ? 10 : 1;
  cfg.seed = seed;
  return generate_hierarchical(cfg);
}

const std::vector<double> kGrid{0.01, 1.0, 100.0};
const Vec kX0 = Vec::Zero(1);

}  // namespace

TEST_CASE("jackknife-minmax two-environment hand case") {
  const MultiEnvDataset d({env_of("1", {0}), env_of("2", {2})}, OutcomeKind::regression());
  const auto map = fit_jackknife_minmax(d, symmetric_builder(mean_builder()), 0.5, 0.5);
  CHECK(map->scores() == std::vector<double>{2, 2});
  CHECK(map->tau() == 2.0);
  CHECK(std::get<Interval>(map->evaluate(kX0)) == Interval{-2, 4});
  // ceil(0.8 * 3) = 3 > m: the whole line.
  const auto wide = fit_jackknife_minmax(d, symmetric_builder(mean_builder()), 0.5, 0.2);
  CHECK(wide->tau() == kPosInf);
  CHECK(std::get<Interval>(wide->evaluate(kX0)) == Interval{kNegInf, kPosInf});
}

TEST_CASE("jackknife-minmax closed form is the hull of the union") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MultiEnvDataset d = generated(seed);
    const auto map = fit_jackknife_minmax(d, ridge_symmetric_builder(kGrid), 0.1, 0.2);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    for (int k = 0; k < 20; ++k) {
      Vec x(3);
      x << z(rng), z(rng), z(rng);
      const PredictionSet u = map->evaluate_union(x);
      const Interval closed = std::get<Interval>(map->evaluate_closed_form(x));
      const Interval h = hull(u);
      REQUIRE(h.lo == closed.lo);
      REQUIRE(h.hi == closed.hi);
    }
  }
}

TEST_CASE("leave-one-out fits do not depend on the worker count") {
  const MultiEnvDataset d = generated(3, 9);
  const LeaveOneOut a = fit_leave_one_out(d, ridge_symmetric_builder(kGrid), 1);
  const LeaveOneOut b = fit_leave_one_out(d, ridge_symmetric_builder(kGrid), 4);
  CHECK(a.thresholds == b.thresholds);
}

TEST_CASE("split conformal single calibration score") {
  const MultiEnvDataset d({env_of("a", {1, 2, 3}), env_of("b", {0, 4, 10})},
                          OutcomeKind::regression());
  const EnvSplit split{{0}, {1}};
  const auto map = fit_split_conformal(d, symmetric_builder(mean_builder()), 0.5, 0.5, split);
  // Residuals against mean 2 are {2, 2, 8}; k = ceil(0.5 * 4) = 2 gives 2.
  REQUIRE(map->scores().size() == 1);
  CHECK(map->scores()[0] == 2.0);
  CHECK(map->tau() == 2.0);
}

TEST_CASE("split conformal on noiseless data gives covering singletons") {
  const MultiEnvDataset d({env_of("a", {5, 5}), env_of("b", {5, 5, 5}), env_of("c", {5})},
                          OutcomeKind::regression());
  Rng rng(1);
  const auto map = fit_split_conformal(d, symmetric_builder(mean_builder()), 0.5, 0.5, 0.5, rng);
  CHECK(map->tau() == 0.0);
  const PredictionSet s = map->evaluate(kX0);
  CHECK(std::get<Interval>(s) == Interval{5, 5});
  CHECK(contains(s, 5.0));
}

TEST_CASE("nested split conformal matches the regression interval") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MultiEnvDataset d = generated(100 + seed);
    Rng rng(seed);
    const auto map = fit_split_conformal(d, ridge_symmetric_builder(kGrid), 0.1, 0.2, 0.5, rng);
    // Regression form from the split's own residuals.
    const NestedFamily& fam = map->family();
    std::vector<double> s;
    for (std::size_t i : map->split().d2) {
      std::vector<double> r;
      const auto& e = d.env(i);
      for (std::size_t j = 0; j < e.size(); ++j) {
        r.push_back(std::abs(e.y(j) - fam.center(e.X.row(j).transpose())));
      }
      s.push_back(quant_plus(r, 0.1));
    }
    const double tau = quant_plus(s, 0.2);
    REQUIRE(tau == map->tau());
    for (std::size_t j = 0; j < 5; ++j) {
      const Vec x = d.env(0).X.row(j).transpose();
      const double f = fam.center(x);
      REQUIRE(std::get<Interval>(map->evaluate(x)) == std::get<Interval>(symmetric_interval(f, f, tau)));
    }
  }
}

TEST_CASE("thresholds are non-increasing in delta") {
  const MultiEnvDataset d = generated(7, 12, 40);
  const LeaveOneOut loo = fit_leave_one_out(d, ridge_symmetric_builder(kGrid));
  const EnvSplit split{{0, 1, 2, 3, 4, 5}, {6, 7, 8, 9, 10, 11}};
  const auto sc = fit_split_conformal(d, ridge_symmetric_builder(kGrid), 0.1, 0.5, split);
  double prev_jk = kPosInf, prev_sc = kPosInf, prev_rs = kPosInf;
  for (double delta = 0.02; delta < 0.99; delta += 0.02) {
    const double jk = fit_jackknife_minmax(loo, 0.1, delta)->tau();
    const double sct = quant_plus(sc->scores(), delta);
    Rng rng(5);
    const ResizedCalibration cal =
        calibrate_resized(d, ridge_symmetric_builder(kGrid), 0.1, delta, 0.05, 10, split, rng);
    const double rs = ResizedMapping(std::make_shared<ResizedCalibration>(cal), 1.7).tau();
    REQUIRE(jk <= prev_jk);
    REQUIRE(sct <= prev_sc);
    REQUIRE(rs <= prev_rs);
    prev_jk = jk;
    prev_sc = sct;
    prev_rs = rs;
  }
}

TEST_CASE("hierarchical jackknife+ three-atom case") {
  const auto constant = [](double c) { return RegressionFn([c](const Eigen::Ref<const Vec>&) { return c; }); };
  const double c = 3.0;
  const HierJackknifePlusMapping at04({constant(c), constant(c)}, {{1.0}, {1.0}}, 0.4);
  CHECK(std::get<Interval>(at04.evaluate(kX0)) == Interval{c - 1, c + 1});
  // At 0.3 each infinite atom carries mass 1/3 > 0.3, so both ends are infinite.
  const HierJackknifePlusMapping at03({constant(c), constant(c)}, {{1.0}, {1.0}}, 0.3);
  CHECK(std::get<Interval>(at03.evaluate(kX0)) == Interval{kNegInf, kPosInf});
  const HierJackknifePlusMapping tiny({constant(c), constant(c)}, {{1.0}, {1.0}}, 0.01);
  CHECK(std::get<Interval>(tiny.evaluate(kX0)) == Interval{kNegInf, kPosInf});
}

TEST_CASE("hierarchical jackknife+ with single observations is jackknife+") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> z;
  const int n = 12;
  std::vector<EnvironmentSample> envs;
  for (int i = 0; i < n; ++i) {
    EnvironmentSample e{std::to_string(i), Eigen::MatrixXd(1, 2), Vec(1)};
    e.X << z(rng), z(rng);
    e.y(0) = e.X(0, 0) - 0.5 * e.X(0, 1) + z(rng);
    envs.push_back(e);
  }
  const MultiEnvDataset d(envs, OutcomeKind::regression());
  const double alpha = 0.1;  // alpha (n + 1) = 1.3 is not an integer
  const auto builder = ridge_predictor_builder(kGrid);
  const auto map = fit_hier_jackknife_plus(d, builder, alpha);

  std::vector<RegressionFn> loo;
  std::vector<double> r;
  for (int i = 0; i < n; ++i) {
    loo.push_back(builder(pool_except(d, i)));
    r.push_back(std::abs(d.env(i).y(0) - loo.back()(d.env(i).X.row(0).transpose())));
  }
  for (int k = 0; k < 20; ++k) {
    Vec x(2);
    x << z(rng), z(rng);
    std::vector<double> lo, hi;
    for (int i = 0; i < n; ++i) {
      lo.push_back(loo[i](x) - r[i]);
      hi.push_back(loo[i](x) + r[i]);
    }
    std::sort(lo.begin(), lo.end());
    std::sort(hi.begin(), hi.end());
    const std::size_t kl = static_cast<std::size_t>(std::floor(alpha * (n + 1)));
    const std::size_t ku = static_cast<std::size_t>(std::ceil((1 - alpha) * (n + 1)));
    const Interval want{kl == 0 ? kNegInf : lo[kl - 1], ku > static_cast<std::size_t>(n) ? kPosInf : hi[ku - 1]};
    REQUIRE(std::get<Interval>(map->evaluate(x)) == want);
  }
}

TEST_CASE("hcp threshold hand cases") {
  CHECK(hcp_threshold({{2.0, 2.0}, {2.0}}, 0.5) == 2.0);
  // Three calibration environments: the +inf atom has mass 1/4, so any
  // 1 - alpha > 3/4 lands on it.
  CHECK(hcp_threshold({{1.0}, {2.0}, {3.0}}, 0.2) == kPosInf);
  CHECK(hcp_threshold({{1.0}, {2.0}, {3.0}}, 0.3) == 3.0);
  // Per-environment weights: one large environment does not dominate.
  CHECK(hcp_threshold({{1, 1, 1, 1, 1, 1, 1, 1, 1}, {5.0}, {5.0}}, 0.5) == 5.0);
}

TEST_CASE("hcp interval is centred on the D1 fit") {
  const MultiEnvDataset d = generated(31, 10, 15);
  Rng rng(4);
  // |D2| = 5: the +inf atom has mass 1/6, so alpha must exceed it.
  const auto map = fit_hcp(d, ridge_predictor_builder(kGrid), 0.2, 0.5, rng);
  const Vec x = Vec::Zero(3);
  const Interval iv = std::get<Interval>(map->evaluate(x));
  REQUIRE(std::isfinite(map->threshold()));
  CHECK(std::abs((iv.hi - iv.lo) - 2 * map->threshold()) < 1e-12);
}

TEST_CASE("resize convention") {
  bool flag = false;
  CHECK(resize(3, 2, &flag) == 1.5);
  CHECK_FALSE(flag);
  CHECK(resize(0, 0, &flag) == 0.0);
  CHECK(flag);
  CHECK(resize(2, 0) == kPosInf);
}

TEST_CASE("resized with unit factors equals split conformal") {
  // Every environment has 30 residuals at 1 and 10 at 0.5, so any labeled
  // subset of 19 rows has maximum 1, which is its 0.05 quant_plus.
  std::vector<EnvironmentSample> envs;
  std::mt19937_64 g(3);
  for (int i = 0; i < 6; ++i) {
    std::vector<double> ys;
    for (int j = 0; j < 40; ++j) ys.push_back((j < 30 ? 1.0 : 0.5) * (j % 2 ? 1 : -1));
    std::shuffle(ys.begin(), ys.end(), g);
    envs.push_back(env_of(std::to_string(i), ys));
  }
  const MultiEnvDataset d(envs, OutcomeKind::regression());
  const EnvSplit split{{0, 1, 2}, {3, 4, 5}};
  const FamilyBuilder fam = symmetric_builder(zero_builder());
  Rng rng(8);
  auto cal = std::make_shared<ResizedCalibration>(
      calibrate_resized(d, fam, 0.1, 0.2, 0.05, 19, split, rng));
  for (double f : cal->factors) CHECK(f == 1.0);
  const auto plain = fit_split_conformal(d, fam, 0.1, 0.2, split);
  Rng pick(2);
  const Holdout h = holdout_labels(40, 19, pick);
  const auto map = resized_for_test(cal, d.env(0).subset(h.labeled));
  CHECK(map->test_factor() == 1.0);
  CHECK(map->tau() == plain->tau());
  CHECK_FALSE(map->degenerate());
}

TEST_CASE("resized threshold scales with the test factor") {
  const MultiEnvDataset d = generated(41, 10, 50);
  const EnvSplit split{{0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}};
  const FamilyBuilder fam = symmetric_builder(zero_builder());
  Rng rng(9);
  auto cal = std::make_shared<ResizedCalibration>(
      calibrate_resized(d, fam, 0.1, 0.2, 0.05, 30, split, rng));
  // With f = 0 the thresholds are |y|, so doubling y doubles them exactly.
  EnvironmentSample test = d.env(0).subset(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9,
                                                                      10, 11, 12, 13, 14, 15, 16,
                                                                      17, 18, 19, 20, 21, 22, 23,
                                                                      24, 25, 26, 27, 28, 29});
  EnvironmentSample doubled = test;
  doubled.y *= 2.0;
  const auto a = resized_for_test(cal, test);
  const auto b = resized_for_test(cal, doubled);
  CHECK(b->test_factor() == 2.0 * a->test_factor());
  CHECK(b->tau() == 2.0 * a->tau());
}

TEST_CASE("resized degenerate factors and preconditions") {
  const MultiEnvDataset d({env_of("a", {0, 0, 0, 0}), env_of("b", {0, 0, 0, 7}),
                           env_of("c", {1, 2, 3, 4})},
                          OutcomeKind::regression());
  const FamilyBuilder fam = symmetric_builder(zero_builder());
  const EnvSplit split{{2}, {0, 1}};
  Rng rng(1);
  const ResizedCalibration cal = calibrate_resized(d, fam, 0.5, 0.5, 0.5, 2, split, rng);
  CHECK(cal.degenerate);
  CHECK(cal.factors[0] == 0.0);
  CHECK(cal.scores[0] == 0.0);
  Rng again(1);
  CHECK_THROWS_AS(calibrate_resized(d, fam, 0.5, 0.5, 0.5, 4, split, again), std::invalid_argument);
  // A zero test factor against an infinite score quantile is resolved upward.
  ResizedCalibration inf_cal = cal;
  inf_cal.score_quantile = kPosInf;
  const ResizedMapping m(std::make_shared<ResizedCalibration>(inf_cal), 0.0);
  CHECK(m.tau() == kPosInf);
  CHECK(m.degenerate());
}

TEST_CASE("jackknife+ quantile hand case and overflow") {
  const MultiEnvDataset d({env_of("1", {0}), env_of("2", {2})}, OutcomeKind::regression());
  const auto map = fit_jackknife_plus_quantile(d, mean_builder(), 0.5, 0.5);
  CHECK(std::get<Interval>(map->evaluate(kX0)) == Interval{-2, 4});
  const auto wide = fit_jackknife_plus_quantile(d, mean_builder(), 0.5, 0.01);
  CHECK(std::get<Interval>(wide->evaluate(kX0)) == Interval{kNegInf, kPosInf});
}

TEST_CASE("jackknife-minmax contains jackknife+ quantile") {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const MultiEnvDataset d = generated(200 + seed, 10, 20, 0.2);
    const LeaveOneOut loo = fit_leave_one_out(d, ridge_symmetric_builder(kGrid));
    for (double delta : {0.1, 0.3, 0.5}) {
      const auto jk = fit_jackknife_minmax(loo, 0.1, delta);
      const auto jq = fit_jackknife_plus_quantile(loo, 0.1, delta);
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> z;
      for (int k = 0; k < 20; ++k) {
        Vec x(3);
        x << z(rng), z(rng), z(rng);
        const Interval outer = std::get<Interval>(jk->evaluate(x));
        const PredictionSet inner = jq->evaluate(x);
        if (is_empty(inner)) continue;
        const Interval in = std::get<Interval>(inner);
        // Exact in real arithmetic; the two endpoints round differently.
        const double slack = 1e-12 * (1 + std::abs(in.lo) + std::abs(in.hi));
        REQUIRE(outer.lo <= in.lo + slack);
        REQUIRE(in.hi <= outer.hi + slack);
      }
    }
  }
}

TEST_CASE("returned intervals are ordered or empty") {
  const MultiEnvDataset d = generated(55, 10, 20, 0.3);
  Rng rng(6);
  std::vector<MappingPtr> maps{
      fit_jackknife_minmax(d, ridge_symmetric_builder(kGrid), 0.1, 0.3),
      fit_split_conformal(d, ridge_symmetric_builder(kGrid), 0.1, 0.3, 0.5, rng),
      fit_split_conformal(d, pinball_band_builder(0.1, 0.9), 0.1, 0.3, 0.5, rng),
      fit_hier_jackknife_plus(d, ridge_predictor_builder(kGrid), 0.1),
      fit_hcp(d, ridge_predictor_builder(kGrid), 0.1, 0.5, rng),
      fit_jackknife_plus_quantile(d, ridge_predictor_builder(kGrid), 0.1, 0.3)};
  std::mt19937_64 g(1);
  std::normal_distribution<double> z;
  for (const auto& m : maps) {
    for (int k = 0; k < 30; ++k) {
      Vec x(3);
      x << z(g), z(g), z(g);
      const PredictionSet s = m->evaluate(x);
      if (const auto* iv = std::get_if<Interval>(&s)) REQUIRE(iv->lo <= iv->hi);
      else REQUIRE((is_empty(s) || std::holds_alternative<IntervalUnion>(s)));
    }
    CHECK(m->info().contains("algorithm"));
  }
}

TEST_CASE("classification jackknife-minmax returns label sets") {
  std::mt19937_64 g(5);
  std::normal_distribution<double> z;
  std::vector<EnvironmentSample> envs;
  for (int i = 0; i < 4; ++i) {
    EnvironmentSample e{std::to_string(i), Eigen::MatrixXd(30, 2), Vec(30)};
    for (int j = 0; j < 30; ++j) {
      const int c = j % 3;
      e.X(j, 0) = c + z(g);
      e.X(j, 1) = -c + z(g);
      e.y(j) = c;
    }
    envs.push_back(e);
  }
  const MultiEnvDataset d(envs, OutcomeKind::classification(3));
  const auto map = fit_jackknife_minmax(d, softmax_sublevel_builder(3), 0.2, 0.4);
  const PredictionSet s = map->evaluate(Vec::Zero(2));
  REQUIRE(std::holds_alternative<LabelSet>(s));
  CHECK(measure(s) >= 1.0);
  CHECK(measure(s) <= 3.0);
}
