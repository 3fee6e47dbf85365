#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "multienv/weighted.hpp"

using namespace multienv;

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

Vec vec(std::vector<double> v) { return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

Mat ones(Eigen::Index rows) { return Mat::Ones(rows, 1); }

double mean_loss(const Vec& s, const Mat& phi, const Vec& theta, double delta) {
  const Vec fit = phi * theta;
  double t = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) t += env_pinball_loss(s(i) - fit(i), delta);
  return t / static_cast<double>(s.size());
}

// Scan candidate taus in increasing order; a = alpha * 1000.
double scan_env_score(std::vector<double> t, int a) {
  std::sort(t.begin(), t.end());
  const long n = static_cast<long>(t.size());
  for (double tau : t) {
    const long covered = std::count_if(t.begin(), t.end(), [&](double v) { return v <= tau; });
    if (1000 * covered > (1000 - a) * n) return tau;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TEST_CASE("env score uses a strict fraction") {
  CHECK(env_score({1, 2, 3, 4}, 0.25) == 4.0);
  CHECK(env_score({1, 2, 3, 4}, 0.5) == 3.0);
  CHECK(env_score_rank(10, 0.1) == 10);
  CHECK(env_score_rank(20, 0.1) == 19);
  CHECK(env_score_rank(3, 0.9) == 1);
  CHECK_THROWS_AS(env_score({}, 0.1), std::invalid_argument);
}

TEST_CASE("env score matches a coverage-fraction scan") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> level(1, 999);
  std::uniform_int_distribution<int> size(1, 40);
  std::uniform_int_distribution<int> tie(0, 6);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<double> t(size(rng));
    for (double& v : t) v = rep % 2 ? z(rng) : tie(rng);
    const int a = level(rng);
    REQUIRE(env_score(t, a / 1000.0) == scan_env_score(t, a));
  }
}

TEST_CASE("pinball fit with constant features is a quantile") {
  const Vec s = vec({1, 2, 3, 4, 5});
  const PinballEnvFit q8 = fit_pinball_env(s, ones(5), 0.2, 0.0);
  CHECK(q8.theta(0) >= 4.0 - 1e-12);
  CHECK(q8.theta(0) <= 5.0 + 1e-12);
  CHECK(std::abs(q8.objective - 0.4) < 1e-12);
  const PinballEnvFit med = fit_pinball_env(s, ones(5), 0.5, 0.0);
  CHECK(std::abs(med.theta(0) - 3.0) < 1e-12);
}

TEST_CASE("pinball fit matches active-set enumeration") {
  // With two features an optimal theta interpolates two of the points.
  std::mt19937_64 rng(18);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> lvl(0.05, 0.95);
  for (int rep = 0; rep < 200; ++rep) {
    Mat phi(6, 2);
    Vec s(6);
    for (int i = 0; i < 6; ++i) {
      phi(i, 0) = 1.0;
      phi(i, 1) = z(rng);
      s(i) = 0.5 * phi(i, 1) + z(rng);
    }
    const double delta = lvl(rng);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 6; ++i) {
      for (int j = i + 1; j < 6; ++j) {
        Eigen::Matrix2d A;
        A << phi.row(i), phi.row(j);
        const Eigen::Vector2d theta = A.partialPivLu().solve(Eigen::Vector2d(s(i), s(j)));
        best = std::min(best, mean_loss(s, phi, theta, delta));
      }
    }
    const PinballEnvFit fit = fit_pinball_env(s, phi, delta, 0.0);
    REQUIRE(std::abs(fit.objective - best) < 1e-9);
  }
}

TEST_CASE("regularized dual is feasible with a small gap") {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 4 + rep % 8;
    Mat phi(n, 2);
    Vec c(n);
    for (int i = 0; i < n; ++i) {
      phi(i, 0) = 1.0;
      phi(i, 1) = z(rng);
      c(i) = z(rng);
    }
    const double delta = 0.1 + 0.8 * (rep % 10) / 10.0;
    const double w = rep % 2 ? 0.0 : 0.05;
    const DualSolution d = solve_env_dual(c, phi, delta, w, 1e-11);
    REQUIRE(d.eta.minCoeff() >= -delta - 1e-10);
    REQUIRE(d.eta.maxCoeff() <= 1 - delta + 1e-10);
    REQUIRE(d.gap <= 1e-8 * std::max(1.0, std::abs(d.objective)));
    if (w == 0.0) REQUIRE((phi.transpose() * d.eta).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("dual eta extremes") {
  const Vec scores = vec({0.0});
  const DualSolution low = dual_eta(scores, ones(2), 0.5, 0.0, -1.0);
  CHECK(std::abs(low.eta(1) - (-0.5)) < 1e-12);
  const DualSolution high = dual_eta(scores, ones(2), 0.5, 0.0, 1e8);
  CHECK(std::abs(high.eta(1) - 0.5) < 1e-12);
  const DualSolution reg = dual_eta(scores, ones(2), 0.3, 0.1, 1e8);
  CHECK(std::abs(reg.eta(1) - 0.7) < 1e-9);
}

TEST_CASE("test-point eta is monotone in s") {
  std::mt19937_64 rng(20);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 100; ++rep) {
    const int m = 5 + rep % 10;
    Vec s(m);
    Mat phi(m + 1, 2);
    for (int i = 0; i <= m; ++i) {
      phi(i, 0) = 1.0;
      phi(i, 1) = (rep % 3 == 0) ? (i % 2) : z(rng);
      if (i < m) s(i) = z(rng);
    }
    const double delta = 0.1 + 0.05 * (rep % 10);
    const double w = rep % 4 == 1 ? 0.02 : 0.0;
    double prev = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < 100; ++k) {
      const double sv = -4.0 + 8.0 * k / 99.0;
      const double e = dual_eta(s, phi, delta, w, sv).eta(m);
      REQUIRE(e >= prev - 1e-9);
      prev = e;
    }
  }
}

TEST_CASE("constant-feature threshold is the conformal quantile") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> lvl(0.02, 0.98);
  for (int rep = 0; rep < 200; ++rep) {
    const int m = 2 + rep % 25;
    std::vector<double> s(m);
    for (double& v : s) v = z(rng);
    const double delta = rep % 4 == 0 ? 0.1 * (1 + rep % 9) : lvl(rng);
    const ExtendedReal t = weighted_threshold(vec(s), ones(m + 1), delta);
    REQUIRE(t == quant_plus(s, delta));
  }
}

TEST_CASE("equal scores give that score") {
  const Vec s = Vec::Constant(8, 2.5);
  CHECK(weighted_threshold(s, ones(9), 0.3) == 2.5);
}

TEST_CASE("randomized threshold levels") {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 30; ++rep) {
    const int m = 9 + rep % 5;
    std::vector<double> s(m);
    for (double& v : s) v = z(rng);
    const Vec sv = vec(s);
    const double delta = 0.2;
    // u = 1 makes every s admissible.
    CHECK(randomized_threshold_at(sv, ones(m + 1), delta, 1.0) == kPosInf);
    CHECK(randomized_threshold_at(sv, ones(m + 1), delta, 1.0 - 1e-6) ==
          weighted_threshold(sv, ones(m + 1), delta));
    const double t0 = randomized_threshold_at(sv, ones(m + 1), delta, 0.0);
    CHECK(t0 <= weighted_threshold(sv, ones(m + 1), delta));
    CHECK(std::isfinite(t0));
    double prev = t0;
    for (double u : {0.2, 0.4, 0.6, 0.8, 0.99}) {
      const double t = randomized_threshold_at(sv, ones(m + 1), delta, u);
      CHECK(t >= prev);
      prev = t;
    }
  }
}

TEST_CASE("randomized threshold is exact on average") {
  // Fresh exchangeable score against a randomized threshold: coverage 1 - delta.
  std::mt19937_64 rng(23);
  std::normal_distribution<double> z;
  const int m = 7;
  const double delta = 0.3;
  const int trials = 3000;
  int covered = 0;
  for (int k = 0; k < trials; ++k) {
    Vec s(m);
    for (int i = 0; i < m; ++i) s(i) = z(rng);
    const double test = z(rng);
    Rng urng(static_cast<std::uint64_t>(k));
    covered += test <= randomized_threshold(s, ones(m + 1), delta, urng);
  }
  const double q = 1 - delta;
  CHECK(std::abs(covered / double(trials) - q) < 3 * std::sqrt(q * (1 - q) / trials));
}

TEST_CASE("group features threshold per group") {
  // Two groups with very different score levels: each test group gets its
  // own quantile instead of a pooled one.
  std::vector<double> s;
  Mat phi(21, 2);
  for (int i = 0; i < 20; ++i) {
    const bool g = i % 2;
    s.push_back(g ? 100.0 + i : static_cast<double>(i));
    phi(i, 0) = 1.0;
    phi(i, 1) = g;
  }
  phi(20, 0) = 1.0;
  phi(20, 1) = 0.0;
  const ExtendedReal t0 = weighted_threshold(vec(s), phi, 0.2);
  phi(20, 1) = 1.0;
  const ExtendedReal t1 = weighted_threshold(vec(s), phi, 0.2);
  CHECK(t0 < 100.0);
  CHECK(t1 > 100.0);
  CHECK(t1 < kPosInf);
}

TEST_CASE("threshold rejects bad inputs") {
  CHECK_THROWS_AS(weighted_threshold(vec({1, 2}), ones(2), 0.2), std::invalid_argument);
  CHECK_THROWS_AS(weighted_threshold(vec({1, kPosInf}), ones(3), 0.2), std::invalid_argument);
  CHECK_THROWS_AS(solve_env_dual(vec({1}), ones(1), 1.5, 0.0), std::invalid_argument);
}

TEST_CASE("weighted calibration end to end") {
  HierGenConfig cfg;
  cfg.m = 20;
  cfg.n_min = cfg.n_max = 30;
  cfg.outlier_frac = 0.3;
  cfg.outlier_noise_multiplier = 10;
  cfg.seed = 4;
  const GeneratedData g = generate_hierarchical_detailed(cfg);
  Rng rng(1);
  const EnvSplit split = split_environments(20, 0.5, rng);
  const auto builder = ridge_symmetric_builder({0.1, 1.0, 10.0});
  auto cal = std::make_shared<WeightedCalibration>(
      calibrate_weighted(g.dataset, builder, 0.1, 0.2, split, constant_features()));
  REQUIRE(cal->scores.size() == split.d2.size());
  const WeightedMapping map(cal, Vec::Ones(1));
  CHECK(map.tau() == quant_plus(cal->scores, 0.2));
  CHECK(map.info()["algorithm"] == "weighted");
  const std::vector<bool> flags(g.outlier.begin(), g.outlier.end());
  auto grouped = std::make_shared<WeightedCalibration>(
      calibrate_weighted(g.dataset, builder, 0.1, 0.2, split, indicator_features(flags)));
  CHECK(grouped->features.cols() == 2);
}
