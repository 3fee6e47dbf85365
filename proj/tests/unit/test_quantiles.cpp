#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "multienv/quantiles.hpp"

using namespace multienv;

namespace {

// Levels are a / 1000 so ranks can be computed in integers.
std::size_t oracle_upper_rank(int a, std::size_t n) {
  return ((1000 - a) * (n + 1) + 999) / 1000;
}

std::size_t oracle_lower_rank(int a, std::size_t n) { return a * (n + 1) / 1000; }

double oracle_quant_plus(std::vector<double> v, int a) {
  std::sort(v.begin(), v.end());
  const std::size_t k = oracle_upper_rank(a, v.size());
  return k > v.size() ? kPosInf : v[k - 1];
}

double oracle_quant_minus(std::vector<double> v, int a) {
  std::sort(v.begin(), v.end());
  const std::size_t k = oracle_lower_rank(a, v.size());
  return k == 0 ? kNegInf : v[k - 1];
}

struct IntAtoms {
  std::vector<double> loc;
  std::vector<long> count;
  long total = 0;

  DiscreteDistribution dist() const {
    std::vector<Atom> atoms;
    for (std::size_t i = 0; i < loc.size(); ++i) {
      atoms.push_back({loc[i], static_cast<double>(count[i]) / static_cast<double>(total)});
    }
    return DiscreteDistribution(atoms);
  }
  // 1000 * P(Z <= t) compared with a * total, all in integers.
  long mass_le(double t) const {
    long s = 0;
    for (std::size_t i = 0; i < loc.size(); ++i) {
      if (loc[i] <= t) s += count[i];
    }
    return s;
  }
};

IntAtoms random_atoms(std::mt19937_64& rng, std::size_t size) {
  IntAtoms d;
  std::uniform_int_distribution<int> where(-10, 10);
  std::uniform_int_distribution<long> weight(0, 9);
  std::bernoulli_distribution infinite(0.1);
  for (std::size_t i = 0; i < size; ++i) {
    double x = where(rng);
    if (infinite(rng)) x = (where(rng) < 0) ? kNegInf : kPosInf;
    d.loc.push_back(x);
    d.count.push_back(weight(rng));
  }
  d.count[0] += 1;
  for (long c : d.count) d.total += c;
  return d;
}

std::vector<double> candidates(const IntAtoms& d) {
  std::vector<double> c = d.loc;
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

double oracle_left(const IntAtoms& d, int a) {
  for (double t : candidates(d)) {
    if (1000 * d.mass_le(t) >= a * d.total) return t;
  }
  return kPosInf;
}

// Supremum of {t : F(t) < a/1000} by scanning the grid of atoms and the
// midpoints between them. Locations are integers, so t - 0.5 lies strictly
// between neighbours.
double oracle_right(const IntAtoms& d, int a) {
  auto in_set = [&](double t) { return 1000 * d.mass_le(t) < a * d.total; };
  double sup = kNegInf;
  for (double t : candidates(d)) {
    if (!std::isinf(t) && in_set(t - 0.5)) sup = t - 0.5;
    if (!in_set(t)) {
      // The set is an initial segment; it stops just before t.
      return std::isinf(t) ? t : (sup == t - 0.5 ? t : sup);
    }
    sup = t;
  }
  return kPosInf;
}

}  // namespace

TEST_CASE("quant_plus hand cases") {
  const std::vector<double> v{3, 1, 2};
  CHECK(quant_plus(v, 0.5) == 2.0);
  const std::vector<double> w{1, 2, 3, 4};
  CHECK(quant_plus(w, 0.05) == kPosInf);
  CHECK(upper_rank(0.1, 9) == 9);
  CHECK(upper_rank(0.1, 50) == 46);
}

TEST_CASE("quant_minus hand cases") {
  const std::vector<double> w{1, 2, 3, 4};
  CHECK(quant_minus(w, 0.25) == 1.0);
  const std::vector<double> one{5};
  CHECK(quant_minus(one, 0.1) == kNegInf);
}

TEST_CASE("empty input and bad levels throw") {
  const std::vector<double> none;
  const std::vector<double> v{1.0};
  CHECK_THROWS_AS(quant_plus(none, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(quant_minus(none, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(quant_plus(v, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(quant_plus(v, 1.0), std::invalid_argument);
}

TEST_CASE("quant_plus and quant_minus match sort oracles") {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> level(1, 999);
  std::uniform_int_distribution<std::size_t> size(1, 60);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<int> tie(0, 5);
  for (int rep = 0; rep < 2000; ++rep) {
    const int a = level(rng);
    std::vector<double> v(size(rng));
    const bool ties = rep % 3 == 0;
    for (double& x : v) x = ties ? tie(rng) : z(rng);
    const double alpha = a / 1000.0;
    REQUIRE(quant_plus(v, alpha) == oracle_quant_plus(v, a));
    REQUIRE(quant_minus(v, alpha) == oracle_quant_minus(v, a));
  }
}

TEST_CASE("reflection, monotonicity and permutation invariance") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> level(0.01, 0.99);
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<double> v(1 + rep % 40);
    for (double& x : v) x = z(rng);
    double a1 = level(rng), a2 = level(rng);
    if (a1 > a2) std::swap(a1, a2);
    std::vector<double> neg(v.size());
    std::transform(v.begin(), v.end(), neg.begin(), [](double x) { return -x; });
    REQUIRE(quant_minus(v, a1) == -quant_plus(neg, a1));
    REQUIRE(quant_plus(v, a1) >= quant_plus(v, a2));
    std::vector<double> shuffled = v;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    REQUIRE(quant_plus(shuffled, a1) == quant_plus(v, a1));
  }
}

TEST_CASE("left and right quantile hand cases") {
  const DiscreteDistribution two({{1, 0.5}, {2, 0.5}});
  CHECK(left_quantile(two, 0.5) == 1.0);
  CHECK(right_quantile(two, 0.5) == 1.0);
  const DiscreteDistribution with_inf({{kNegInf, 0.5}, {0, 0.5}});
  CHECK(left_quantile(with_inf, 0.25) == kNegInf);
  const DiscreteDistribution point({{0, 1.0}});
  CHECK(right_quantile(point, 0.3) == 0.0);
}

TEST_CASE("distribution validation") {
  CHECK_THROWS_AS(DiscreteDistribution({}), std::invalid_argument);
  CHECK_THROWS_AS(DiscreteDistribution({{0, 0.4}}), std::invalid_argument);
  CHECK_THROWS_AS(DiscreteDistribution({{0, 1.5}, {1, -0.5}}), std::invalid_argument);
  CHECK_THROWS_AS(DiscreteDistribution({{std::nan(""), 1.0}}), std::invalid_argument);
  // Duplicate locations add.
  const DiscreteDistribution dup({{1, 0.25}, {1, 0.25}, {2, 0.5}});
  CHECK(left_quantile(dup, 0.5) == 1.0);
}

TEST_CASE("left and right quantiles match CDF scans") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> level(1, 999);
  for (int rep = 0; rep < 2000; ++rep) {
    const IntAtoms d = random_atoms(rng, 20);
    const DiscreteDistribution dist = d.dist();
    const int a = level(rng);
    REQUIRE(left_quantile(dist, a / 1000.0) == oracle_left(d, a));
    REQUIRE(right_quantile(dist, a / 1000.0) == oracle_right(d, a));
  }
}

TEST_CASE("left quantile is non-decreasing and agrees with right between CDF steps") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<Atom> atoms;
    double total = 0.0;
    for (int i = 0; i < 10; ++i) {
      atoms.push_back({static_cast<double>(i) + u(rng) * 0.5, 0.1});
      total += 0.1;
    }
    const DiscreteDistribution dist(atoms);
    double prev = kNegInf;
    for (int j = 1; j < 100; ++j) {
      const double lq = left_quantile(dist, j / 100.0);
      REQUIRE(lq >= prev);
      prev = lq;
    }
    // Strictly between CDF values 0.3 and 0.4.
    REQUIRE(left_quantile(dist, 0.35) == right_quantile(dist, 0.35));
  }
}
