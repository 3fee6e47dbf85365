#include "multienv/quantiles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace multienv {
namespace {

constexpr double kRankGuard = 1e-10;
// CDF comparisons tolerate accumulated round-off in the weight sums.
constexpr double kCdfGuard = 1e-12;

void check_level(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("quantile level must lie in (0, 1)");
  }
}

}  // namespace

std::size_t upper_rank(double alpha, std::size_t n) {
  const double x = (1.0 - alpha) * static_cast<double>(n + 1);
  return static_cast<std::size_t>(std::ceil(x - kRankGuard * std::max(1.0, x)));
}

std::size_t lower_rank(double alpha, std::size_t n) {
  const double x = alpha * static_cast<double>(n + 1);
  return static_cast<std::size_t>(std::floor(x + kRankGuard * std::max(1.0, x)));
}

ExtendedReal quant_plus(std::span<const double> values, double alpha) {
  if (values.empty()) {
    throw std::invalid_argument("quant_plus: empty input");
  }
  check_level(alpha);
  const std::size_t k = upper_rank(alpha, values.size());
  if (k > values.size()) return kPosInf;
  std::vector<double> scratch(values.begin(), values.end());
  const auto kth = scratch.begin() + static_cast<std::ptrdiff_t>(k == 0 ? 0 : k - 1);
  std::nth_element(scratch.begin(), kth, scratch.end());
  return *kth;
}

ExtendedReal quant_minus(std::span<const double> values, double alpha) {
  if (values.empty()) {
    throw std::invalid_argument("quant_minus: empty input");
  }
  std::vector<double> negated(values.size());
  std::transform(values.begin(), values.end(), negated.begin(),
                 [](double v) { return -v; });
  return -quant_plus(negated, alpha);
}

DiscreteDistribution::DiscreteDistribution(std::vector<Atom> atoms)
    : atoms_(std::move(atoms)) {
  if (atoms_.empty()) {
    throw std::invalid_argument("DiscreteDistribution: no atoms");
  }
  double total = 0.0;
  for (const Atom& a : atoms_) {
    if (std::isnan(a.location)) {
      throw std::invalid_argument("DiscreteDistribution: NaN location");
    }
    if (!(a.weight >= 0.0)) {
      throw std::invalid_argument("DiscreteDistribution: negative weight");
    }
    total += a.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("DiscreteDistribution: weights must sum to 1");
  }
  std::stable_sort(atoms_.begin(), atoms_.end(), [](const Atom& a, const Atom& b) {
    return a.location < b.location;
  });
}

ExtendedReal left_quantile(const DiscreteDistribution& dist, double alpha) {
  check_level(alpha);
  const auto atoms = dist.atoms();
  double cdf = 0.0;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    cdf += atoms[i].weight;
    // Only test once every atom at this location has been absorbed.
    const bool last_at_location =
        i + 1 == atoms.size() || atoms[i + 1].location != atoms[i].location;
    if (last_at_location && cdf >= alpha - kCdfGuard) return atoms[i].location;
  }
  return atoms.back().location;
}

ExtendedReal right_quantile(const DiscreteDistribution& dist, double alpha) {
  check_level(alpha);
  const auto atoms = dist.atoms();
  // {t : F(t) < alpha} is (-inf, a) for the first atom a with F(a) >= alpha,
  // or empty when the mass at -inf already reaches alpha.
  double cdf = 0.0;
  std::size_t i = 0;
  while (i < atoms.size()) {
    const ExtendedReal loc = atoms[i].location;
    while (i < atoms.size() && atoms[i].location == loc) cdf += atoms[i++].weight;
    if (!(cdf < alpha - kCdfGuard)) return loc;
  }
  return atoms.back().location;
}

}  // namespace multienv
