#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace multienv {

// Values on the extended real line. IEEE infinities stand in for +/-inf; NaN is
// never a valid ExtendedReal.
using ExtendedReal = double;

inline constexpr ExtendedReal kPosInf = std::numeric_limits<double>::infinity();
inline constexpr ExtendedReal kNegInf = -std::numeric_limits<double>::infinity();

// Rank used by the upper conformal quantile: ceil((1 - alpha) * (n + 1)).
// A relative guard absorbs round-off so decimal inputs like alpha = 0.1, n = 9
// give the mathematically exact rank (9, not 10).
std::size_t upper_rank(double alpha, std::size_t n);

// Rank used by the lower conformal quantile: floor(alpha * (n + 1)).
std::size_t lower_rank(double alpha, std::size_t n);

// Upper conformal quantile: the upper_rank(alpha, n)-th smallest of `values`,
// or +inf when that rank exceeds n. Throws std::invalid_argument on empty
// input or alpha outside (0, 1).
ExtendedReal quant_plus(std::span<const double> values, double alpha);

// Lower conformal quantile, defined as -quant_plus(-values, alpha) so the
// reflection identity holds bit-for-bit. Returns -inf when the rank is zero.
ExtendedReal quant_minus(std::span<const double> values, double alpha);

struct Atom {
  ExtendedReal location;
  double weight;
};

// Finite mixture of point masses on the extended reals. Duplicate locations
// are allowed; their weights add.
class DiscreteDistribution {
 public:
  // Validates: at least one atom, nonnegative weights summing to 1 within
  // 1e-9, no NaN locations.
  explicit DiscreteDistribution(std::vector<Atom> atoms);

  std::span<const Atom> atoms() const { return atoms_; }

 private:
  std::vector<Atom> atoms_;  // sorted by location
};

// inf { t : P(Z <= t) >= alpha }.
ExtendedReal left_quantile(const DiscreteDistribution& dist, double alpha);

// sup { t : P(Z <= t) < alpha }. For atomic laws the supremum is attained at
// the first atom where the CDF reaches alpha.
ExtendedReal right_quantile(const DiscreteDistribution& dist, double alpha);

}  // namespace multienv
