#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace multienv {

// Raised when an iterative solver stops before meeting its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_objective)
      : std::runtime_error(what + " (last objective " + std::to_string(last_objective) + ")"),
        last_objective_(last_objective) {}
  double last_objective() const { return last_objective_; }

 private:
  double last_objective_;
};

class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BoxLpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd duals;  // simplex multipliers, one per equality row
  double objective = 0.0;
  int iterations = 0;
};

struct BoxLpOptions {
  double tolerance = 1e-9;
  int max_iterations = 0;  // 0 selects 50 * (rows + cols) + 1000
};

// maximize c'x  subject to  A x = b,  lower <= x <= upper (finite bounds).
// Dense bounded-variable revised simplex with a two-phase start; Dantzig
// pricing that falls back to Bland's rule on degenerate stalls.
BoxLpResult solve_box_lp(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                         const Eigen::VectorXd& c, const Eigen::VectorXd& lower,
                         const Eigen::VectorXd& upper, const BoxLpOptions& opts = {});

}  // namespace multienv
