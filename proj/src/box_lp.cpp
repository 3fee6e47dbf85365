#include "multienv/box_lp.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace multienv {
namespace {

enum class Status { kBasic, kLower, kUpper };

constexpr double kPivotTol = 1e-10;
constexpr int kStallLimit = 50;

struct Simplex {
  Eigen::MatrixXd A;  // rows x (cols + rows), artificial columns appended
  Eigen::VectorXd b;
  Eigen::VectorXd lower, upper, x;
  std::vector<Status> status;
  std::vector<Eigen::Index> basis;  // basis[r] = variable basic in row r
  std::vector<bool> frozen;         // may never enter
  Eigen::MatrixXd binv;
  Eigen::Index structural = 0;  // artificial columns start here
  double tol;
  int iterations = 0;
  int max_iterations;

  Eigen::Index rows() const { return A.rows(); }
  Eigen::Index vars() const { return A.cols(); }

  void refactor() {
    Eigen::MatrixXd B(rows(), rows());
    for (Eigen::Index r = 0; r < rows(); ++r) B.col(r) = A.col(basis[r]);
    binv = B.partialPivLu().inverse();
    Eigen::VectorXd rhs = b;
    for (Eigen::Index j = 0; j < vars(); ++j) {
      if (status[j] != Status::kBasic && x(j) != 0.0) rhs -= A.col(j) * x(j);
    }
    const Eigen::VectorXd xb = binv * rhs;
    for (Eigen::Index r = 0; r < rows(); ++r) x(basis[r]) = xb(r);
  }

  // Maximizes cost'x from the current basis. Returns false on iteration cap.
  bool optimize(const Eigen::VectorXd& cost) {
    const double dtol = tol * std::max(1.0, cost.cwiseAbs().maxCoeff());
    int stall = 0;
    while (true) {
      if (iterations >= max_iterations) return false;
      ++iterations;
      refactor();
      Eigen::VectorXd cb(rows());
      for (Eigen::Index r = 0; r < rows(); ++r) cb(r) = cost(basis[r]);
      const Eigen::VectorXd y = binv.transpose() * cb;
      const Eigen::VectorXd d = cost - A.transpose() * y;

      const bool bland = stall > kStallLimit;
      Eigen::Index enter = -1;
      double best = 0.0;
      for (Eigen::Index j = 0; j < vars(); ++j) {
        if (status[j] == Status::kBasic || frozen[j]) continue;
        if (upper(j) - lower(j) <= 0.0) continue;
        double gain = 0.0;
        if (status[j] == Status::kLower && d(j) > dtol) gain = d(j);
        if (status[j] == Status::kUpper && d(j) < -dtol) gain = -d(j);
        if (gain <= 0.0) continue;
        if (bland) {
          enter = j;
          break;
        }
        if (gain > best) {
          best = gain;
          enter = j;
        }
      }
      if (enter < 0) return true;

      const double sigma = status[enter] == Status::kLower ? 1.0 : -1.0;
      const Eigen::VectorXd alpha = binv * A.col(enter);
      const double flip = upper(enter) - lower(enter);
      double step = std::numeric_limits<double>::infinity();
      Eigen::Index leave_row = -1;
      Status leave_to = Status::kLower;
      double leave_rate = 0.0;
      for (Eigen::Index r = 0; r < rows(); ++r) {
        const double rate = -sigma * alpha(r);
        const Eigen::Index v = basis[r];
        double limit = 0.0;
        Status to = Status::kLower;
        if (rate < -kPivotTol) {
          limit = (x(v) - lower(v)) / -rate;
        } else if (rate > kPivotTol && std::isfinite(upper(v))) {
          limit = (upper(v) - x(v)) / rate;
          to = Status::kUpper;
        } else {
          continue;
        }
        limit = std::max(limit, 0.0);
        bool take = limit < step - 1e-15;
        if (!take && leave_row >= 0 && limit <= step + 1e-15) {
          take = bland ? v < basis[leave_row] : std::abs(rate) > std::abs(leave_rate);
        }
        if (take) {
          step = limit;
          leave_row = r;
          leave_to = to;
          leave_rate = rate;
        }
      }
      if (leave_row >= 0 && flip <= step) leave_row = -1;
      if (leave_row < 0) step = flip;
      if (!std::isfinite(step)) throw InfeasibleError("box LP is unbounded");
      stall = step < 1e-12 ? stall + 1 : 0;

      if (leave_row < 0) {
        // Bound flip: the entering variable crosses its own box.
        status[enter] = sigma > 0 ? Status::kUpper : Status::kLower;
        x(enter) = sigma > 0 ? upper(enter) : lower(enter);
        continue;
      }
      const Eigen::Index out = basis[leave_row];
      status[out] = leave_to;
      x(out) = leave_to == Status::kLower ? lower(out) : upper(out);
      if (out >= structural) frozen[static_cast<std::size_t>(out)] = true;
      x(enter) += sigma * step;
      status[enter] = Status::kBasic;
      basis[leave_row] = enter;
    }
  }
};

}  // namespace

BoxLpResult solve_box_lp(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                         const Eigen::VectorXd& c, const Eigen::VectorXd& lower,
                         const Eigen::VectorXd& upper, const BoxLpOptions& opts) {
  const Eigen::Index m = A.rows();
  const Eigen::Index n = A.cols();
  if (b.size() != m || c.size() != n || lower.size() != n || upper.size() != n) {
    throw std::invalid_argument("solve_box_lp: dimension mismatch");
  }
  if (!lower.allFinite() || !upper.allFinite() || (upper - lower).minCoeff() < 0.0) {
    throw std::invalid_argument("solve_box_lp: bounds must be finite with lower <= upper");
  }

  Simplex s;
  s.tol = opts.tolerance;
  s.structural = n;
  s.max_iterations = opts.max_iterations > 0 ? opts.max_iterations
                                             : static_cast<int>(50 * (m + n) + 1000);
  s.A.resize(m, n + m);
  s.A.leftCols(n) = A;
  s.b = b;
  s.lower.resize(n + m);
  s.upper.resize(n + m);
  s.lower.head(n) = lower;
  s.upper.head(n) = upper;
  s.lower.tail(m).setZero();
  s.upper.tail(m).setConstant(std::numeric_limits<double>::infinity());
  s.x = Eigen::VectorXd::Zero(n + m);
  s.x.head(n) = lower;
  s.status.assign(static_cast<std::size_t>(n + m), Status::kLower);
  s.frozen.assign(static_cast<std::size_t>(n + m), false);

  // Phase 1: artificial columns absorb the residual of the all-lower start.
  const Eigen::VectorXd residual = b - A * lower;
  s.A.rightCols(m).setZero();
  for (Eigen::Index r = 0; r < m; ++r) {
    s.A(r, n + r) = residual(r) >= 0 ? 1.0 : -1.0;
    s.basis.push_back(n + r);
    s.status[static_cast<std::size_t>(n + r)] = Status::kBasic;
  }
  Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(n + m);
  phase1.tail(m).setConstant(-1.0);
  if (!s.optimize(phase1)) {
    throw ConvergenceError("solve_box_lp: phase 1 hit the iteration cap", -s.x.tail(m).sum());
  }
  const double infeasibility = s.x.tail(m).sum();
  if (infeasibility > 1e-7 * std::max(1.0, residual.cwiseAbs().maxCoeff())) {
    throw InfeasibleError("box LP is infeasible");
  }

  for (Eigen::Index j = n; j < n + m; ++j) {
    s.upper(j) = 0.0;
    s.frozen[static_cast<std::size_t>(j)] = true;
  }
  // Pivot remaining artificials out where a structural column allows it.
  for (Eigen::Index r = 0; r < m; ++r) {
    if (s.basis[r] < n) continue;
    s.refactor();
    const Eigen::RowVectorXd row = s.binv.row(r) * s.A.leftCols(n);
    Eigen::Index pick = -1;
    double best = 1e-9;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (s.status[j] == Status::kBasic) continue;
      if (std::abs(row(j)) > best) {
        best = std::abs(row(j));
        pick = j;
      }
    }
    if (pick < 0) continue;  // redundant row; artificial stays basic at zero
    const Eigen::Index out = s.basis[r];
    s.status[out] = Status::kLower;
    s.x(out) = 0.0;
    s.status[pick] = Status::kBasic;
    s.basis[r] = pick;
  }

  Eigen::VectorXd phase2 = Eigen::VectorXd::Zero(n + m);
  phase2.head(n) = c;
  if (!s.optimize(phase2)) {
    throw ConvergenceError("solve_box_lp: phase 2 hit the iteration cap", c.dot(s.x.head(n)));
  }
  s.refactor();

  BoxLpResult out;
  out.x = s.x.head(n).cwiseMax(lower).cwiseMin(upper);
  Eigen::VectorXd cb(m);
  for (Eigen::Index r = 0; r < m; ++r) cb(r) = phase2(s.basis[r]);
  out.duals = s.binv.transpose() * cb;
  out.objective = c.dot(out.x);
  out.iterations = s.iterations;
  return out;
}

}  // namespace multienv
