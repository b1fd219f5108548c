#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace kite {

/// min 1/2 x'Px + q'x  s.t.  Gx <= h, with P symmetric positive definite.
struct QpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;

  Eigen::Index n() const { return q.size(); }
  Eigen::Index m() const { return h.size(); }
  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(P * x) + q.dot(x); }

  /// Throws DimensionMismatch, or InvalidArgument if P is not symmetric.
  void validate() const;
};

enum class QpStatus { kOptimal, kMaxIter, kNumericalFailure, kInfeasible };

const char* to_string(QpStatus status);

struct KktResiduals {
  double stationarity = 0.0;      ///< ||Px + q + G'lambda||_inf
  double primal_violation = 0.0;  ///< max(0, max_i (Gx - h)_i)
  double complementarity = 0.0;   ///< max_i |lambda_i (Gx - h)_i|
};

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;
  QpStatus status = QpStatus::kNumericalFailure;
  int iterations = 0;
  KktResiduals kkt;
  std::vector<int> active;             ///< final working set, ascending
  std::vector<double> objective_trace; ///< phase-2 objective after each iteration
  double objective = 0.0;
};

struct QpWarmStart {
  Eigen::VectorXd x;
  std::vector<int> active;
};

struct QpSettings {
  int max_iterations = 0;          ///< 0 means 10 (n + m)
  double feasibility_tol = 1e-9;
  double multiplier_tol = 1e-10;
};

/// Throws DimensionMismatch.
KktResiduals kkt_residuals(const QpProblem& p, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& lambda);

/// Primal active-set method on a range-space (Cholesky of P) KKT core.
///
/// The working set only grows by blocking constraints and shrinks by the
/// most negative multiplier (lowest index on ties), so objective values are
/// nonincreasing along phase 2. Without a feasible warm start, a phase-1
/// problem with one elastic variable finds a starting point.
class QpSolver {
 public:
  explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

  QpSolution solve(const QpProblem& problem, const QpWarmStart* warm = nullptr) const;

 private:
  QpSettings settings_;
};

/// Plain-text dump:
///   qp <n> <m>
///   P            followed by n rows of n numbers
///   q            followed by n numbers on one line
///   G            followed by m rows of n numbers
///   h            followed by m numbers on one line
/// Numbers are written with 17 significant digits.
void write_qp(std::ostream& out, const QpProblem& problem);
QpProblem read_qp(std::istream& in);

}  // namespace kite
