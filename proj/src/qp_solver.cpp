#include "kite/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "kite/error.hpp"

namespace kite {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ActiveSetResult {
  VectorXd x;
  VectorXd lambda_w;  // multipliers of `working`, same order
  std::vector<int> working;
  QpStatus status = QpStatus::kMaxIter;
  int iterations = 0;
};

// Runs the primal active-set iteration from a feasible x. Keeps
// V = L^{-1} G_W' and M = V'V for the working set W.
class ActiveSetCore {
 public:
  ActiveSetCore(const MatrixXd& P, const VectorXd& q, const MatrixXd& G,
                const VectorXd& h, double multiplier_tol)
      : P_(P), q_(q), G_(G), h_(h), multiplier_tol_(multiplier_tol), llt_(P) {
    const Index cap = std::min<Index>(P.rows(), G.rows());
    V_.resize(P.rows(), std::max<Index>(cap, 1));
    M_.resize(V_.cols(), V_.cols());
    in_working_.assign(static_cast<std::size_t>(G.rows()), false);
  }

  bool factorized() const { return llt_.info() == Eigen::Success; }

  ActiveSetResult run(VectorXd x, const std::vector<int>& initial, int max_iter,
                      std::vector<double>* trace) {
    ActiveSetResult res;
    for (int i : initial) {
      if (i >= 0 && i < G_.rows() && !in_working_[static_cast<std::size_t>(i)]) {
        if (std::abs(G_.row(i).dot(x) - h_(i)) <= 1e-9 * (1.0 + std::abs(h_(i)))) {
          add(i);
        }
      }
    }
    const auto L = llt_.matrixL();
    const Index n = x.size();
    VectorXd lambda;
    // After an unblocked full step x minimizes over the working set; with an
    // ill-conditioned P the recomputed step is rounding noise, not zero.
    bool at_minimizer = false;
    for (int it = 0; it < max_iter; ++it) {
      res.iterations = it + 1;
      const VectorXd g = P_ * x + q_;
      VectorXd z = L.solve(g);
      const Index w = static_cast<Index>(working_.size());
      lambda.resize(w);
      if (w > 0) {
        const VectorXd rhs = -V_.leftCols(w).transpose() * z;
        Eigen::LLT<MatrixXd> mchol(M_.topLeftCorner(w, w));
        if (mchol.info() != Eigen::Success) {
          res.status = QpStatus::kNumericalFailure;
          break;
        }
        lambda = mchol.solve(rhs);
        z += V_.leftCols(w) * lambda;
      }
      const VectorXd p = -(L.transpose().solve(z));
      if (!p.allFinite() || !lambda.allFinite()) {
        res.status = QpStatus::kNumericalFailure;
        break;
      }
      const double xscale = 1.0 + x.lpNorm<Eigen::Infinity>();
      if (at_minimizer || p.lpNorm<Eigen::Infinity>() <= 1e-13 * xscale) {
        at_minimizer = false;
        // Stationary on the working set: check multiplier signs.
        int drop = -1;
        double most_negative = -multiplier_tol_;
        int drop_constraint = std::numeric_limits<int>::max();
        for (Index k = 0; k < w; ++k) {
          const int c = working_[static_cast<std::size_t>(k)];
          if (lambda(k) < most_negative ||
              (lambda(k) == most_negative && drop >= 0 && c < drop_constraint)) {
            most_negative = lambda(k);
            drop = static_cast<int>(k);
            drop_constraint = c;
          }
        }
        if (drop < 0) {
          res.status = QpStatus::kOptimal;
          break;
        }
        remove(drop);
        if (trace) trace->push_back(0.5 * x.dot(P_ * x) + q_.dot(x));
        continue;
      }

      double alpha = 1.0;
      int blocking = -1;
      const double pnorm = p.norm();
      for (Index i = 0; i < G_.rows(); ++i) {
        if (in_working_[static_cast<std::size_t>(i)]) continue;
        const double gp = G_.row(i).dot(p);
        if (gp <= 1e-12 * G_.row(i).norm() * pnorm) continue;
        const double slack = std::max(0.0, h_(i) - G_.row(i).dot(x));
        const double ratio = slack / gp;
        if (ratio < alpha) {
          alpha = ratio;
          blocking = static_cast<int>(i);
        }
      }
      x += alpha * p;
      at_minimizer = blocking < 0;
      if (blocking >= 0) {
        if (static_cast<Index>(working_.size()) >= std::min<Index>(n, V_.cols())) {
          res.status = QpStatus::kNumericalFailure;
          break;
        }
        add(blocking);
      }
      if (trace) trace->push_back(0.5 * x.dot(P_ * x) + q_.dot(x));
    }
    res.x = std::move(x);
    res.lambda_w = lambda;
    res.working = working_;
    return res;
  }

 private:
  void add(int i) {
    const Index w = static_cast<Index>(working_.size());
    const VectorXd v = llt_.matrixL().solve(G_.row(i).transpose());
    V_.col(w) = v;
    if (w > 0) {
      const VectorXd cross = V_.leftCols(w).transpose() * v;
      M_.block(0, w, w, 1) = cross;
      M_.block(w, 0, 1, w) = cross.transpose();
    }
    M_(w, w) = v.squaredNorm();
    working_.push_back(i);
    in_working_[static_cast<std::size_t>(i)] = true;
  }

  void remove(int k) {
    const Index w = static_cast<Index>(working_.size());
    const Index tail = w - k - 1;
    if (tail > 0) {
      V_.middleCols(k, tail) = V_.middleCols(k + 1, tail).eval();
      M_.block(k, 0, tail, w) = M_.block(k + 1, 0, tail, w).eval();
      M_.block(0, k, w, tail) = M_.block(0, k + 1, w, tail).eval();
    }
    in_working_[static_cast<std::size_t>(working_[static_cast<std::size_t>(k)])] = false;
    working_.erase(working_.begin() + k);
  }

  const MatrixXd& P_;
  const VectorXd& q_;
  const MatrixXd& G_;
  const VectorXd& h_;
  double multiplier_tol_;
  Eigen::LLT<MatrixXd> llt_;
  MatrixXd V_;
  MatrixXd M_;
  std::vector<int> working_;
  std::vector<bool> in_working_;
};

double max_violation(const QpProblem& p, const VectorXd& x) {
  if (p.m() == 0) return 0.0;
  return std::max(0.0, (p.G * x - p.h).maxCoeff());
}

}  // namespace

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::kOptimal: return "optimal";
    case QpStatus::kMaxIter: return "max_iter";
    case QpStatus::kNumericalFailure: return "numerical_failure";
    case QpStatus::kInfeasible: return "infeasible";
  }
  return "unknown";
}

void QpProblem::validate() const {
  const Index n = q.size();
  if (P.rows() != n || P.cols() != n || G.cols() != n || G.rows() != h.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "QP matrices have inconsistent sizes");
  }
  const double asym = n > 0 ? (P - P.transpose()).cwiseAbs().maxCoeff() : 0.0;
  if (asym > 1e-12 * std::max(1.0, P.cwiseAbs().maxCoeff())) {
    throw Error(ErrorKind::kInvalidArgument, "QP Hessian is not symmetric");
  }
}

KktResiduals kkt_residuals(const QpProblem& p, const VectorXd& x, const VectorXd& lambda) {
  if (x.size() != p.n() || lambda.size() != p.m() || p.G.rows() != p.m() ||
      p.G.cols() != p.n() || p.P.rows() != p.n()) {
    throw Error(ErrorKind::kDimensionMismatch, "KKT residual arguments have wrong sizes");
  }
  KktResiduals r;
  VectorXd stat = p.P * x + p.q;
  if (p.m() > 0) stat += p.G.transpose() * lambda;
  r.stationarity = p.n() > 0 ? stat.lpNorm<Eigen::Infinity>() : 0.0;
  if (p.m() > 0) {
    const VectorXd slack = p.G * x - p.h;
    r.primal_violation = std::max(0.0, slack.maxCoeff());
    r.complementarity = lambda.cwiseProduct(slack).lpNorm<Eigen::Infinity>();
  }
  return r;
}

QpSolution QpSolver::solve(const QpProblem& problem, const QpWarmStart* warm) const {
  problem.validate();
  const Index n = problem.n();
  const Index m = problem.m();
  const int max_iter = settings_.max_iterations > 0
                           ? settings_.max_iterations
                           : static_cast<int>(10 * (n + m));
  QpSolution sol;
  sol.lambda = VectorXd::Zero(m);

  VectorXd x0 = VectorXd::Zero(n);
  std::vector<int> initial;
  if (warm && warm->x.size() == n) {
    x0 = warm->x;
    initial = warm->active;
  }

  int phase1_iterations = 0;
  if (max_violation(problem, x0) > settings_.feasibility_tol) {
    initial.clear();
    // Elastic phase 1: min rho/2 (|x - x0|^2 + t^2) + t  s.t. Gx - t <= h', t >= 0.
    // h' is h pulled in slightly so that rounding in the phase-1 point does
    // not leave it just outside the original set.
    bool found = false;
    for (double rho = 1e-6; rho >= 1e-14 && !found; rho *= 1e-4) {
      MatrixXd P1 = rho * MatrixXd::Identity(n + 1, n + 1);
      VectorXd q1(n + 1);
      q1.head(n) = -rho * x0;
      q1(n) = 1.0;
      MatrixXd G1 = MatrixXd::Zero(m + 1, n + 1);
      G1.topLeftCorner(m, n) = problem.G;
      G1.block(0, n, m, 1).setConstant(-1.0);
      G1(m, n) = -1.0;
      VectorXd h1(m + 1);
      h1.head(m) = problem.h.array() - 1e-7 * (1.0 + problem.h.array().abs());
      h1(m) = 0.0;
      VectorXd z(n + 1);
      z.head(n) = x0;
      z(n) = max_violation(problem, x0) + 1.0;
      ActiveSetCore core(P1, q1, G1, h1, settings_.multiplier_tol);
      auto r = core.run(z, {}, max_iter, nullptr);
      phase1_iterations += r.iterations;
      if (r.status == QpStatus::kOptimal &&
          max_violation(problem, r.x.head(n)) <= settings_.feasibility_tol) {
        x0 = r.x.head(n);
        found = true;
      }
    }
    if (!found) {
      sol.x = x0;
      sol.status = QpStatus::kInfeasible;
      sol.iterations = phase1_iterations;
      sol.objective = problem.objective(x0);
      sol.kkt = kkt_residuals(problem, sol.x, sol.lambda);
      return sol;
    }
  }

  ActiveSetCore core(problem.P, problem.q, problem.G, problem.h, settings_.multiplier_tol);
  if (!core.factorized()) {
    sol.x = x0;
    sol.status = QpStatus::kNumericalFailure;
    sol.kkt = kkt_residuals(problem, sol.x, sol.lambda);
    return sol;
  }
  sol.objective_trace.push_back(problem.objective(x0));
  auto r = core.run(x0, initial, std::max(1, max_iter - phase1_iterations),
                    &sol.objective_trace);
  sol.x = std::move(r.x);
  sol.status = r.status;
  sol.iterations = phase1_iterations + r.iterations;
  for (std::size_t k = 0; k < r.working.size(); ++k) {
    if (static_cast<Index>(k) < r.lambda_w.size()) {
      sol.lambda(r.working[k]) = r.lambda_w(static_cast<Index>(k));
    }
  }
  sol.active = r.working;
  std::sort(sol.active.begin(), sol.active.end());
  sol.objective = problem.objective(sol.x);
  sol.kkt = kkt_residuals(problem, sol.x, sol.lambda);
  return sol;
}

void write_qp(std::ostream& out, const QpProblem& problem) {
  problem.validate();
  const auto old_precision = out.precision(17);
  out << "qp " << problem.n() << ' ' << problem.m() << '\n';
  auto row = [&out](const auto& v) {
    for (Index j = 0; j < v.size(); ++j) out << (j ? " " : "") << v(j);
    out << '\n';
  };
  out << "P\n";
  for (Index i = 0; i < problem.n(); ++i) row(problem.P.row(i));
  out << "q\n";
  row(problem.q);
  out << "G\n";
  for (Index i = 0; i < problem.m(); ++i) row(problem.G.row(i));
  out << "h\n";
  row(problem.h);
  out.precision(old_precision);
}

QpProblem read_qp(std::istream& in) {
  auto expect = [&in](const std::string& tag) {
    std::string word;
    if (!(in >> word) || word != tag) {
      throw Error(ErrorKind::kSchemaError, "QP dump: expected '" + tag + "'");
    }
  };
  auto number = [&in]() {
    std::string word;
    if (!(in >> word)) throw Error(ErrorKind::kSchemaError, "QP dump: truncated");
    try {
      return std::stod(word);
    } catch (const std::exception&) {
      throw Error(ErrorKind::kSchemaError, "QP dump: bad number '" + word + "'");
    }
  };
  expect("qp");
  Index n = 0;
  Index m = 0;
  if (!(in >> n >> m) || n < 0 || m < 0) {
    throw Error(ErrorKind::kSchemaError, "QP dump: bad dimensions");
  }
  QpProblem p;
  p.P.resize(n, n);
  p.q.resize(n);
  p.G.resize(m, n);
  p.h.resize(m);
  expect("P");
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) p.P(i, j) = number();
  expect("q");
  for (Index i = 0; i < n; ++i) p.q(i) = number();
  expect("G");
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) p.G(i, j) = number();
  expect("h");
  for (Index i = 0; i < m; ++i) p.h(i) = number();
  return p;
}

}  // namespace kite
