#pragma once

// Reference QP instances and an independent dual solver shared by the unit
// tests and the acceptance run.

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "kite/qp_solver.hpp"

namespace kite::testing {

inline QpProblem random_qp(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> N01(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  QpProblem p;
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = N01(rng);
  p.P = A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
  p.P = 0.5 * (p.P + p.P.transpose()).eval();
  p.q = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) p.q(i) = 3.0 * N01(rng);
  p.G = Eigen::MatrixXd(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) p.G(i, j) = N01(rng);
  Eigen::VectorXd interior(n);
  for (int i = 0; i < n; ++i) interior(i) = N01(rng);
  p.h = p.G * interior;
  for (int i = 0; i < m; ++i) p.h(i) += 0.05 + U(rng);
  return p;
}

// Accelerated projected gradient on the dual (lambda >= 0 is a box, so the
// projection is a clamp). Every few hundred iterations the support of lambda
// is polished by solving the dual equations on it; a polished point with
// lambda >= 0 and a feasible primal satisfies KKT and is returned; nullopt if none is found.
inline std::optional<double> dual_projected_gradient(const QpProblem& p) {
  const Eigen::LLT<Eigen::MatrixXd> llt(p.P);
  if (p.m() == 0) return -0.5 * p.q.dot(llt.solve(p.q));
  const Eigen::MatrixXd D = p.G * llt.solve(p.G.transpose());  // dual Hessian
  const Eigen::VectorXd Piq = llt.solve(p.q);
  const Eigen::VectorXd c = p.G * Piq + p.h;
  const double step = 1.0 / Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(D).eigenvalues().maxCoeff();
  auto dual = [&](const Eigen::VectorXd& l) {
    return -0.5 * l.dot(D * l) - c.dot(l) - 0.5 * p.q.dot(Piq);
  };
  auto primal = [&](const Eigen::VectorXd& l) { return Eigen::VectorXd(-llt.solve(p.q + p.G.transpose() * l)); };
  auto certified = [&](const Eigen::VectorXd& l) {
    const Eigen::VectorXd x = primal(l);
    return l.minCoeff() >= 0.0 && (p.G * x - p.h).maxCoeff() <= 1e-10 &&
           std::abs(p.objective(x) - dual(l)) <= 1e-10 * (1.0 + std::abs(dual(l)));
  };
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(p.m());
  Eigen::VectorXd y = lam;
  double t = 1.0;
  for (int it = 0; it < 1000000; ++it) {
    if (it % 200 == 0) {
      if (certified(lam)) return dual(lam);
      std::vector<Eigen::Index> S;
      for (Eigen::Index i = 0; i < p.m(); ++i)
        if (lam(i) > 0.0) S.push_back(i);
      if (!S.empty()) {
        Eigen::MatrixXd Dss(S.size(), S.size());
        Eigen::VectorXd cs(S.size());
        for (std::size_t a = 0; a < S.size(); ++a) {
          cs(a) = c(S[a]);
          for (std::size_t b = 0; b < S.size(); ++b) Dss(a, b) = D(S[a], S[b]);
        }
        const Eigen::VectorXd ls = Dss.completeOrthogonalDecomposition().solve(-cs);
        Eigen::VectorXd polished = Eigen::VectorXd::Zero(p.m());
        for (std::size_t a = 0; a < S.size(); ++a) polished(S[a]) = ls(a);
        if (certified(polished)) return dual(polished);
      }
    }
    const Eigen::VectorXd next = (y - step * (D * y + c)).cwiseMax(0.0);
    const double dn = dual(next), dl = dual(lam);
    if (dn < dl - 1e-14 * (1.0 + std::abs(dl))) {  // adaptive restart
      y = lam;
      t = 1.0;
      continue;
    }
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / tn) * (next - lam);
    lam = next;
    t = tn;
  }
  return std::nullopt;
}

}  // namespace kite::testing
