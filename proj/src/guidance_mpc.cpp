#include "kite/guidance_mpc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kite/error.hpp"

namespace kite {
namespace {

using Eigen::Index;
using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

bool positive_definite(const Eigen::Matrix2d& m) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
  Eigen::LLT<Eigen::Matrix2d> llt(m);
  return llt.info() == Eigen::Success;
}

double min_eig(const Eigen::Matrix2d& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(m).eigenvalues().minCoeff();
}

double max_eig(const Eigen::Matrix2d& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(m).eigenvalues().maxCoeff();
}

}  // namespace

void MpcConfig::validate() const {
  if (horizon < 1) throw Error(ErrorKind::kInvalidArgument, "horizon must be >= 1");
  if (!positive_definite(Q) || !positive_definite(Q_H) || !positive_definite(S) ||
      !positive_definite(S_H) || !(R > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "MPC weights must be positive definite");
  }
  if (min_eig(S) < 1e3 * max_eig(Q) || min_eig(S_H) < 1e3 * max_eig(Q_H)) {
    throw Error(ErrorKind::kInvalidArgument,
                "slack weights must dominate state weights by 1e3");
  }
  if (!(l_m > 0.0 && l_r > 0.0 && T > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "l_m, l_r and T must be positive");
  }
}

std::vector<Vector3d> CondensedQp::predicted_states(const VectorXd& x) const {
  std::vector<Vector3d> out;
  out.reserve(Phi.size());
  const VectorXd du = x.head(horizon);
  for (std::size_t i = 0; i < Phi.size(); ++i) out.push_back(Phi[i] * x0 + Gamma[i] * du);
  return out;
}

LineAngles predict_delayed_position(LineAngles xi, double gamma, const DelayBuffer& buf,
                                    const SteeringParams& sp, const KinematicParams& kp) {
  if (buf.size() != sp.delay_samples()) {
    throw Error(ErrorKind::kBufferLengthMismatch,
                "delay buffer length does not match the delay");
  }
  for (std::size_t i = 0; i < buf.size(); ++i) {
    xi = discrete_step(xi, gamma, kp);
    gamma += sp.K * sp.T * buf[i];
  }
  return xi;
}

AugmentedLtv build_ltv(const ReferencePath& path, std::size_t j, int horizon,
                       const KinematicParams& params) {
  AugmentedLtv ltv;
  ltv.A.reserve(static_cast<std::size_t>(horizon));
  ltv.B.reserve(static_cast<std::size_t>(horizon));
  for (int i = 0; i < horizon; ++i) {
    const long long idx = static_cast<long long>(j) + i;
    const Linearization lin = linearize(path.xi(idx), path.gamma(idx), params);
    Matrix3d a = Matrix3d::Zero();
    a.topLeftCorner<2, 2>() = lin.A;
    a.block<2, 1>(0, 2) = lin.B;
    a(2, 2) = 1.0;
    Vector3d b;
    b << lin.B, 1.0;
    ltv.A.push_back(a);
    ltv.B.push_back(b);
  }
  return ltv;
}

CondensedQp build_qp(const DeviationState& dev0, const AugmentedLtv& ltv,
                     const ReferencePath& path, std::size_t j, const MpcConfig& cfg) {
  const int H = cfg.horizon;
  if (static_cast<int>(ltv.A.size()) != H || static_cast<int>(ltv.B.size()) != H) {
    throw Error(ErrorKind::kDimensionMismatch, "LTV sequence length differs from horizon");
  }
  const Index nu = H;
  const Index ne = 2 * (H + 1);
  const Index n = nu + ne;

  CondensedQp cqp;
  cqp.horizon = H;
  cqp.x0 << dev0.chi, dev0.u_prev;
  cqp.Phi.assign(static_cast<std::size_t>(H + 1), Matrix3d::Identity());
  cqp.Gamma.assign(static_cast<std::size_t>(H + 1), MatrixXd::Zero(3, nu));
  for (int i = 0; i < H; ++i) {
    const auto k = static_cast<std::size_t>(i);
    cqp.Phi[k + 1] = ltv.A[k] * cqp.Phi[k];
    cqp.Gamma[k + 1] = ltv.A[k] * cqp.Gamma[k];
    cqp.Gamma[k + 1].col(i) += ltv.B[k];
  }

  Matrix3d qhat = Matrix3d::Zero();
  qhat.topLeftCorner<2, 2>() = cfg.Q;
  qhat(2, 2) = cfg.R;
  Matrix3d qhat_h = Matrix3d::Zero();
  qhat_h.topLeftCorner<2, 2>() = cfg.Q_H;
  qhat_h(2, 2) = cfg.R;

  QpProblem& qp = cqp.qp;
  qp.P = MatrixXd::Zero(n, n);
  qp.q = VectorXd::Zero(n);
  cqp.constant_cost = 0.0;
  for (int i = 0; i <= H; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Matrix3d& w = i == H ? qhat_h : qhat;
    const Vector3d free = cqp.Phi[k] * cqp.x0;
    cqp.constant_cost += free.dot(w * free);
    if (i == 0) continue;
    const MatrixXd wg = w * cqp.Gamma[k];
    qp.P.topLeftCorner(nu, nu).noalias() += 2.0 * cqp.Gamma[k].transpose() * wg;
    qp.q.head(nu).noalias() += 2.0 * wg.transpose() * free;
  }
  for (int i = 0; i <= H; ++i) {
    const Index off = nu + 2 * i;
    qp.P.block<2, 2>(off, off) = 2.0 * (i == H ? cfg.S_H : cfg.S);
  }
  // Exact symmetry for the solver's check.
  qp.P = 0.5 * (qp.P + qp.P.transpose()).eval();

  const Index m = 4 * H + 6 * (H + 1);
  qp.G = MatrixXd::Zero(m, n);
  qp.h = VectorXd::Zero(m);
  Index row = 0;
  const double lrt = cfg.l_r * cfg.T;
  for (int i = 0; i < H; ++i) {
    const auto k = static_cast<std::size_t>(i + 1);
    const long long idx = static_cast<long long>(j) + i;
    const double gref = path.gamma(idx);
    const double u_hi = cfg.l_m - gref;
    const double u_lo = -cfg.l_m - gref;
    // u_i is the third component of chi_hat_{i+1}.
    const double u_free = cqp.Phi[k].row(2).dot(cqp.x0);
    qp.G.block(row, 0, 1, nu) = cqp.Gamma[k].row(2);
    qp.h(row++) = u_hi - u_free;
    qp.G.block(row, 0, 1, nu) = -cqp.Gamma[k].row(2);
    qp.h(row++) = -u_lo + u_free;
  }
  for (int i = 0; i < H; ++i) {
    const long long idx = static_cast<long long>(j) + i;
    const double dref = path.gamma(idx) - path.gamma(idx - 1);
    qp.G(row, i) = 1.0;
    qp.h(row++) = lrt - dref;
    qp.G(row, i) = -1.0;
    qp.h(row++) = lrt + dref;
  }
  const double lo[2] = {cfg.window.theta_min, cfg.window.phi_min};
  const double hi[2] = {cfg.window.theta_max, cfg.window.phi_max};
  for (int i = 0; i <= H; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const LineAngles& ref = path.xi(static_cast<long long>(j) + i);
    const double refc[2] = {ref.theta, ref.phi};
    for (int c = 0; c < 2; ++c) {
      const double chi_free = cqp.Phi[k].row(c).dot(cqp.x0);
      const double chi_lo = lo[c] - refc[c];
      const double chi_hi = hi[c] - refc[c];
      const Index eps = nu + 2 * i + c;
      qp.G.block(row, 0, 1, nu) = -cqp.Gamma[k].row(c);
      qp.G(row, eps) = -1.0;
      qp.h(row++) = chi_free - chi_lo;
      qp.G.block(row, 0, 1, nu) = cqp.Gamma[k].row(c);
      qp.G(row, eps) = -1.0;
      qp.h(row++) = chi_hi - chi_free;
      qp.G(row, eps) = -1.0;
      qp.h(row++) = 0.0;
    }
  }
  return cqp;
}

GuidanceController::GuidanceController(MpcConfig cfg, QpSettings solver_settings)
    : cfg_(std::move(cfg)), solver_(solver_settings) {
  cfg_.validate();
}

void GuidanceController::reset(double previous_command) {
  previous_command_ = std::clamp(previous_command, -cfg_.l_m, cfg_.l_m);
  anchor_.reset();
  previous_plan_.clear();
  consecutive_failures_ = 0;
}

void GuidanceController::reanchor(const ReferencePath& path, LineAngles xi, double heading) {
  std::optional<std::size_t> best;
  double best_d2 = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (std::abs(path.headings()[i] - heading) >= std::numbers::pi / 2.0) continue;
    const double dt = path.positions()[i].theta - xi.theta;
    const double dp = path.positions()[i].phi - xi.phi;
    const double d2 = dt * dt + dp * dp;
    if (!best || d2 < best_d2) {
      best = i;
      best_d2 = d2;
    }
  }
  anchor_ = best ? *best : nearest_reference_index(path, xi);
  previous_plan_.clear();
}

VectorXd GuidanceController::feasible_start(const CondensedQp& cqp, const ReferencePath& path,
                                            std::size_t j) const {
  const int H = cfg_.horizon;
  const double lrt = cfg_.l_r * cfg_.T;
  // Absolute command sequence: shifted previous plan if it still satisfies
  // the current limits, otherwise hold the previous command.
  std::vector<double> plan(static_cast<std::size_t>(H), previous_command_);
  if (previous_plan_.size() == static_cast<std::size_t>(H)) {
    std::vector<double> shifted(previous_plan_.begin() + 1, previous_plan_.end());
    shifted.push_back(previous_plan_.back());
    bool ok = true;
    double last = previous_command_;
    for (double c : shifted) {
      if (std::abs(c - last) > lrt || std::abs(c) > cfg_.l_m) {
        ok = false;
        break;
      }
      last = c;
    }
    if (ok) plan = shifted;
  }
  VectorXd x = VectorXd::Zero(cqp.qp.n());
  double u_prev = cqp.x0(2);
  for (int i = 0; i < H; ++i) {
    const double u = plan[static_cast<std::size_t>(i)] -
                     path.gamma(static_cast<long long>(j) + i);
    x(i) = u - u_prev;
    u_prev = u;
  }
  // Slacks just large enough for the soft window bounds.
  const auto states = cqp.predicted_states(x);
  const double lo[2] = {cfg_.window.theta_min, cfg_.window.phi_min};
  const double hi[2] = {cfg_.window.theta_max, cfg_.window.phi_max};
  for (int i = 0; i <= H; ++i) {
    const LineAngles& ref = path.xi(static_cast<long long>(j) + i);
    const double refc[2] = {ref.theta, ref.phi};
    for (int c = 0; c < 2; ++c) {
      const double chi = states[static_cast<std::size_t>(i)](c);
      const double need =
          std::max({0.0, (lo[c] - refc[c]) - chi, chi - (hi[c] - refc[c])});
      x(H + 2 * i + c) = need > 0.0 ? need * (1.0 + 1e-9) + 1e-12 : 0.0;
    }
  }
  return x;
}

GuidanceOutput GuidanceController::step(LineAngles xi_td, const ReferencePath& path,
                                        const KinematicParams& params) {
  GuidanceOutput out;
  out.xi_td = xi_td;
  std::size_t j = 0;
  if (anchor_ && *anchor_ < path.size()) {
    const std::size_t window = std::max<std::size_t>(path.size() / 8, 1);
    j = nearest_reference_index(path, xi_td, *anchor_, window, window);
  } else {
    j = nearest_reference_index(path, xi_td);
  }
  anchor_ = j;
  out.ref_index = j;

  const auto jj = static_cast<long long>(j);
  DeviationState dev;
  dev.chi << xi_td.theta - path.xi(jj).theta, xi_td.phi - path.xi(jj).phi;
  dev.u_prev = previous_command_ - path.gamma(jj - 1);
  out.initial = dev;

  QpSolution sol;
  CondensedQp cqp;
  try {
    const AugmentedLtv ltv = build_ltv(path, j, cfg_.horizon, params);
    cqp = build_qp(dev, ltv, path, j, cfg_);
    QpWarmStart warm{feasible_start(cqp, path, j), {}};
    sol = solver_.solve(cqp.qp, &warm);
  } catch (const Error&) {
    sol.status = QpStatus::kNumericalFailure;
  }
  out.status = sol.status;
  out.iterations = sol.iterations;
  out.kkt = sol.kkt;

  const int H = cfg_.horizon;
  const double lrt = cfg_.l_r * cfg_.T;
  if (sol.status == QpStatus::kOptimal) {
    consecutive_failures_ = 0;
    out.du = sol.x.head(H);
    out.slack = sol.x.tail(2 * (H + 1));
    out.cost = cqp.cost(sol.x);
    out.predicted = cqp.predicted_states(sol.x);
    out.slack_active.resize(static_cast<std::size_t>(H + 1));
    for (int i = 0; i <= H; ++i) {
      out.slack_active[static_cast<std::size_t>(i)] =
          out.slack(2 * i) > 1e-6 || out.slack(2 * i + 1) > 1e-6;
    }
    const double cmd = out.du(0) + previous_command_ - path.gamma(jj - 1) + path.gamma(jj);
    // Guard against round-off pushing the command past its hard limits.
    const double rated =
        std::clamp(cmd, previous_command_ - lrt, previous_command_ + lrt);
    out.gamma_cmd = std::clamp(rated, -cfg_.l_m, cfg_.l_m);
    previous_plan_.resize(static_cast<std::size_t>(H));
    double u_prev = dev.u_prev;
    for (int i = 0; i < H; ++i) {
      u_prev += out.du(i);
      previous_plan_[static_cast<std::size_t>(i)] = u_prev + path.gamma(jj + i);
    }
  } else {
    ++consecutive_failures_;
    out.fallback = true;
    previous_plan_.clear();
    if (consecutive_failures_ <= kFallbackHoldSamples) {
      out.gamma_cmd = previous_command_;
    } else {
      const double target = std::clamp(path.gamma(jj), -cfg_.l_m, cfg_.l_m);
      out.gamma_cmd =
          previous_command_ + std::clamp(target - previous_command_, -lrt, lrt);
    }
  }
  previous_command_ = out.gamma_cmd;
  return out;
}

GuidanceOutput GuidanceController::step(const KiteState& now, const DelayBuffer& buf,
                                        const SteeringParams& sp, const ReferencePath& path,
                                        const KinematicParams& params) {
  const LineAngles xi_td = predict_delayed_position(now.xi, now.gamma, buf, sp, params);
  return step(xi_td, path, params);
}

}  // namespace kite
