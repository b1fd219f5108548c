#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "kite/error.hpp"
#include "kite/guidance_mpc.hpp"

using namespace kite;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

KinematicParams params() {
  KinematicParams p;
  p.alpha_L = 0.3;
  p.alpha_G = 0.1;
  p.r = 90.0;
  p.T = 0.01;
  return p;
}

const ReferencePath& shared_path() {
  static const ReferencePath path = [] {
    PathSpec s;
    s.center = {0.7, 0.0};
    s.amplitude = 2.0;
    s.rate_limit = 1.6;
    s.rate_margin = 0.8;
    return generate_path(s, params());
  }();
  return path;
}

MpcConfig config(int H = 30) {
  MpcConfig c;
  c.horizon = H;
  c.l_r = 1.6;
  c.T = params().T;
  return c;
}

// Stagewise problem in z = [chi_hat_1..chi_hat_H (3 each), du (H), eps (2(H+1))]
// with the dynamics kept as equality constraints. Inequality rows follow the
// same order as the condensed problem so active sets can be compared.
struct Uncondensed {
  MatrixXd P;
  VectorXd q;
  double constant = 0.0;
  MatrixXd E;  // E z = e
  VectorXd e;
  MatrixXd G;  // G z <= h
  VectorXd h;
  int H = 0;
  Eigen::Index state(int i) const { return 3 * (i - 1); }
  Eigen::Index du(int i) const { return 3 * H + i; }
  Eigen::Index eps(int i, int c) const { return 3 * H + H + 2 * i + c; }
};

Uncondensed uncondensed(const DeviationState& dev, const AugmentedLtv& ltv,
                        const ReferencePath& path, std::size_t j, const MpcConfig& cfg) {
  const int H = cfg.horizon;
  Uncondensed u;
  u.H = H;
  const Eigen::Index nz = 3 * H + H + 2 * (H + 1);
  u.P = MatrixXd::Zero(nz, nz);
  u.q = VectorXd::Zero(nz);
  Eigen::Vector3d x0(dev.chi(0), dev.chi(1), dev.u_prev);
  const Eigen::Vector3d qd(cfg.Q(0, 0), cfg.Q(1, 1), cfg.R);
  const Eigen::Vector3d qh(cfg.Q_H(0, 0), cfg.Q_H(1, 1), cfg.R);
  u.constant = x0.dot(qd.asDiagonal() * x0);
  for (int i = 1; i <= H; ++i) {
    const Eigen::Vector3d& w = i == H ? qh : qd;
    for (int r = 0; r < 3; ++r) u.P(u.state(i) + r, u.state(i) + r) = 2.0 * w(r);
  }
  for (int i = 0; i <= H; ++i) {
    const Eigen::Matrix2d& s = i == H ? cfg.S_H : cfg.S;
    u.P.block<2, 2>(u.eps(i, 0), u.eps(i, 0)) = 2.0 * s;
  }
  u.E = MatrixXd::Zero(3 * H, nz);
  u.e = VectorXd::Zero(3 * H);
  for (int i = 0; i < H; ++i) {
    // chi_hat_{i+1} - A_i chi_hat_i - B_i du_i = 0
    u.E.block<3, 3>(3 * i, u.state(i + 1)) = Eigen::Matrix3d::Identity();
    u.E.block<3, 1>(3 * i, u.du(i)) = -ltv.B[i];
    if (i == 0) {
      u.e.segment<3>(0) = ltv.A[0] * x0;
    } else {
      u.E.block<3, 3>(3 * i, u.state(i)) = -ltv.A[i];
    }
  }
  const int m = 4 * H + 6 * (H + 1);
  u.G = MatrixXd::Zero(m, nz);
  u.h = VectorXd::Zero(m);
  int row = 0;
  const double lrt = cfg.l_r * cfg.T;
  for (int i = 0; i < H; ++i) {
    const double g = path.gamma(static_cast<long long>(j) + i);
    u.G(row, u.state(i + 1) + 2) = 1.0;
    u.h(row++) = cfg.l_m - g;
    u.G(row, u.state(i + 1) + 2) = -1.0;
    u.h(row++) = cfg.l_m + g;
  }
  for (int i = 0; i < H; ++i) {
    const long long idx = static_cast<long long>(j) + i;
    const double d = path.gamma(idx) - path.gamma(idx - 1);
    u.G(row, u.du(i)) = 1.0;
    u.h(row++) = lrt - d;
    u.G(row, u.du(i)) = -1.0;
    u.h(row++) = lrt + d;
  }
  const double lo[2] = {cfg.window.theta_min, cfg.window.phi_min};
  const double hi[2] = {cfg.window.theta_max, cfg.window.phi_max};
  for (int i = 0; i <= H; ++i) {
    const LineAngles& ref = path.xi(static_cast<long long>(j) + i);
    const double rc[2] = {ref.theta, ref.phi};
    for (int c = 0; c < 2; ++c) {
      // Stage 0 is fixed: its state enters through the right-hand side.
      const double fixed = i == 0 ? x0(c) : 0.0;
      if (i > 0) u.G(row, u.state(i) + c) = -1.0;
      u.G(row, u.eps(i, c)) = -1.0;
      u.h(row++) = -(lo[c] - rc[c]) + fixed;
      if (i > 0) u.G(row, u.state(i) + c) = 1.0;
      u.G(row, u.eps(i, c)) = -1.0;
      u.h(row++) = (hi[c] - rc[c]) - fixed;
      u.G(row, u.eps(i, c)) = -1.0;
      u.h(row++) = 0.0;
    }
  }
  return u;
}

double max_abs(const VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

}  // namespace

TEST(MpcConfig, DefaultsAndValidation) {
  const MpcConfig c;
  EXPECT_EQ(c.horizon, 30);
  EXPECT_EQ(c.Q(0, 0), 1.0);
  EXPECT_EQ(c.Q(1, 1), 2.0);
  EXPECT_EQ(c.Q(0, 1), 0.0);
  EXPECT_TRUE(c.Q_H.isApprox(5.0 * c.Q));
  EXPECT_EQ(c.R, 5e-3);
  EXPECT_TRUE(c.S.isApprox(1e5 * c.Q));
  EXPECT_TRUE(c.S_H.isApprox(1e5 * c.Q_H));
  EXPECT_EQ(c.window.theta_min, 0.17);
  EXPECT_EQ(c.window.theta_max, 1.40);
  EXPECT_EQ(c.window.phi_min, -0.70);
  EXPECT_EQ(c.window.phi_max, 0.70);
  EXPECT_NEAR(c.horizon * c.T, 0.3, 1e-15);
  EXPECT_NO_THROW(c.validate());

  MpcConfig bad = c;
  bad.S = 10.0 * c.Q;
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.horizon = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.R = 0.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(PredictDelayedPosition, NoDelayReturnsCurrentPosition) {
  SteeringParams sp;
  sp.K = 0.3;
  sp.t_d = 0.0;
  sp.T = 0.01;
  const LineAngles xi{0.8, 0.1};
  const LineAngles out = predict_delayed_position(xi, 0.4, DelayBuffer(0), sp, params());
  EXPECT_EQ(out.theta, xi.theta);
  EXPECT_EQ(out.phi, xi.phi);
}

TEST(PredictDelayedPosition, SidewaysHeadingKeepsElevation) {
  SteeringParams sp;
  sp.K = 0.3;
  sp.t_d = 0.7;
  sp.T = 0.01;
  const LineAngles xi{0.8, 0.1};
  const LineAngles out = predict_delayed_position(xi, std::numbers::pi / 2, DelayBuffer(70),
                                                  sp, params());
  EXPECT_NEAR(out.theta, xi.theta, 1e-15);
  EXPECT_GT(out.phi, xi.phi);
}

TEST(PredictDelayedPosition, MatchesDelayedPlant) {
  SteeringParams sp;
  sp.K = 0.3;
  sp.t_d = 0.7;
  sp.T = 0.01;
  const auto kp = params();
  const std::size_t n = sp.delay_samples();
  std::mt19937_64 rng(12);
  std::normal_distribution<double> N01(0.0, 1.0);
  // Plant: gamma_{k+1} = gamma_k + K T delta_{k-n}; inputs before k = 0 are zero.
  std::vector<double> inputs;
  std::vector<LineAngles> xs{{0.7, -0.2}};
  std::vector<double> gs{0.3};
  DelayBuffer buf(n);
  std::vector<LineAngles> predicted;
  for (int k = 0; k < 600; ++k) {
    predicted.push_back(predict_delayed_position(xs.back(), gs.back(), buf, sp, kp));
    const double delta = 0.5 * N01(rng);
    inputs.push_back(delta);
    buf.push(delta);
    const double applied = inputs.size() > n ? inputs[inputs.size() - 1 - n] : 0.0;
    xs.push_back(discrete_step(xs.back(), gs.back(), kp));
    gs.push_back(gs.back() + sp.K * sp.T * applied);
  }
  for (std::size_t k = 0; k + n < xs.size() && k < predicted.size(); ++k) {
    EXPECT_NEAR(predicted[k].theta, xs[k + n].theta, 1e-8);
    EXPECT_NEAR(predicted[k].phi, xs[k + n].phi, 1e-8);
  }
  EXPECT_THROW(predict_delayed_position(xs[0], 0.0, DelayBuffer(3), sp, kp), Error);
}

TEST(BuildLtv, ZeroStepAndStructure) {
  auto kp = params();
  const auto& path = shared_path();
  for (const auto& ltv : {build_ltv(path, 5, 10, kp), [&] {
         auto z = kp;
         z.T = 0.0;
         return build_ltv(path, 5, 10, z);
       }()}) {
    ASSERT_EQ(ltv.A.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) {
      EXPECT_EQ(ltv.A[i](2, 2), 1.0);
      EXPECT_EQ(ltv.A[i](2, 0), 0.0);
      EXPECT_EQ(ltv.A[i](2, 1), 0.0);
      EXPECT_EQ(ltv.B[i](2), 1.0);
      EXPECT_TRUE((ltv.A[i].block<2, 1>(0, 2) == ltv.B[i].head<2>()));
    }
  }
  auto z = kp;
  z.T = 0.0;
  const auto ltv = build_ltv(path, 5, 3, z);
  EXPECT_TRUE(ltv.A[0].isIdentity(0.0));
  EXPECT_TRUE(ltv.B[0] == Eigen::Vector3d(0.0, 0.0, 1.0));
}

TEST(BuildLtv, FirstOrderAgreementWithNonlinearRollout) {
  const auto kp = params();
  const auto& path = shared_path();
  const std::size_t j = 123;
  const int H = 30;
  const auto ltv = build_ltv(path, j, H, kp);
  auto rollout_error = [&](double u_prev) {
    // Du = 0 holds the input deviation, so the nonlinear plant flies the
    // reference heading offset by u_prev, starting on the reference.
    Eigen::Vector3d chi(0.0, 0.0, u_prev);
    LineAngles xi = path.xi(static_cast<long long>(j));
    double err = 0.0;
    for (int i = 0; i < H; ++i) {
      const long long idx = static_cast<long long>(j) + i;
      chi = ltv.A[i] * chi;
      xi = discrete_step(xi, path.gamma(idx) + u_prev, kp);
      err = std::max({err, std::abs(xi.theta - path.xi(idx + 1).theta - chi(0)),
                      std::abs(xi.phi - path.xi(idx + 1).phi - chi(1))});
    }
    return err;
  };
  const double e1 = rollout_error(0.02);
  const double e2 = rollout_error(0.01);
  const double e4 = rollout_error(0.005);
  EXPECT_GT(e1, 0.0);
  EXPECT_NEAR(e1 / e2, 4.0, 0.4);
  EXPECT_NEAR(e2 / e4, 4.0, 0.4);
}

TEST(BuildQp, ZeroDeviationIsOptimalWithZeroCost) {
  const auto kp = params();
  const auto& path = shared_path();
  const MpcConfig cfg = config();
  for (std::size_t j : {0u, 200u, 491u, 900u}) {
    const auto cqp = build_qp({}, build_ltv(path, j, cfg.horizon, kp), path, j, cfg);
    EXPECT_EQ(cqp.qp.n(), 92);
    EXPECT_EQ(cqp.qp.m(), 4 * 30 + 6 * 31);
    const auto s = QpSolver{}.solve(cqp.qp);
    ASSERT_EQ(s.status, QpStatus::kOptimal);
    EXPECT_LT(max_abs(s.x), 1e-12);
    EXPECT_NEAR(cqp.cost(s.x), 0.0, 1e-20);
  }
  EXPECT_THROW(build_qp({}, build_ltv(path, 0, 5, kp), path, 0, cfg), Error);
}

TEST(BuildQp, CondensedMatchesStagewiseKkt) {
  const auto kp = params();
  const auto& path = shared_path();
  MpcConfig cfg = config(3);
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> dev(-0.6, 0.6), uprev(-0.05, 0.05);
  std::uniform_int_distribution<std::size_t> idx(0, path.size() - 1);
  int with_slack = 0, with_rate = 0;
  for (int trial = 0; trial < 200; ++trial) {
    DeviationState d;
    d.chi << dev(rng), dev(rng);
    d.u_prev = uprev(rng);
    const std::size_t j = idx(rng);
    const auto ltv = build_ltv(path, j, cfg.horizon, kp);
    const auto cqp = build_qp(d, ltv, path, j, cfg);
    const auto s = QpSolver{}.solve(cqp.qp);
    ASSERT_EQ(s.status, QpStatus::kOptimal);

    const Uncondensed u = uncondensed(d, ltv, path, j, cfg);
    ASSERT_EQ(u.G.rows(), cqp.qp.m());
    // Equality-constrained KKT on the condensed solution's active rows.
    const auto& act = s.active;
    const Eigen::Index nz = u.P.rows(), ne = u.E.rows(),
                       na = static_cast<Eigen::Index>(act.size());
    MatrixXd K = MatrixXd::Zero(nz + ne + na, nz + ne + na);
    VectorXd rhs = VectorXd::Zero(nz + ne + na);
    K.topLeftCorner(nz, nz) = u.P;
    K.block(0, nz, nz, ne) = u.E.transpose();
    K.block(nz, 0, ne, nz) = u.E;
    rhs.head(nz) = -u.q;
    rhs.segment(nz, ne) = u.e;
    for (Eigen::Index a = 0; a < na; ++a) {
      K.block(0, nz + ne + a, nz, 1) = u.G.row(act[a]).transpose();
      K.block(nz + ne + a, 0, 1, nz) = u.G.row(act[a]);
      rhs(nz + ne + a) = u.h(act[a]);
    }
    const VectorXd sol = K.fullPivLu().solve(rhs);
    ASSERT_LT(max_abs(K * sol - rhs), 1e-9);
    const VectorXd z = sol.head(nz);
    const VectorXd mu = sol.tail(na);

    for (int i = 0; i < cfg.horizon; ++i) EXPECT_NEAR(z(u.du(i)), s.x(i), 1e-7);
    for (int i = 0; i <= cfg.horizon; ++i)
      for (int c = 0; c < 2; ++c)
        EXPECT_NEAR(z(u.eps(i, c)), s.x(cfg.horizon + 2 * i + c), 1e-7);
    // The stagewise point is optimal: feasible with nonnegative multipliers.
    EXPECT_LE((u.G * z - u.h).maxCoeff(), 1e-9);
    if (na > 0) {
      EXPECT_GE(mu.minCoeff(), -1e-9);
    }
    const double stage_cost = 0.5 * z.dot(u.P * z) + u.q.dot(z) + u.constant;
    EXPECT_NEAR(stage_cost, cqp.cost(s.x), 1e-7 * (1.0 + stage_cost));

    for (int a : act) {
      if (a >= 4 * cfg.horizon) ++with_slack;
      else if (a >= 2 * cfg.horizon) ++with_rate;
    }
  }
  // The sample exercises both the soft window rows and the rate rows.
  EXPECT_GT(with_slack, 0);
  EXPECT_GT(with_rate, 0);
}

namespace {

struct LoopResult {
  std::vector<GuidanceOutput> outputs;
  std::vector<double> commands;
};

// Plant equal to the prediction model: the delayed position is advanced with
// the commanded heading, so there is no model mismatch.
LoopResult run_matched(GuidanceController& g, LineAngles xi, int steps) {
  const auto kp = params();
  const auto& path = shared_path();
  LoopResult r;
  for (int k = 0; k < steps; ++k) {
    r.outputs.push_back(g.step(xi, path, kp));
    r.commands.push_back(r.outputs.back().gamma_cmd);
    xi = discrete_step(xi, r.commands.back(), kp);
  }
  return r;
}

}  // namespace

TEST(GuidanceController, HardConstraintsAndReconstruction) {
  const auto& path = shared_path();
  const MpcConfig cfg = config();
  GuidanceController g(cfg);
  g.reset(path.gamma(-1) + 0.3);
  const LineAngles start{path.xi(0).theta + 0.08, path.xi(0).phi - 0.1};
  const auto kp = params();
  LineAngles xi = start;
  double prev = g.previous_command();
  const double lrt = cfg.l_r * cfg.T;
  for (int k = 0; k < 1500; ++k) {
    const auto out = g.step(xi, path, kp);
    ASSERT_EQ(out.status, QpStatus::kOptimal);
    const auto j = static_cast<long long>(out.ref_index);
    EXPECT_NEAR(out.gamma_cmd, out.du(0) + prev - path.gamma(j - 1) + path.gamma(j), 1e-12);
    EXPECT_LE(std::abs(out.gamma_cmd), cfg.l_m + 1e-9);
    EXPECT_LE(std::abs(out.gamma_cmd - prev), lrt + 1e-9);
    double u = out.initial.u_prev;
    for (int i = 0; i < cfg.horizon; ++i) {
      u += out.du(i);
      const double d = path.gamma(j + i) - path.gamma(j + i - 1);
      EXPECT_LE(std::abs(u + path.gamma(j + i)), cfg.l_m + 1e-9);
      EXPECT_LE(std::abs(out.du(i) + d), lrt + 1e-9);
    }
    prev = out.gamma_cmd;
    xi = discrete_step(xi, out.gamma_cmd, kp);
  }
}

TEST(GuidanceController, HoldsCommandWhenReferenceIsFlat) {
  // A stationary reference with the kite on it: zero move reproduces the
  // previous command.
  const auto kp = params();
  std::vector<LineAngles> pts(50, LineAngles{0.8, 0.0});
  ReferencePath flat(pts, std::vector<double>(50, 0.0), kp);
  MpcConfig cfg = config();
  GuidanceController g(cfg);
  g.reset(0.0);
  auto z = kp;
  z.T = 0.0;
  const auto out = g.step(LineAngles{0.8, 0.0}, flat, z);
  ASSERT_EQ(out.status, QpStatus::kOptimal);
  EXPECT_EQ(out.du(0), 0.0);
  EXPECT_EQ(out.gamma_cmd, 0.0);
}

TEST(GuidanceController, SlacksInactiveWellInsideWindow) {
  const auto& path = shared_path();
  const MpcConfig cfg = config();
  GuidanceController g(cfg);
  g.reset(path.gamma(-1));
  const auto r = run_matched(g, {path.xi(0).theta + 0.03, path.xi(0).phi + 0.03}, 1000);
  int checked = 0;
  for (const auto& out : r.outputs) {
    ASSERT_EQ(out.status, QpStatus::kOptimal);
    bool inside = true;
    for (std::size_t i = 0; i < out.predicted.size(); ++i) {
      const LineAngles& ref = path.xi(static_cast<long long>(out.ref_index + i));
      const LineAngles pos{ref.theta + out.predicted[i](0), ref.phi + out.predicted[i](1)};
      inside = inside && cfg.window.contains(pos, 0.05);
    }
    if (!inside) continue;
    ++checked;
    EXPECT_LT(max_abs(out.slack), 1e-6);
  }
  EXPECT_GT(checked, 900);
}

TEST(GuidanceController, FeasibleFarOutsideWindow) {
  const auto& path = shared_path();
  GuidanceController g(config());
  for (const LineAngles start : {LineAngles{1.6, 0.0}, LineAngles{0.05, 0.9},
                                 LineAngles{0.7, -1.2}}) {
    g.reset(0.0);
    const auto out = g.step(start, path, params());
    ASSERT_EQ(out.status, QpStatus::kOptimal);
    EXPECT_TRUE(out.slack_active[0]);
    EXPECT_GT(max_abs(out.slack), 1e-3);
  }
}

TEST(GuidanceController, RecedingHorizonTailConsistency) {
  // Plant equal to the condensed model: after the first move the remaining
  // plan must be optimal for the problem that starts one stage later and
  // ends at the same terminal stage, active constraints included.
  const auto kp = params();
  const auto& path = shared_path();
  const MpcConfig cfg = config();
  MpcConfig tail_cfg = cfg;
  tail_cfg.horizon = cfg.horizon - 1;
  const int H = cfg.horizon;
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> dev(-0.3, 0.3), uprev(-0.05, 0.05);
  std::uniform_int_distribution<std::size_t> idx(0, path.size() - 1);
  for (int trial = 0; trial < 40; ++trial) {
    DeviationState d;
    d.chi << dev(rng), dev(rng);
    d.u_prev = uprev(rng);
    const std::size_t j = idx(rng);
    const auto cqp = build_qp(d, build_ltv(path, j, H, kp), path, j, cfg);
    const auto s = QpSolver{}.solve(cqp.qp);
    ASSERT_EQ(s.status, QpStatus::kOptimal);
    const auto states = cqp.predicted_states(s.x);
    DeviationState next;
    next.chi = states[1].head<2>();
    next.u_prev = states[1](2);
    const std::size_t jn = (j + 1) % path.size();
    const auto ct = build_qp(next, build_ltv(path, jn, H - 1, kp), path, jn, tail_cfg);
    const auto st = QpSolver{}.solve(ct.qp);
    ASSERT_EQ(st.status, QpStatus::kOptimal);
    for (int i = 0; i < H - 1; ++i) EXPECT_NEAR(st.x(i), s.x(i + 1), 1e-6);
    for (int i = 0; i < 2 * H; ++i) EXPECT_NEAR(st.x(H - 1 + i), s.x(H + 2 + i), 1e-6);
  }
}

TEST(GuidanceController, FallbackHoldsThenRampsToReference) {
  const auto& path = shared_path();
  QpSettings starve;
  starve.max_iterations = 1;
  const MpcConfig cfg = config();
  GuidanceController g(cfg, starve);
  g.reset(-1.5);
  const LineAngles xi{path.xi(0).theta + 0.2, path.xi(0).phi + 0.2};
  const double lrt = cfg.l_r * cfg.T;
  double prev = -1.5;
  for (int k = 0; k < 40; ++k) {
    const auto out = g.step(xi, path, params());
    ASSERT_NE(out.status, QpStatus::kOptimal);
    EXPECT_TRUE(out.fallback);
    if (k < kFallbackHoldSamples) {
      EXPECT_EQ(out.gamma_cmd, -1.5);
    } else {
      const double target = path.gamma(static_cast<long long>(out.ref_index));
      EXPECT_LE(std::abs(out.gamma_cmd - prev), lrt + 1e-12);
      EXPECT_LE(std::abs(out.gamma_cmd - target), std::abs(prev - target) + 1e-12);
    }
    prev = out.gamma_cmd;
  }
  EXPECT_EQ(g.consecutive_failures(), 40);
}
