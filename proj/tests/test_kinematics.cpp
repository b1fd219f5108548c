#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "kite/error.hpp"
#include "kite/kinematics.hpp"

using namespace kite;

namespace {

constexpr double kPi = std::numbers::pi;

KinematicParams params(double aL, double aG, double r, double T) {
  KinematicParams p;
  p.alpha_L = aL;
  p.alpha_G = aG;
  p.r = r;
  p.T = T;
  return p;
}

// Continuous model written out directly, used by the RK4 oracle.
void rhs(double th, double ph, double g, double aL, double aG, double* dth, double* dph) {
  const double v_over_r = aL * std::cos(th) * std::cos(ph) - aG * std::cos(g);
  *dth = v_over_r * std::cos(g);
  *dph = v_over_r * std::sin(g) / std::cos(th);
}

LineAngles rk4(LineAngles xi, double g, double aL, double aG, double T) {
  double k1t, k1p, k2t, k2p, k3t, k3p, k4t, k4p;
  rhs(xi.theta, xi.phi, g, aL, aG, &k1t, &k1p);
  rhs(xi.theta + 0.5 * T * k1t, xi.phi + 0.5 * T * k1p, g, aL, aG, &k2t, &k2p);
  rhs(xi.theta + 0.5 * T * k2t, xi.phi + 0.5 * T * k2p, g, aL, aG, &k3t, &k3p);
  rhs(xi.theta + T * k3t, xi.phi + T * k3p, g, aL, aG, &k4t, &k4p);
  return {xi.theta + T / 6 * (k1t + 2 * k2t + 2 * k3t + k4t),
          xi.phi + T / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)};
}

}  // namespace

TEST(ToCartesian, AxisAndZenith) {
  auto a = to_cartesian({{0.0, 0.0}, 0.0, 1.0});
  EXPECT_NEAR(a.px, 1.0, 1e-15);
  EXPECT_NEAR(a.py, 0.0, 1e-15);
  EXPECT_NEAR(a.pz, 0.0, 1e-15);
  auto z = to_cartesian({{kPi / 2, 0.0}, 0.0, 2.0});
  EXPECT_NEAR(z.px, 0.0, 1e-15);
  EXPECT_NEAR(z.pz, 2.0, 1e-15);
}

TEST(ToCartesian, GenericPoint) {
  auto c = to_cartesian({{0.5, 0.2}, 0.0, 100.0});
  EXPECT_NEAR(c.px, 86.009, 1e-2);
  EXPECT_NEAR(c.py, 17.43, 1e-2);
  EXPECT_NEAR(c.pz, 47.94, 1e-2);
}

TEST(ToCartesian, NormEqualsLineLength) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ang(-1.5, 1.5), len(0.1, 500.0);
  for (int i = 0; i < 1000; ++i) {
    const double r = len(rng);
    auto c = to_cartesian({{ang(rng), ang(rng)}, 0.0, r});
    EXPECT_NEAR(std::sqrt(c.px * c.px + c.py * c.py + c.pz * c.pz), r, 1e-9 * r);
  }
}

TEST(HeadingFromRates, Examples) {
  EXPECT_NEAR(heading_from_rates(0.3, 1.0, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(heading_from_rates(0.0, 0.0, 1.0), kPi / 2, 1e-15);
  EXPECT_NEAR(heading_from_rates(0.5, 0.1, 0.2), 1.053, 5e-4);
  EXPECT_NEAR(heading_from_rates(0.5, 0.1, 0.2), std::atan2(std::cos(0.5) * 0.2, 0.1), 1e-15);
}

TEST(HeadingFromRates, BackwardMotionBeyondArctanRange) {
  EXPECT_NEAR(heading_from_rates(0.3, -1.0, 0.0), kPi, 1e-15);
  EXPECT_NEAR(heading_from_rates(0.3, -1.0, -1e-3), -kPi + 1e-3 * std::cos(0.3), 1e-9);
}

TEST(HeadingFromRates, ZeroVelocityThrows) {
  try {
    heading_from_rates(0.4, 1e-13, -1e-13);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kZeroVelocity);
  }
}

TEST(UnwrapAngle, PicksClosestRepresentative) {
  EXPECT_NEAR(unwrap_angle(3.0, -3.0), -3.0 + 2 * kPi, 1e-12);
  EXPECT_NEAR(unwrap_angle(-3.0, 3.0), 3.0 - 2 * kPi, 1e-12);
  EXPECT_NEAR(unwrap_angle(13.0, 0.5), 0.5 + 4 * kPi, 1e-12);
}

TEST(VelocityTangential, Examples) {
  EXPECT_NEAR(velocity_tangential({0, 0}, kPi / 2, params(1, 1, 1, 0.01)), 1.0, 1e-15);
  EXPECT_NEAR(velocity_tangential({0, 0}, 0.0, params(0.37, 0.37, 1, 0.01)), 0.0, 1e-15);
  EXPECT_NEAR(velocity_tangential({0.5, 0.2}, 1.0, params(0.3, 0.1, 100, 0.01)), 20.40, 5e-3);
}

TEST(VelocityTangential, NegativeAllowed) {
  EXPECT_LT(velocity_tangential({1.3, 0.6}, 0.0, params(0.1, 0.2, 50, 0.01)), 0.0);
}

TEST(ContinuousDerivatives, SpecialHeadings) {
  const auto p = params(0.8, 0.2, 50, 0.01);
  KiteState s{{0.6, 0.1}, 0.0, 50.0};
  auto d = continuous_derivatives(s, p);
  EXPECT_EQ(d.phi_dot, 0.0);
  EXPECT_NEAR(d.theta_dot, velocity_tangential(s.xi, 0.0, p) / 50.0, 1e-15);
  KiteState side{{0.0, 0.1}, kPi / 2, 50.0};
  auto e = continuous_derivatives(side, p);
  EXPECT_NEAR(e.theta_dot, 0.0, 1e-15);
  EXPECT_NEAR(e.phi_dot, velocity_tangential(side.xi, kPi / 2, p) / 50.0, 1e-15);
}

TEST(ContinuousDerivatives, RichardsonLimitOfDiscreteStep) {
  KiteState s{{0.6, 0.1}, 0.3, 50.0};
  const auto d = continuous_derivatives(s, params(0.8, 0.2, 50, 0.01));
  auto quotient = [&](double T) {
    auto n = discrete_step(s.xi, s.gamma, params(0.8, 0.2, 50, T));
    return std::pair{(n.theta - s.xi.theta) / T, (n.phi - s.xi.phi) / T};
  };
  const auto [t1, p1] = quotient(1e-3);
  const auto [t2, p2] = quotient(5e-4);
  EXPECT_NEAR(2 * t2 - t1, d.theta_dot, 1e-10);
  EXPECT_NEAR(2 * p2 - p1, d.phi_dot, 1e-10);
}

TEST(ContinuousDerivatives, NearZenithThrows) {
  KiteState s{{kPi / 2, 0.0}, 0.3, 50.0};
  try {
    continuous_derivatives(s, params(0.8, 0.2, 50, 0.01));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNearZenith);
  }
}

TEST(ContinuousDerivatives, HeadingRoundTrip) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> th(0.17, 1.40), ph(-0.7, 0.7), g(-3.0, 3.0);
  const auto p = params(0.25, 0.07, 90, 0.01);
  int checked = 0;
  for (int i = 0; i < 2000; ++i) {
    KiteState s{{th(rng), ph(rng)}, g(rng), 90.0};
    if (velocity_tangential(s.xi, s.gamma, p) <= 1e-6) continue;
    const auto d = continuous_derivatives(s, p);
    const double back = heading_from_rates(s.xi.theta, d.theta_dot, d.phi_dot);
    EXPECT_NEAR(unwrap_angle(s.gamma, back), s.gamma, 1e-9);
    ++checked;
  }
  EXPECT_GT(checked, 500);
}

TEST(DiscreteStep, SidewaysHeading) {
  const auto p = params(0.8, 0.2, 50, 0.01);
  auto n = discrete_step({0.6, 0.1}, kPi / 2, p);
  EXPECT_NEAR(n.theta, 0.6, 1e-15);
  EXPECT_NEAR(n.phi, 0.1 + 0.01 * 0.8 * std::cos(0.1), 1e-15);
}

TEST(DiscreteStep, GenericPoint) {
  auto n = discrete_step({0.6, 0.1}, 0.3, params(0.8, 0.2, 50, 0.01));
  EXPECT_NEAR(n.theta, 0.60445, 1e-5);
  EXPECT_NEAR(n.phi, 0.10167, 1e-5);
}

TEST(DiscreteStep, IndependentOfLineLength) {
  auto a = discrete_step({0.7, -0.3}, 1.1, params(0.2, 0.07, 1.0, 0.01));
  auto b = discrete_step({0.7, -0.3}, 1.1, params(0.2, 0.07, 1000.0, 0.01));
  EXPECT_NEAR(a.theta, b.theta, 1e-12);
  EXPECT_NEAR(a.phi, b.phi, 1e-12);
}

TEST(DiscreteStep, LocalErrorAgainstRk4IsSecondOrder) {
  const LineAngles xi{0.6, 0.1};
  const double g = 0.3;
  std::vector<double> err;
  for (double T : {0.01, 0.005, 0.0025}) {
    auto e = discrete_step(xi, g, params(0.8, 0.2, 50, T));
    auto r = rk4(xi, g, 0.8, 0.2, T);
    err.push_back(std::hypot(e.theta - r.theta, e.phi - r.phi));
  }
  for (std::size_t i = 1; i < err.size(); ++i) {
    EXPECT_GE(std::log2(err[i - 1] / err[i]), 1.9);
  }
  EXPECT_LT(err[0] / (0.01 * 0.01), 1.0);  // c T^2 with c of the order of the squared rates
}

TEST(Linearize, ZeroStepIsIdentity) {
  auto L = linearize({0.6, 0.1}, 0.3, params(0.8, 0.2, 50, 0.0));
  EXPECT_TRUE(L.A.isApprox(Eigen::Matrix2d::Identity(), 0.0));
  EXPECT_EQ(L.B.norm(), 0.0);
}

TEST(Linearize, StraightUpHeadingInputColumn) {
  const double th = 0.6, ph = 0.1, T = 0.01;
  auto L = linearize({th, ph}, 0.0, params(0.8, 0.2, 50, T));
  EXPECT_NEAR(L.B(0), 0.0, 1e-15);
  EXPECT_NEAR(L.B(1), T * 0.8 * std::cos(ph) - T * 0.2 / std::cos(th), 1e-15);
}

TEST(Linearize, MatchesCentralDifferencesAtExample) {
  const auto p = params(0.8, 0.2, 50, 0.01);
  const LineAngles xi{0.6, 0.1};
  const double g = 0.3, h = 1e-6;
  auto L = linearize(xi, g, p);
  auto fd = [&](LineAngles a, LineAngles b) {
    return Eigen::Vector2d((a.theta - b.theta) / (2 * h), (a.phi - b.phi) / (2 * h));
  };
  Eigen::Vector2d c0 = fd(discrete_step({xi.theta + h, xi.phi}, g, p),
                          discrete_step({xi.theta - h, xi.phi}, g, p));
  Eigen::Vector2d c1 = fd(discrete_step({xi.theta, xi.phi + h}, g, p),
                          discrete_step({xi.theta, xi.phi - h}, g, p));
  Eigen::Vector2d b = fd(discrete_step(xi, g + h, p), discrete_step(xi, g - h, p));
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(L.A(i, 0), c0(i), 1e-7);
    EXPECT_NEAR(L.A(i, 1), c1(i), 1e-7);
    EXPECT_NEAR(L.B(i), b(i), 1e-7);
  }
}

TEST(Linearize, NearZenithThrows) {
  EXPECT_THROW(linearize({kPi / 2, 0.0}, 0.3, params(0.8, 0.2, 50, 0.01)), Error);
}

TEST(KinematicParams, Validation) {
  EXPECT_THROW(params(0.0, 0.1, 1, 0.01).validate(), Error);
  EXPECT_THROW(params(0.1, -0.1, 1, 0.01).validate(), Error);
  EXPECT_THROW(params(0.1, 0.1, 1, 0.0).validate(), Error);
  EXPECT_NO_THROW(params(0.1, 0.1, 1, 0.0).validate(true));
}
