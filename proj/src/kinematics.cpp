#include "kite/kinematics.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "kite/error.hpp"

namespace kite {
namespace {

void check_zenith(double theta) {
  if (!(std::cos(theta) > kZenithGuard)) {
    throw Error(ErrorKind::kNearZenith,
                "cos(theta) <= 1e-6 at theta = " + std::to_string(theta));
  }
}

}  // namespace

void KinematicParams::validate(bool allow_zero_step) const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(alpha_L) || !positive(alpha_G) || !positive(r)) {
    throw Error(ErrorKind::kInvalidArgument,
                "alpha_L, alpha_G and r must be positive and finite");
  }
  if (!(std::isfinite(T) && (T > 0.0 || (allow_zero_step && T == 0.0)))) {
    throw Error(ErrorKind::kInvalidArgument, "sampling period must be positive");
  }
}

CartesianPosition to_cartesian(const KiteState& state) {
  const double ct = std::cos(state.xi.theta);
  return {state.r * ct * std::cos(state.xi.phi),
          state.r * ct * std::sin(state.xi.phi),
          state.r * std::sin(state.xi.theta)};
}

double heading_from_rates(double theta, double theta_dot, double phi_dot) {
  if (std::abs(theta_dot) < kZeroRate && std::abs(phi_dot) < kZeroRate) {
    throw Error(ErrorKind::kZeroVelocity, "line-angle rates vanish");
  }
  return std::atan2(std::cos(theta) * phi_dot, theta_dot);
}

double unwrap_angle(double previous, double wrapped) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  return wrapped + kTwoPi * std::round((previous - wrapped) / kTwoPi);
}

double velocity_tangential(LineAngles xi, double gamma, const KinematicParams& p) {
  return p.r * p.alpha_L * std::cos(xi.theta) * std::cos(xi.phi) -
         p.r * p.alpha_G * std::cos(gamma);
}

LineRates continuous_derivatives(const KiteState& state, const KinematicParams& p) {
  check_zenith(state.xi.theta);
  KinematicParams local = p;
  local.r = state.r;
  const double v = velocity_tangential(state.xi, state.gamma, local);
  return {v / state.r * std::cos(state.gamma),
          v / (state.r * std::cos(state.xi.theta)) * std::sin(state.gamma)};
}

LineAngles discrete_step(LineAngles xi, double gamma, const KinematicParams& p) {
  check_zenith(xi.theta);
  const double ct = std::cos(xi.theta);
  const double cp = std::cos(xi.phi);
  const double cg = std::cos(gamma);
  const double sg = std::sin(gamma);
  return {xi.theta + p.T * p.alpha_L * ct * cp * cg - p.T * p.alpha_G * cg * cg,
          xi.phi + p.T * p.alpha_L * cp * sg -
              p.T * p.alpha_G * std::sin(2.0 * gamma) / (2.0 * ct)};
}

Linearization linearize(LineAngles xi, double gamma, const KinematicParams& p) {
  check_zenith(xi.theta);
  const double st = std::sin(xi.theta);
  const double ct = std::cos(xi.theta);
  const double sp = std::sin(xi.phi);
  const double cp = std::cos(xi.phi);
  const double sg = std::sin(gamma);
  const double cg = std::cos(gamma);
  const double s2g = std::sin(2.0 * gamma);
  const double c2g = std::cos(2.0 * gamma);
  const double T = p.T;

  Linearization lin;
  lin.A(0, 0) = 1.0 - T * p.alpha_L * st * cp * cg;
  lin.A(0, 1) = -T * p.alpha_L * ct * sp * cg;
  lin.A(1, 0) = -T * p.alpha_G * s2g * st / (2.0 * ct * ct);
  lin.A(1, 1) = 1.0 - T * p.alpha_L * sp * sg;
  lin.B(0) = -T * p.alpha_L * ct * cp * sg + T * p.alpha_G * s2g;
  lin.B(1) = T * p.alpha_L * cp * cg - T * p.alpha_G * c2g / ct;
  return lin;
}

}  // namespace kite
