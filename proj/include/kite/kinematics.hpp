#pragma once

#include <Eigen/Dense>

namespace kite {

/// Spherical line angles measured at the ground station [rad].
struct LineAngles {
  double theta = 0.0;  ///< elevation
  double phi = 0.0;    ///< azimuth
};

struct KiteState {
  LineAngles xi;
  double gamma = 0.0;  ///< heading, unwrapped [rad]
  double r = 1.0;      ///< line length [m]
};

/// Parameters of the velocity model and its discretization.
struct KinematicParams {
  double alpha_L = 0.2;  ///< lift velocity coefficient [1/s]
  double alpha_G = 0.07; ///< gravity velocity coefficient [1/s]
  double r = 90.0;       ///< line length [m]
  double T = 0.01;       ///< sampling period [s]

  /// Throws InvalidArgument unless all fields are positive and finite.
  /// T = 0 is accepted when allow_zero_step is set (degenerate step, used by
  /// the linearization checks).
  void validate(bool allow_zero_step = false) const;
};

struct CartesianPosition {
  double px = 0.0;
  double py = 0.0;
  double pz = 0.0;
};

struct LineRates {
  double theta_dot = 0.0;
  double phi_dot = 0.0;
};

/// Jacobians of the discrete step with respect to (theta, phi) and gamma.
struct Linearization {
  Eigen::Matrix2d A;
  Eigen::Vector2d B;
};

inline constexpr double kZenithGuard = 1e-6;
inline constexpr double kZeroRate = 1e-12;

CartesianPosition to_cartesian(const KiteState& state);

/// Heading of the motion on the sphere: the four-quadrant angle of
/// (cos(theta) * phi_dot, theta_dot), measured from the theta_dot axis.
/// Range (-pi, pi]. Throws ZeroVelocity when both rates vanish.
double heading_from_rates(double theta, double theta_dot, double phi_dot);

/// Returns the representative of `wrapped` (mod 2 pi) closest to `previous`.
double unwrap_angle(double previous, double wrapped);

/// Velocity perpendicular to the tethers [m/s]. May be negative.
double velocity_tangential(LineAngles xi, double gamma, const KinematicParams& p);

/// Continuous unicycle model. Uses state.r as the line length.
LineRates continuous_derivatives(const KiteState& state, const KinematicParams& p);

/// One forward-Euler step of the unicycle model. Independent of p.r.
LineAngles discrete_step(LineAngles xi, double gamma, const KinematicParams& p);

/// Analytic Jacobians of discrete_step.
Linearization linearize(LineAngles xi, double gamma, const KinematicParams& p);

}  // namespace kite
