#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "kite/kinematics.hpp"
#include "kite/qp_solver.hpp"
#include "kite/reference_path.hpp"
#include "kite/tracking.hpp"

namespace kite {

struct MpcConfig {
  int horizon = 30;
  Eigen::Matrix2d Q = Eigen::Vector2d(1.0, 2.0).asDiagonal();
  Eigen::Matrix2d Q_H = 5.0 * Eigen::Matrix2d(Eigen::Vector2d(1.0, 2.0).asDiagonal());
  double R = 5e-3;
  Eigen::Matrix2d S = 1e5 * Eigen::Matrix2d(Eigen::Vector2d(1.0, 2.0).asDiagonal());
  Eigen::Matrix2d S_H = 5e5 * Eigen::Matrix2d(Eigen::Vector2d(1.0, 2.0).asDiagonal());
  double l_m = 2.5;
  double l_r = 1.0;
  SafetyWindow window;
  double T = 0.01;

  /// Throws InvalidArgument: weights positive definite, slack weights at
  /// least 1e3 times the state weights, horizon >= 1.
  void validate() const;
};

/// Deviation of the delayed prediction from the reference and the previous
/// input deviation.
struct DeviationState {
  Eigen::Vector2d chi = Eigen::Vector2d::Zero();
  double u_prev = 0.0;
};

/// Augmented LTV model chi_hat_{i+1} = A_i chi_hat_i + B_i du_i.
struct AugmentedLtv {
  std::vector<Eigen::Matrix3d> A;
  std::vector<Eigen::Vector3d> B;
};

/// Dense QP in (du_0..du_{H-1}, eps_0..eps_H) plus the maps needed to
/// recover the predicted augmented states: chi_hat_i = Phi_i x0 + Gamma_i du.
struct CondensedQp {
  QpProblem qp;
  int horizon = 0;
  Eigen::Vector3d x0 = Eigen::Vector3d::Zero();
  std::vector<Eigen::Matrix3d> Phi;
  std::vector<Eigen::MatrixXd> Gamma;
  double constant_cost = 0.0;

  Eigen::Index slack_offset() const { return horizon; }
  /// Full objective of the guidance problem for a QP point x.
  double cost(const Eigen::VectorXd& x) const { return qp.objective(x) + constant_cost; }
  std::vector<Eigen::Vector3d> predicted_states(const Eigen::VectorXd& x) const;
};

struct GuidanceOutput {
  double gamma_cmd = 0.0;
  std::size_t ref_index = 0;
  LineAngles xi_td;
  DeviationState initial;
  Eigen::VectorXd du;
  Eigen::VectorXd slack;
  std::vector<Eigen::Vector3d> predicted;
  std::vector<bool> slack_active;  ///< per stage, any slack component > 1e-6
  QpStatus status = QpStatus::kNumericalFailure;
  KktResiduals kkt;
  int iterations = 0;
  double cost = 0.0;
  bool fallback = false;
};

/// Integrates the discrete model over the delay window from the current
/// position and heading, advancing the heading with the buffered inputs.
LineAngles predict_delayed_position(LineAngles xi, double gamma, const DelayBuffer& buf,
                                    const SteeringParams& sp, const KinematicParams& kp);

AugmentedLtv build_ltv(const ReferencePath& path, std::size_t j, int horizon,
                       const KinematicParams& params);

/// Throws DimensionMismatch when the LTV length differs from the horizon.
CondensedQp build_qp(const DeviationState& dev0, const AugmentedLtv& ltv,
                     const ReferencePath& path, std::size_t j, const MpcConfig& cfg);

/// Receding-horizon guidance: one instance per control loop.
class GuidanceController {
 public:
  explicit GuidanceController(MpcConfig cfg, QpSettings solver_settings = {});

  const MpcConfig& config() const { return cfg_; }
  void set_rate_limit(double l_r) { cfg_.l_r = l_r; }

  /// Sets the previously issued command (clamped to +-l_m) and forgets the
  /// reference anchor.
  void reset(double previous_command);

  /// Re-anchors the reference index after a path change: nearest point whose
  /// heading is within pi/2 of `heading`.
  void reanchor(const ReferencePath& path, LineAngles xi, double heading);

  /// One guidance sample from the delayed position prediction.
  GuidanceOutput step(LineAngles xi_td, const ReferencePath& path,
                      const KinematicParams& params);

  /// Runs predict_delayed_position first.
  GuidanceOutput step(const KiteState& now, const DelayBuffer& buf,
                      const SteeringParams& sp, const ReferencePath& path,
                      const KinematicParams& params);

  double previous_command() const { return previous_command_; }
  int consecutive_failures() const { return consecutive_failures_; }
  std::optional<std::size_t> anchor() const { return anchor_; }

 private:
  Eigen::VectorXd feasible_start(const CondensedQp& cqp, const ReferencePath& path,
                                 std::size_t j) const;

  MpcConfig cfg_;
  QpSolver solver_;
  double previous_command_ = 0.0;
  std::optional<std::size_t> anchor_;
  std::vector<double> previous_plan_;  // absolute commands of the last plan
  int consecutive_failures_ = 0;
};

inline constexpr int kFallbackHoldSamples = 10;

}  // namespace kite
