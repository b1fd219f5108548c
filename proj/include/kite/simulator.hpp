#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kite/estimation.hpp"
#include "kite/guidance_mpc.hpp"
#include "kite/kinematics.hpp"
#include "kite/qp_solver.hpp"
#include "kite/reference_path.hpp"
#include "kite/robustness.hpp"
#include "kite/tracking.hpp"

namespace kite {

/// Linear interpolation between (time, value) knots, held constant outside.
class PiecewiseLinear {
 public:
  PiecewiseLinear() = default;
  explicit PiecewiseLinear(double constant) : knots_{{0.0, constant}} {}
  explicit PiecewiseLinear(std::vector<std::pair<double, double>> knots);

  double operator()(double t) const;
  const std::vector<std::pair<double, double>>& knots() const { return knots_; }
  double min_value() const;

 private:
  std::vector<std::pair<double, double>> knots_;
};

/// Truth parameters as functions of wind speed w [m/s] and line length r [m]:
///   r alpha_L = E w, r alpha_G = c_G, K = c_K w / r^2, t_d = a_d + b_d r / w^2
struct CouplingLaws {
  double E = 4.0;
  double c_G = 6.0;
  double c_K = 540.0;
  double a_d = 0.4;
  double b_d = 0.0675;

  KinematicParams kinematic(double w, double r, double T) const;
  SteeringParams steering(double w, double r, double T) const;
};

struct EstimatorConfig {
  bool online_updates = true;
  std::size_t heading_width = 9;  ///< odd
  IdentifyOptions identify;
};

struct ScenarioConfig {
  std::string name = "scenario";
  double duration = 15.0;
  double T = 0.01;
  PiecewiseLinear wind{4.5};
  PiecewiseLinear line{90.0};
  CouplingLaws coupling;
  double tau_act = 0.05;  ///< 0 disables the actuator lag
  double sigma_theta = 5e-4;
  double sigma_phi = 5e-4;
  std::uint64_t seed = 1;
  bool freeze_truth = false;  ///< truth parameters fixed at their t = 0 values
  std::size_t start_index = 0;

  PathSpec path;
  MpcConfig mpc;
  double fraction_K = 0.2;
  double fraction_td = 0.2;
  double l_e = 0.9;
  TuneOptions tuning;
  std::optional<double> delta_max;
  EstimatorConfig estimator;
  QpSettings solver;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

struct TruthParams {
  KinematicParams kinematic;
  SteeringParams steering;
};

struct Measurement {
  double theta = 0.0;
  double phi = 0.0;
  double r = 0.0;
};

/// Delayed steering plant with time-varying parameters, actuator lag and
/// noisy line-angle measurements.
class PlantTruth {
 public:
  PlantTruth(const ScenarioConfig& scenario, KiteState initial);

  /// Pre-fills the actuator pipeline (oldest first), e.g. to start in steady
  /// flight along a path.
  void prime(std::span<const double> inputs);

  /// Advances one sample with the parameters at (w, r). Throws NearZenith.
  const KiteState& plant_step(double delta_applied, double w, double r);
  Measurement measure();

  const KiteState& state() const { return state_; }
  const TruthParams& params() const { return params_; }
  void set_conditions(double w, double r);

 private:
  const ScenarioConfig* scenario_;
  KiteState state_;
  TruthParams params_;
  DelayBuffer pipeline_;
  double lagged_ = 0.0;
  std::mt19937_64 rng_;
  std::normal_distribution<double> noise_{0.0, 1.0};
};

struct SimRecord {
  double t = 0.0;
  double theta = 0.0;
  double phi = 0.0;
  double gamma = 0.0;
  double r = 0.0;
  double wind = 0.0;
  double v_true = 0.0;
  double meas_theta = 0.0;
  double meas_phi = 0.0;
  double gamma_hat = 0.0;  ///< heading estimate, lag samples in the past
  double v_meas = 0.0;
  double v_model = 0.0;
  double td_theta = 0.0;
  double td_phi = 0.0;
  double gamma_td = 0.0;
  double gamma_cmd = 0.0;
  double delta = 0.0;
  std::size_t ref_index = 0;
  double ref_theta = 0.0;
  double ref_phi = 0.0;
  double ref_gamma = 0.0;
  double alpha_L_hat = 0.0;
  double alpha_G_hat = 0.0;
  double K_hat = 0.0;
  double t_d_hat = 0.0;
  double C0 = 0.0;
  double l_r = 0.0;
  Validity validity = Validity::kValid;
  double alpha_L_true = 0.0;
  double alpha_G_true = 0.0;
  double K_true = 0.0;
  double t_d_true = 0.0;
  bool slack_active = false;
  QpStatus status = QpStatus::kOptimal;
  int iterations = 0;
  double cost = 0.0;
  double kkt_stationarity = 0.0;
  double kkt_primal = 0.0;
  double kkt_complementarity = 0.0;
  bool fallback = false;
  bool update = false;
  int path_version = 0;
};

struct UpdateEvent {
  double t = 0.0;
  ParamEstimate estimate;
  double C0 = 0.0;
  double l_r = 0.0;
  bool accepted = false;
  bool regenerated = false;
  std::string note;
};

struct SimLog {
  double T = 0.01;
  double initial_command = 0.0;  ///< command assumed issued before t = 0
  std::vector<SimRecord> records;
  std::vector<UpdateEvent> updates;
  std::vector<ReferencePath> paths;  ///< index = path_version
  double cycles = 0.0;               ///< reference-index progress in periods
};

struct RunHooks {
  std::function<void(const SimRecord&, const GuidanceOutput&)> on_guidance;
};

/// Closed-loop run: measure, estimate heading, predict, guidance, tracking
/// control, plant. Parameter updates are applied between samples. Throws
/// RunAborted on NearZenith or more than 100 consecutive solver failures.
SimLog run_closed_loop(const ScenarioConfig& scenario, const RunHooks* hooks = nullptr);

inline constexpr int kMaxConsecutiveSolverFailures = 100;

struct SimSummary {
  std::size_t samples = 0;
  double duration = 0.0;
  double rms_position = 0.0;  ///< distance of xi to the reference path
  double rms_delayed = 0.0;   ///< distance of xi^{t_d} to the reference path
  double max_shifted_error = 0.0;
  std::size_t window_violations = 0;  ///< truth samples outside the window
  std::size_t window_violations_after_transient = 0;
  double transient = 10.0;
  std::size_t completed_cycles = 0;
  std::size_t update_firings = 0;
  std::size_t accepted_updates = 0;
  std::size_t regenerations = 0;
  std::size_t solver_failures = 0;
  std::size_t slack_samples = 0;
  double max_command = 0.0;
  double max_command_rate_excess = -std::numeric_limits<double>::infinity();  ///< max of |rate| - l_r
  double max_kkt_stationarity = 0.0;
  double max_kkt_primal = 0.0;
  double max_kkt_complementarity = 0.0;
  double delay_line_correlation = 0.0;  ///< t_d_hat vs r where wind is steady
};

SimSummary summarize(const SimLog& log, const SafetyWindow& window, double transient = 10.0);

/// Pearson correlation of the delay estimate with the line length over
/// samples where the wind changes by less than `wind_tol` m/s within
/// +-`hold` seconds. Returns 0 when fewer than two such samples exist or a
/// series is constant.
double delay_line_correlation(const SimLog& log, double wind_tol = 0.05, double hold = 5.0);

}  // namespace kite
