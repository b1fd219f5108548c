#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kite/kinematics.hpp"

namespace kite {

/// Uniformly sampled measurements. All series have the same length.
struct MeasurementWindow {
  double T = 0.01;
  std::vector<double> theta;
  std::vector<double> phi;
  std::vector<double> r;
  std::vector<double> delta;  ///< steering input as issued by the controller
  std::vector<double> wind;

  std::size_t size() const { return theta.size(); }
  /// Throws InvalidArgument on unequal lengths or T <= 0.
  void validate() const;
};

inline constexpr std::size_t kMinFitSamples = 50;

enum class DiffScheme {
  kCentral,  ///< (x[k+1] - x[k-1]) / 2T, one-sided at the ends
  kForward,  ///< (x[k+1] - x[k]) / T, last sample invalid
};

struct RateOptions {
  std::size_t smoothing_width = 9;
  DiffScheme scheme = DiffScheme::kCentral;
  double min_rate = 1e-9;  ///< below this angular speed the heading is undefined
};

struct RateSample {
  double theta = 0.0;
  double phi = 0.0;
  double r = 0.0;
  double theta_dot = 0.0;
  double phi_dot = 0.0;
  double gamma = 0.0;  ///< unwrapped across valid samples
  double v_meas = 0.0;
  bool valid = false;
};

/// Throws WindowTooShort when the window is shorter than the smoothing width.
std::vector<RateSample> finite_difference_rates(const MeasurementWindow& window,
                                                const RateOptions& opts = {});

/// Derivative of the heading series with the same scheme and smoothing.
/// A sample is valid when every heading it touches is valid.
std::vector<double> heading_rates(std::span<const RateSample> rates, double T,
                                  const RateOptions& opts, std::vector<bool>* valid);

enum class Validity { kValid, kDegraded, kInvalid };

const char* to_string(Validity v);

struct VelocityFit {
  double alpha_L = 0.0;
  double alpha_G = 0.0;
  double residual = 0.0;  ///< RMS of v_meas - model
  Validity validity = Validity::kInvalid;
};

/// Least squares of v_meas on (r cos(theta) cos(phi), -r cos(gamma)) over the
/// valid samples. Throws DegenerateData (condition number above 1e8 or fewer
/// than two samples).
VelocityFit fit_velocity_params(std::span<const RateSample> rates);

struct SteeringFit {
  double K = 0.0;
  double t_d = 0.0;
  double residual = 0.0;  ///< RMS at the chosen lag
  Validity validity = Validity::kInvalid;
  std::vector<double> sse;  ///< per lag 0 .. max_lag
};

inline constexpr double kDefaultMaxDelay = 1.5;

/// Lag grid search of gamma_dot[k] = K delta[k - lag]. `delta` holds
/// max_lag = round(t_d_max / T) samples of history before gamma_dot[0], so
/// delta.size() == gamma_dot.size() + max_lag. Samples with valid[k] false
/// are ignored. Throws InvalidArgument on a size mismatch, DegenerateData
/// when the input energy is below 1e-10 at every lag.
SteeringFit fit_steering_params(std::span<const double> gamma_dot,
                                std::span<const double> delta, double T,
                                double t_d_max = kDefaultMaxDelay,
                                std::span<const bool> valid = {});

struct ParamEstimate {
  double alpha_L = 0.0;
  double alpha_G = 0.0;
  double K = 0.0;
  double t_d = 0.0;
  double velocity_residual = 0.0;
  double steering_residual = 0.0;
  double time = 0.0;
  Validity validity = Validity::kInvalid;
};

struct IdentifyOptions {
  RateOptions rates;
  double t_d_max = kDefaultMaxDelay;
};

/// Runs both fits. The first round(t_d_max / T) samples of the window serve
/// only as steering-input history. Throws WindowTooShort when fewer than
/// kMinFitSamples remain, DegenerateData from the fits.
ParamEstimate identify(const MeasurementWindow& window, const IdentifyOptions& opts = {});

/// Fires when the reference index passes 0 or N/2 moving forward, at most
/// once per quarter period of progress. The progress count survives reset()
/// so a path change right after a firing cannot fire again.
class UpdateScheduler {
 public:
  explicit UpdateScheduler(std::size_t period = 0) : period_(period) {}

  /// Forgets the previous index, e.g. after a path change.
  void reset(std::size_t period);
  bool observe(std::size_t index);
  std::size_t firings() const { return firings_; }

 private:
  static constexpr double kRefractory = 0.25;

  std::size_t period_;
  std::optional<std::size_t> last_;
  std::size_t firings_ = 0;
  double since_fire_ = 1.0;
};

/// Sliding-window heading estimate from noisy line angles: a straight-line
/// fit over the last `width` samples evaluated at its centre, i.e. `lag()`
/// samples in the past.
class HeadingEstimator {
 public:
  explicit HeadingEstimator(std::size_t width = 9, double T = 0.01);

  void push(LineAngles measured);
  bool ready() const { return theta_.size() == width_; }
  std::size_t lag() const { return (width_ - 1) / 2; }

  struct Estimate {
    LineAngles xi;
    double theta_dot = 0.0;
    double phi_dot = 0.0;
    double gamma = 0.0;
  };
  /// Heading unwrapped against the previous estimate. Throws ZeroVelocity.
  Estimate estimate();

 private:
  std::size_t width_;
  double T_;
  std::vector<double> theta_;
  std::vector<double> phi_;
  std::optional<double> last_gamma_;
};

}  // namespace kite
