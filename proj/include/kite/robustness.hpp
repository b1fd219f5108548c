#pragma once

#include <complex>
#include <optional>
#include <vector>

namespace kite {

/// Deviation bounds of the steering model parameters.
struct UncertaintyBounds {
  double delta_K = 0.0;
  double delta_td = 0.0;

  /// delta_K = fK * K, delta_td = ftd * t_d
  static UncertaintyBounds relative(double K, double t_d, double fK, double ftd) {
    return {fK * K, ftd * t_d};
  }
};

/// Limits on the commanded heading and the shifted tracking error.
struct PerformanceSpec {
  double l_m = 2.5;  ///< command magnitude limit [rad]
  double l_e = 0.9;  ///< tracking error limit [rad]
  double l_r = 1.0;  ///< command rate limit [rad/s]

  void validate() const;
};

/// Strictly increasing, log-spaced frequencies [rad/s].
class FrequencyGrid {
 public:
  FrequencyGrid(double lo, double hi, std::size_t count);
  static FrequencyGrid standard() { return FrequencyGrid(1e-3, 1e3, 400); }

  const std::vector<double>& omegas() const { return omegas_; }
  std::size_t size() const { return omegas_.size(); }

 private:
  std::vector<double> omegas_;
};

/// Sign of the delay factor in the shifted-sensitivity numerator.
/// kForward is exp(+s t_d); kBackward is exp(-s t_d).
enum class ShiftSign { kForward, kBackward };

/// Multiplicative uncertainty weight for a delayed integrator.
double weight_Wm(double omega, double K, double t_d, const UncertaintyBounds& u);

/// Performance weight, l_m / l_e below l_r / l_m and l_r / (l_e omega) above.
double weight_Wp(double omega, const PerformanceSpec& spec);

/// Loop transfer C(jw; C0) G(jw) of the predictor feedback loop.
std::complex<double> loop_transfer(double omega, double C0, double K, double t_d);

/// Worst case of |W_p S^p| over the unit disk of perturbations at one
/// frequency. Empty when robust stability is lost there (|c| <= |d|).
std::optional<double> worst_case_wp_s(double omega, double C0, double K, double t_d,
                                      const UncertaintyBounds& u,
                                      const PerformanceSpec& spec,
                                      ShiftSign sign = ShiftSign::kForward);

/// |W_p S^p| for one perturbation value; used by sampling checks.
double wp_s_for_perturbation(double omega, double C0, double K, double t_d,
                             const UncertaintyBounds& u, const PerformanceSpec& spec,
                             std::complex<double> delta,
                             ShiftSign sign = ShiftSign::kForward);

/// max over the grid of W_m |T_nom|.
double robust_stability_margin(double C0, double K, double t_d,
                               const UncertaintyBounds& u, const FrequencyGrid& grid);

struct TuneOptions {
  double rs_headroom = 0.7;
  double gain_grid_lo = 1e-3;  ///< C0 K lower end
  double gain_grid_hi = 1e3;   ///< C0 K upper end
  std::size_t gain_grid_points = 241;
  double rate_hi = 50.0;       ///< upper end of the l_r search [rad/s]
  double rate_lo = 1e-3;
  double rate_tolerance = 1e-3;
  ShiftSign sign = ShiftSign::kForward;
};

struct TuneResult {
  double C0 = 0.0;
  double l_r = 0.0;
  double sup = 0.0;     ///< max over the grid of the worst-case |W_p S^p|
  double rs_margin = 0.0;
};

/// Picks C0 as the largest grid gain with RS margin <= headroom, then the
/// largest l_r (by bisection) certifying robust performance on the grid.
/// Throws NoFeasibleGain / NoFeasibleRate.
TuneResult tune(double K, double t_d, const UncertaintyBounds& u, double l_m,
                double l_e, const FrequencyGrid& grid, const TuneOptions& opts = {});

/// max over the grid of worst_case_wp_s; empty if any frequency loses
/// robust stability.
std::optional<double> robust_performance_sup(double C0, double K, double t_d,
                                             const UncertaintyBounds& u,
                                             const PerformanceSpec& spec,
                                             const FrequencyGrid& grid,
                                             ShiftSign sign = ShiftSign::kForward);

}  // namespace kite
