#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "kite/kinematics.hpp"

namespace kite {

/// Box bounds on the line angles keeping the kite away from ground and zenith.
struct SafetyWindow {
  double theta_min = 0.17;
  double theta_max = 1.40;
  double phi_min = -0.70;
  double phi_max = 0.70;

  bool contains(LineAngles xi, double margin = 0.0) const {
    return xi.theta >= theta_min + margin && xi.theta <= theta_max - margin &&
           xi.phi >= phi_min + margin && xi.phi <= phi_max - margin;
  }
};

struct PathSpec {
  LineAngles center{0.7, 0.0};
  double amplitude = 2.0;    ///< heading sinusoid amplitude, in (pi/2, l_m)
  double rate_limit = 1.0;   ///< l_r [rad/s]
  double rate_margin = 0.8;  ///< fraction of l_r used by the reference
  double command_limit = 2.5;
  SafetyWindow window;

  void validate() const;
};

/// Periodic sequence of positions and headings satisfying the discrete model.
/// Indices wrap modulo size().
class ReferencePath {
 public:
  ReferencePath() = default;
  ReferencePath(std::vector<LineAngles> xi, std::vector<double> gamma,
                KinematicParams params, SafetyWindow window = {});

  std::size_t size() const { return xi_.size(); }
  bool empty() const { return xi_.empty(); }

  const LineAngles& xi(long long i) const { return xi_[wrap(i)]; }
  double gamma(long long i) const { return gamma_[wrap(i)]; }
  std::size_t wrap(long long i) const;

  const std::vector<LineAngles>& positions() const { return xi_; }
  const std::vector<double>& headings() const { return gamma_; }
  const KinematicParams& params() const { return params_; }
  const SafetyWindow& window() const { return window_; }
  double T() const { return params_.T; }

  /// max_i |gamma_{i+1} - gamma_i| / T including the wrap-around step.
  double max_rate() const;
  /// Infinity-norm gap between f_d(xi_{N-1}, gamma_{N-1}) and xi_0 under
  /// the given parameters.
  double closure_gap(const KinematicParams& p) const;
  double closure_gap() const { return closure_gap(params_); }

 private:
  std::vector<LineAngles> xi_;
  std::vector<double> gamma_;
  KinematicParams params_;
  SafetyWindow window_;
};

inline constexpr double kClosureTolerance = 1e-3;

/// Builds a closed figure-of-eight with heading A sin(2 pi i / N) + c by
/// shooting on (theta_0, phi_0, c). N is the smallest even count with
/// N >= 2 pi A / (rate_margin * rate_limit * T).
/// Throws NoClosedPath or WindowViolation.
ReferencePath generate_path(const PathSpec& spec, const KinematicParams& params);

/// Number of samples generate_path would use.
std::size_t path_period_samples(const PathSpec& spec, double T);

/// Global argmin of the Euclidean distance in (theta, phi); smallest index on
/// ties.
std::size_t nearest_reference_index(const ReferencePath& path, LineAngles query);

/// Same search restricted to indices hint - lookback .. hint + lookahead
/// (wrapped). Ties go to the earliest index in that scan order.
std::size_t nearest_reference_index(const ReferencePath& path, LineAngles query,
                                    std::size_t hint, std::size_t lookback,
                                    std::size_t lookahead);

/// True iff the path still satisfies its invariants under new parameters and
/// rate limit: rate within l_r, re-integrated path within the closure
/// tolerance of the stored one, positions inside the window.
bool revalidate(const ReferencePath& path, const KinematicParams& params,
                double rate_limit);

/// CSV with header "index,theta,phi,gamma".
void write_path_csv(std::ostream& out, const ReferencePath& path);
ReferencePath read_path_csv(std::istream& in, const KinematicParams& params,
                            const SafetyWindow& window = {});

}  // namespace kite
