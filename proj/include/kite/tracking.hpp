#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace kite {

/// Steering model gamma_dot(t) = K delta(t - t_d).
struct SteeringParams {
  double K = 0.3;    ///< steering gain [rad/(m s)]
  double t_d = 0.7;  ///< input delay [s]
  double T = 0.01;   ///< sampling period [s]

  /// round(t_d / T)
  std::size_t delay_samples() const;
  void validate() const;
};

/// The last n applied steering inputs, oldest first.
class DelayBuffer {
 public:
  explicit DelayBuffer(std::size_t length = 0) : values_(length, 0.0) {}
  explicit DelayBuffer(std::deque<double> values) : values_(std::move(values)) {}

  /// Builds a buffer holding the last `length` entries of `history`
  /// (oldest first); missing older entries are zero.
  static DelayBuffer from_history(std::span<const double> history, std::size_t length);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double oldest() const { return values_.front(); }
  double sum() const;

  /// Appends the newest input and returns the one that leaves the buffer.
  /// With an empty buffer the input passes straight through.
  double push(double delta);

  /// Shrinking drops the oldest entries; growing appends zeros as the newest.
  void resize(std::size_t length);

 private:
  std::deque<double> values_;
};

enum class GainProvenance { kManual, kTunedByRobustness };

struct TrackingGain {
  double C0 = 1.0;
  GainProvenance provenance = GainProvenance::kManual;
};

/// gamma_now + K T sum(buffer): the heading t_d ahead under the steering
/// model. Throws BufferLengthMismatch if buf.size() != round(t_d / T).
double predict_heading(double gamma_now, const DelayBuffer& buf, const SteeringParams& p);

/// Proportional predictor feedback, optionally saturated at +-delta_max.
double control(double gamma_cmd, double gamma_pred, const TrackingGain& gain,
               std::optional<double> delta_max = std::nullopt);

/// e[k] = gamma_cmd[k] - gamma[k + n_d] for k = 0 .. size - 1 - n_d.
/// Throws SeriesTooShort.
std::vector<double> shifted_error(std::span<const double> gamma_cmd,
                                  std::span<const double> gamma,
                                  const SteeringParams& p);

}  // namespace kite
