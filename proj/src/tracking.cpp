#include "kite/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kite/error.hpp"

namespace kite {

std::size_t SteeringParams::delay_samples() const {
  return static_cast<std::size_t>(std::llround(t_d / T));
}

void SteeringParams::validate() const {
  if (!(K > 0.0) || !std::isfinite(K)) {
    throw Error(ErrorKind::kInvalidArgument, "steering gain K must be positive");
  }
  if (!(t_d >= 0.0) || !std::isfinite(t_d)) {
    throw Error(ErrorKind::kInvalidArgument, "delay t_d must be non-negative");
  }
  if (!(T > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "sampling period must be positive");
  }
}

DelayBuffer DelayBuffer::from_history(std::span<const double> history,
                                      std::size_t length) {
  std::deque<double> values(length, 0.0);
  const std::size_t take = std::min(length, history.size());
  std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(),
            values.end() - static_cast<std::ptrdiff_t>(take));
  return DelayBuffer(std::move(values));
}

double DelayBuffer::sum() const {
  return std::accumulate(values_.begin(), values_.end(), 0.0);
}

double DelayBuffer::push(double delta) {
  if (values_.empty()) return delta;
  const double out = values_.front();
  values_.pop_front();
  values_.push_back(delta);
  return out;
}

void DelayBuffer::resize(std::size_t length) {
  while (values_.size() > length) values_.pop_front();
  while (values_.size() < length) values_.push_back(0.0);
}

double predict_heading(double gamma_now, const DelayBuffer& buf, const SteeringParams& p) {
  if (buf.size() != p.delay_samples()) {
    throw Error(ErrorKind::kBufferLengthMismatch,
                "buffer holds " + std::to_string(buf.size()) + " inputs, delay needs " +
                    std::to_string(p.delay_samples()));
  }
  return gamma_now + p.K * p.T * buf.sum();
}

double control(double gamma_cmd, double gamma_pred, const TrackingGain& gain,
               std::optional<double> delta_max) {
  const double delta = gain.C0 * (gamma_cmd - gamma_pred);
  if (delta_max) return std::clamp(delta, -*delta_max, *delta_max);
  return delta;
}

std::vector<double> shifted_error(std::span<const double> gamma_cmd,
                                  std::span<const double> gamma,
                                  const SteeringParams& p) {
  const std::size_t n = p.delay_samples();
  const std::size_t len = std::min(gamma_cmd.size(), gamma.size());
  if (len <= n) {
    throw Error(ErrorKind::kSeriesTooShort,
                "series of length " + std::to_string(len) + " cannot be shifted by " +
                    std::to_string(n));
  }
  std::vector<double> e(len - n);
  for (std::size_t k = 0; k < e.size(); ++k) e[k] = gamma_cmd[k] - gamma[k + n];
  return e;
}

}  // namespace kite
