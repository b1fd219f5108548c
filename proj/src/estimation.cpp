#include "kite/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Dense>

#include "kite/error.hpp"

namespace kite {
namespace {

std::vector<double> raw_difference(std::span<const double> x, std::span<const bool> ok,
                                   double T, DiffScheme scheme, std::vector<bool>& valid) {
  const std::size_t n = x.size();
  std::vector<double> d(n, 0.0);
  valid.assign(n, false);
  auto good = [&](std::size_t i) { return ok.empty() || ok[i]; };
  for (std::size_t k = 0; k < n; ++k) {
    if (scheme == DiffScheme::kForward) {
      if (k + 1 < n && good(k) && good(k + 1)) {
        d[k] = (x[k + 1] - x[k]) / T;
        valid[k] = true;
      }
      continue;
    }
    if (n < 2) continue;
    const std::size_t lo = k == 0 ? 0 : k - 1;
    const std::size_t hi = k + 1 == n ? k : k + 1;
    if (good(lo) && good(hi)) {
      d[k] = (x[hi] - x[lo]) / (static_cast<double>(hi - lo) * T);
      valid[k] = true;
    }
  }
  return d;
}

// Centered moving average. Near the ends the window keeps its width and
// shifts inward; shrinking it would leave the end samples unsmoothed.
std::vector<double> smooth(const std::vector<double>& x, std::vector<bool>& valid,
                           std::size_t width) {
  const std::size_t n = x.size();
  const std::size_t half = width > 0 ? (width - 1) / 2 : 0;
  std::vector<double> out(n, 0.0);
  std::vector<bool> out_valid(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t span = std::min(2 * half, n - 1);
    const std::size_t lo = std::min(k > half ? k - half : 0, n - 1 - span);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = lo; i <= lo + span; ++i) {
      if (!valid[i]) continue;
      sum += x[i];
      ++count;
    }
    if (count > 0 && valid[k]) {
      out[k] = sum / static_cast<double>(count);
      out_valid[k] = true;
    }
  }
  valid = std::move(out_valid);
  return out;
}

Validity worst(Validity a, Validity b) { return static_cast<int>(a) > static_cast<int>(b) ? a : b; }

}  // namespace

void MeasurementWindow::validate() const {
  if (!(T > 0.0)) throw Error(ErrorKind::kInvalidArgument, "sampling period must be positive");
  const std::size_t n = theta.size();
  if (phi.size() != n || r.size() != n || delta.size() != n ||
      (!wind.empty() && wind.size() != n)) {
    throw Error(ErrorKind::kInvalidArgument, "measurement series differ in length");
  }
}

const char* to_string(Validity v) {
  switch (v) {
    case Validity::kValid: return "valid";
    case Validity::kDegraded: return "degraded";
    case Validity::kInvalid: return "invalid";
  }
  return "invalid";
}

std::vector<RateSample> finite_difference_rates(const MeasurementWindow& window,
                                                const RateOptions& opts) {
  window.validate();
  const std::size_t n = window.size();
  if (n < std::max<std::size_t>(opts.smoothing_width, 2)) {
    throw Error(ErrorKind::kWindowTooShort, "window shorter than the smoothing width");
  }
  std::vector<bool> vt;
  std::vector<bool> vp;
  auto td = raw_difference(window.theta, {}, window.T, opts.scheme, vt);
  auto pd = raw_difference(window.phi, {}, window.T, opts.scheme, vp);
  td = smooth(td, vt, opts.smoothing_width);
  pd = smooth(pd, vp, opts.smoothing_width);

  std::vector<RateSample> out(n);
  std::optional<double> last_gamma;
  for (std::size_t k = 0; k < n; ++k) {
    RateSample& s = out[k];
    s.theta = window.theta[k];
    s.phi = window.phi[k];
    s.r = window.r[k];
    s.theta_dot = td[k];
    s.phi_dot = pd[k];
    const double c = std::cos(s.theta);
    const double speed = std::sqrt(s.theta_dot * s.theta_dot + c * c * s.phi_dot * s.phi_dot);
    s.v_meas = s.r * speed;
    s.valid = vt[k] && vp[k] && speed > opts.min_rate;
    if (!s.valid) continue;
    const double g = heading_from_rates(s.theta, s.theta_dot, s.phi_dot);
    s.gamma = last_gamma ? unwrap_angle(*last_gamma, g) : g;
    last_gamma = s.gamma;
  }
  return out;
}

std::vector<double> heading_rates(std::span<const RateSample> rates, double T,
                                  const RateOptions& opts, std::vector<bool>* valid) {
  std::vector<double> gamma(rates.size());
  std::vector<bool> ok(rates.size());
  for (std::size_t k = 0; k < rates.size(); ++k) {
    gamma[k] = rates[k].gamma;
    ok[k] = rates[k].valid;
  }
  // vector<bool> has no contiguous storage to view as a span.
  std::unique_ptr<bool[]> okb(new bool[ok.size()]);
  for (std::size_t k = 0; k < ok.size(); ++k) okb[k] = ok[k];
  std::vector<bool> v;
  auto d = raw_difference(gamma, std::span<const bool>(okb.get(), ok.size()), T, opts.scheme, v);
  d = smooth(d, v, opts.smoothing_width);
  if (valid) *valid = std::move(v);
  return d;
}

VelocityFit fit_velocity_params(std::span<const RateSample> rates) {
  std::vector<const RateSample*> used;
  for (const auto& s : rates) {
    if (s.valid) used.push_back(&s);
  }
  if (used.size() < 2) {
    throw Error(ErrorKind::kDegenerateData, "fewer than two valid velocity samples");
  }
  const auto n = static_cast<Eigen::Index>(used.size());
  Eigen::MatrixX2d X(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const RateSample& s = *used[static_cast<std::size_t>(i)];
    X(i, 0) = s.r * std::cos(s.theta) * std::cos(s.phi);
    X(i, 1) = -s.r * std::cos(s.gamma);
    y(i) = s.v_meas;
  }
  Eigen::JacobiSVD<Eigen::MatrixX2d> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto sv = svd.singularValues();
  if (!(sv(1) > 0.0) || sv(0) / sv(1) > 1e8) {
    throw Error(ErrorKind::kDegenerateData, "velocity regressors are nearly collinear");
  }
  Eigen::Vector2d coef = svd.solve(y);
  VelocityFit fit;
  fit.validity = Validity::kValid;
  constexpr double kFloor = 1e-4;
  if (coef(0) <= 0.0 || coef(1) <= 0.0) {
    fit.validity = Validity::kDegraded;
    if (coef(0) <= 0.0 && coef(1) <= 0.0) {
      coef << kFloor, kFloor;
    } else if (coef(0) <= 0.0) {
      coef(0) = kFloor;
      coef(1) = std::max(kFloor, X.col(1).dot(y - kFloor * X.col(0)) / X.col(1).squaredNorm());
    } else {
      coef(1) = kFloor;
      coef(0) = std::max(kFloor, X.col(0).dot(y - kFloor * X.col(1)) / X.col(0).squaredNorm());
    }
  }
  fit.alpha_L = coef(0);
  fit.alpha_G = coef(1);
  fit.residual = std::sqrt((y - X * coef).squaredNorm() / static_cast<double>(n));
  return fit;
}

SteeringFit fit_steering_params(std::span<const double> gamma_dot,
                                std::span<const double> delta, double T, double t_d_max,
                                std::span<const bool> valid) {
  if (!(T > 0.0) || !(t_d_max >= 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "need T > 0 and t_d_max >= 0");
  }
  const auto max_lag = static_cast<std::size_t>(std::llround(t_d_max / T));
  const std::size_t n = gamma_dot.size();
  if (delta.size() != n + max_lag) {
    throw Error(ErrorKind::kInvalidArgument,
                "steering input series must cover the fit window plus the lag history");
  }
  if (!valid.empty() && valid.size() != n) {
    throw Error(ErrorKind::kInvalidArgument, "validity mask length differs from the series");
  }
  SteeringFit fit;
  fit.sse.assign(max_lag + 1, std::numeric_limits<double>::infinity());
  std::optional<std::size_t> best;
  double best_k = 0.0;
  std::size_t used = 0;
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double sdd = 0.0;
    double sgd = 0.0;
    double sgg = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (!valid.empty() && !valid[k]) continue;
      const double d = delta[max_lag + k - lag];
      sdd += d * d;
      sgd += gamma_dot[k] * d;
      sgg += gamma_dot[k] * gamma_dot[k];
      ++count;
    }
    if (sdd < 1e-10) continue;
    const double k_hat = sgd / sdd;
    fit.sse[lag] = std::max(0.0, sgg - sgd * k_hat);
    if (!best || fit.sse[lag] < fit.sse[*best]) {
      best = lag;
      best_k = k_hat;
      used = count;
    }
  }
  if (!best) throw Error(ErrorKind::kDegenerateData, "steering input energy vanishes");
  fit.t_d = static_cast<double>(*best) * T;
  fit.residual = std::sqrt(fit.sse[*best] / static_cast<double>(std::max<std::size_t>(used, 1)));
  fit.validity = Validity::kValid;
  fit.K = best_k;
  if (fit.K <= 0.0) {
    fit.K = 1e-4;
    fit.validity = Validity::kDegraded;
  }
  return fit;
}

ParamEstimate identify(const MeasurementWindow& window, const IdentifyOptions& opts) {
  window.validate();
  const auto max_lag = static_cast<std::size_t>(std::llround(opts.t_d_max / window.T));
  const std::size_t n = window.size();
  if (n < max_lag + kMinFitSamples) {
    throw Error(ErrorKind::kWindowTooShort, "window too short for the steering-lag history");
  }
  const auto rates = finite_difference_rates(window, opts.rates);
  std::vector<bool> gd_valid;
  const auto gd = heading_rates(rates, window.T, opts.rates, &gd_valid);

  const std::span<const RateSample> fit_rates(rates.data() + max_lag, n - max_lag);
  const VelocityFit vel = fit_velocity_params(fit_rates);

  // The heading rate went through two differences and two moving averages;
  // the steering input gets the same treatment so the regression stays
  // consistent. Central differences of central-difference headings amount
  // to a [1 2 1]/4 kernel on the input.
  std::vector<double> input(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (opts.rates.scheme == DiffScheme::kForward) {
      input[k] = window.delta[k];
    } else {
      const double a = window.delta[k];
      const double b = window.delta[k > 0 ? k - 1 : 0];
      const double c = window.delta[k > 1 ? k - 2 : 0];
      input[k] = 0.25 * (a + 2.0 * b + c);
    }
  }
  std::vector<bool> all(n, true);
  input = smooth(input, all, opts.rates.smoothing_width);
  input = smooth(input, all, opts.rates.smoothing_width);

  // Drop the edges where the moving averages shrink.
  const std::size_t edge = 2 * (opts.rates.smoothing_width / 2) + 2;
  std::unique_ptr<bool[]> mask(new bool[n - max_lag]);
  for (std::size_t k = 0; k < n - max_lag; ++k) {
    mask[k] = gd_valid[max_lag + k] && k + edge < n - max_lag &&
              (opts.rates.smoothing_width <= 1 || max_lag + k >= edge);
  }
  const SteeringFit st = fit_steering_params(
      std::span<const double>(gd.data() + max_lag, n - max_lag), input, window.T,
      opts.t_d_max, std::span<const bool>(mask.get(), n - max_lag));

  ParamEstimate est;
  est.alpha_L = vel.alpha_L;
  est.alpha_G = vel.alpha_G;
  est.K = st.K;
  est.t_d = st.t_d;
  est.velocity_residual = vel.residual;
  est.steering_residual = st.residual;
  est.validity = worst(vel.validity, st.validity);
  return est;
}

void UpdateScheduler::reset(std::size_t period) {
  period_ = period;
  last_.reset();
}

bool UpdateScheduler::observe(std::size_t index) {
  if (period_ < 2) return false;
  const std::size_t n = period_;
  index %= n;
  if (!last_) {
    last_ = index;
    return false;
  }
  const std::size_t d = (index + n - *last_) % n;
  // Backward or stalled motion leaves the reference point in place, so
  // jitter around an anchor cannot fire twice.
  if (d == 0 || d >= n / 2) return false;
  bool crossed = false;
  for (std::size_t anchor : {std::size_t{0}, n / 2}) {
    const std::size_t offset = (anchor + n - *last_) % n;
    if (offset > 0 && offset <= d) crossed = true;
  }
  last_ = index;
  since_fire_ += static_cast<double>(d) / static_cast<double>(n);
  if (!crossed || since_fire_ < kRefractory) return false;
  since_fire_ = 0.0;
  ++firings_;
  return true;
}

HeadingEstimator::HeadingEstimator(std::size_t width, double T) : width_(width), T_(T) {
  if (width < 3 || width % 2 == 0) {
    throw Error(ErrorKind::kInvalidArgument, "heading estimator width must be odd and >= 3");
  }
  if (!(T > 0.0)) throw Error(ErrorKind::kInvalidArgument, "sampling period must be positive");
}

void HeadingEstimator::push(LineAngles measured) {
  if (theta_.size() == width_) {
    theta_.erase(theta_.begin());
    phi_.erase(phi_.begin());
  }
  theta_.push_back(measured.theta);
  phi_.push_back(measured.phi);
}

HeadingEstimator::Estimate HeadingEstimator::estimate() {
  if (!ready()) throw Error(ErrorKind::kWindowTooShort, "heading estimator not filled");
  const double c = static_cast<double>(lag());
  double st = 0.0, sp = 0.0, mt = 0.0, mp = 0.0, tt = 0.0;
  for (std::size_t i = 0; i < width_; ++i) {
    const double t = (static_cast<double>(i) - c) * T_;
    st += t * theta_[i];
    sp += t * phi_[i];
    mt += theta_[i];
    mp += phi_[i];
    tt += t * t;
  }
  Estimate e;
  e.xi = {mt / static_cast<double>(width_), mp / static_cast<double>(width_)};
  e.theta_dot = st / tt;
  e.phi_dot = sp / tt;
  const double g = heading_from_rates(e.xi.theta, e.theta_dot, e.phi_dot);
  e.gamma = last_gamma_ ? unwrap_angle(*last_gamma_, g) : g;
  last_gamma_ = e.gamma;
  return e;
}

}  // namespace kite
