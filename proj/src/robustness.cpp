#include "kite/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kite/error.hpp"

namespace kite {
namespace {

using cplx = std::complex<double>;
constexpr cplx kJ{0.0, 1.0};

struct MobiusTerms {
  cplx a, b, c, d;
};

// S^p = (a + b Delta) / (c + d Delta) at s = j omega.
MobiusTerms sensitivity_terms(double omega, double C0, double K, double t_d,
                              const UncertaintyBounds& u, ShiftSign sign) {
  const cplx L = loop_transfer(omega, C0, K, t_d);
  const double wm = weight_Wm(omega, K, t_d, u);
  const double s = sign == ShiftSign::kForward ? 1.0 : -1.0;
  const cplx shift = 1.0 - std::exp(s * kJ * omega * t_d);
  return {1.0 + L * shift, L * shift * wm, 1.0 + L, L * wm};
}

}  // namespace

void PerformanceSpec::validate() const {
  if (!(l_m > 0.0 && l_e > 0.0 && l_r > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "l_m, l_e and l_r must be positive");
  }
  if (!(l_e < l_m)) {
    throw Error(ErrorKind::kInvalidArgument, "l_e must be smaller than l_m");
  }
}

FrequencyGrid::FrequencyGrid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0 && hi > lo && count >= 2)) {
    throw Error(ErrorKind::kInvalidArgument, "frequency grid needs 0 < lo < hi, count >= 2");
  }
  omegas_.resize(count);
  const double llo = std::log10(lo);
  const double step = (std::log10(hi) - llo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) {
    omegas_[i] = std::pow(10.0, llo + step * static_cast<double>(i));
  }
}

double weight_Wm(double omega, double K, double t_d, const UncertaintyBounds& u) {
  (void)t_d;
  const double gain = (K + u.delta_K) / K;
  if (u.delta_td == 0.0 || omega < std::numbers::pi / u.delta_td) {
    return std::abs(gain * std::exp(-kJ * u.delta_td * omega) - 1.0);
  }
  return std::abs(gain) + 1.0;
}

double weight_Wp(double omega, const PerformanceSpec& spec) {
  if (omega < spec.l_r / spec.l_m) return spec.l_m / spec.l_e;
  return spec.l_r / (spec.l_e * omega);
}

std::complex<double> loop_transfer(double omega, double C0, double K, double t_d) {
  const cplx s = kJ * omega;
  const cplx g0 = K / s;
  const cplx delay = std::exp(-s * t_d);
  const cplx controller = C0 / (1.0 + C0 * g0 * (1.0 - delay));
  return controller * g0 * delay;
}

std::optional<double> worst_case_wp_s(double omega, double C0, double K, double t_d,
                                      const UncertaintyBounds& u,
                                      const PerformanceSpec& spec, ShiftSign sign) {
  const auto [a, b, c, d] = sensitivity_terms(omega, C0, K, t_d, u, sign);
  const double den = std::norm(c) - std::norm(d);
  if (!(den > 0.0)) return std::nullopt;
  // Image of the unit circle under the Moebius map is a circle; the maximum
  // modulus over the disk sits on it, at |center| + radius.
  const cplx center = (a * std::conj(c) - b * std::conj(d)) / den;
  const double radius = std::abs(b * c - a * d) / den;
  return weight_Wp(omega, spec) * (std::abs(center) + radius);
}

double wp_s_for_perturbation(double omega, double C0, double K, double t_d,
                             const UncertaintyBounds& u, const PerformanceSpec& spec,
                             std::complex<double> delta, ShiftSign sign) {
  const auto [a, b, c, d] = sensitivity_terms(omega, C0, K, t_d, u, sign);
  return weight_Wp(omega, spec) * std::abs((a + b * delta) / (c + d * delta));
}

double robust_stability_margin(double C0, double K, double t_d,
                               const UncertaintyBounds& u, const FrequencyGrid& grid) {
  double margin = 0.0;
  const double ck = C0 * K;
  for (double w : grid.omegas()) {
    const double t_nom = ck / std::sqrt(w * w + ck * ck);
    margin = std::max(margin, weight_Wm(w, K, t_d, u) * t_nom);
  }
  return margin;
}

std::optional<double> robust_performance_sup(double C0, double K, double t_d,
                                             const UncertaintyBounds& u,
                                             const PerformanceSpec& spec,
                                             const FrequencyGrid& grid, ShiftSign sign) {
  double sup = 0.0;
  for (double w : grid.omegas()) {
    const auto v = worst_case_wp_s(w, C0, K, t_d, u, spec, sign);
    if (!v) return std::nullopt;
    sup = std::max(sup, *v);
  }
  return sup;
}

TuneResult tune(double K, double t_d, const UncertaintyBounds& u, double l_m, double l_e,
                const FrequencyGrid& grid, const TuneOptions& opts) {
  if (!(K > 0.0) || !(t_d > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "tuning needs K > 0 and t_d > 0");
  }
  PerformanceSpec spec{l_m, l_e, opts.rate_hi};
  spec.validate();

  std::optional<double> gain;
  double margin = 0.0;
  const FrequencyGrid gains(opts.gain_grid_lo, opts.gain_grid_hi, opts.gain_grid_points);
  for (double g : gains.omegas()) {
    const double C0 = g / K;
    const double m = robust_stability_margin(C0, K, t_d, u, grid);
    if (m <= opts.rs_headroom) {
      gain = C0;
      margin = m;
    }
  }
  if (!gain) {
    throw Error(ErrorKind::kNoFeasibleGain,
                "no grid gain keeps the robust stability margin below the headroom");
  }

  auto certified = [&](double l_r) -> std::optional<double> {
    PerformanceSpec s{l_m, l_e, l_r};
    auto sup = robust_performance_sup(*gain, K, t_d, u, s, grid, opts.sign);
    if (sup && *sup < 1.0) return sup;
    return std::nullopt;
  };

  TuneResult result{*gain, 0.0, 0.0, margin};
  if (auto top = certified(opts.rate_hi)) {
    result.l_r = opts.rate_hi;
    result.sup = *top;
    return result;
  }
  auto bottom = certified(opts.rate_lo);
  if (!bottom) {
    throw Error(ErrorKind::kNoFeasibleRate,
                "robust performance fails even at the smallest rate limit");
  }
  double lo = opts.rate_lo;
  double hi = opts.rate_hi;
  double sup_lo = *bottom;
  while (hi - lo > opts.rate_tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (auto s = certified(mid)) {
      lo = mid;
      sup_lo = *s;
    } else {
      hi = mid;
    }
  }
  result.l_r = lo;
  result.sup = sup_lo;
  return result;
}

}  // namespace kite
