#include "kite/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

#include "kite/error.hpp"

namespace kite {
namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw Error(ErrorKind::kInvalidArgument, field + ": " + what);
}

// Generation with the configured amplitude first, then smaller ones.
std::optional<ReferencePath> try_generate(PathSpec spec, const KinematicParams& params) {
  const double a0 = spec.amplitude;
  for (double scale : {1.0, 0.95, 0.9, 0.85, 0.8}) {
    spec.amplitude = a0 * scale;
    if (spec.amplitude <= std::numbers::pi / 2.0) break;
    try {
      return generate_path(spec, params);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNoClosedPath && e.kind() != ErrorKind::kWindowViolation) throw;
    }
  }
  return std::nullopt;
}

double path_distance(const ReferencePath& path, double theta, double phi) {
  const std::size_t j = nearest_reference_index(path, {theta, phi});
  const LineAngles& p = path.positions()[j];
  return std::hypot(p.theta - theta, p.phi - phi);
}

}  // namespace

PiecewiseLinear::PiecewiseLinear(std::vector<std::pair<double, double>> knots)
    : knots_(std::move(knots)) {
  if (knots_.empty()) throw Error(ErrorKind::kInvalidArgument, "schedule needs a knot");
  for (std::size_t i = 1; i < knots_.size(); ++i) {
    if (!(knots_[i].first > knots_[i - 1].first)) {
      throw Error(ErrorKind::kInvalidArgument, "schedule times must increase");
    }
  }
}

double PiecewiseLinear::operator()(double t) const {
  if (knots_.empty()) return 0.0;
  if (t <= knots_.front().first) return knots_.front().second;
  if (t >= knots_.back().first) return knots_.back().second;
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                                   [](double v, const auto& k) { return v < k.first; });
  const auto& [t1, v1] = *it;
  const auto& [t0, v0] = *(it - 1);
  return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
}

double PiecewiseLinear::min_value() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& k : knots_) m = std::min(m, k.second);
  return m;
}

KinematicParams CouplingLaws::kinematic(double w, double r, double T) const {
  KinematicParams p;
  p.alpha_L = E * w / r;
  p.alpha_G = c_G / r;
  p.r = r;
  p.T = T;
  return p;
}

SteeringParams CouplingLaws::steering(double w, double r, double T) const {
  SteeringParams p;
  p.K = c_K * w / (r * r);
  p.t_d = a_d + b_d * r / (w * w);
  p.T = T;
  return p;
}

void ScenarioConfig::validate() const {
  require(duration > 0.0, "duration", "must be positive");
  require(T > 0.0, "T", "must be positive");
  require(!wind.knots().empty() && wind.min_value() > 0.0, "wind", "must stay positive");
  require(!line.knots().empty() && line.min_value() > 0.0, "line", "must stay positive");
  require(coupling.E > 0.0, "coupling.E", "must be positive");
  require(coupling.c_G > 0.0, "coupling.c_G", "must be positive");
  require(coupling.c_K > 0.0, "coupling.c_K", "must be positive");
  require(coupling.a_d >= 0.0, "coupling.a_d", "must be non-negative");
  require(coupling.b_d >= 0.0, "coupling.b_d", "must be non-negative");
  require(tau_act >= 0.0, "tau_act", "must be non-negative");
  require(sigma_theta >= 0.0, "noise.sigma_theta", "must be non-negative");
  require(sigma_phi >= 0.0, "noise.sigma_phi", "must be non-negative");
  require(fraction_K >= 0.0, "uncertainty.K", "must be non-negative");
  require(fraction_td >= 0.0, "uncertainty.t_d", "must be non-negative");
  require(l_e > 0.0 && l_e < mpc.l_m, "l_e", "must lie in (0, l_m)");
  require(!delta_max || *delta_max > 0.0, "delta_max", "must be positive");
  require(estimator.heading_width >= 3 && estimator.heading_width % 2 == 1,
          "estimator.heading_width", "must be odd and >= 3");
  require(estimator.identify.rates.smoothing_width >= 1, "estimator.smoothing_width",
          "must be >= 1");
  require(estimator.identify.t_d_max > 0.0, "estimator.t_d_max", "must be positive");
  require(std::abs(mpc.T - T) < 1e-15, "mpc.T", "must equal the scenario sampling period");
  try {
    mpc.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kInvalidArgument, std::string("mpc: ") + e.what());
  }
  try {
    path.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kInvalidArgument, std::string("path: ") + e.what());
  }
}

PlantTruth::PlantTruth(const ScenarioConfig& scenario, KiteState initial)
    : scenario_(&scenario), state_(initial), rng_(scenario.seed) {
  const double w = scenario.wind(0.0);
  const double r = scenario.line(0.0);
  params_ = {scenario.coupling.kinematic(w, r, scenario.T),
             scenario.coupling.steering(w, r, scenario.T)};
  pipeline_ = DelayBuffer(params_.steering.delay_samples());
  state_.r = r;
}

void PlantTruth::prime(std::span<const double> inputs) {
  pipeline_ = DelayBuffer::from_history(inputs, params_.steering.delay_samples());
  if (!inputs.empty()) lagged_ = inputs.back();
}

void PlantTruth::set_conditions(double w, double r) {
  if (scenario_->freeze_truth) return;
  params_ = {scenario_->coupling.kinematic(w, r, scenario_->T),
             scenario_->coupling.steering(w, r, scenario_->T)};
  pipeline_.resize(params_.steering.delay_samples());
  state_.r = r;
}

const KiteState& PlantTruth::plant_step(double delta_applied, double w, double r) {
  set_conditions(w, r);
  if (scenario_->tau_act > 0.0) {
    const double a = 1.0 - std::exp(-scenario_->T / scenario_->tau_act);
    lagged_ += a * (delta_applied - lagged_);
  } else {
    lagged_ = delta_applied;
  }
  const double delayed = pipeline_.push(lagged_);
  state_.xi = discrete_step(state_.xi, state_.gamma, params_.kinematic);
  state_.gamma += scenario_->T * params_.steering.K * delayed;
  return state_;
}

Measurement PlantTruth::measure() {
  Measurement m;
  m.theta = state_.xi.theta + scenario_->sigma_theta * noise_(rng_);
  m.phi = state_.xi.phi + scenario_->sigma_phi * noise_(rng_);
  m.r = state_.r;
  return m;
}

SimLog run_closed_loop(const ScenarioConfig& sc, const RunHooks* hooks) {
  sc.validate();
  const double T = sc.T;
  const double w0 = sc.wind(0.0);
  const double r0 = sc.line(0.0);

  // Controller model starts at the truth values.
  KinematicParams kin_hat = sc.coupling.kinematic(w0, r0, T);
  SteeringParams st_hat = sc.coupling.steering(w0, r0, T);
  auto retune = [&](double K, double t_d) {
    const auto u = UncertaintyBounds::relative(K, t_d, sc.fraction_K, sc.fraction_td);
    return tune(K, t_d, u, sc.mpc.l_m, sc.l_e, FrequencyGrid::standard(), sc.tuning);
  };
  TuneResult tuned = retune(st_hat.K, st_hat.t_d);
  double C0 = tuned.C0;
  double l_r = tuned.l_r;

  PathSpec pspec = sc.path;
  pspec.window = sc.mpc.window;
  pspec.command_limit = sc.mpc.l_m;
  pspec.rate_limit = l_r;
  auto first = try_generate(pspec, kin_hat);
  if (!first) throw Error(ErrorKind::kNoClosedPath, "no closed reference path for the initial model");
  ReferencePath path = std::move(*first);

  MpcConfig mpc = sc.mpc;
  mpc.l_r = l_r;
  GuidanceController guidance(mpc, sc.solver);
  HeadingEstimator heading(sc.estimator.heading_width, T);
  const std::size_t lag = heading.lag();
  const auto max_lag = static_cast<std::size_t>(std::llround(sc.estimator.identify.t_d_max / T));
  const std::size_t hist_len = max_lag + lag + 1;

  // Start in steady flight at path sample i0: the heading pipeline holds the
  // inputs that keep the heading on the reference.
  const auto i0 = static_cast<long long>(sc.start_index % path.size());
  auto ideal_input = [&](long long i, double K) {
    return (path.gamma(i + 1) - path.gamma(i)) / (K * T);
  };
  PlantTruth plant(sc, KiteState{path.xi(i0), path.gamma(i0), r0});
  {
    const auto n_true = static_cast<long long>(plant.params().steering.delay_samples());
    std::vector<double> pipe;
    for (long long m = 0; m < n_true; ++m) pipe.push_back(ideal_input(i0 + m, plant.params().steering.K));
    plant.prime(pipe);
  }
  const auto n0 = static_cast<long long>(st_hat.delay_samples());
  std::deque<double> hist;
  for (long long m = static_cast<long long>(hist_len); m >= 1; --m) {
    hist.push_back(ideal_input(i0 - m + n0, st_hat.K));
  }
  for (long long m = static_cast<long long>(sc.estimator.heading_width) - 1; m >= 1; --m) {
    heading.push(path.xi(i0 - m));
  }
  guidance.reset(path.gamma(i0 + n0 - 1));
  guidance.reanchor(path, path.xi(i0 + n0), path.gamma(i0 + n0));

  SimLog log;
  log.T = T;
  log.initial_command = guidance.previous_command();
  log.paths.push_back(path);
  UpdateScheduler scheduler(path.size());
  MeasurementWindow meas;
  meas.T = T;
  ParamEstimate current;
  current.alpha_L = kin_hat.alpha_L;
  current.alpha_G = kin_hat.alpha_G;
  current.K = st_hat.K;
  current.t_d = st_hat.t_d;
  current.validity = Validity::kValid;

  std::optional<std::size_t> last_index;
  HeadingEstimator::Estimate est{};
  const auto steps = static_cast<std::size_t>(std::llround(sc.duration / T));
  log.records.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * T;
    const double w = sc.wind(t);
    const double r = sc.line(t);
    plant.set_conditions(w, r);
    const KiteState truth = plant.state();
    const TruthParams& tp = plant.params();

    const Measurement m = plant.measure();
    heading.push({m.theta, m.phi});
    try {
      est = heading.estimate();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kZeroVelocity) throw;
    }
    kin_hat.r = m.r;

    const std::size_t total = st_hat.delay_samples() + lag;
    std::vector<double> hv(hist.begin(), hist.end());
    const DelayBuffer buf = DelayBuffer::from_history(hv, total);
    SteeringParams ext{st_hat.K, static_cast<double>(total) * T, T};
    const double gamma_td = predict_heading(est.gamma, buf, ext);
    LineAngles xi_td;
    GuidanceOutput out;
    try {
      xi_td = predict_delayed_position(est.xi, est.gamma, buf, ext, kin_hat);
      out = guidance.step(xi_td, path, kin_hat);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNearZenith) {
        throw Error(ErrorKind::kRunAborted, "near zenith at t=" + std::to_string(t));
      }
      throw;
    }
    if (guidance.consecutive_failures() > kMaxConsecutiveSolverFailures) {
      throw Error(ErrorKind::kRunAborted,
                  "persistent solver failure at t=" + std::to_string(t));
    }
    const double delta = control(out.gamma_cmd, gamma_td, TrackingGain{C0, GainProvenance::kTunedByRobustness},
                                 sc.delta_max);
    hist.push_back(delta);
    while (hist.size() > hist_len) hist.pop_front();

    SimRecord rec;
    rec.t = t;
    rec.theta = truth.xi.theta;
    rec.phi = truth.xi.phi;
    rec.gamma = truth.gamma;
    rec.r = truth.r;
    rec.wind = w;
    rec.v_true = velocity_tangential(truth.xi, truth.gamma, tp.kinematic);
    rec.meas_theta = m.theta;
    rec.meas_phi = m.phi;
    rec.gamma_hat = est.gamma;
    const double ce = std::cos(est.xi.theta);
    rec.v_meas = m.r * std::sqrt(est.theta_dot * est.theta_dot + ce * ce * est.phi_dot * est.phi_dot);
    rec.v_model = velocity_tangential(est.xi, est.gamma, kin_hat);
    rec.td_theta = xi_td.theta;
    rec.td_phi = xi_td.phi;
    rec.gamma_td = gamma_td;
    rec.gamma_cmd = out.gamma_cmd;
    rec.delta = delta;
    rec.ref_index = out.ref_index;
    const auto j = static_cast<long long>(out.ref_index);
    rec.ref_theta = path.xi(j).theta;
    rec.ref_phi = path.xi(j).phi;
    rec.ref_gamma = path.gamma(j);
    rec.alpha_L_hat = kin_hat.alpha_L;
    rec.alpha_G_hat = kin_hat.alpha_G;
    rec.K_hat = st_hat.K;
    rec.t_d_hat = st_hat.t_d;
    rec.C0 = C0;
    rec.l_r = l_r;
    rec.validity = current.validity;
    rec.alpha_L_true = tp.kinematic.alpha_L;
    rec.alpha_G_true = tp.kinematic.alpha_G;
    rec.K_true = tp.steering.K;
    rec.t_d_true = tp.steering.t_d;
    rec.slack_active = std::any_of(out.slack_active.begin(), out.slack_active.end(),
                                   [](bool b) { return b; });
    rec.status = out.status;
    rec.iterations = out.iterations;
    rec.cost = out.cost;
    rec.kkt_stationarity = out.kkt.stationarity;
    rec.kkt_primal = out.kkt.primal_violation;
    rec.kkt_complementarity = out.kkt.complementarity;
    rec.fallback = out.fallback;
    rec.path_version = static_cast<int>(log.paths.size()) - 1;

    meas.theta.push_back(m.theta);
    meas.phi.push_back(m.phi);
    meas.r.push_back(m.r);
    meas.delta.push_back(delta);
    meas.wind.push_back(w);

    const std::size_t N = path.size();
    // Progress is measured from the furthest index reached, so jitter of the
    // reference point does not count.
    if (!last_index) {
      last_index = out.ref_index;
    } else {
      const std::size_t d = (out.ref_index + N - *last_index) % N;
      if (d > 0 && d < N / 2) {
        log.cycles += static_cast<double>(d) / static_cast<double>(N);
        last_index = out.ref_index;
      }
    }
    const bool fire = sc.estimator.online_updates && scheduler.observe(out.ref_index);
    rec.update = fire;
    if (hooks && hooks->on_guidance) hooks->on_guidance(rec, out);
    log.records.push_back(rec);

    try {
      plant.plant_step(delta, w, r);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNearZenith) {
        throw Error(ErrorKind::kRunAborted, "near zenith at t=" + std::to_string(t));
      }
      throw;
    }

    if (!fire) continue;
    // Parameter update between samples: fit, retune, revalidate, commit.
    UpdateEvent ev;
    ev.t = t;
    ev.C0 = C0;
    ev.l_r = l_r;
    const std::size_t need = N / 2 + max_lag;
    if (meas.size() < need || N / 2 < kMinFitSamples) {
      ev.note = "insufficient data";
      log.updates.push_back(ev);
      continue;
    }
    MeasurementWindow win;
    win.T = T;
    const auto from = static_cast<std::ptrdiff_t>(meas.size() - need);
    win.theta.assign(meas.theta.begin() + from, meas.theta.end());
    win.phi.assign(meas.phi.begin() + from, meas.phi.end());
    win.r.assign(meas.r.begin() + from, meas.r.end());
    win.delta.assign(meas.delta.begin() + from, meas.delta.end());
    win.wind.assign(meas.wind.begin() + from, meas.wind.end());
    try {
      ev.estimate = identify(win, sc.estimator.identify);
    } catch (const Error& e) {
      ev.note = e.what();
      log.updates.push_back(ev);
      continue;
    }
    ev.estimate.time = t;
    if (ev.estimate.validity != Validity::kValid) {
      ev.note = "degraded estimate";
      log.updates.push_back(ev);
      continue;
    }
    TuneResult next;
    try {
      next = retune(ev.estimate.K, std::max(ev.estimate.t_d, T));
    } catch (const Error& e) {
      ev.note = e.what();
      log.updates.push_back(ev);
      continue;
    }
    KinematicParams kin_next = kin_hat;
    kin_next.alpha_L = ev.estimate.alpha_L;
    kin_next.alpha_G = ev.estimate.alpha_G;
    std::optional<ReferencePath> regenerated;
    if (!revalidate(path, kin_next, next.l_r)) {
      pspec.rate_limit = next.l_r;
      try {
        regenerated = try_generate(pspec, kin_next);
      } catch (const Error& e) {
        ev.note = e.what();
      }
      if (!regenerated && ev.note.empty()) ev.note = "kept previous path";
    }
    kin_hat = kin_next;
    st_hat.K = ev.estimate.K;
    st_hat.t_d = std::max(ev.estimate.t_d, T);
    C0 = next.C0;
    l_r = next.l_r;
    guidance.set_rate_limit(l_r);
    current = ev.estimate;
    if (regenerated) {
      const double heading_ref = path.gamma(j);
      path = std::move(*regenerated);
      log.paths.push_back(path);
      guidance.reanchor(path, xi_td, heading_ref);
      scheduler.reset(path.size());
      last_index = guidance.anchor();
      if (last_index) scheduler.observe(*last_index);
      ev.regenerated = true;
    }
    ev.accepted = true;
    ev.C0 = C0;
    ev.l_r = l_r;
    log.updates.push_back(ev);
  }
  return log;
}

SimSummary summarize(const SimLog& log, const SafetyWindow& window, double transient) {
  SimSummary s;
  s.samples = log.records.size();
  s.duration = static_cast<double>(s.samples) * log.T;
  s.transient = transient;
  s.completed_cycles = static_cast<std::size_t>(std::floor(log.cycles + 1e-9));
  double sum_pos = 0.0;
  double sum_td = 0.0;
  for (std::size_t k = 0; k < log.records.size(); ++k) {
    const SimRecord& r = log.records[k];
    const ReferencePath& path = log.paths.at(static_cast<std::size_t>(r.path_version));
    const double dp = path_distance(path, r.theta, r.phi);
    const double dt = path_distance(path, r.td_theta, r.td_phi);
    sum_pos += dp * dp;
    sum_td += dt * dt;
    if (!window.contains({r.theta, r.phi})) {
      ++s.window_violations;
      if (r.t >= transient) ++s.window_violations_after_transient;
    }
    const auto n = static_cast<std::size_t>(std::llround(r.t_d_true / log.T));
    if (k + n < log.records.size()) {
      s.max_shifted_error =
          std::max(s.max_shifted_error, std::abs(r.gamma_cmd - log.records[k + n].gamma));
    }
    if (r.update) ++s.update_firings;
    if (r.fallback) ++s.solver_failures;
    if (r.slack_active) ++s.slack_samples;
    s.max_command = std::max(s.max_command, std::abs(r.gamma_cmd));
    const double prev = k > 0 ? log.records[k - 1].gamma_cmd : log.initial_command;
    const double rate = std::abs(r.gamma_cmd - prev) / log.T;
    s.max_command_rate_excess = std::max(s.max_command_rate_excess, rate - r.l_r);
    s.max_kkt_stationarity = std::max(s.max_kkt_stationarity, r.kkt_stationarity);
    s.max_kkt_primal = std::max(s.max_kkt_primal, r.kkt_primal);
    s.max_kkt_complementarity = std::max(s.max_kkt_complementarity, r.kkt_complementarity);
  }
  if (s.samples > 0) {
    s.rms_position = std::sqrt(sum_pos / static_cast<double>(s.samples));
    s.rms_delayed = std::sqrt(sum_td / static_cast<double>(s.samples));
  }
  for (const auto& u : log.updates) {
    if (u.accepted) ++s.accepted_updates;
    if (u.regenerated) ++s.regenerations;
  }
  s.delay_line_correlation = delay_line_correlation(log);
  return s;
}

double delay_line_correlation(const SimLog& log, double wind_tol, double hold) {
  const auto& rec = log.records;
  const auto span = static_cast<std::size_t>(std::llround(hold / log.T));
  std::vector<double> x;
  std::vector<double> y;
  // Sliding extrema of the wind over [k - span, k + span].
  std::deque<std::size_t> lo;
  std::deque<std::size_t> hi;
  std::size_t next = 0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    const std::size_t right = std::min(rec.size() - 1, k + span);
    for (; next <= right; ++next) {
      while (!lo.empty() && rec[lo.back()].wind >= rec[next].wind) lo.pop_back();
      lo.push_back(next);
      while (!hi.empty() && rec[hi.back()].wind <= rec[next].wind) hi.pop_back();
      hi.push_back(next);
    }
    const std::size_t left = k > span ? k - span : 0;
    while (lo.front() < left) lo.pop_front();
    while (hi.front() < left) hi.pop_front();
    if (rec[hi.front()].wind - rec[lo.front()].wind <= wind_tol) {
      x.push_back(rec[k].r);
      y.push_back(rec[k].t_d_hat);
    }
  }
  if (x.size() < 2) return 0.0;
  const auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
  };
  if (constant(x) || constant(y)) return 0.0;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace kite
