#include "kite/reference_path.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "kite/error.hpp"

namespace kite {
namespace {

constexpr int kMaxShootingIterations = 200;

struct Rollout {
  std::vector<LineAngles> xi;
  LineAngles end;
  Eigen::Vector3d residual;
};

// Integrates one period from x = (theta_0, phi_0, offset). Returns nothing if
// the trajectory runs into the zenith guard or produces non-finite values.
std::optional<Rollout> roll_out(const Eigen::Vector3d& x, double amplitude,
                                std::size_t n, const KinematicParams& p,
                                double center_phi) {
  Rollout out;
  out.xi.reserve(n);
  LineAngles xi{x(0), x(1)};
  double phi_sum = 0.0;
  try {
    for (std::size_t i = 0; i < n; ++i) {
      out.xi.push_back(xi);
      phi_sum += xi.phi;
      const double gamma =
          amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) /
                               static_cast<double>(n)) +
          x(2);
      xi = discrete_step(xi, gamma, p);
      if (!std::isfinite(xi.theta) || !std::isfinite(xi.phi)) return std::nullopt;
    }
  } catch (const Error&) {
    return std::nullopt;
  }
  out.end = xi;
  out.residual << xi.theta - x(0), xi.phi - x(1),
      phi_sum / static_cast<double>(n) - center_phi;
  return out;
}

}  // namespace

void PathSpec::validate() const {
  if (!(amplitude > std::numbers::pi / 2.0 && amplitude < command_limit)) {
    throw Error(ErrorKind::kInvalidArgument,
                "heading amplitude must lie in (pi/2, l_m)");
  }
  if (!(rate_margin > 0.0 && rate_margin < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "rate margin must lie in (0, 1)");
  }
  if (!(rate_limit > 0.0) || !std::isfinite(rate_limit)) {
    throw Error(ErrorKind::kInvalidArgument, "rate limit must be positive");
  }
  if (!(window.theta_min < window.theta_max && window.phi_min < window.phi_max)) {
    throw Error(ErrorKind::kInvalidArgument, "safety window bounds not ordered");
  }
}

ReferencePath::ReferencePath(std::vector<LineAngles> xi, std::vector<double> gamma,
                             KinematicParams params, SafetyWindow window)
    : xi_(std::move(xi)), gamma_(std::move(gamma)), params_(params), window_(window) {
  if (xi_.size() != gamma_.size()) {
    throw Error(ErrorKind::kDimensionMismatch,
                "path positions and headings differ in length");
  }
}

std::size_t ReferencePath::wrap(long long i) const {
  const auto n = static_cast<long long>(xi_.size());
  return static_cast<std::size_t>(((i % n) + n) % n);
}

double ReferencePath::max_rate() const {
  double rate = 0.0;
  for (std::size_t i = 0; i < gamma_.size(); ++i) {
    const double d = gamma(static_cast<long long>(i) + 1) - gamma_[i];
    rate = std::max(rate, std::abs(d) / params_.T);
  }
  return rate;
}

double ReferencePath::closure_gap(const KinematicParams& p) const {
  const LineAngles end = discrete_step(xi_.back(), gamma_.back(), p);
  return std::max(std::abs(end.theta - xi_.front().theta),
                  std::abs(end.phi - xi_.front().phi));
}

std::size_t path_period_samples(const PathSpec& spec, double T) {
  const double minimum = 2.0 * std::numbers::pi * spec.amplitude /
                         (spec.rate_margin * spec.rate_limit * T);
  auto n = static_cast<std::size_t>(std::ceil(minimum - 1e-9));
  if (n % 2 == 1) ++n;
  return std::max<std::size_t>(n, 4);
}

ReferencePath generate_path(const PathSpec& spec, const KinematicParams& params) {
  spec.validate();
  params.validate();
  const std::size_t n = path_period_samples(spec, params.T);
  const double a = spec.amplitude;
  const double cphi = spec.center.phi;

  Eigen::Vector3d x(spec.center.theta, spec.center.phi, 0.0);
  // Let the elevation relax towards its periodic level before Newton; the
  // theta return map is contracting around the equilibrium elevation.
  for (int k = 0; k < 8; ++k) {
    auto r = roll_out(x, a, n, params, cphi);
    if (!r) break;
    Eigen::Vector3d next = x;
    next(0) = r->end.theta;
    next(1) -= r->residual(2);
    if (!(std::cos(next(0)) > 0.05) || next(0) < -0.5) break;
    x = next;
  }

  auto current = roll_out(x, a, n, params, cphi);
  if (!current) {
    throw Error(ErrorKind::kNoClosedPath, "initial shooting guess is not integrable");
  }
  for (int it = 0; it < kMaxShootingIterations; ++it) {
    const Eigen::Vector3d res = current->residual;
    if (res.head<2>().cwiseAbs().maxCoeff() < 1e-12 && std::abs(res(2)) < 1e-10) break;

    Eigen::Matrix3d jac;
    bool ok = true;
    for (int c = 0; c < 3; ++c) {
      constexpr double h = 1e-7;
      Eigen::Vector3d xp = x;
      xp(c) += h;
      auto rp = roll_out(xp, a, n, params, cphi);
      if (!rp) {
        ok = false;
        break;
      }
      jac.col(c) = (rp->residual - res) / h;
    }
    if (!ok) break;
    const Eigen::Vector3d dx = jac.fullPivLu().solve(-res);
    if (!dx.allFinite()) break;

    double step = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 30; ++ls, step *= 0.5) {
      const Eigen::Vector3d trial = x + step * dx;
      auto rt = roll_out(trial, a, n, params, cphi);
      if (rt && rt->residual.norm() < res.norm()) {
        x = trial;
        current = std::move(rt);
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }

  std::vector<double> gamma(n);
  for (std::size_t i = 0; i < n; ++i) {
    gamma[i] = a * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) /
                            static_cast<double>(n)) +
               x(2);
  }
  const double gap = current->residual.head<2>().cwiseAbs().maxCoeff();
  if (!(gap < kClosureTolerance)) {
    std::ostringstream msg;
    msg << "closure gap " << gap << " rad after shooting (N = " << n << ")";
    throw Error(ErrorKind::kNoClosedPath, msg.str());
  }
  ReferencePath path(std::move(current->xi), std::move(gamma), params, spec.window);
  for (const auto& xi : path.positions()) {
    if (!spec.window.contains(xi)) {
      std::ostringstream msg;
      msg << "closed path leaves the safety window at (" << xi.theta << ", "
          << xi.phi << ")";
      throw Error(ErrorKind::kWindowViolation, msg.str());
    }
  }
  return path;
}

std::size_t nearest_reference_index(const ReferencePath& path, LineAngles query) {
  if (path.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "empty reference path");
  }
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < path.size(); ++i) {
    const double dt = path.positions()[i].theta - query.theta;
    const double dp = path.positions()[i].phi - query.phi;
    const double d2 = dt * dt + dp * dp;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

std::size_t nearest_reference_index(const ReferencePath& path, LineAngles query,
                                    std::size_t hint, std::size_t lookback,
                                    std::size_t lookahead) {
  if (path.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "empty reference path");
  }
  if (lookback + lookahead + 1 >= path.size()) {
    return nearest_reference_index(path, query);
  }
  const auto start = static_cast<long long>(hint) - static_cast<long long>(lookback);
  const auto count = static_cast<long long>(lookback + lookahead + 1);
  std::size_t best = path.wrap(start);
  double best_d2 = std::numeric_limits<double>::infinity();
  for (long long k = 0; k < count; ++k) {
    const std::size_t i = path.wrap(start + k);
    const double dt = path.positions()[i].theta - query.theta;
    const double dp = path.positions()[i].phi - query.phi;
    const double d2 = dt * dt + dp * dp;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

bool revalidate(const ReferencePath& path, const KinematicParams& params,
                double rate_limit) {
  if (path.empty()) return false;
  if (std::abs(params.T - path.T()) > 1e-15) return false;
  if (path.max_rate() > rate_limit) return false;
  for (const auto& xi : path.positions()) {
    if (!path.window().contains(xi)) return false;
  }
  try {
    LineAngles xi = path.positions().front();
    for (std::size_t i = 0; i < path.size(); ++i) {
      xi = discrete_step(xi, path.headings()[i], params);
      const LineAngles& ref = path.xi(static_cast<long long>(i) + 1);
      if (!(std::abs(xi.theta - ref.theta) < kClosureTolerance &&
            std::abs(xi.phi - ref.phi) < kClosureTolerance)) {
        return false;
      }
    }
  } catch (const Error&) {
    return false;
  }
  return true;
}

void write_path_csv(std::ostream& out, const ReferencePath& path) {
  out << "index,theta,phi,gamma\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < path.size(); ++i) {
    out << i << ',' << path.positions()[i].theta << ',' << path.positions()[i].phi
        << ',' << path.headings()[i] << '\n';
  }
}

ReferencePath read_path_csv(std::istream& in, const KinematicParams& params,
                            const SafetyWindow& window) {
  std::string line;
  if (!std::getline(in, line) || line != "index,theta,phi,gamma") {
    throw Error(ErrorKind::kSchemaError, "path CSV header must be index,theta,phi,gamma");
  }
  std::vector<LineAngles> xi;
  std::vector<double> gamma;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell[4];
    for (auto& c : cell) {
      if (!std::getline(row, c, ',')) {
        throw Error(ErrorKind::kSchemaError, "path CSV row has fewer than 4 columns");
      }
    }
    std::size_t index = 0;
    LineAngles p;
    double g = 0.0;
    try {
      index = std::stoull(cell[0]);
      p = {std::stod(cell[1]), std::stod(cell[2])};
      g = std::stod(cell[3]);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kSchemaError, "path CSV has a non-numeric cell: " + line);
    }
    if (index != xi.size()) {
      throw Error(ErrorKind::kSchemaError, "path CSV indices must be consecutive from 0");
    }
    xi.push_back(p);
    gamma.push_back(g);
  }
  if (xi.empty()) throw Error(ErrorKind::kSchemaError, "path CSV has no rows");
  return ReferencePath(std::move(xi), std::move(gamma), params, window);
}

}  // namespace kite
