#include "kite/scenario_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace kite {
namespace {

using nlohmann::json;

std::string join(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

// Object reader that remembers which keys were consumed.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number()) throw SchemaError(join(path_, key), "expected a number");
    const double d = v->get<double>();
    if (!std::isfinite(d)) throw SchemaError(join(path_, key), "must be finite");
    return d;
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw SchemaError(join(path_, key), "expected true or false");
    return v->get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_string()) throw SchemaError(join(path_, key), "expected a string");
    return v->get<std::string>();
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number_integer() || v->get<long long>() < 0) {
      throw SchemaError(join(path_, key), "expected a non-negative integer");
    }
    return v->get<std::uint64_t>();
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw SchemaError(join(path_, key), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

PiecewiseLinear schedule(const json* v, const std::string& path, const PiecewiseLinear& fallback) {
  if (!v) return fallback;
  if (v->is_number()) return PiecewiseLinear(v->get<double>());
  if (!v->is_array() || v->empty()) {
    throw SchemaError(path, "expected a number or a list of [time, value] pairs");
  }
  std::vector<std::pair<double, double>> knots;
  for (std::size_t i = 0; i < v->size(); ++i) {
    const json& k = (*v)[i];
    const std::string at = path + "[" + std::to_string(i) + "]";
    if (!k.is_array() || k.size() != 2 || !k[0].is_number() || !k[1].is_number()) {
      throw SchemaError(at, "expected [time, value]");
    }
    knots.emplace_back(k[0].get<double>(), k[1].get<double>());
  }
  try {
    return PiecewiseLinear(std::move(knots));
  } catch (const Error& e) {
    throw SchemaError(path, e.what());
  }
}

Eigen::Matrix2d weight(const json* v, const std::string& path, const Eigen::Matrix2d& fallback) {
  if (!v) return fallback;
  Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
  auto num = [&](const json& x, const std::string& at) {
    if (!x.is_number()) throw SchemaError(at, "expected a number");
    return x.get<double>();
  };
  if (v->is_array() && v->size() == 2 && (*v)[0].is_number()) {
    m(0, 0) = num((*v)[0], path + "[0]");
    m(1, 1) = num((*v)[1], path + "[1]");
    return m;
  }
  if (v->is_array() && v->size() == 2 && (*v)[0].is_array()) {
    for (int i = 0; i < 2; ++i) {
      const json& row = (*v)[static_cast<std::size_t>(i)];
      if (!row.is_array() || row.size() != 2) {
        throw SchemaError(path + "[" + std::to_string(i) + "]", "expected two numbers");
      }
      for (int c = 0; c < 2; ++c) {
        m(i, c) = num(row[static_cast<std::size_t>(c)],
                      path + "[" + std::to_string(i) + "][" + std::to_string(c) + "]");
      }
    }
    return m;
  }
  throw SchemaError(path, "expected a diagonal [a, b] or a 2x2 matrix");
}

json schedule_json(const PiecewiseLinear& p) {
  json a = json::array();
  for (const auto& [t, v] : p.knots()) a.push_back({t, v});
  return a;
}

json weight_json(const Eigen::Matrix2d& m) {
  return json::array({{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}});
}

std::string field(const std::vector<std::string>& cells, std::size_t i) { return cells.at(i); }

double parse_double(const std::string& cell, const std::string& column) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size()) {
    throw SchemaError(column, "not a number: '" + cell + "'");
  }
  return v;
}

long long parse_int(const std::string& cell, const std::string& column) {
  char* end = nullptr;
  const long long v = std::strtoll(cell.c_str(), &end, 10);
  if (cell.empty() || end != cell.c_str() + cell.size()) {
    throw SchemaError(column, "not an integer: '" + cell + "'");
  }
  return v;
}

bool parse_flag(const std::string& cell, const std::string& column) {
  if (cell == "0") return false;
  if (cell == "1") return true;
  throw SchemaError(column, "expected 0 or 1, got '" + cell + "'");
}

Validity parse_validity(const std::string& cell) {
  for (Validity v : {Validity::kValid, Validity::kDegraded, Validity::kInvalid}) {
    if (cell == to_string(v)) return v;
  }
  throw SchemaError("validity", "unknown value '" + cell + "'");
}

QpStatus parse_status(const std::string& cell) {
  for (QpStatus s : {QpStatus::kOptimal, QpStatus::kMaxIter, QpStatus::kNumericalFailure,
                     QpStatus::kInfeasible}) {
    if (cell == to_string(s)) return s;
  }
  throw SchemaError("status", "unknown value '" + cell + "'");
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void write_csv_row(std::ostream& out, std::initializer_list<double> values) {
  bool first = true;
  for (double v : values) {
    if (!first) out << ',';
    out << format_number(v);
    first = false;
  }
  out << '\n';
}

}  // namespace

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ScenarioConfig parse_scenario(const json& doc) {
  ScenarioConfig sc;
  Obj root(doc, "");
  sc.name = root.text("name", sc.name);
  sc.duration = root.number("duration", sc.duration);
  sc.T = root.number("T", sc.T);
  sc.seed = root.count("seed", sc.seed);
  sc.wind = schedule(root.get("wind"), "wind", sc.wind);
  sc.line = schedule(root.get("line"), "line", sc.line);
  sc.tau_act = root.number("tau_act", sc.tau_act);
  sc.freeze_truth = root.boolean("freeze_truth", sc.freeze_truth);
  sc.start_index = root.count("start_index", sc.start_index);
  sc.l_e = root.number("l_e", sc.l_e);
  if (const json* v = root.get("delta_max")) {
    if (!v->is_number()) throw SchemaError("delta_max", "expected a number or null");
    sc.delta_max = v->get<double>();
  }
  if (const json* v = root.get("coupling")) {
    Obj o(*v, "coupling");
    sc.coupling.E = o.number("E", sc.coupling.E);
    sc.coupling.c_G = o.number("c_G", sc.coupling.c_G);
    sc.coupling.c_K = o.number("c_K", sc.coupling.c_K);
    sc.coupling.a_d = o.number("a_d", sc.coupling.a_d);
    sc.coupling.b_d = o.number("b_d", sc.coupling.b_d);
    o.finish();
  }
  if (const json* v = root.get("noise")) {
    Obj o(*v, "noise");
    sc.sigma_theta = o.number("sigma_theta", sc.sigma_theta);
    sc.sigma_phi = o.number("sigma_phi", sc.sigma_phi);
    o.finish();
  }
  if (const json* v = root.get("uncertainty")) {
    Obj o(*v, "uncertainty");
    sc.fraction_K = o.number("K", sc.fraction_K);
    sc.fraction_td = o.number("t_d", sc.fraction_td);
    o.finish();
  }
  if (const json* v = root.get("path")) {
    Obj o(*v, "path");
    sc.path.center.theta = o.number("center_theta", sc.path.center.theta);
    sc.path.center.phi = o.number("center_phi", sc.path.center.phi);
    sc.path.amplitude = o.number("amplitude", sc.path.amplitude);
    sc.path.rate_margin = o.number("rate_margin", sc.path.rate_margin);
    o.finish();
  }
  sc.mpc.T = sc.T;
  if (const json* v = root.get("mpc")) {
    Obj o(*v, "mpc");
    const std::uint64_t h = o.count("horizon", static_cast<std::uint64_t>(sc.mpc.horizon));
    if (h < 1 || h > 100000) throw SchemaError("mpc.horizon", "must lie in [1, 100000]");
    sc.mpc.horizon = static_cast<int>(h);
    sc.mpc.Q = weight(o.get("Q"), "mpc.Q", sc.mpc.Q);
    sc.mpc.Q_H = weight(o.get("Q_H"), "mpc.Q_H", sc.mpc.Q_H);
    sc.mpc.R = o.number("R", sc.mpc.R);
    sc.mpc.S = weight(o.get("S"), "mpc.S", sc.mpc.S);
    sc.mpc.S_H = weight(o.get("S_H"), "mpc.S_H", sc.mpc.S_H);
    sc.mpc.l_m = o.number("l_m", sc.mpc.l_m);
    if (const json* w = o.get("window")) {
      Obj b(*w, "mpc.window");
      sc.mpc.window.theta_min = b.number("theta_min", sc.mpc.window.theta_min);
      sc.mpc.window.theta_max = b.number("theta_max", sc.mpc.window.theta_max);
      sc.mpc.window.phi_min = b.number("phi_min", sc.mpc.window.phi_min);
      sc.mpc.window.phi_max = b.number("phi_max", sc.mpc.window.phi_max);
      b.finish();
    }
    o.finish();
  }
  if (const json* v = root.get("estimator")) {
    Obj o(*v, "estimator");
    sc.estimator.online_updates = o.boolean("online_updates", sc.estimator.online_updates);
    sc.estimator.heading_width = o.count("heading_width", sc.estimator.heading_width);
    sc.estimator.identify.rates.smoothing_width =
        o.count("smoothing_width", sc.estimator.identify.rates.smoothing_width);
    const std::string scheme = o.text("scheme", "central");
    if (scheme == "central") {
      sc.estimator.identify.rates.scheme = DiffScheme::kCentral;
    } else if (scheme == "forward") {
      sc.estimator.identify.rates.scheme = DiffScheme::kForward;
    } else {
      throw SchemaError("estimator.scheme", "expected \"central\" or \"forward\"");
    }
    sc.estimator.identify.t_d_max = o.number("t_d_max", sc.estimator.identify.t_d_max);
    o.finish();
  }
  root.finish();
  try {
    sc.validate();
  } catch (const Error& e) {
    std::string msg = e.what();
    const std::string prefix = "InvalidArgument: ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    const auto colon = msg.find(':');
    throw SchemaError(colon == std::string::npos ? "<root>" : msg.substr(0, colon),
                      colon == std::string::npos ? msg : msg.substr(colon + 2));
  }
  return sc;
}

ScenarioConfig load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw SchemaError("<file>", "cannot open " + file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("<file>", std::string("malformed JSON: ") + e.what());
  }
  return parse_scenario(doc);
}

json scenario_to_json(const ScenarioConfig& sc) {
  json j;
  j["name"] = sc.name;
  j["duration"] = sc.duration;
  j["T"] = sc.T;
  j["seed"] = sc.seed;
  j["wind"] = schedule_json(sc.wind);
  j["line"] = schedule_json(sc.line);
  j["tau_act"] = sc.tau_act;
  j["freeze_truth"] = sc.freeze_truth;
  j["start_index"] = sc.start_index;
  j["l_e"] = sc.l_e;
  j["delta_max"] = sc.delta_max ? json(*sc.delta_max) : json(nullptr);
  j["coupling"] = {{"E", sc.coupling.E},     {"c_G", sc.coupling.c_G}, {"c_K", sc.coupling.c_K},
                   {"a_d", sc.coupling.a_d}, {"b_d", sc.coupling.b_d}};
  j["noise"] = {{"sigma_theta", sc.sigma_theta}, {"sigma_phi", sc.sigma_phi}};
  j["uncertainty"] = {{"K", sc.fraction_K}, {"t_d", sc.fraction_td}};
  j["path"] = {{"center_theta", sc.path.center.theta},
               {"center_phi", sc.path.center.phi},
               {"amplitude", sc.path.amplitude},
               {"rate_margin", sc.path.rate_margin}};
  j["mpc"] = {{"horizon", sc.mpc.horizon},
              {"Q", weight_json(sc.mpc.Q)},
              {"Q_H", weight_json(sc.mpc.Q_H)},
              {"R", sc.mpc.R},
              {"S", weight_json(sc.mpc.S)},
              {"S_H", weight_json(sc.mpc.S_H)},
              {"l_m", sc.mpc.l_m},
              {"window",
               {{"theta_min", sc.mpc.window.theta_min},
                {"theta_max", sc.mpc.window.theta_max},
                {"phi_min", sc.mpc.window.phi_min},
                {"phi_max", sc.mpc.window.phi_max}}}};
  j["estimator"] = {
      {"online_updates", sc.estimator.online_updates},
      {"heading_width", sc.estimator.heading_width},
      {"smoothing_width", sc.estimator.identify.rates.smoothing_width},
      {"scheme", sc.estimator.identify.rates.scheme == DiffScheme::kForward ? "forward" : "central"},
      {"t_d_max", sc.estimator.identify.t_d_max}};
  return j;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw SchemaError(assignment, "override must look like key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw SchemaError(key, "empty path component");
    if (!node->is_object()) throw SchemaError(key, "cannot descend into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

const std::vector<std::string>& log_columns() {
  static const std::vector<std::string> cols = {
      "t",         "theta",        "phi",          "gamma",       "r",
      "wind",      "v_true",       "meas_theta",   "meas_phi",    "gamma_hat",
      "v_meas",    "v_model",      "td_theta",     "td_phi",      "gamma_td",
      "gamma_cmd", "delta",        "ref_index",    "ref_theta",   "ref_phi",
      "ref_gamma", "alpha_L",      "alpha_G",      "K",           "t_d",
      "C_0",       "l_r",          "validity",     "alpha_L_true", "alpha_G_true",
      "K_true",    "t_d_true",     "slack_active", "status",      "iterations",
      "cost",      "kkt_stationarity", "kkt_primal", "kkt_complementarity", "fallback",
      "update",    "path_version"};
  return cols;
}

void write_log_csv(std::ostream& out, const SimLog& log) {
  const auto& cols = log_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  auto f = format_number;
  for (const SimRecord& r : log.records) {
    out << f(r.t) << ',' << f(r.theta) << ',' << f(r.phi) << ',' << f(r.gamma) << ','
        << f(r.r) << ',' << f(r.wind) << ',' << f(r.v_true) << ',' << f(r.meas_theta) << ','
        << f(r.meas_phi) << ',' << f(r.gamma_hat) << ',' << f(r.v_meas) << ','
        << f(r.v_model) << ',' << f(r.td_theta) << ',' << f(r.td_phi) << ','
        << f(r.gamma_td) << ',' << f(r.gamma_cmd) << ',' << f(r.delta) << ','
        << r.ref_index << ',' << f(r.ref_theta) << ',' << f(r.ref_phi) << ','
        << f(r.ref_gamma) << ',' << f(r.alpha_L_hat) << ',' << f(r.alpha_G_hat) << ','
        << f(r.K_hat) << ',' << f(r.t_d_hat) << ',' << f(r.C0) << ',' << f(r.l_r) << ','
        << to_string(r.validity) << ',' << f(r.alpha_L_true) << ',' << f(r.alpha_G_true)
        << ',' << f(r.K_true) << ',' << f(r.t_d_true) << ',' << (r.slack_active ? 1 : 0)
        << ',' << to_string(r.status) << ',' << r.iterations << ',' << f(r.cost) << ','
        << f(r.kkt_stationarity) << ',' << f(r.kkt_primal) << ','
        << f(r.kkt_complementarity) << ',' << (r.fallback ? 1 : 0) << ','
        << (r.update ? 1 : 0) << ',' << r.path_version << '\n';
  }
}

SimLog read_log_csv(std::istream& in) {
  const auto& cols = log_columns();
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("<header>", "empty log file");
  const auto header = split(line);
  if (header != cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i >= header.size() || header[i] != cols[i]) {
        throw SchemaError(cols[i], "log header mismatch at column " + std::to_string(i));
      }
    }
    throw SchemaError(header[cols.size()], "unexpected extra column");
  }
  SimLog log;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto c = split(line);
    if (c.size() != cols.size()) {
      throw SchemaError("<row " + std::to_string(row) + ">",
                        "expected " + std::to_string(cols.size()) + " cells");
    }
    std::size_t i = 0;
    auto d = [&]() { const std::size_t k = i++; return parse_double(field(c, k), cols[k]); };
    auto n = [&]() { const std::size_t k = i++; return parse_int(field(c, k), cols[k]); };
    auto b = [&]() { const std::size_t k = i++; return parse_flag(field(c, k), cols[k]); };
    SimRecord r;
    r.t = d();
    r.theta = d();
    r.phi = d();
    r.gamma = d();
    r.r = d();
    r.wind = d();
    r.v_true = d();
    r.meas_theta = d();
    r.meas_phi = d();
    r.gamma_hat = d();
    r.v_meas = d();
    r.v_model = d();
    r.td_theta = d();
    r.td_phi = d();
    r.gamma_td = d();
    r.gamma_cmd = d();
    r.delta = d();
    const long long idx = n();
    if (idx < 0) throw SchemaError("ref_index", "must be non-negative");
    r.ref_index = static_cast<std::size_t>(idx);
    r.ref_theta = d();
    r.ref_phi = d();
    r.ref_gamma = d();
    r.alpha_L_hat = d();
    r.alpha_G_hat = d();
    r.K_hat = d();
    r.t_d_hat = d();
    r.C0 = d();
    r.l_r = d();
    r.validity = parse_validity(c[i++]);
    r.alpha_L_true = d();
    r.alpha_G_true = d();
    r.K_true = d();
    r.t_d_true = d();
    r.slack_active = b();
    r.status = parse_status(c[i++]);
    r.iterations = static_cast<int>(n());
    r.cost = d();
    r.kkt_stationarity = d();
    r.kkt_primal = d();
    r.kkt_complementarity = d();
    r.fallback = b();
    r.update = b();
    r.path_version = static_cast<int>(n());
    log.records.push_back(r);
  }
  if (log.records.empty()) throw SchemaError("<rows>", "log has no samples");
  if (log.records.size() >= 2) {
    log.T = log.records[1].t - log.records[0].t;
    if (!(log.T > 0.0)) throw SchemaError("t", "time must increase");
  }
  return log;
}

json summary_to_json(const SimSummary& s, const SimLog& log, const ScenarioConfig& sc) {
  json j;
  j["scenario"] = sc.name;
  j["seed"] = sc.seed;
  j["samples"] = s.samples;
  j["duration"] = s.duration;
  j["rms_position_deviation"] = s.rms_position;
  j["rms_delayed_deviation"] = s.rms_delayed;
  j["max_shifted_error"] = s.max_shifted_error;
  j["window_violations"] = s.window_violations;
  j["window_violations_after_transient"] = s.window_violations_after_transient;
  j["transient"] = s.transient;
  j["completed_cycles"] = s.completed_cycles;
  j["update_firings"] = s.update_firings;
  j["accepted_updates"] = s.accepted_updates;
  j["path_regenerations"] = s.regenerations;
  j["solver_failures"] = s.solver_failures;
  j["slack_active_samples"] = s.slack_samples;
  j["max_command"] = s.max_command;
  j["max_command_rate_excess"] = s.max_command_rate_excess;
  j["max_kkt_stationarity"] = s.max_kkt_stationarity;
  j["max_kkt_primal"] = s.max_kkt_primal;
  j["max_kkt_complementarity"] = s.max_kkt_complementarity;
  j["delay_line_correlation"] = s.delay_line_correlation;
  json trace = json::array();
  for (const UpdateEvent& u : log.updates) {
    trace.push_back({{"t", u.t},
                     {"alpha_L", u.estimate.alpha_L},
                     {"alpha_G", u.estimate.alpha_G},
                     {"K", u.estimate.K},
                     {"t_d", u.estimate.t_d},
                     {"validity", to_string(u.estimate.validity)},
                     {"C_0", u.C0},
                     {"l_r", u.l_r},
                     {"accepted", u.accepted},
                     {"regenerated", u.regenerated},
                     {"note", u.note}});
  }
  j["parameter_updates"] = trace;
  return j;
}

std::vector<std::filesystem::path> write_plot_files(const std::filesystem::path& dir,
                                                    const SimLog& log) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto open = [&](const char* name, const char* header) {
    written.push_back(dir / name);
    auto out = std::make_unique<std::ofstream>(written.back());
    if (!*out) throw Error(ErrorKind::kInvalidArgument, "cannot write " + written.back().string());
    *out << header << '\n';
    return out;
  };
  {
    auto out = open("plot_trajectories.csv",
                    "t,ref_theta,ref_phi,theta,phi,td_theta,td_phi,meas_theta,meas_phi");
    for (const auto& r : log.records) {
      write_csv_row(*out, {r.t, r.ref_theta, r.ref_phi, r.theta, r.phi, r.td_theta, r.td_phi,
                           r.meas_theta, r.meas_phi});
    }
  }
  {
    auto out = open("plot_velocity.csv", "t,v_meas,v_model,v_true");
    for (const auto& r : log.records) write_csv_row(*out, {r.t, r.v_meas, r.v_model, r.v_true});
  }
  {
    auto out = open("plot_heading.csv", "t,gamma,gamma_hat,gamma_td,gamma_cmd,ref_gamma,e_td");
    const auto& rec = log.records;
    for (std::size_t k = 0; k < rec.size(); ++k) {
      const auto n = static_cast<std::size_t>(std::llround(rec[k].t_d_true / log.T));
      const double e = k + n < rec.size() ? rec[k].gamma_cmd - rec[k + n].gamma : std::nan("");
      write_csv_row(*out, {rec[k].t, rec[k].gamma, rec[k].gamma_hat, rec[k].gamma_td,
                           rec[k].gamma_cmd, rec[k].ref_gamma, e});
    }
  }
  {
    auto out = open("plot_parameters.csv",
                    "t,alpha_L,alpha_G,K,t_d,C_0,l_r,alpha_L_true,alpha_G_true,K_true,t_d_true,"
                    "r,wind");
    for (const auto& r : log.records) {
      write_csv_row(*out, {r.t, r.alpha_L_hat, r.alpha_G_hat, r.K_hat, r.t_d_hat, r.C0, r.l_r,
                           r.alpha_L_true, r.alpha_G_true, r.K_true, r.t_d_true, r.r, r.wind});
    }
  }
  return written;
}

std::vector<EstimateTraceRow> replay_identification(const SimLog& log, double window,
                                                    const IdentifyOptions& opts) {
  if (!(window > 0.0)) throw Error(ErrorKind::kInvalidArgument, "window must be positive");
  const auto& rec = log.records;
  const auto len = static_cast<std::size_t>(std::llround(window / log.T));
  const auto max_lag = static_cast<std::size_t>(std::llround(opts.t_d_max / log.T));
  const std::size_t need = len + max_lag;
  std::vector<std::size_t> fire;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    if (rec[k].update) fire.push_back(k);
  }
  if (fire.empty()) {
    for (std::size_t k = need - 1; k < rec.size(); k += len) fire.push_back(k);
  }
  std::vector<EstimateTraceRow> rows;
  for (std::size_t k : fire) {
    if (k + 1 < need) continue;
    MeasurementWindow w;
    w.T = log.T;
    for (std::size_t i = k + 1 - need; i <= k; ++i) {
      w.theta.push_back(rec[i].meas_theta);
      w.phi.push_back(rec[i].meas_phi);
      w.r.push_back(rec[i].r);
      w.delta.push_back(rec[i].delta);
      w.wind.push_back(rec[i].wind);
    }
    EstimateTraceRow row;
    row.t = rec[k].t;
    try {
      row.estimate = identify(w, opts);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateData && e.kind() != ErrorKind::kWindowTooShort) throw;
      row.estimate.validity = Validity::kInvalid;
    }
    row.estimate.time = row.t;
    rows.push_back(row);
  }
  return rows;
}

void write_estimate_csv(std::ostream& out, const std::vector<EstimateTraceRow>& rows) {
  out << "t,alpha_L,alpha_G,K,t_d,validity,velocity_residual,steering_residual\n";
  for (const auto& r : rows) {
    const auto& e = r.estimate;
    out << format_number(r.t) << ',' << format_number(e.alpha_L) << ','
        << format_number(e.alpha_G) << ',' << format_number(e.K) << ','
        << format_number(e.t_d) << ',' << to_string(e.validity) << ','
        << format_number(e.velocity_residual) << ',' << format_number(e.steering_residual)
        << '\n';
  }
}

}  // namespace kite
