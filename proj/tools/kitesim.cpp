// kitesim: command-line driver for the kite guidance library.
//
// Exit codes: 0 success, 1 usage error, 2 invalid input or schema mismatch,
// 3 infeasible tuning, 4 aborted run.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kite/error.hpp"
#include "kite/estimation.hpp"
#include "kite/robustness.hpp"
#include "kite/scenario_io.hpp"
#include "kite/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitAborted = 4;

int fail(int code, const std::string& kind, const std::string& message,
         const std::string& field = {}, const std::optional<fs::path>& out_dir = std::nullopt,
         json extra = json::object()) {
  json err = std::move(extra);
  err["error"] = kind;
  err["message"] = message;
  if (!field.empty()) err["field"] = field;
  std::cerr << err.dump(2) << '\n';
  if (out_dir) {
    std::error_code ec;
    fs::create_directories(*out_dir, ec);
    std::ofstream(*out_dir / "error.json") << err.dump(2) << '\n';
  }
  return code;
}

std::ofstream open_out(const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw kite::Error(kite::ErrorKind::kInvalidArgument, "cannot write " + file.string());
  return out;
}

struct RobustInputs {
  double K = 1.0;
  double t_d = 0.7;
  double fK = 0.2;
  double ftd = 0.2;
  double l_m = 2.5;
  double l_e = 0.9;
  std::string sign = "forward";
};

void add_robust_options(CLI::App* cmd, RobustInputs& in) {
  cmd->add_option("--K", in.K, "steering gain");
  cmd->add_option("--t-d", in.t_d, "input delay [s]");
  cmd->add_option("--fraction-K", in.fK, "relative gain uncertainty");
  cmd->add_option("--fraction-td", in.ftd, "relative delay uncertainty");
  cmd->add_option("--l-m", in.l_m, "command magnitude limit [rad]");
  cmd->add_option("--l-e", in.l_e, "shifted tracking error limit [rad]");
  cmd->add_option("--sign", in.sign, "shift sign in the performance channel")
      ->check(CLI::IsMember({"forward", "backward"}));
}

void check_robust_inputs(const RobustInputs& in) {
  using kite::Error;
  using kite::ErrorKind;
  if (!(in.K > 0.0)) throw Error(ErrorKind::kInvalidArgument, "K must be positive");
  if (!(in.t_d > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument,
                "t_d must be positive; the predictor degenerates without a delay");
  }
  if (!(in.fK >= 0.0 && in.ftd >= 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "uncertainty fractions must be non-negative");
  }
  kite::PerformanceSpec{in.l_m, in.l_e, 1.0}.validate();
}

// One row per grid frequency; worst-case column is "inf" where robust
// stability fails.
void write_sweep(const fs::path& file, const RobustInputs& in, double C0, double l_r) {
  const auto grid = kite::FrequencyGrid::standard();
  const auto u = kite::UncertaintyBounds::relative(in.K, in.t_d, in.fK, in.ftd);
  const kite::PerformanceSpec spec{in.l_m, in.l_e, l_r};
  const auto sign = in.sign == "backward" ? kite::ShiftSign::kBackward : kite::ShiftSign::kForward;
  auto out = open_out(file);
  out << "omega,W_m,W_p,W_m_T_nom,worst_W_p_S\n";
  const double ck = C0 * in.K;
  for (double w : grid.omegas()) {
    const double wm = kite::weight_Wm(w, in.K, in.t_d, u);
    const double t_nom = ck / std::sqrt(w * w + ck * ck);
    const auto worst = kite::worst_case_wp_s(w, C0, in.K, in.t_d, u, spec, sign);
    out << kite::format_number(w) << ',' << kite::format_number(wm) << ','
        << kite::format_number(kite::weight_Wp(w, spec)) << ','
        << kite::format_number(wm * t_nom) << ','
        << kite::format_number(worst ? *worst : std::numeric_limits<double>::infinity())
        << '\n';
  }
}

int cmd_simulate(const std::string& scenario_file, const fs::path& out_dir,
                 std::optional<std::uint64_t> seed, const std::vector<std::string>& overrides,
                 bool debug_mpc) {
  kite::ScenarioConfig sc;
  try {
    std::ifstream in(scenario_file);
    if (!in) return fail(kExitInput, "SchemaError", "cannot open " + scenario_file, "<file>",
                         out_dir);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      return fail(kExitInput, "SchemaError", std::string("malformed JSON: ") + e.what(), "<file>",
                  out_dir);
    }
    for (const auto& o : overrides) kite::apply_override(doc, o);
    if (seed) doc["seed"] = *seed;
    sc = kite::parse_scenario(doc);
  } catch (const kite::SchemaError& e) {
    return fail(kExitInput, "SchemaError", e.what(), e.field(), out_dir);
  }

  fs::create_directories(out_dir);
  std::ofstream debug;
  kite::RunHooks hooks;
  if (debug_mpc) {
    debug = open_out(out_dir / "mpc_debug.jsonl");
    hooks.on_guidance = [&debug](const kite::SimRecord& rec, const kite::GuidanceOutput& g) {
      json d;
      d["t"] = rec.t;
      d["j"] = g.ref_index;
      d["chi0"] = {g.initial.chi(0), g.initial.chi(1), g.initial.u_prev};
      d["du"] = std::vector<double>(g.du.data(), g.du.data() + g.du.size());
      d["slack_active"] = g.slack_active;
      d["cost"] = g.cost;
      d["iterations"] = g.iterations;
      d["status"] = kite::to_string(g.status);
      debug << d.dump() << '\n';
    };
  }

  kite::SimLog log;
  try {
    log = kite::run_closed_loop(sc, debug_mpc ? &hooks : nullptr);
  } catch (const kite::Error& e) {
    const int code = e.kind() == kite::ErrorKind::kNoFeasibleGain ||
                             e.kind() == kite::ErrorKind::kNoFeasibleRate
                         ? kExitInfeasible
                         : kExitAborted;
    return fail(code, std::string(kite::to_string(e.kind())), e.what(), {}, out_dir);
  }

  {
    auto out = open_out(out_dir / "log.csv");
    kite::write_log_csv(out, log);
  }
  {
    auto out = open_out(out_dir / "path.csv");
    kite::write_path_csv(out, log.paths.back());
  }
  const auto summary = kite::summarize(log, sc.mpc.window);
  const json sj = kite::summary_to_json(summary, log, sc);
  open_out(out_dir / "summary.json") << sj.dump(2) << '\n';
  kite::write_plot_files(out_dir / "plots", log);
  std::cout << sj.dump(2) << '\n';
  return 0;
}

int cmd_tune(const RobustInputs& in, const fs::path& out_dir) {
  try {
    check_robust_inputs(in);
  } catch (const kite::Error& e) {
    return fail(kExitInput, "InvalidArgument", e.what(), {}, out_dir);
  }
  fs::create_directories(out_dir);
  const auto u = kite::UncertaintyBounds::relative(in.K, in.t_d, in.fK, in.ftd);
  kite::TuneOptions opts;
  opts.sign = in.sign == "backward" ? kite::ShiftSign::kBackward : kite::ShiftSign::kForward;
  const fs::path sweep = out_dir / "tune_sweep.csv";
  try {
    const auto r = kite::tune(in.K, in.t_d, u, in.l_m, in.l_e, kite::FrequencyGrid::standard(), opts);
    write_sweep(sweep, in, r.C0, r.l_r);
    json j{{"C_0", r.C0}, {"l_r", r.l_r}, {"sup", r.sup}, {"rs_margin", r.rs_margin},
           {"sweep", sweep.string()}};
    std::cout << j.dump(2) << '\n';
    return 0;
  } catch (const kite::Error& e) {
    if (e.kind() != kite::ErrorKind::kNoFeasibleGain && e.kind() != kite::ErrorKind::kNoFeasibleRate) {
      throw;
    }
    // Diagnostic sweep at the smallest grid gain and rate.
    write_sweep(sweep, in, opts.gain_grid_lo / in.K, opts.rate_lo);
    return fail(kExitInfeasible, std::string(kite::to_string(e.kind())), e.what(), {}, out_dir,
                json{{"sweep", sweep.string()}});
  }
}

int cmd_analyze(const RobustInputs& in, std::optional<double> C0, double l_r,
                const fs::path& out_dir) {
  try {
    check_robust_inputs(in);
    if (C0 && !(*C0 > 0.0)) throw kite::Error(kite::ErrorKind::kInvalidArgument, "C0 must be positive");
    if (!(l_r > 0.0)) throw kite::Error(kite::ErrorKind::kInvalidArgument, "l_r must be positive");
  } catch (const kite::Error& e) {
    return fail(kExitInput, "InvalidArgument", e.what(), {}, out_dir);
  }
  const auto u = kite::UncertaintyBounds::relative(in.K, in.t_d, in.fK, in.ftd);
  const auto grid = kite::FrequencyGrid::standard();
  const double gain = C0 ? *C0 : 1.0 / in.K;
  const double rs = kite::robust_stability_margin(gain, in.K, in.t_d, u, grid);
  const kite::PerformanceSpec spec{in.l_m, in.l_e, l_r};
  const auto sign = in.sign == "backward" ? kite::ShiftSign::kBackward : kite::ShiftSign::kForward;
  const auto rp = kite::robust_performance_sup(gain, in.K, in.t_d, u, spec, grid, sign);
  fs::create_directories(out_dir);
  const fs::path sweep = out_dir / "robustness_sweep.csv";
  write_sweep(sweep, in, gain, l_r);
  json j{{"C_0", gain},
         {"l_r", l_r},
         {"rs_margin", rs},
         {"robustly_stable", rs < 1.0},
         {"rp_sup", rp ? json(*rp) : json(nullptr)},
         {"robust_performance", rp && *rp < 1.0},
         {"sweep", sweep.string()}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_identify(const std::string& log_file, const fs::path& out_dir, double window,
                 const std::string& scheme, std::size_t smoothing, double t_d_max) {
  kite::SimLog log;
  try {
    std::ifstream in(log_file);
    if (!in) return fail(kExitInput, "SchemaError", "cannot open " + log_file, "<file>", out_dir);
    log = kite::read_log_csv(in);
  } catch (const kite::SchemaError& e) {
    return fail(kExitInput, "SchemaError", e.what(), e.field(), out_dir);
  }
  kite::IdentifyOptions opts;
  opts.rates.scheme = scheme == "forward" ? kite::DiffScheme::kForward : kite::DiffScheme::kCentral;
  opts.rates.smoothing_width = smoothing;
  opts.t_d_max = t_d_max;
  std::vector<kite::EstimateTraceRow> rows;
  try {
    rows = kite::replay_identification(log, window, opts);
  } catch (const kite::Error& e) {
    return fail(kExitInput, std::string(kite::to_string(e.kind())), e.what(), {}, out_dir);
  }
  fs::create_directories(out_dir);
  const fs::path file = out_dir / "estimates.csv";
  auto out = open_out(file);
  kite::write_estimate_csv(out, rows);
  json j{{"fits", rows.size()}, {"estimates", file.string()}};
  if (!rows.empty()) {
    const auto& e = rows.back().estimate;
    j["last"] = {{"t", rows.back().t}, {"alpha_L", e.alpha_L}, {"alpha_G", e.alpha_G},
                 {"K", e.K}, {"t_d", e.t_d}, {"validity", kite::to_string(e.validity)}};
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kite guidance simulation and tuning"};
  app.require_subcommand(1);

  std::string scenario;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool debug_mpc = false;
  auto* sim = app.add_subcommand("simulate", "run a closed-loop scenario");
  sim->add_option("--scenario", scenario, "scenario JSON")->required();
  sim->add_option("--out", out, "output directory");
  sim->add_option("--seed", seed, "noise seed (overrides the scenario)");
  sim->add_option("--override", overrides, "key=value applied to the scenario")->take_all();
  sim->add_flag("--debug-mpc", debug_mpc, "write one JSON line per guidance step");

  RobustInputs tune_in;
  std::string tune_out = ".";
  auto* tune = app.add_subcommand("tune", "pick C0 and l_r certified by the robustness test");
  add_robust_options(tune, tune_in);
  tune->add_option("--out", tune_out, "directory for the sweep CSV");

  RobustInputs an_in;
  std::optional<double> an_C0;
  double an_lr = 1.0;
  std::string an_out = ".";
  auto* analyze = app.add_subcommand("analyze-robustness", "evaluate a given (C0, l_r) pair");
  add_robust_options(analyze, an_in);
  analyze->add_option("--C0", an_C0, "tracking gain (default 1/K)");
  analyze->add_option("--l-r", an_lr, "rate limit [rad/s]");
  analyze->add_option("--out", an_out, "directory for the sweep CSV");

  std::string log_file;
  std::string id_out = ".";
  double window = 5.0;
  std::string scheme = "central";
  std::size_t smoothing = 9;
  double t_d_max = kite::kDefaultMaxDelay;
  auto* ident = app.add_subcommand("identify", "replay the parameter fits over a log");
  ident->add_option("--log", log_file, "simulation log CSV")->required();
  ident->add_option("--out", id_out, "directory for estimates.csv");
  ident->add_option("--window", window, "fit window [s]");
  ident->add_option("--scheme", scheme, "finite-difference scheme")
      ->check(CLI::IsMember({"central", "forward"}));
  ident->add_option("--smoothing", smoothing, "moving-average width")->check(CLI::PositiveNumber);
  ident->add_option("--t-d-max", t_d_max, "largest delay on the lag grid [s]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    return fail(kExitInput, "InvalidArgument", e.what());
  }

  try {
    if (*sim) return cmd_simulate(scenario, out, seed, overrides, debug_mpc);
    if (*tune) return cmd_tune(tune_in, tune_out);
    if (*analyze) return cmd_analyze(an_in, an_C0, an_lr, an_out);
    if (*ident) return cmd_identify(log_file, id_out, window, scheme, smoothing, t_d_max);
  } catch (const kite::Error& e) {
    return fail(kExitInput, std::string(kite::to_string(e.kind())), e.what());
  } catch (const std::exception& e) {
    return fail(1, "Internal", e.what());
  }
  return 1;
}
