#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "kite/error.hpp"
#include "kite/estimation.hpp"
#include "kite/simulator.hpp"

namespace kite {

/// Schema violation in an input file; field() is a dotted path such as
/// "mpc.Q" or "wind[2]", or a CSV column name.
class SchemaError : public Error {
 public:
  SchemaError(std::string field, const std::string& message)
      : Error(ErrorKind::kSchemaError, field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Scenario from JSON. Unknown keys and wrongly typed values are rejected.
ScenarioConfig parse_scenario(const nlohmann::json& doc);
ScenarioConfig load_scenario(const std::filesystem::path& file);
nlohmann::json scenario_to_json(const ScenarioConfig& sc);

/// Applies "a.b.c=value" to a scenario document. The value is read as JSON
/// when it parses, otherwise as a string. Missing objects along the path are
/// created; parse_scenario then rejects misspelled keys.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Fixed column order of the simulation log.
const std::vector<std::string>& log_columns();

/// Numbers use 17 significant digits so a read-back log re-emits identically.
void write_log_csv(std::ostream& out, const SimLog& log);
/// Throws SchemaError on a header mismatch, a malformed cell or an empty file.
SimLog read_log_csv(std::istream& in);

nlohmann::json summary_to_json(const SimSummary& s, const SimLog& log,
                               const ScenarioConfig& sc);

/// Writes plot_trajectories.csv, plot_velocity.csv, plot_heading.csv and
/// plot_parameters.csv into `dir`; returns the paths written.
std::vector<std::filesystem::path> write_plot_files(const std::filesystem::path& dir,
                                                    const SimLog& log);

struct EstimateTraceRow {
  double t = 0.0;
  ParamEstimate estimate;
};

/// Offline replay of the parameter fits over a log. Fits are taken at the
/// samples flagged as updates in the log, or every `window` seconds when no
/// sample is flagged. Each fit uses the trailing `window` seconds plus the
/// steering-lag history. Windows with too little history are skipped.
std::vector<EstimateTraceRow> replay_identification(const SimLog& log, double window,
                                                    const IdentifyOptions& opts);

void write_estimate_csv(std::ostream& out, const std::vector<EstimateTraceRow>& rows);

/// printf("%.17g")
std::string format_number(double v);

}  // namespace kite
