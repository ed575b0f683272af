#pragma once

// Result tables, CSV serialization and the per-invocation output set:
// one CSV per table, manifest.json and README.txt.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdx/config.hpp"
#include "bdx/harness.hpp"

namespace bdx {

using Cell = std::variant<std::string, double, std::int64_t, bool>;

/// Numbers use 17 significant digits; NaN is written as "nan"; booleans as
/// true/false; strings are quoted only when they contain , " or newlines.
std::string format_cell(const Cell& cell);

struct ResultTable {
  std::string name;     // file stem
  std::string figure;   // plotting figure id this table feeds, e.g. "fig4"
  std::string purpose;  // one line for README.txt
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  /// Throws std::invalid_argument on a column-count mismatch.
  void add_row(std::vector<Cell> row);
};

/// "# plan_hash=<hash>" line, header row, then rows; '\n' line endings.
std::string to_csv(const ResultTable& table, const std::string& hash);

/// Tables, run records and study-specific manifest fields of one invocation.
struct StudyOutput {
  std::vector<ResultTable> tables;
  std::vector<RunRecord> runs;
  nlohmann::json extra = nlohmann::json::object();
};

StudyOutput tables_for(const ExperimentPlan& plan, const ConvergenceResult& r);
StudyOutput tables_for(const CostErrorResult& r);
StudyOutput tables_for(const StabilityResult& r);
StudyOutput tables_for(const DoubleWellResult& r);
StudyOutput tables_for(const ExperimentPlan& plan, const FiniteTimeResult& r);
StudyOutput tables_for(const ExperimentPlan& plan, const SimulationResult& r);

/// Runs the study named by plan.subcommand and builds its tables.
StudyOutput run_study(const ExperimentPlan& plan);

/// Resolved plan, explicit and defaulted keys, run seeds, wall-clock
/// timings, blow-up records, output files and software version.
nlohmann::json build_manifest(const ResolvedConfig& config, const StudyOutput& output, double total_wall_s);

/// Writes every table as <name>.csv plus manifest.json and README.txt into
/// dir (created if missing). Throws std::runtime_error naming the path.
void write_outputs(const std::vector<ResultTable>& tables, const nlohmann::json& manifest, const std::string& dir);

/// Software version string recorded in manifests.
const char* software_version();

}  // namespace bdx
