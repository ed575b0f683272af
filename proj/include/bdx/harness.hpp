#pragma once

// Experiment drivers: convergence scans, cost-error sweeps, stability scans,
// double-well sweeps, finite-time studies and the 2D experiment. Work units
// (one trajectory, or one lockstep group of repeats) run on a bounded worker
// pool; results are stored by (method, h, repeat) so output order never
// depends on completion order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bdx/integrators.hpp"
#include "bdx/model.hpp"
#include "bdx/observables.hpp"
#include "bdx/transforms.hpp"

namespace bdx {

struct MethodSpec {
  IntegratorKind integrator = IntegratorKind::LM;
  TransformKind transform = TransformKind::None;

  /// "lm:lamperti"; transform omitted means none.
  std::string label() const;
  bool operator==(const MethodSpec& o) const = default;
};

MethodSpec parse_method(const std::string& text);

/// count points equally spaced in log space between min and max inclusive.
std::vector<double> log_grid(double min, double max, std::size_t count);

/// All settings of one experiment invocation. Keys of the config format map
/// one-to-one onto these fields (see config.hpp).
struct ExperimentPlan {
  std::string subcommand = "convergence";
  bool paper_scale = false;

  // problem
  std::string problem = "sin_quadratic_1d";
  ProblemParams problem_params;  // alpha, A, sigma, D0 when given
  double kT = 1.0;

  // methods and steps
  std::vector<MethodSpec> methods;
  double h_min = 1e-3;
  double h_max = 1e-1;
  std::size_t h_count = 8;
  double h = 0.01;
  double T_sim = 1e6;  // t units, or tau units for time-rescaled methods
  std::size_t n_repeats = 4;
  std::uint64_t seed = 1;
  std::vector<double> x_init{0.0};

  // observables
  HistogramSpec histogram = default_histogram_1d();
  std::size_t mc_batches = 20;
  double fit_noise_fraction = 0.3;

  // transforms and integrators
  MapOptions map;
  int lmvd_substeps = 8;
  double blow_up_threshold = kDefaultBlowUpThreshold;

  // cost-error
  std::vector<double> targets;
  std::size_t checkpoint_every = 10000;
  std::size_t max_iterations = 20000000;
  std::size_t timing_runs = 5;
  std::size_t timing_iterations = 1000000;
  double timing_h = 0.01;

  // stability
  double ladder_start = 0.01;
  double ladder_factor = 1.2589254117941673;  // 10^0.1
  double ladder_max = 10.0;
  double horizon = 1e4;
  std::size_t stability_seeds = 4;

  // double-well sweep
  std::vector<double> alphas;
  std::vector<double> kT_list;

  // finite-time study
  std::string acf_integrator = "sh";
  std::size_t acf_trajectories = 200;
  double acf_T = 5000.0;
  double acf_h = 0.01;
  double acf_max_lag = 20.0;
  std::size_t evolve_trajectories = 100000;
  double evolve_h = 0.02;
  double snapshot_dt = 0.04;
  double snapshot_end = 6.0;
  double reference_h = 1e-3;
  std::size_t reference_trajectories = 100000;
  std::string reference_path;

  // simulate
  std::size_t n_steps = 10000;
  std::size_t grid_points = 401;

  bool operator==(const ExperimentPlan& o) const = default;
};

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"convergence", "cost-error", "stability", "double-well",
                                              "finite-time", "quad2d",     "simulate"};
  return names;
}

/// Desk-scale (or paper-scale) defaults for a subcommand.
ExperimentPlan default_plan(const std::string& subcommand, bool paper_scale = false);

/// Throws std::invalid_argument naming the offending setting.
void validate(const ExperimentPlan& plan);

/// Worker count: BDX_THREADS if set, else hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs f(0..n-1) on up to `threads` workers; rethrows the first exception.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& f);

// ---------------------------------------------------------------------------
// Shared records

struct RunRecord {
  std::string study;
  std::string method;
  double h = 0.0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  double wall_s = 0.0;
  std::size_t steps = 0;
  double realized_t = 0.0;  // physical time covered, trapezoidal clock for tau runs
  bool blew_up = false;
  std::size_t blow_up_step = 0;
  std::string blow_up_reason;
  std::string note;
};

/// Histogram estimate of the invariant measure from one trajectory.
struct InvariantEstimate {
  WeightedHistogram hist;
  double l1 = 0.0;
  /// Expected L1 from Monte-Carlo noise alone: (1/M) sum_i sqrt(2/pi) sd_i
  /// with sd_i from batch means.
  double noise_floor = 0.0;
  std::vector<double> bin_se;  // batch-means SE of each normalized bin mass
  RunStatus status;
  std::size_t steps = 0;
  double realized_t = 0.0;
};

/// Builds the problem named in the plan (kT and problem_params applied).
Problem plan_problem(const ExperimentPlan& plan);
ReferenceDensity plan_reference(const ExperimentPlan& plan, const Problem& problem);

/// Runs one method for duration/h steps from x_init (original coordinates)
/// and accumulates the matching estimator: plain counting, Lamperti
/// pullback, or g-weighted counting.
InvariantEstimate run_invariant_estimate(const Problem& problem, const ExperimentPlan& plan, const MethodSpec& method,
                                         double h, double duration, std::uint64_t seed,
                                         const ReferenceDensity& reference);

// ---------------------------------------------------------------------------
// Convergence

struct ConvergencePoint {
  MethodSpec method;
  double h = 0.0;
  double l1 = 0.0;  // mean over non-blown repeats (NaN if none)
  double se = 0.0;  // SD over repeats / sqrt(n)
  double noise_floor = 0.0;
  std::size_t repeats = 0;
  std::size_t blew_up = 0;
  bool used_in_fit = false;
  double realized_t = 0.0;  // mean over repeats
  std::vector<double> l1_repeats;
};

struct SlopeFit {
  MethodSpec method;
  bool valid = false;
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t n_points = 0;
  double h_lo = 0.0;
  double h_hi = 0.0;
  std::string note;
};

/// OLS of log l1 on log h over points without blow-up whose noise floor is
/// below `noise_fraction` of their error. Marks used points.
SlopeFit fit_slope(std::vector<ConvergencePoint>& points, double noise_fraction);

struct ConvergenceResult {
  std::vector<ConvergencePoint> points;
  std::vector<SlopeFit> fits;
  std::vector<RunRecord> runs;
};

ConvergenceResult convergence_scan(const ExperimentPlan& plan);
/// convergence_scan with the 2D quadruple-well + Moro-Cardin defaults.
ConvergenceResult quad_well_2d_study(const ExperimentPlan& plan);

// ---------------------------------------------------------------------------
// Cost-error

struct IterationTiming {
  MethodSpec method;
  double median_s = 0.0;  // per iteration
  double mean_s = 0.0;
  double se_s = 0.0;
  std::vector<double> samples_s;
};

/// Median of plan.timing_runs runs of plan.timing_iterations iterations at
/// plan.timing_h, estimator accumulation included.
IterationTiming calibrate_iteration_cost(const Problem& problem, const ExperimentPlan& plan, const MethodSpec& method,
                                         const ReferenceDensity& reference);

struct CostErrorCurve {
  MethodSpec method;
  double h = 0.0;
  std::vector<std::size_t> iterations;
  std::vector<double> mean_l1;
  std::size_t blew_up = 0;
};

struct CostErrorEntry {
  MethodSpec method;
  double target = 0.0;
  bool reached = false;
  std::size_t min_iterations = 0;
  double best_h = 0.0;
  double iter_cost_s = 0.0;
  double wall_cost_s = 0.0;
};

struct CostErrorResult {
  std::vector<CostErrorEntry> entries;
  std::vector<CostErrorCurve> curves;
  std::vector<IterationTiming> timings;
  std::vector<RunRecord> runs;
};

CostErrorResult cost_error_scan(const ExperimentPlan& plan);

// ---------------------------------------------------------------------------
// Stability

struct StabilityEntry {
  MethodSpec method;
  std::optional<double> h_star;  // nullopt: no blow-up up to max_tested
  double max_tested = 0.0;
  double iter_time_s = 0.0;
  double iter_time_se = 0.0;
};

struct StabilityResult {
  std::vector<StabilityEntry> entries;
  std::vector<RunRecord> runs;
};

/// Geometric ladder ladder_start * ladder_factor^k up to ladder_max; h* is
/// the first rung where any of stability_seeds trajectories blows up within
/// `horizon` time units. Timing columns are filled when timing_runs > 0.
StabilityResult stability_scan(const ExperimentPlan& plan);

// ---------------------------------------------------------------------------
// Double-well sweep

struct DoubleWellRow {
  double alpha = 0.0;
  double kT = 0.0;
  MethodSpec method;
  double mean_transitions = 0.0;
  double se_transitions = 0.0;
  double mean_l1 = 0.0;
  double se_l1 = 0.0;
  std::size_t repeats = 0;
  std::size_t blew_up = 0;
};

struct DoubleWellResult {
  std::vector<DoubleWellRow> rows;
  std::vector<RunRecord> runs;
};

/// Scaled-diffusion double well for every (kT, alpha, method); markers at the
/// inflection points; trajectories start in the left minimum.
DoubleWellResult double_well_sweep(const ExperimentPlan& plan);

// ---------------------------------------------------------------------------
// Finite-time study

struct EvolvingRow {
  std::string method;  // "reference_vs_invariant" for the baseline curve
  double t = 0.0;
  double l1 = 0.0;
  double se = 0.0;
};

struct FiniteTimeResult {
  AcfEstimate acf_reference;
  AcfEstimate acf_lamperti;
  AcfEstimate acf_time_rescale;
  AcfEstimate diff_lamperti;
  AcfEstimate diff_time_rescale;
  std::vector<double> snapshot_times;
  std::vector<std::vector<double>> reference_masses;  // per snapshot
  std::vector<EvolvingRow> evolving;
  std::vector<RunRecord> runs;
};

FiniteTimeResult finite_time_study(const ExperimentPlan& plan);

/// Reference evolving distribution in the layout written to
/// evolving_reference.csv: header, then rows of snapshot,t,bin,mass.
std::vector<std::vector<double>> load_reference_masses(const std::string& path, std::size_t n_snapshots,
                                                       std::size_t n_bins);

// ---------------------------------------------------------------------------
// Single trajectory

struct SimulationResult {
  Trajectory trajectory;               // dynamics coordinates
  std::vector<double> original;        // original coordinates, dim per sample
  std::vector<double> t_values;        // physical time of each sample
  MethodSpec method;
};

SimulationResult simulate(const ExperimentPlan& plan);

}  // namespace bdx
