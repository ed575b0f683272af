#include "bdx/output.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace bdx {

const char* software_version() { return "bdx 1.0.0"; }

std::string format_cell(const Cell& cell) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, double>) {
          if (std::isnan(v)) return "nan";
          char buf[40];
          std::snprintf(buf, sizeof buf, "%.17g", v);
          return buf;
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else {
          if (v.find_first_of(",\"\n\r") == std::string::npos) return v;
          std::string q = "\"";
          for (char c : v) q += c == '"' ? std::string("\"\"") : std::string(1, c);
          return q + "\"";
        }
      },
      cell);
}

void ResultTable::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size())
    throw std::invalid_argument("table " + name + ": row has " + std::to_string(row.size()) + " cells, expected " +
                                std::to_string(columns.size()));
  rows.push_back(std::move(row));
}

std::string to_csv(const ResultTable& table, const std::string& hash) {
  std::string out = "# plan_hash=" + hash + "\n";
  for (std::size_t i = 0; i < table.columns.size(); ++i) out += (i ? "," : "") + table.columns[i];
  out += "\n";
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + format_cell(row[i]);
    out += "\n";
  }
  return out;
}

namespace {

Cell count(std::size_t n) { return static_cast<std::int64_t>(n); }

std::string integrator_of(const MethodSpec& m) { return to_string(m.integrator); }
std::string transform_of(const MethodSpec& m) { return to_string(m.transform); }

nlohmann::json record_json(const RunRecord& r) {
  nlohmann::json j = {{"study", r.study},   {"method", r.method}, {"h", r.h},
                      {"repeat", r.repeat}, {"seed", r.seed},     {"wall_s", r.wall_s},
                      {"steps", r.steps},   {"realized_t", r.realized_t}, {"blew_up", r.blew_up}};
  if (r.blew_up) {
    j["blow_up_step"] = r.blow_up_step;
    j["blow_up_reason"] = r.blow_up_reason;
  }
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

}  // namespace

StudyOutput tables_for(const ExperimentPlan& plan, const ConvergenceResult& r) {
  const bool two_d = plan.subcommand == "quad2d";
  const std::string fig = two_d ? "fig8" : "fig4";
  StudyOutput out;
  ResultTable main{"convergence", fig, "mean L1 error of the invariant-density histogram vs step size",
                   {"method", "transform", "h", "l1_error", "se", "blew_up"}, {}};
  ResultTable detail{"convergence_detail", fig, "per-point diagnostics: noise floor, fit membership, realized time",
                     {"method", "transform", "h", "repeats", "blew_up", "noise_floor", "used_in_fit", "realized_t"}, {}};
  for (const auto& p : r.points) {
    main.add_row({integrator_of(p.method), transform_of(p.method), p.h, p.l1, p.se, count(p.blew_up)});
    detail.add_row({integrator_of(p.method), transform_of(p.method), p.h, count(p.repeats), count(p.blew_up),
                    p.noise_floor, p.used_in_fit, p.realized_t});
  }
  ResultTable fit{"convergence_fit", fig, "least-squares log-log slope per method over the fitted h range",
                  {"method", "transform", "slope", "intercept", "n_points", "h_lo", "h_hi", "valid", "note"}, {}};
  for (const auto& f : r.fits)
    fit.add_row({integrator_of(f.method), transform_of(f.method), f.valid ? f.slope : std::nan(""),
                 f.valid ? f.intercept : std::nan(""), count(f.n_points), f.h_lo, f.h_hi, f.valid, f.note});
  out.tables = {std::move(main), std::move(fit), std::move(detail)};
  out.runs = r.runs;
  return out;
}

StudyOutput tables_for(const CostErrorResult& r) {
  StudyOutput out;
  ResultTable main{"cost_error", "fig5", "minimum iterations and wall cost to reach each target L1 error",
                   {"method", "transform", "target", "reached", "min_iterations", "best_h", "iter_cost_s",
                    "wall_cost_s"},
                   {}};
  for (const auto& e : r.entries)
    main.add_row({integrator_of(e.method), transform_of(e.method), e.target, e.reached, count(e.min_iterations),
                  e.reached ? e.best_h : std::nan(""), e.iter_cost_s, e.wall_cost_s});
  ResultTable curves{"cost_error_curves", "fig5", "repeat-averaged running L1 error at each checkpoint",
                     {"method", "transform", "h", "iterations", "mean_l1", "blew_up"}, {}};
  for (const auto& c : r.curves) {
    for (std::size_t k = 0; k < c.iterations.size(); ++k)
      curves.add_row({integrator_of(c.method), transform_of(c.method), c.h, count(c.iterations[k]), c.mean_l1[k],
                      count(c.blew_up)});
    if (c.iterations.empty())
      curves.add_row({integrator_of(c.method), transform_of(c.method), c.h, count(0), std::nan(""), count(c.blew_up)});
  }
  ResultTable timing{"cost_error_timing", "fig5", "per-iteration cost calibration",
                     {"method", "transform", "median_s", "mean_s", "se_s", "runs"}, {}};
  for (const auto& t : r.timings)
    timing.add_row({integrator_of(t.method), transform_of(t.method), t.median_s, t.mean_s, t.se_s,
                    count(t.samples_s.size())});
  out.tables = {std::move(main), std::move(curves), std::move(timing)};
  out.runs = r.runs;
  return out;
}

StudyOutput tables_for(const StabilityResult& r) {
  StudyOutput out;
  ResultTable main{"stability", "table1", "first blow-up step size and per-iteration compute time",
                   {"method", "transform", "h_star", "iter_time_s", "iter_time_se"}, {}};
  for (const auto& e : r.entries) {
    const Cell h = e.h_star ? Cell(*e.h_star) : Cell(">" + format_cell(e.max_tested));
    main.add_row({integrator_of(e.method), transform_of(e.method), h, e.iter_time_s, e.iter_time_se});
  }
  out.tables = {std::move(main)};
  out.runs = r.runs;
  return out;
}

StudyOutput tables_for(const DoubleWellResult& r) {
  StudyOutput out;
  ResultTable main{"double_well", "fig3", "mean transition counts and L1 error vs alpha and kT",
                   {"alpha", "kT", "method", "transform", "mean_transitions", "se_transitions", "mean_l1", "se_l1",
                    "repeats", "blew_up"},
                   {}};
  for (const auto& row : r.rows)
    main.add_row({row.alpha, row.kT, integrator_of(row.method), transform_of(row.method), row.mean_transitions,
                  row.se_transitions, row.mean_l1, row.se_l1, count(row.repeats), count(row.blew_up)});
  out.tables = {std::move(main)};
  out.runs = r.runs;
  return out;
}

StudyOutput tables_for(const ExperimentPlan& plan, const FiniteTimeResult& r) {
  StudyOutput out;
  ResultTable acf{"acf", "fig6", "ensemble autocorrelation curves and differences from the reference",
                  {"curve", "lag_t", "mean", "se", "n_trajectories"}, {}};
  const std::pair<const char*, const AcfEstimate*> curves[] = {{"reference", &r.acf_reference},
                                                               {"lamperti", &r.acf_lamperti},
                                                               {"time_rescale", &r.acf_time_rescale},
                                                               {"diff_lamperti", &r.diff_lamperti},
                                                               {"diff_time_rescale", &r.diff_time_rescale}};
  for (const auto& [name, a] : curves)
    for (std::size_t k = 0; k < a->lags.size(); ++k)
      acf.add_row({std::string(name), a->lags[k], a->mean[k], a->se[k], count(a->n_trajectories)});
  ResultTable ev{"evolving", "fig7", "L1 error of the evolving distribution vs time against the reference",
                 {"method", "transform", "t", "l1", "se"}, {}};
  for (const auto& row : r.evolving) {
    std::string integ = row.method;
    std::string transform = "none";
    if (const auto c = row.method.find(':'); c != std::string::npos) {
      integ = row.method.substr(0, c);
      transform = row.method.substr(c + 1);
    }
    ev.add_row({integ, transform, row.t, row.l1, row.se});
  }
  ResultTable ref{"evolving_reference", "fig7", "reference evolving distribution (bin masses per snapshot)",
                  {"snapshot", "t", "bin", "mass"}, {}};
  for (std::size_t k = 0; k < r.reference_masses.size(); ++k)
    for (std::size_t i = 0; i < r.reference_masses[k].size(); ++i)
      ref.add_row({count(k), r.snapshot_times[k], count(i), r.reference_masses[k][i]});
  out.tables = {std::move(acf), std::move(ev), std::move(ref)};
  out.runs = r.runs;
  out.extra["reference_source"] = plan.reference_path.empty() ? "regenerated" : plan.reference_path;
  return out;
}

StudyOutput tables_for(const ExperimentPlan& plan, const SimulationResult& r) {
  StudyOutput out;
  const std::size_t dim = r.trajectory.dim;
  std::vector<std::string> cols{"step", "tau", "t"};
  for (std::size_t d = 0; d < dim; ++d) cols.push_back("y" + std::to_string(d));
  for (std::size_t d = 0; d < dim; ++d) cols.push_back("x" + std::to_string(d));
  ResultTable traj{"trajectory", "fig1", "single trajectory in dynamics and original coordinates", cols, {}};
  for (std::size_t n = 0; n < r.trajectory.size(); ++n) {
    std::vector<Cell> row{count(n), static_cast<double>(n) * r.trajectory.h, r.t_values[n]};
    for (double v : r.trajectory.state(n)) row.push_back(v);
    for (std::size_t d = 0; d < dim; ++d) row.push_back(r.original[n * dim + d]);
    traj.add_row(std::move(row));
  }
  out.tables.push_back(std::move(traj));

  // Effective potentials on a dense grid over the histogram range.
  const Problem problem = plan_problem(plan);
  const Temperature kT(plan.kT);
  if (const auto* p1 = std::get_if<Problem1D>(&problem)) {
    const auto lam = make_system_1d(*p1, kT, TransformKind::Lamperti, plan.map);
    const auto tr = make_system_1d(*p1, kT, TransformKind::TimeRescale, plan.map);
    ResultTable pot{"effective_potentials", "fig1", "original and transformed potentials on a grid of x",
                    {"x", "V", "D", "y_lamperti", "V_lamperti", "V_time_rescale", "g_time_rescale"}, {}};
    const auto& range = plan.histogram.range.front();
    for (std::size_t i = 0; i < plan.grid_points; ++i) {
      const double x = range.lo + (range.hi - range.lo) * static_cast<double>(i) / static_cast<double>(plan.grid_points - 1);
      const double y = lam.to_dynamics(x);
      pot.add_row({x, p1->potential->value(x), p1->diffusion->value(x), y, lam.dynamics.potential->value(y),
                   tr.dynamics.potential->value(x), tr.weight(x)});
    }
    out.tables.push_back(std::move(pot));
  } else {
    const auto& pn = std::get<ProblemND>(problem);
    const auto tr = make_system_nd(pn, kT, TransformKind::TimeRescale, plan.map);
    ResultTable pot{"effective_potentials", "fig8", "original and time-rescaled potentials on a 2D grid",
                    {"x0", "x1", "V", "d", "V_time_rescale", "g_time_rescale"}, {}};
    const auto& rx = plan.histogram.range[0];
    const auto& ry = plan.histogram.range[1];
    const auto& iso = std::get<IsotropicDiffusion>(pn.diffusion);
    Eigen::VectorXd x(2);
    const double m = static_cast<double>(plan.grid_points - 1);
    for (std::size_t i = 0; i < plan.grid_points; ++i) {
      for (std::size_t j = 0; j < plan.grid_points; ++j) {
        x << rx.lo + (rx.hi - rx.lo) * static_cast<double>(i) / m, ry.lo + (ry.hi - ry.lo) * static_cast<double>(j) / m;
        pot.add_row({x[0], x[1], pn.potential->value(x), iso.magnitude->value(x), tr.dynamics.potential->value(x),
                     tr.weight(x)});
      }
    }
    out.tables.push_back(std::move(pot));
  }
  out.runs.push_back({"simulate", r.method.label(), r.trajectory.h, 0, r.trajectory.seed, 0.0,
                      r.trajectory.status.steps_completed, r.t_values.empty() ? 0.0 : r.t_values.back(),
                      r.trajectory.status.blew_up, r.trajectory.status.blow_up_step,
                      r.trajectory.status.blow_up_reason, ""});
  return out;
}

StudyOutput run_study(const ExperimentPlan& plan) {
  const std::string& s = plan.subcommand;
  if (s == "convergence") return tables_for(plan, convergence_scan(plan));
  if (s == "quad2d") return tables_for(plan, quad_well_2d_study(plan));
  if (s == "cost-error") return tables_for(cost_error_scan(plan));
  if (s == "stability") return tables_for(stability_scan(plan));
  if (s == "double-well") return tables_for(double_well_sweep(plan));
  if (s == "finite-time") return tables_for(plan, finite_time_study(plan));
  if (s == "simulate") return tables_for(plan, simulate(plan));
  throw std::invalid_argument("unknown subcommand '" + s + "'");
}

nlohmann::json build_manifest(const ResolvedConfig& config, const StudyOutput& output, double total_wall_s) {
  const ExperimentPlan& plan = config.plan;
  nlohmann::json m;
  m["software_version"] = software_version();
  m["subcommand"] = plan.subcommand;
  m["paper_scale"] = plan.paper_scale;
  m["plan_hash"] = plan_hash(plan);
  m["resolved_plan"] = write_config(plan);
  m["explicit_keys"] = config.explicit_keys;
  m["default_keys"] = config.default_keys;
  m["master_seed"] = plan.seed;
  m["rng"] = "boost::random::mt19937_64 per run, seeded by splitmix64 hashing of (master seed, study, indices); "
             "normals by boost::random::normal_distribution";
  m["error_checkpoint_every"] = plan.checkpoint_every;
  m["worker_threads"] = worker_count();
  m["total_wall_s"] = total_wall_s;
  nlohmann::json runs = nlohmann::json::array();
  nlohmann::json blowups = nlohmann::json::array();
  for (const auto& r : output.runs) {
    runs.push_back(record_json(r));
    if (r.blew_up) blowups.push_back(record_json(r));
  }
  m["runs"] = std::move(runs);
  m["blow_ups"] = std::move(blowups);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& t : output.tables)
    files.push_back({{"file", t.name + ".csv"}, {"figure", t.figure}, {"rows", t.rows.size()}, {"columns", t.columns}});
  m["outputs"] = std::move(files);
  for (const auto& [k, v] : output.extra.items()) m[k] = v;
  return m;
}

void write_outputs(const std::vector<ResultTable>& tables, const nlohmann::json& manifest, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir + "': " + ec.message());
  const auto write_file = [](const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
  };
  const std::string hash = manifest.value("plan_hash", std::string());
  std::string readme = "Output of " + std::string(software_version()) + " (plan hash " + hash + ").\n\n"
                       "Each CSV starts with a '# plan_hash=' line, then a header row.\n"
                       "manifest.json records the resolved plan, per-run seeds, timings and blow-ups.\n\n";
  for (const auto& t : tables) {
    write_file(fs::path(dir) / (t.name + ".csv"), to_csv(t, hash));
    readme += t.name + ".csv -> " + t.figure + ": " + t.purpose + "\n";
  }
  write_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
  write_file(fs::path(dir) / "README.txt", readme);
}

}  // namespace bdx
