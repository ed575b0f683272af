#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "bdx/config.hpp"
#include "bdx/output.hpp"
#include "catch_amalgamated.hpp"

using namespace bdx;
using Catch::Matchers::ContainsSubstring;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("bdx_test_" + name);
  fs::remove_all(d);
  return d;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BDX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kTinyConvergence =
    "methods: [em, lm:lamperti]\n"
    "h_grid.min: 0.05\n"
    "h_grid.max: 0.1\n"
    "h_grid.count: 2\n"
    "T_sim: 100\n"
    "n_repeats: 2\n";

}  // namespace

TEST_CASE("empty config yields the subcommand defaults", "[config]") {
  for (const auto& s : subcommands()) {
    const auto r = parse_config_text("", s, false);
    CHECK(r.plan == default_plan(s, false));
    CHECK(r.explicit_keys.empty());
    CHECK(r.default_keys.size() == config_keys().size());
  }
}

TEST_CASE("h grid keys and overrides", "[config]") {
  const auto r = parse_config_text("seed: 5\n", "convergence", false,
                                   {"h_grid.min=1e-3", "h_grid.max=1e-1", "h_grid.count=10"});
  CHECK(r.plan.h_count == 10);
  CHECK(log_grid(r.plan.h_min, r.plan.h_max, r.plan.h_count).size() == 10);
  CHECK(r.plan.seed == 5);
  CHECK(r.explicit_keys == std::vector<std::string>{"seed", "h_grid.min", "h_grid.max", "h_grid.count"});
  // Later overrides win.
  const auto twice = parse_config_text("", "convergence", false, {"seed=1", "seed=2"});
  CHECK(twice.plan.seed == 2);
}

TEST_CASE("subcommand sections apply only to their subcommand", "[config]") {
  const char* text = "T_sim: 500\nstability:\n  T_sim: 7\n";
  CHECK(parse_config_text(text, "convergence", false).plan.T_sim == 500.0);
  CHECK(parse_config_text(text, "stability", false).plan.T_sim == 7.0);
  CHECK_THROWS_AS(parse_config_text("stability:\n  bogus: 1\n", "convergence", false), ConfigError);
}

TEST_CASE("invalid values and unknown keys are named", "[config]") {
  CHECK_THROWS_WITH(parse_config_text("problem: scaled_diffusion_1d\nalpha: 1.5\n", "convergence", false),
                    ContainsSubstring("alpha"));
  CHECK_THROWS_WITH(parse_config_text("h_gird.min: 0.1\n", "convergence", false), ContainsSubstring("h_gird.min"));
  CHECK_THROWS_WITH(parse_config_text("", "convergence", false, {"nope=3"}), ContainsSubstring("nope"));
  CHECK_THROWS_WITH(parse_config_text("kT: 0\n", "convergence", false), ContainsSubstring("kT"));
  CHECK_THROWS_WITH(parse_config_text("methods: [lm:wrong]\n", "convergence", false), ContainsSubstring("wrong"));
  CHECK_THROWS_WITH(parse_config_text("n_repeats: -2\n", "convergence", false), ContainsSubstring("n_repeats"));
  CHECK_THROWS_AS(parse_config_text("", "convergence", false, {"seed"}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("", "nonexistent", false), ConfigError);
}

TEST_CASE("syntax errors carry line and column", "[config]") {
  try {
    parse_config_text("seed: 3\nmethods: [em, lm\n", "convergence", false, {}, "bad.yaml");
    FAIL("no exception");
  } catch (const ConfigError& e) {
    CHECK(e.source() == "bad.yaml");
    CHECK(e.line() >= 2);
    CHECK(e.column() >= 1);
    CHECK_THAT(e.what(), ContainsSubstring("bad.yaml"));
  }
  try {
    parse_config_text("seed: 3\nT_sim: abc\n", "convergence", false, {}, "t.yaml");
    FAIL("no exception");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 2);
    CHECK_THAT(e.what(), ContainsSubstring("T_sim"));
  }
}

TEST_CASE("missing config file is a config error", "[config]") {
  CHECK_THROWS_AS(parse_config("/nonexistent/bdx.yaml", "convergence", false), ConfigError);
}

TEST_CASE("integrator and transform aliases", "[config]") {
  const auto r = parse_config_text("integrator: sh\ntransform: time_rescale\n", "simulate", false);
  REQUIRE(r.plan.methods.size() == 1);
  CHECK(r.plan.methods[0].label() == "sh:time_rescale");
}

TEST_CASE("written configs parse back to the same plan", "[config]") {
  for (const auto& s : subcommands()) {
    for (bool paper : {false, true}) {
      ExperimentPlan p = default_plan(s, paper);
      p.seed = 0xfedcba9876543210ULL;
      p.kT = 0.1 + 1.0 / 3.0;
      const auto back = parse_config_text(write_config(p), s, paper);
      CHECK(back.plan == p);
      CHECK(plan_hash(back.plan) == plan_hash(p));
    }
  }
  auto p = default_plan("convergence");
  const auto h = plan_hash(p);
  CHECK(h.size() == 16);
  p.seed += 1;
  CHECK(plan_hash(p) != h);
}

TEST_CASE("cell formatting", "[output]") {
  const double third = 1.0 / 3.0;
  const std::string s = format_cell(third);
  CHECK(std::stod(s) == third);
  CHECK(format_cell(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_cell(std::int64_t{42}) == "42");
  CHECK(format_cell(true) == "true");
  CHECK(format_cell(std::string("lm:lamperti")) == "lm:lamperti");
  CHECK(format_cell(std::string("a,b")) == "\"a,b\"");
  CHECK(format_cell(std::string("say \"x\"")) == "\"say \"\"x\"\"\"");
}

TEST_CASE("tables reject ragged rows and serialize with a hash line", "[output]") {
  ResultTable t{"t", "fig0", "test", {"a", "b"}, {}};
  t.add_row({std::string("x"), 1.5});
  CHECK_THROWS_AS(t.add_row({1.0}), std::invalid_argument);
  CHECK(to_csv(t, "abc") == "# plan_hash=abc\na,b\nx,1.5\n");
}

TEST_CASE("convergence output schema, manifest and byte-identical reruns", "[output]") {
  const auto cfg = parse_config_text(kTinyConvergence, "convergence", false);
  const auto a = run_study(cfg.plan);
  const auto b = run_study(cfg.plan);
  const fs::path da = scratch_dir("a");
  const fs::path db = scratch_dir("b");
  write_outputs(a.tables, build_manifest(cfg, a, 1.0), da.string());
  write_outputs(b.tables, build_manifest(cfg, b, 2.0), db.string());

  const std::string csv = slurp(da / "convergence.csv");
  std::istringstream lines(csv);
  std::string first;
  std::string header;
  std::getline(lines, first);
  std::getline(lines, header);
  CHECK(first == "# plan_hash=" + plan_hash(cfg.plan));
  CHECK(header == "method,transform,h,l1_error,se,blew_up");
  std::size_t rows = 0;
  for (std::string line; std::getline(lines, line);) ++rows;
  CHECK(rows == 4);

  for (const auto& t : a.tables) {
    const std::string name = t.name + ".csv";
    CHECK(slurp(da / name) == slurp(db / name));
  }
  CHECK(fs::exists(da / "README.txt"));
  CHECK_THAT(slurp(da / "README.txt"), ContainsSubstring("convergence.csv -> fig4"));

  const auto m = nlohmann::json::parse(slurp(da / "manifest.json"));
  for (const char* k : {"software_version", "plan_hash", "resolved_plan", "explicit_keys", "default_keys",
                        "master_seed", "rng", "runs", "blow_ups", "outputs", "total_wall_s"})
    CHECK(m.contains(k));
  CHECK(m["runs"].size() == 8);
  CHECK(m["runs"][0].contains("seed"));
  CHECK(m["runs"][0].contains("wall_s"));
  CHECK(m["resolved_plan"].get<std::string>() == write_config(cfg.plan));
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("stability output columns", "[output]") {
  auto plan = default_plan("stability");
  plan.problem = "ou_1d";
  plan.methods = {parse_method("em")};
  plan.ladder_start = 1.0;
  plan.ladder_max = 4.0;
  plan.horizon = 100.0;
  plan.timing_runs = 0;
  const auto out = tables_for(stability_scan(plan));
  REQUIRE(out.tables.size() >= 1);
  CHECK(out.tables[0].name == "stability");
  CHECK(out.tables[0].columns == std::vector<std::string>{"method", "transform", "h_star", "iter_time_s", "iter_time_se"});
}

TEST_CASE("command-line exit codes", "[cli]") {
  const fs::path dir = scratch_dir("cli");
  fs::create_directories(dir);
  const fs::path cfg = dir / "tiny.yaml";
  std::ofstream(cfg) << kTinyConvergence;
  const fs::path bad = dir / "bad.yaml";
  std::ofstream(bad) << "alpha: [\n";
  const fs::path out = dir / "out";

  CHECK(run_cli("convergence --config " + cfg.string() + " --out " + out.string()) == 0);
  CHECK(fs::exists(out / "convergence.csv"));
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(run_cli("convergence --config " + bad.string() + " --out " + out.string()) == 1);
  CHECK(run_cli("convergence --set bogus=1 --out " + out.string()) == 1);
  CHECK(run_cli("convergence --set problem=scaled_diffusion_1d --set alpha=1.5 --out " + out.string()) == 1);
  CHECK(run_cli("nosuch --out " + out.string()) == 1);
  CHECK(run_cli("finite-time --set reference_path=/nonexistent/ref.csv --set acf_trajectories=2 --set acf_T=20 --set acf_max_lag=2 "
                "--set evolve_trajectories=10 --out " +
                out.string()) == 2);
  fs::remove_all(dir);
}
