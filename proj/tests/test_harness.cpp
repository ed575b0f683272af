#include <atomic>
#include <cmath>
#include <cstdlib>
#include <set>
#include <unordered_set>

#include "bdx/harness.hpp"
#include "bdx/rng.hpp"
#include "catch_amalgamated.hpp"

using namespace bdx;
using Catch::Approx;

namespace {

/// Sets BDX_THREADS for the lifetime of the object.
class ThreadsEnv {
 public:
  explicit ThreadsEnv(const char* value) {
    if (const char* old = std::getenv("BDX_THREADS")) old_ = old;
    setenv("BDX_THREADS", value, 1);
  }
  ~ThreadsEnv() {
    if (old_.empty()) unsetenv("BDX_THREADS");
    else setenv("BDX_THREADS", old_.c_str(), 1);
  }

 private:
  std::string old_;
};

ExperimentPlan small_convergence() {
  ExperimentPlan p = default_plan("convergence");
  p.methods = {parse_method("em"), parse_method("lm:lamperti"), parse_method("lm:time_rescale")};
  p.h_min = 0.02;
  p.h_max = 0.1;
  p.h_count = 3;
  p.T_sim = 200.0;
  p.n_repeats = 2;
  p.seed = 99;
  return p;
}

}  // namespace

TEST_CASE("method labels round-trip", "[harness]") {
  for (const char* l : {"em", "lm:lamperti", "sh:time_rescale", "lmvd", "lm:combined"})
    CHECK(parse_method(l).label() == l);
  CHECK(parse_method("lm:none").label() == "lm");
  CHECK_THROWS(parse_method("xx:lamperti"));
  CHECK_THROWS(parse_method("lm:xx"));
}

TEST_CASE("log grid", "[harness]") {
  const auto g = log_grid(1e-3, 1e-1, 10);
  REQUIRE(g.size() == 10);
  CHECK(g.front() == 1e-3);
  CHECK(g.back() == 1e-1);
  for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] / g[i - 1] == Approx(std::pow(100.0, 1.0 / 9.0)));
  CHECK(log_grid(0.5, 0.5, 1) == std::vector<double>{0.5});
  CHECK_THROWS(log_grid(0.0, 1.0, 3));
  CHECK_THROWS(log_grid(1.0, 0.1, 3));
}

TEST_CASE("default plans validate at both scales", "[harness]") {
  for (const auto& s : subcommands()) {
    CHECK_NOTHROW(validate(default_plan(s, false)));
    CHECK_NOTHROW(validate(default_plan(s, true)));
  }
  CHECK_THROWS(default_plan("nope"));
  const auto paper = default_plan("convergence", true);
  CHECK(paper.T_sim == 7.5e7);
  CHECK(paper.h_count == 10);
}

TEST_CASE("plan validation names the offending setting", "[harness]") {
  auto p = default_plan("convergence");
  p.n_repeats = 0;
  CHECK_THROWS_WITH(validate(p), Catch::Matchers::ContainsSubstring("n_repeats"));
  p = default_plan("quad2d");
  p.methods = {parse_method("lmvd")};
  CHECK_THROWS_WITH(validate(p), Catch::Matchers::ContainsSubstring("lmvd"));
  p = default_plan("convergence");
  p.x_init = {0.0, 0.0};
  CHECK_THROWS_WITH(validate(p), Catch::Matchers::ContainsSubstring("x_init"));
}

TEST_CASE("parallel_for visits every index once and rethrows", "[harness]") {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("derived seeds give non-overlapping streams", "[harness]") {
  std::unordered_set<double> seen;
  std::set<std::uint64_t> seeds;
  std::size_t total = 0;
  for (std::uint64_t r = 0; r < 100; ++r) {
    const auto seed = derive_seed(1, {r, 0});
    seeds.insert(seed);
    NoiseStream s(seed);
    for (int i = 0; i < 10000; ++i) {
      seen.insert(s.next());
      ++total;
    }
  }
  CHECK(seeds.size() == 100);
  CHECK(seen.size() == total);
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(2, {2, 3}));
}

TEST_CASE("slope fit on synthetic points", "[harness]") {
  std::vector<ConvergencePoint> pts;
  for (double h : {0.01, 0.02, 0.04, 0.08}) {
    ConvergencePoint p;
    p.h = h;
    p.l1 = 3.0 * h * h;
    p.noise_floor = 0.0;
    pts.push_back(p);
  }
  ConvergencePoint noisy;
  noisy.h = 0.005;
  noisy.l1 = 1e-4;
  noisy.noise_floor = 0.5e-4;
  pts.push_back(noisy);
  ConvergencePoint blown;
  blown.h = 0.5;
  blown.l1 = 1.0;
  blown.blew_up = 1;
  pts.push_back(blown);
  const auto f = fit_slope(pts, 0.3);
  REQUIRE(f.valid);
  CHECK(f.slope == Approx(2.0).epsilon(1e-12));
  CHECK(f.intercept == Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(f.n_points == 4);
  CHECK(f.h_lo == 0.01);
  CHECK(f.h_hi == 0.08);
  CHECK_FALSE(pts[4].used_in_fit);
  CHECK_FALSE(pts[5].used_in_fit);
  std::vector<ConvergencePoint> one{pts[0]};
  CHECK_FALSE(fit_slope(one, 0.3).valid);
}

TEST_CASE("convergence scan is deterministic and independent of the worker count", "[harness]") {
  const auto plan = small_convergence();
  ConvergenceResult a;
  ConvergenceResult b;
  {
    ThreadsEnv env("1");
    a = convergence_scan(plan);
  }
  {
    ThreadsEnv env("3");
    b = convergence_scan(plan);
  }
  REQUIRE(a.points.size() == 9);
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    CHECK(a.points[i].l1 == b.points[i].l1);
    CHECK(a.points[i].l1_repeats == b.points[i].l1_repeats);
    CHECK(a.points[i].noise_floor == b.points[i].noise_floor);
    CHECK(a.points[i].repeats == 2);
  }
  // Time-rescaled runs report the physical time they covered.
  for (const auto& p : a.points) {
    if (p.method.transform == TransformKind::TimeRescale) CHECK(p.realized_t < 200.0);
    else CHECK(std::abs(p.realized_t - 200.0) <= p.h);
  }
  CHECK(a.runs.size() == 18);
}

TEST_CASE("blow-ups are flagged, not fatal", "[harness]") {
  auto plan = small_convergence();
  plan.methods = {parse_method("em")};
  plan.h_min = 0.05;
  plan.h_max = 3.0;
  plan.h_count = 2;
  const auto r = convergence_scan(plan);
  REQUIRE(r.points.size() == 2);
  CHECK(r.points[0].blew_up == 0);
  CHECK(r.points[1].blew_up == 2);
  CHECK(std::isnan(r.points[1].l1));
  CHECK_FALSE(r.points[1].used_in_fit);
  CHECK_FALSE(r.fits[0].valid);
}

TEST_CASE("invariant estimate from a Lamperti run stays close to the reference", "[harness]") {
  auto plan = default_plan("convergence");
  const Problem problem = plan_problem(plan);
  const ReferenceDensity ref = plan_reference(plan, problem);
  const auto e = run_invariant_estimate(problem, plan, parse_method("lm:lamperti"), 0.02, 2e4, 5, ref);
  CHECK_FALSE(e.status.blew_up);
  CHECK(e.l1 < 0.01);
  CHECK(e.noise_floor > 0.0);
  CHECK(e.noise_floor < e.l1 * 3.0);
  CHECK(e.hist.total_mass() == Approx(1e6 + 1.0));
}

TEST_CASE("alpha = 0 double-well runs are identical with and without time rescaling", "[harness]") {
  auto plan = default_plan("double-well");
  plan.alphas = {0.0};
  plan.kT_list = {0.3};
  plan.n_repeats = 5;
  plan.T_sim = 50.0;
  auto plain = plan;
  plain.methods = {parse_method("lm")};
  auto rescaled = plan;
  rescaled.methods = {parse_method("lm:time_rescale")};
  const auto a = double_well_sweep(plain);
  const auto b = double_well_sweep(rescaled);
  REQUIRE(a.rows.size() == 1);
  CHECK(a.rows[0].mean_transitions == b.rows[0].mean_transitions);
  CHECK(a.rows[0].mean_l1 == b.rows[0].mean_l1);
}

TEST_CASE("alpha = 1 flattens the time-rescaled double well between the minima", "[harness]") {
  const auto p = std::get<Problem1D>(builtin_problem("scaled_diffusion_1d", {{"alpha", 1.0}, {"kT", 0.7}}));
  const auto s = make_system_1d(p, Temperature(0.7), TransformKind::TimeRescale);
  for (double x : {-0.99, -0.5, 0.0, 0.3, 0.9}) CHECK(s.dynamics.potential->value(x) == Approx(0.0).margin(1e-12));
  CHECK(s.dynamics.potential->value(1.5) > 0.0);
}

TEST_CASE("stability ladder finds the deterministic EM threshold", "[harness]") {
  auto plan = default_plan("stability");
  plan.problem = "ou_1d";
  plan.methods = {parse_method("em")};
  plan.ladder_start = 1.0;
  plan.ladder_max = 4.0;
  plan.horizon = 1e4;
  plan.timing_runs = 0;
  const auto r = stability_scan(plan);
  REQUIRE(r.entries.size() == 1);
  REQUIRE(r.entries[0].h_star.has_value());
  CHECK(*r.entries[0].h_star > 2.0);
  CHECK(*r.entries[0].h_star == Approx(std::pow(10.0, 0.4)));
  // Same method under two master seeds.
  auto other = plan;
  other.seed = 12345;
  CHECK(stability_scan(other).entries[0].h_star == r.entries[0].h_star);
  // Nothing blows up on a short ladder.
  plan.ladder_max = 1.5;
  const auto none = stability_scan(plan);
  CHECK_FALSE(none.entries[0].h_star.has_value());
  CHECK(none.entries[0].max_tested == Approx(std::pow(10.0, 0.1)));
}

TEST_CASE("cost-error scan: duplicates agree and looser targets cost less", "[harness]") {
  auto plan = default_plan("cost-error");
  plan.methods = {parse_method("lm:lamperti"), parse_method("lm:lamperti")};
  plan.h_min = 0.02;
  plan.h_max = 0.1;
  plan.h_count = 2;
  plan.n_repeats = 2;
  plan.targets = {0.03, 0.02, 0.01};
  plan.checkpoint_every = 2000;
  plan.max_iterations = 400000;
  plan.timing_runs = 2;
  plan.timing_iterations = 10000;
  const auto r = cost_error_scan(plan);
  REQUIRE(r.entries.size() == 6);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(r.entries[t].min_iterations == r.entries[3 + t].min_iterations);
    CHECK(r.entries[t].reached == r.entries[3 + t].reached);
  }
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t t = 1; t < 3; ++t) {
      const auto& loose = r.entries[m * 3 + t - 1];
      const auto& tight = r.entries[m * 3 + t];
      if (tight.reached) {
        REQUIRE(loose.reached);
        CHECK(loose.min_iterations <= tight.min_iterations);
      }
    }
  }
  CHECK(r.entries[0].reached);
  CHECK(r.timings.size() == 2);
  CHECK(r.timings[0].median_s > 0.0);
}

TEST_CASE("finite-time study shares initial draws across methods", "[harness]") {
  auto plan = default_plan("finite-time");
  plan.methods = {parse_method("em"), parse_method("lm:lamperti"), parse_method("lm:time_rescale")};
  plan.acf_trajectories = 4;
  plan.acf_T = 50.0;
  plan.acf_max_lag = 2.0;
  plan.evolve_trajectories = 200;
  plan.reference_trajectories = 200;
  plan.snapshot_end = 0.4;
  const auto r = finite_time_study(plan);
  CHECK(r.acf_reference.mean.size() == 201);
  CHECK(r.acf_reference.mean[0] == Approx(1.0));
  CHECK(r.snapshot_times.size() == 11);
  // Rows: baseline, then one block per method; t = 0 rows coincide.
  const std::size_t ns = r.snapshot_times.size();
  REQUIRE(r.evolving.size() == 4 * ns);
  for (std::size_t m = 2; m < 4; ++m) CHECK(r.evolving[m * ns].l1 == r.evolving[ns].l1);
  CHECK(r.evolving[ns].t == 0.0);
}

TEST_CASE("simulate returns a consistent single trajectory", "[harness]") {
  auto plan = default_plan("simulate");
  plan.n_steps = 500;
  plan.methods = {parse_method("lm:time_rescale")};
  const auto r = simulate(plan);
  REQUIRE(r.trajectory.size() == 501);
  CHECK(r.original.size() == 501);
  CHECK(r.t_values.front() == 0.0);
  for (std::size_t i = 1; i < r.t_values.size(); ++i) CHECK(r.t_values[i] > r.t_values[i - 1]);
}

TEST_CASE("symmetric 2D problem has marginal means near zero", "[harness]") {
  auto plan = default_plan("simulate");
  plan.problem = "moro_cardin_2d";
  plan.x_init = {0.0, 0.0};
  plan.histogram = default_histogram_2d();
  plan.methods = {parse_method("lm")};
  plan.h = 0.05;
  plan.n_steps = 400000;
  const auto r = simulate(plan);
  REQUIRE_FALSE(r.trajectory.status.blew_up);
  for (std::size_t axis = 0; axis < 2; ++axis) {
    constexpr std::size_t kBatches = 20;
    const std::size_t n = r.trajectory.size();
    std::vector<double> means(kBatches, 0.0);
    for (std::size_t i = 0; i < n; ++i) means[std::min(kBatches - 1, i * kBatches / n)] += r.original[2 * i + axis];
    for (double& m : means) m /= static_cast<double>(n / kBatches);
    double mean = 0.0;
    for (double m : means) mean += m / kBatches;
    double var = 0.0;
    for (double m : means) var += (m - mean) * (m - mean) / (kBatches - 1);
    CHECK(std::abs(mean) < 3.0 * std::sqrt(var / kBatches));
  }
}
