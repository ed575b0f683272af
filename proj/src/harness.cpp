#include "bdx/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include "bdx/rng.hpp"

namespace bdx {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Seed-derivation tags keep the streams of different studies apart.
enum StudyTag : std::uint64_t {
  kConvergenceTag = 1,
  kCostErrorTag = 2,
  kStabilityTag = 3,
  kDoubleWellTag = 4,
  kAcfTag = 5,
  kEvolveTag = 6,
  kReferenceTag = 7,
  kInitialDrawTag = 8,
  kTimingTag = 9,
  kSimulateTag = 10,
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::size_t steps_for(double duration, double h) {
  const double n = std::round(duration / h);
  if (!(n >= 1.0)) throw std::invalid_argument("duration shorter than one step");
  return static_cast<std::size_t>(n);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double se_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Methods and plans

std::string MethodSpec::label() const {
  return transform == TransformKind::None ? to_string(integrator) : to_string(integrator) + ":" + to_string(transform);
}

MethodSpec parse_method(const std::string& text) {
  const auto colon = text.find(':');
  MethodSpec m;
  m.integrator = integrator_from_string(text.substr(0, colon));
  m.transform = colon == std::string::npos ? TransformKind::None : transform_from_string(text.substr(colon + 1));
  return m;
}

std::vector<double> log_grid(double min, double max, std::size_t count) {
  if (!(min > 0.0) || !(max >= min) || count < 1) throw std::invalid_argument("log grid: need 0 < min <= max, count >= 1");
  if (count == 1) return {min};
  std::vector<double> g(count);
  const double a = std::log10(min);
  const double b = std::log10(max);
  for (std::size_t i = 0; i < count; ++i)
    g[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  g.front() = min;
  g.back() = max;
  return g;
}

namespace {

std::vector<MethodSpec> methods_of(std::initializer_list<const char*> labels) {
  std::vector<MethodSpec> m;
  for (const char* l : labels) m.push_back(parse_method(l));
  return m;
}

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

}  // namespace

ExperimentPlan default_plan(const std::string& subcommand, bool paper_scale) {
  ExperimentPlan p;
  p.subcommand = subcommand;
  p.paper_scale = paper_scale;
  if (subcommand == "convergence") {
    p.methods = paper_scale ? methods_of({"em", "mm", "hlm", "sh", "lmvd", "em:lamperti", "lm:lamperti", "sh:lamperti",
                                          "em:time_rescale", "lm:time_rescale", "sh:time_rescale"})
                            : methods_of({"em", "lmvd", "lm:lamperti", "lm:time_rescale"});
    p.h_count = paper_scale ? 10 : 8;
    p.T_sim = paper_scale ? 7.5e7 : 1e6;
    p.n_repeats = paper_scale ? 12 : 4;
  } else if (subcommand == "cost-error") {
    p.methods = paper_scale ? methods_of({"em", "mm", "hlm", "sh", "lmvd", "em:lamperti", "lm:lamperti", "sh:lamperti",
                                          "em:time_rescale", "lm:time_rescale", "sh:time_rescale"})
                            : methods_of({"em", "lmvd", "lm:lamperti", "lm:time_rescale"});
    p.h_min = paper_scale ? 1e-3 : 2e-3;
    p.h_count = paper_scale ? 10 : 6;
    p.n_repeats = paper_scale ? 6000 : 8;
    p.targets = paper_scale ? log_grid(std::pow(10.0, -3.5), 1e-3, 5) : std::vector<double>{5e-3, 4e-3, 3e-3};
    p.max_iterations = paper_scale ? 100000000 : 20000000;
    p.timing_runs = paper_scale ? 12 : 5;
    p.timing_iterations = paper_scale ? 100000000 : 1000000;
  } else if (subcommand == "stability") {
    p.methods = methods_of({"em", "hlm", "sh", "lmvd", "em:lamperti", "lm:lamperti", "sh:lamperti", "em:time_rescale",
                            "lm:time_rescale", "sh:time_rescale"});
    p.horizon = paper_scale ? 1e6 : 1e4;
    p.timing_runs = paper_scale ? 12 : 5;
    p.timing_iterations = paper_scale ? 100000000 : 1000000;
  } else if (subcommand == "double-well") {
    p.problem = "scaled_diffusion_1d";
    p.methods = methods_of({"lm", "lm:time_rescale"});
    p.alphas = paper_scale ? linspace(0.0, 1.0, 30) : std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0};
    p.kT_list = paper_scale ? log_grid(0.3, 3.0, 4) : std::vector<double>{0.3, 1.0};
    p.h = 0.01;
    p.T_sim = paper_scale ? 1000.0 : 200.0;
    p.n_repeats = paper_scale ? 5000 : 500;
    p.x_init = {-1.0};
  } else if (subcommand == "finite-time") {
    p.methods = paper_scale ? methods_of({"em", "mm", "hlm", "sh", "lmvd", "em:lamperti", "lm:lamperti", "sh:lamperti",
                                          "em:time_rescale", "lm:time_rescale", "sh:time_rescale"})
                            : methods_of({"em", "sh", "lmvd", "lm:lamperti", "lm:time_rescale"});
    p.acf_trajectories = paper_scale ? 200 : 100;
    p.acf_T = paper_scale ? 5000.0 : 2000.0;
    p.evolve_trajectories = paper_scale ? 25000000 : 100000;
    p.reference_h = paper_scale ? 1e-4 : 1e-3;
    p.reference_trajectories = paper_scale ? 25000000 : 100000;
  } else if (subcommand == "quad2d") {
    p.problem = "moro_cardin_2d";
    p.methods = paper_scale ? methods_of({"em", "lm", "hlm", "sh", "em:time_rescale", "lm:time_rescale", "sh:time_rescale"})
                            : methods_of({"em", "lm", "em:time_rescale", "lm:time_rescale"});
    p.h_min = std::pow(10.0, -2.5);
    p.h_max = std::pow(10.0, -0.5);
    p.h_count = 10;
    p.T_sim = paper_scale ? 5e6 : 1e5;
    p.n_repeats = paper_scale ? 12 : 4;
    p.x_init = {0.0, 0.0};
    p.histogram = default_histogram_2d();
  } else if (subcommand == "simulate") {
    p.methods = methods_of({"lm:lamperti"});
    p.n_steps = 10000;
  } else {
    throw std::invalid_argument("unknown subcommand '" + subcommand + "'");
  }
  return p;
}

void validate(const ExperimentPlan& p) {
  const auto fail = [](const std::string& what) { throw std::invalid_argument(what); };
  if (std::find(subcommands().begin(), subcommands().end(), p.subcommand) == subcommands().end())
    fail("subcommand: unknown '" + p.subcommand + "'");
  const auto names = builtin_problem_names();
  if (std::find(names.begin(), names.end(), p.problem) == names.end()) fail("problem: unknown '" + p.problem + "'");
  if (!(p.kT > 0.0)) fail("kT: must be > 0");
  if (p.methods.empty()) fail("methods: at least one method is required");
  const bool one_d = is_one_dimensional(p.problem);
  for (const auto& m : p.methods) {
    if (!one_d && !supports_nd(m.integrator)) fail("methods: " + m.label() + " has no multivariate form");
    if (one_d && m.transform == TransformKind::Combined) fail("methods: combined transform needs a multivariate problem");
  }
  if (!(p.h_min > 0.0) || !(p.h_max >= p.h_min)) fail("h_grid: need 0 < h_grid.min <= h_grid.max");
  if (p.h_count < 1) fail("h_grid.count: must be >= 1");
  if (!(p.h > 0.0)) fail("h: must be > 0");
  if (!(p.T_sim > 0.0)) fail("T_sim: must be > 0");
  if (p.n_repeats < 1) fail("n_repeats: must be >= 1");
  const std::size_t dim = one_d ? 1 : 2;
  if (p.x_init.size() != dim) fail("x_init: expected " + std::to_string(dim) + " value(s)");
  try {
    p.histogram.validate();
  } catch (const std::exception& e) {
    fail(std::string("bins/range: ") + e.what());
  }
  if (p.histogram.dim() != dim) fail("bins/range: histogram dimension must match the problem");
  if (p.mc_batches < 2) fail("mc_batches: must be >= 2");
  if (!(p.fit_noise_fraction > 0.0)) fail("fit_noise_fraction: must be > 0");
  if (!(p.map.domain.lo < p.map.domain.hi)) fail("map_domain: need lo < hi");
  if (!p.map.domain.contains(p.map.x0)) fail("x0: must lie in map_domain");
  if (p.map.grid_points < 2) fail("map_grid_points: must be >= 2");
  if (p.lmvd_substeps < 1) fail("lmvd_substeps: must be >= 1");
  if (!(p.blow_up_threshold > 0.0)) fail("blow_up_threshold: must be > 0");
  for (double t : p.targets)
    if (!(t > 0.0)) fail("targets: must be > 0");
  if (p.subcommand == "cost-error" && p.targets.empty()) fail("targets: at least one target error is required");
  if (p.checkpoint_every < 1) fail("checkpoint_every: must be >= 1");
  if (p.max_iterations < p.checkpoint_every) fail("max_iterations: must be >= checkpoint_every");
  if (!(p.timing_h > 0.0)) fail("timing_h: must be > 0");
  if (p.subcommand == "cost-error" && (p.timing_runs < 1 || p.timing_iterations < 1))
    fail("timing_runs/timing_iterations: must be >= 1");
  if (!(p.ladder_start > 0.0) || !(p.ladder_factor > 1.0) || !(p.ladder_max >= p.ladder_start))
    fail("ladder: need ladder_start > 0, ladder_factor > 1, ladder_max >= ladder_start");
  if (!(p.horizon > 0.0)) fail("horizon: must be > 0");
  if (p.stability_seeds < 1) fail("stability_seeds: must be >= 1");
  for (double a : p.alphas)
    if (!(a >= 0.0 && a <= 1.0)) fail("alphas: each alpha must lie in [0, 1]");
  for (double k : p.kT_list)
    if (!(k > 0.0)) fail("kT_list: each kT must be > 0");
  if (p.subcommand == "double-well" && (p.alphas.empty() || p.kT_list.empty()))
    fail("alphas/kT_list: the double-well sweep needs at least one of each");
  if (p.subcommand == "double-well" && p.problem != "scaled_diffusion_1d")
    fail("problem: the double-well sweep runs scaled_diffusion_1d");
  if (p.subcommand == "quad2d" && one_d) fail("problem: quad2d needs a 2D problem");
  if (p.subcommand == "finite-time" && !one_d) fail("problem: finite-time study is one-dimensional");
  if (p.subcommand == "finite-time") {
    (void)integrator_from_string(p.acf_integrator);
    if (p.acf_trajectories < 2) fail("acf_trajectories: must be >= 2");
    if (!(p.acf_h > 0.0) || !(p.acf_T > p.acf_max_lag) || !(p.acf_max_lag > 0.0))
      fail("acf: need acf_h > 0 and acf_T > acf_max_lag > 0");
    if (p.evolve_trajectories < 10 || p.reference_trajectories < 10)
      fail("evolve_trajectories/reference_trajectories: must be >= 10");
    if (!(p.evolve_h > 0.0) || !(p.reference_h > 0.0) || !(p.snapshot_dt > 0.0) || !(p.snapshot_end > 0.0))
      fail("evolving distribution: step sizes and snapshot grid must be > 0");
  }
  if (p.n_steps < 1) fail("n_steps: must be >= 1");
  if (p.grid_points < 2) fail("grid_points: must be >= 2");
  // Problem parameters are validated by constructing the problem.
  if (p.subcommand == "double-well") {
    for (double k : p.kT_list) {
      ExperimentPlan probe = p;
      probe.kT = k;
      probe.problem_params["alpha"] = p.alphas.front();
      (void)plan_problem(probe);
    }
  } else {
    (void)plan_problem(p);
  }
}

// ---------------------------------------------------------------------------
// Worker pool

std::size_t worker_count() {
  if (const char* env = std::getenv("BDX_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& f) {
  if (n == 0) return;
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (error) return;
      }
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Method runners

Problem plan_problem(const ExperimentPlan& plan) {
  ProblemParams params = plan.problem_params;
  params["kT"] = plan.kT;
  return builtin_problem(plan.problem, params);
}

ReferenceDensity plan_reference(const ExperimentPlan& plan, const Problem& problem) {
  const Temperature kT(plan.kT);
  if (const auto* p1 = std::get_if<Problem1D>(&problem))
    return ReferenceDensity::from_potential(*p1->potential, kT, plan.histogram);
  return ReferenceDensity::from_potential(*std::get<ProblemND>(problem).potential, kT, plan.histogram);
}

namespace {

/// A problem prepared for one method: transformed system plus integrator.
struct BuiltMethod {
  MethodSpec method;
  IntegratorSpec spec;
  std::optional<TransformedSystem1D> s1;
  std::optional<TransformedSystemND> sn;

  std::size_t dim() const { return s1 ? 1 : sn->dim(); }
  bool rescaled() const { return s1 ? s1->clock.has_value() : sn->clock.has_value(); }
};

BuiltMethod build_method(const Problem& problem, const MethodSpec& method, const ExperimentPlan& plan, double kT) {
  BuiltMethod b;
  b.method = method;
  b.spec = IntegratorSpec{method.integrator, plan.lmvd_substeps};
  const Temperature t(kT);
  if (const auto* p1 = std::get_if<Problem1D>(&problem)) {
    b.s1 = make_system_1d(*p1, t, method.transform, plan.map);
  } else {
    if (!supports_nd(method.integrator)) throw std::invalid_argument(method.label() + " has no multivariate form");
    b.sn = make_system_nd(std::get<ProblemND>(problem), t, method.transform, plan.map);
  }
  return b;
}

/// Resumable run of a built method that reports original-coordinate samples
/// and their estimator weight g (1 unless time-rescaled).
class MethodRunner {
 public:
  MethodRunner(const BuiltMethod& m, std::span<const double> x_init, double h, std::uint64_t seed, double threshold)
      : m_(m), x_(m.dim()) {
    if (x_init.size() != m.dim()) throw std::invalid_argument("x_init dimension does not match the problem");
    if (m.s1) {
      s1_.emplace(m.s1->dynamics, m.spec, m.s1->to_dynamics(x_init[0]), h, seed, threshold);
    } else {
      Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(x_init.data(), static_cast<Eigen::Index>(x_init.size()));
      Eigen::VectorXd y0(x0.size());
      m.sn->to_dynamics(x0, y0);
      xb_.resize(x0.size());
      sn_.emplace(m.sn->dynamics, m.spec, y0, h, seed, threshold);
    }
  }

  /// Emits the initial state as step 0.
  template <class F>
  bool start(F&& on) {
    if (s1_) return observe1(0, s1_->state(), on);
    return observen(0, sn_->state(), on);
  }

  template <class F>
  const RunStatus& advance(std::size_t n, F&& on) {
    if (s1_) return s1_->advance(n, [&](std::size_t k, double y) { return observe1(k, y, on); });
    return sn_->advance(n, [&](std::size_t k, const Eigen::VectorXd& y) { return observen(k, y, on); });
  }

  const RunStatus& status() const { return s1_ ? s1_->status() : sn_->status(); }

 private:
  template <class F>
  bool observe1(std::size_t k, double y, F& on) {
    x_[0] = m_.s1->to_original(y);
    return on(k, std::span<const double>(x_.data(), 1), m_.s1->weight(x_[0]));
  }

  template <class F>
  bool observen(std::size_t k, const Eigen::VectorXd& y, F& on) {
    m_.sn->to_original(y, xb_);
    return on(k, std::span<const double>(xb_.data(), static_cast<std::size_t>(xb_.size())), m_.sn->weight(xb_));
  }

  const BuiltMethod& m_;
  std::vector<double> x_;
  Eigen::VectorXd xb_;
  std::optional<Stepper1D> s1_;
  std::optional<StepperND> sn_;
};

/// Histogram with batch means for the Monte-Carlo noise level.
class BatchedEstimator {
 public:
  BatchedEstimator(const HistogramSpec& spec, std::size_t total_samples, std::size_t batches)
      : total_(spec), batch_(spec), n_total_(total_samples), batches_(batches),
        sum_(total_.bin_count(), 0.0), sumsq_(total_.bin_count(), 0.0) {}

  void add(std::span<const double> x, double w) {
    const std::size_t b = std::min(batches_ - 1, seen_ * batches_ / n_total_);
    if (b != current_) flush(b);
    batch_.add(x, w);
    ++seen_;
  }

  const WeightedHistogram& finish() {
    flush(current_ + 1);
    return total_;
  }

  /// Per-bin standard error of the normalized mass from batch means.
  std::vector<double> bin_se() const {
    if (completed_ < 2) return std::vector<double>(sum_.size(), kNaN);
    const double nb = static_cast<double>(completed_);
    std::vector<double> se(sum_.size());
    for (std::size_t i = 0; i < sum_.size(); ++i) {
      const double mean = sum_[i] / nb;
      const double var = std::max(0.0, (sumsq_[i] - nb * mean * mean) / (nb - 1.0));
      se[i] = std::sqrt(var / nb);
    }
    return se;
  }

  double noise_floor() const {
    const auto se = bin_se();
    double s = 0.0;
    for (double v : se) s += std::sqrt(2.0 / M_PI) * v;
    return s / static_cast<double>(se.size());
  }

 private:
  void flush(std::size_t next) {
    if (batch_.total_mass() > 0.0) {
      const auto f = batch_.normalized();
      for (std::size_t i = 0; i < f.size(); ++i) {
        sum_[i] += f[i];
        sumsq_[i] += f[i] * f[i];
      }
      ++completed_;
      total_.merge(batch_);
      batch_.clear();
    }
    current_ = next;
  }

  WeightedHistogram total_;
  WeightedHistogram batch_;
  std::size_t n_total_;
  std::size_t batches_;
  std::vector<double> sum_;
  std::vector<double> sumsq_;
  std::size_t seen_ = 0;
  std::size_t current_ = 0;
  std::size_t completed_ = 0;
};

InvariantEstimate estimate_with(const BuiltMethod& m, const ExperimentPlan& plan, std::span<const double> x_init,
                                double h, double duration, std::uint64_t seed, const ReferenceDensity& reference) {
  const std::size_t n = steps_for(duration, h);
  BatchedEstimator est(plan.histogram, n + 1, plan.mc_batches);
  double t = 0.0;
  double g_prev = 0.0;
  MethodRunner runner(m, x_init, h, seed, plan.blow_up_threshold);
  const auto on = [&](std::size_t k, std::span<const double> x, double g) {
    est.add(x, g);
    if (k > 0) t += 0.5 * h * (g_prev + g);
    g_prev = g;
    return true;
  };
  runner.start(on);
  const RunStatus st = runner.advance(n, on);
  InvariantEstimate r{est.finish(), kNaN, est.noise_floor(), est.bin_se(), st, st.steps_completed, t};
  if (!st.blew_up) r.l1 = l1_error(r.hist, reference);
  return r;
}

RunRecord make_record(const std::string& study, const MethodSpec& m, double h, std::size_t repeat,
                      std::uint64_t seed, double wall, const RunStatus& st, double realized_t) {
  RunRecord r;
  r.study = study;
  r.method = m.label();
  r.h = h;
  r.repeat = repeat;
  r.seed = seed;
  r.wall_s = wall;
  r.steps = st.steps_completed;
  r.realized_t = realized_t;
  r.blew_up = st.blew_up;
  r.blow_up_step = st.blow_up_step;
  r.blow_up_reason = st.blow_up_reason;
  return r;
}

}  // namespace

InvariantEstimate run_invariant_estimate(const Problem& problem, const ExperimentPlan& plan, const MethodSpec& method,
                                         double h, double duration, std::uint64_t seed,
                                         const ReferenceDensity& reference) {
  const BuiltMethod m = build_method(problem, method, plan, plan.kT);
  return estimate_with(m, plan, plan.x_init, h, duration, seed, reference);
}

// ---------------------------------------------------------------------------
// Convergence

SlopeFit fit_slope(std::vector<ConvergencePoint>& points, double noise_fraction) {
  SlopeFit f;
  if (!points.empty()) f.method = points.front().method;
  std::vector<double> lx;
  std::vector<double> ly;
  for (auto& p : points) {
    p.used_in_fit = p.blew_up == 0 && std::isfinite(p.l1) && p.l1 > 0.0 && std::isfinite(p.noise_floor) &&
                    p.noise_floor < noise_fraction * p.l1;
    if (!p.used_in_fit) continue;
    lx.push_back(std::log(p.h));
    ly.push_back(std::log(p.l1));
    f.h_lo = f.n_points == 0 ? p.h : std::min(f.h_lo, p.h);
    f.h_hi = f.n_points == 0 ? p.h : std::max(f.h_hi, p.h);
    ++f.n_points;
  }
  if (f.n_points < 2) {
    f.note = "fewer than two points above the noise floor without blow-up";
    return f;
  }
  const double n = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) {
    f.note = "degenerate h range";
    return f;
  }
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.valid = true;
  return f;
}

ConvergenceResult convergence_scan(const ExperimentPlan& plan) {
  validate(plan);
  const Problem problem = plan_problem(plan);
  const ReferenceDensity reference = plan_reference(plan, problem);
  const auto hs = log_grid(plan.h_min, plan.h_max, plan.h_count);
  std::vector<BuiltMethod> built;
  for (const auto& m : plan.methods) built.push_back(build_method(problem, m, plan, plan.kT));

  const std::size_t nm = built.size();
  const std::size_t nh = hs.size();
  const std::size_t nr = plan.n_repeats;
  std::vector<InvariantEstimate> results(nm * nh * nr, InvariantEstimate{WeightedHistogram(plan.histogram), kNaN, kNaN, {}, {}, 0, 0.0});
  std::vector<RunRecord> records(results.size());
  // Longest units first keeps the pool busy until the end.
  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return hs[(a / nr) % nh] < hs[(b / nr) % nh];
  });
  parallel_for(order.size(), worker_count(), [&](std::size_t k) {
    const std::size_t u = order[k];
    const std::size_t mi = u / (nh * nr);
    const std::size_t hi = (u / nr) % nh;
    const std::size_t r = u % nr;
    const std::uint64_t seed = derive_seed(plan.seed, {kConvergenceTag, mi, hi, r});
    const auto start = std::chrono::steady_clock::now();
    results[u] = estimate_with(built[mi], plan, plan.x_init, hs[hi], plan.T_sim, seed, reference);
    records[u] = make_record(plan.subcommand, built[mi].method, hs[hi], r, seed, seconds_since(start),
                             results[u].status, results[u].realized_t);
  });

  ConvergenceResult out;
  out.runs = std::move(records);
  for (std::size_t mi = 0; mi < nm; ++mi) {
    std::vector<ConvergencePoint> pts;
    for (std::size_t hi = 0; hi < nh; ++hi) {
      ConvergencePoint p;
      p.method = built[mi].method;
      p.h = hs[hi];
      p.repeats = nr;
      std::vector<double> floors;
      std::vector<double> ts;
      for (std::size_t r = 0; r < nr; ++r) {
        const auto& e = results[(mi * nh + hi) * nr + r];
        if (e.status.blew_up) {
          ++p.blew_up;
          continue;
        }
        p.l1_repeats.push_back(e.l1);
        floors.push_back(e.noise_floor);
        ts.push_back(e.realized_t);
      }
      p.l1 = mean_of(p.l1_repeats);
      p.se = se_of(p.l1_repeats);
      p.noise_floor = mean_of(floors);
      p.realized_t = mean_of(ts);
      pts.push_back(std::move(p));
    }
    out.fits.push_back(fit_slope(pts, plan.fit_noise_fraction));
    out.fits.back().method = built[mi].method;
    for (auto& p : pts) out.points.push_back(std::move(p));
  }
  return out;
}

ConvergenceResult quad_well_2d_study(const ExperimentPlan& plan) {
  if (is_one_dimensional(plan.problem)) throw std::invalid_argument("quad2d needs a 2D problem");
  return convergence_scan(plan);
}

// ---------------------------------------------------------------------------
// Cost-error

namespace {

IterationTiming time_method(const BuiltMethod& m, const ExperimentPlan& plan) {
  IterationTiming t;
  t.method = m.method;
  WeightedHistogram hist(plan.histogram);
  for (std::size_t run = 0; run < plan.timing_runs; ++run) {
    hist.clear();
    MethodRunner runner(m, plan.x_init, plan.timing_h, derive_seed(plan.seed, {kTimingTag, run}),
                        plan.blow_up_threshold);
    const auto on = [&](std::size_t, std::span<const double> x, double g) {
      hist.add(x, g);
      return true;
    };
    const auto start = std::chrono::steady_clock::now();
    runner.start(on);
    const auto& st = runner.advance(plan.timing_iterations, on);
    const double s = seconds_since(start);
    if (st.blew_up) throw std::runtime_error("timing run of " + m.method.label() + " blew up at h = timing_h");
    t.samples_s.push_back(s / static_cast<double>(plan.timing_iterations));
  }
  auto sorted = t.samples_s;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  t.median_s = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  t.mean_s = mean_of(t.samples_s);
  t.se_s = se_of(t.samples_s);
  return t;
}

}  // namespace

IterationTiming calibrate_iteration_cost(const Problem& problem, const ExperimentPlan& plan, const MethodSpec& method,
                                         const ReferenceDensity&) {
  const BuiltMethod m = build_method(problem, method, plan, plan.kT);
  return time_method(m, plan);
}

CostErrorResult cost_error_scan(const ExperimentPlan& plan) {
  validate(plan);
  const Problem problem = plan_problem(plan);
  const ReferenceDensity reference = plan_reference(plan, problem);
  const auto hs = log_grid(plan.h_min, plan.h_max, plan.h_count);
  std::vector<BuiltMethod> built;
  for (const auto& m : plan.methods) built.push_back(build_method(problem, m, plan, plan.kT));
  const double stop_target = *std::min_element(plan.targets.begin(), plan.targets.end());

  const std::size_t nm = built.size();
  const std::size_t nh = hs.size();
  std::vector<CostErrorCurve> curves(nm * nh);
  std::vector<std::vector<RunRecord>> records(nm * nh);
  // One unit = all repeats of (method, h) advanced in lockstep so the
  // repeat-averaged running error can stop the unit at the smallest target.
  parallel_for(nm * nh, worker_count(), [&](std::size_t u) {
    const std::size_t mi = u / nh;
    const std::size_t hi = u % nh;
    const double h = hs[hi];
    const auto start = std::chrono::steady_clock::now();
    std::vector<WeightedHistogram> hists(plan.n_repeats, WeightedHistogram(plan.histogram));
    std::vector<std::unique_ptr<MethodRunner>> runners;
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < plan.n_repeats; ++r) {
      seeds.push_back(derive_seed(plan.seed, {kCostErrorTag, mi, hi, r}));
      runners.push_back(std::make_unique<MethodRunner>(built[mi], plan.x_init, h, seeds.back(), plan.blow_up_threshold));
      auto& hist = hists[r];
      runners.back()->start([&](std::size_t, std::span<const double> x, double g) {
        hist.add(x, g);
        return true;
      });
    }
    CostErrorCurve& c = curves[u];
    c.method = built[mi].method;
    c.h = h;
    std::size_t iterations = 0;
    while (iterations < plan.max_iterations) {
      const std::size_t chunk = std::min(plan.checkpoint_every, plan.max_iterations - iterations);
      double sum = 0.0;
      for (std::size_t r = 0; r < plan.n_repeats; ++r) {
        auto& hist = hists[r];
        const auto& st = runners[r]->advance(chunk, [&](std::size_t, std::span<const double> x, double g) {
          hist.add(x, g);
          return true;
        });
        if (st.blew_up) ++c.blew_up;
        else sum += l1_error(hist, reference);
      }
      if (c.blew_up > 0) break;
      iterations += chunk;
      c.iterations.push_back(iterations);
      c.mean_l1.push_back(sum / static_cast<double>(plan.n_repeats));
      if (c.mean_l1.back() <= stop_target) break;
    }
    const double wall = seconds_since(start);
    for (std::size_t r = 0; r < plan.n_repeats; ++r)
      records[u].push_back(make_record(plan.subcommand, c.method, h, r, seeds[r], wall, runners[r]->status(),
                                       static_cast<double>(runners[r]->status().steps_completed) * h));
  });

  CostErrorResult out;
  for (auto& rs : records)
    for (auto& r : rs) out.runs.push_back(std::move(r));
  // Timing runs are sequential so they do not compete with each other.
  for (const auto& m : built) out.timings.push_back(time_method(m, plan));
  for (std::size_t mi = 0; mi < nm; ++mi) {
    for (double target : plan.targets) {
      CostErrorEntry e;
      e.method = built[mi].method;
      e.target = target;
      e.iter_cost_s = out.timings[mi].median_s;
      for (std::size_t hi = 0; hi < nh; ++hi) {
        const auto& c = curves[mi * nh + hi];
        if (c.blew_up > 0) continue;
        for (std::size_t k = 0; k < c.iterations.size(); ++k) {
          if (c.mean_l1[k] <= target) {
            if (!e.reached || c.iterations[k] < e.min_iterations) {
              e.reached = true;
              e.min_iterations = c.iterations[k];
              e.best_h = c.h;
            }
            break;
          }
        }
      }
      e.wall_cost_s = e.reached ? e.iter_cost_s * static_cast<double>(e.min_iterations) : kNaN;
      out.entries.push_back(e);
    }
  }
  out.curves = std::move(curves);
  return out;
}

// ---------------------------------------------------------------------------
// Stability

StabilityResult stability_scan(const ExperimentPlan& plan) {
  validate(plan);
  const Problem problem = plan_problem(plan);
  std::vector<BuiltMethod> built;
  for (const auto& m : plan.methods) built.push_back(build_method(problem, m, plan, plan.kT));
  std::vector<double> ladder;
  for (std::size_t k = 0;; ++k) {
    const double h = plan.ladder_start * std::pow(plan.ladder_factor, static_cast<double>(k));
    if (h > plan.ladder_max * (1.0 + 1e-12)) break;
    ladder.push_back(h);
  }

  const std::size_t nm = built.size();
  std::vector<StabilityEntry> entries(nm);
  std::vector<std::vector<RunRecord>> records(nm);
  parallel_for(nm, worker_count(), [&](std::size_t mi) {
    StabilityEntry& e = entries[mi];
    e.method = built[mi].method;
    for (std::size_t k = 0; k < ladder.size() && !e.h_star; ++k) {
      const double h = ladder[k];
      e.max_tested = h;
      const std::size_t n = steps_for(plan.horizon, h);
      for (std::size_t s = 0; s < plan.stability_seeds; ++s) {
        const std::uint64_t seed = derive_seed(plan.seed, {kStabilityTag, mi, k, s});
        const auto start = std::chrono::steady_clock::now();
        MethodRunner runner(built[mi], plan.x_init, h, seed, plan.blow_up_threshold);
        const auto on = [](std::size_t, std::span<const double>, double) { return true; };
        runner.start(on);
        const RunStatus st = runner.advance(n, on);
        records[mi].push_back(make_record(plan.subcommand, e.method, h, s, seed, seconds_since(start), st,
                                          static_cast<double>(st.steps_completed) * h));
        if (st.blew_up) {
          e.h_star = h;
          break;
        }
      }
    }
  });
  StabilityResult out;
  for (auto& rs : records)
    for (auto& r : rs) out.runs.push_back(std::move(r));
  if (plan.timing_runs > 0 && plan.timing_iterations > 0) {
    for (std::size_t mi = 0; mi < nm; ++mi) {
      const auto t = time_method(built[mi], plan);
      entries[mi].iter_time_s = t.mean_s;
      entries[mi].iter_time_se = t.se_s;
    }
  }
  out.entries = std::move(entries);
  return out;
}

// ---------------------------------------------------------------------------
// Double-well sweep

DoubleWellResult double_well_sweep(const ExperimentPlan& plan) {
  validate(plan);
  struct Cell {
    double kT;
    double alpha;
    std::size_t ki;
    std::size_t ai;
    std::size_t mi;
    BuiltMethod built;
  };
  std::vector<ReferenceDensity> references;
  std::vector<Cell> cells;
  auto well = std::make_shared<const DoubleWellPotential>();
  const double marker = well->inflection_position();
  for (std::size_t ki = 0; ki < plan.kT_list.size(); ++ki) {
    const double kT = plan.kT_list[ki];
    references.push_back(ReferenceDensity::from_potential(*well, Temperature(kT), plan.histogram));
    for (std::size_t ai = 0; ai < plan.alphas.size(); ++ai) {
      ProblemParams params = plan.problem_params;
      params["alpha"] = plan.alphas[ai];
      params["kT"] = kT;
      const Problem problem = builtin_problem("scaled_diffusion_1d", params);
      for (std::size_t mi = 0; mi < plan.methods.size(); ++mi)
        cells.push_back({kT, plan.alphas[ai], ki, ai, mi, build_method(problem, plan.methods[mi], plan, kT)});
    }
  }
  const std::size_t nr = plan.n_repeats;
  const std::size_t n = steps_for(plan.T_sim, plan.h);
  std::vector<double> transitions(cells.size() * nr, 0.0);
  std::vector<double> l1s(cells.size() * nr, kNaN);
  std::vector<RunRecord> records(cells.size() * nr);
  parallel_for(cells.size() * nr, worker_count(), [&](std::size_t u) {
    const Cell& c = cells[u / nr];
    const std::size_t r = u % nr;
    const std::uint64_t seed = derive_seed(plan.seed, {kDoubleWellTag, c.ki, c.ai, c.mi, r});
    const auto start = std::chrono::steady_clock::now();
    TransitionCounter counter(-marker, marker);
    WeightedHistogram hist(plan.histogram);
    double t = 0.0;
    double g_prev = 0.0;
    MethodRunner runner(c.built, plan.x_init, plan.h, seed, plan.blow_up_threshold);
    const auto on = [&](std::size_t k, std::span<const double> x, double g) {
      counter.observe(x[0]);
      hist.add(x, g);
      if (k > 0) t += 0.5 * plan.h * (g_prev + g);
      g_prev = g;
      return true;
    };
    runner.start(on);
    const RunStatus st = runner.advance(n, on);
    transitions[u] = static_cast<double>(counter.count());
    if (!st.blew_up) l1s[u] = l1_error(hist, references[c.ki]);
    records[u] = make_record(plan.subcommand, c.built.method, plan.h, r, seed, seconds_since(start), st, t);
    records[u].note = "alpha=" + std::to_string(c.alpha) + " kT=" + std::to_string(c.kT);
  });

  DoubleWellResult out;
  out.runs = std::move(records);
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    DoubleWellRow row;
    row.alpha = cells[ci].alpha;
    row.kT = cells[ci].kT;
    row.method = cells[ci].built.method;
    row.repeats = nr;
    std::vector<double> tr;
    std::vector<double> l1;
    for (std::size_t r = 0; r < nr; ++r) {
      const std::size_t u = ci * nr + r;
      if (out.runs[u].blew_up) {
        ++row.blew_up;
        continue;
      }
      tr.push_back(transitions[u]);
      l1.push_back(l1s[u]);
    }
    row.mean_transitions = mean_of(tr);
    row.se_transitions = se_of(tr);
    row.mean_l1 = mean_of(l1);
    row.se_l1 = se_of(l1);
    out.rows.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-time study

namespace {

double standard_normal(std::uint64_t seed) {
  boost::random::mt19937_64 engine(seed);
  boost::random::normal_distribution<double> normal;
  return normal(engine);
}

/// Original-coordinate path sampled on t_grid. Physical-clock runs take
/// ceil(t_end / h) steps; time-rescaled runs continue in tau until the
/// trapezoidal clock passes t_end. Returns false on blow-up or truncation.
bool sample_on_grid(const BuiltMethod& m, double x0, double h, std::span<const double> t_grid, std::uint64_t seed,
                    double threshold, std::vector<double>& out, RunStatus& status, double& realized_t) {
  out.clear();
  out.reserve(t_grid.size());
  const double t_end = t_grid.back();
  StreamingResampler resampler(t_grid, [&](std::size_t, double v) { out.push_back(v); });
  MethodRunner runner(m, std::span<const double>(&x0, 1), h, seed, threshold);
  double t = 0.0;
  double g_prev = 0.0;
  const auto on = [&](std::size_t k, std::span<const double> x, double g) {
    if (k > 0) t += m.rescaled() ? 0.5 * h * (g_prev + g) : h;
    g_prev = g;
    resampler.feed(t, x[0]);
    return !resampler.complete();
  };
  runner.start(on);
  // A generous cap for tau runs; physical runs need exactly this many steps.
  const std::size_t physical = static_cast<std::size_t>(std::ceil(t_end / h - 1e-9)) + 1;
  const std::size_t cap = m.rescaled() ? 1000 * physical : physical;
  status = runner.advance(cap, on);
  realized_t = t;
  return !status.blew_up && resampler.complete();
}

struct EnsembleSnapshots {
  std::vector<WeightedHistogram> total;
  std::vector<std::vector<WeightedHistogram>> groups;  // for SE
  std::size_t failed = 0;
};

EnsembleSnapshots run_ensemble(const BuiltMethod& m, const ExperimentPlan& plan, double h, std::size_t trajectories,
                               std::span<const double> snapshots, std::uint64_t tag, std::size_t method_index,
                               std::vector<RunRecord>& records, const std::string& label) {
  constexpr std::size_t kGroups = 10;
  const std::size_t chunk = std::max<std::size_t>(1, (trajectories + 63) / 64);
  const std::size_t n_chunks = (trajectories + chunk - 1) / chunk;
  std::vector<std::vector<WeightedHistogram>> per_chunk(n_chunks);
  std::vector<std::vector<std::vector<WeightedHistogram>>> per_chunk_groups(n_chunks);
  std::vector<std::size_t> failed(n_chunks, 0);
  std::vector<double> walls(n_chunks, 0.0);
  parallel_for(n_chunks, worker_count(), [&](std::size_t c) {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t lo = c * chunk;
    const std::size_t hi = std::min(trajectories, lo + chunk);
    std::vector<std::vector<std::vector<double>>> rows(kGroups);
    std::vector<double> path;
    for (std::size_t i = lo; i < hi; ++i) {
      const double x0 = standard_normal(derive_seed(plan.seed, {kInitialDrawTag, i}));
      RunStatus st;
      double t = 0.0;
      if (sample_on_grid(m, x0, h, snapshots, derive_seed(plan.seed, {tag, method_index, i}), plan.blow_up_threshold,
                         path, st, t)) {
        rows[i % kGroups].push_back(path);
      } else {
        ++failed[c];
      }
    }
    per_chunk_groups[c].resize(kGroups);
    per_chunk[c] = std::vector<WeightedHistogram>(snapshots.size(), WeightedHistogram(plan.histogram));
    for (std::size_t g = 0; g < kGroups; ++g) {
      per_chunk_groups[c][g] = evolving_distribution(rows[g], snapshots.size(), plan.histogram);
      for (std::size_t k = 0; k < snapshots.size(); ++k) per_chunk[c][k].merge(per_chunk_groups[c][g][k]);
    }
    walls[c] = seconds_since(start);
  });
  EnsembleSnapshots e;
  e.total.assign(snapshots.size(), WeightedHistogram(plan.histogram));
  e.groups.assign(kGroups, std::vector<WeightedHistogram>(snapshots.size(), WeightedHistogram(plan.histogram)));
  double wall = 0.0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    for (std::size_t k = 0; k < snapshots.size(); ++k) {
      e.total[k].merge(per_chunk[c][k]);
      for (std::size_t g = 0; g < kGroups; ++g) e.groups[g][k].merge(per_chunk_groups[c][g][k]);
    }
    e.failed += failed[c];
    wall += walls[c];
  }
  RunRecord r;
  r.study = "finite-time";
  r.method = label;
  r.h = h;
  r.repeat = trajectories;
  r.seed = derive_seed(plan.seed, {tag, method_index, 0});
  r.wall_s = wall;
  r.blew_up = e.failed > 0;
  r.note = "ensemble of " + std::to_string(trajectories) + " trajectories, " + std::to_string(e.failed) +
           " failed (blow-up or truncated)";
  records.push_back(r);
  return e;
}

}  // namespace

std::vector<std::vector<double>> load_reference_masses(const std::string& path, std::size_t n_snapshots,
                                                       std::size_t n_bins) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("reference file '" + path + "' cannot be opened");
  std::vector<std::vector<double>> m(n_snapshots, std::vector<double>(n_bins, kNaN));
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string a, b, c, d;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ',') || !std::getline(ss, d, ','))
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected snapshot,t,bin,mass");
    const auto k = static_cast<std::size_t>(std::stoul(a));
    const auto i = static_cast<std::size_t>(std::stoul(c));
    if (k >= n_snapshots || i >= n_bins)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": snapshot or bin index out of range");
    m[k][i] = std::stod(d);
  }
  for (const auto& row : m)
    for (double v : row)
      if (!std::isfinite(v)) throw std::runtime_error("reference file '" + path + "' does not cover every snapshot/bin");
  return m;
}

FiniteTimeResult finite_time_study(const ExperimentPlan& plan) {
  validate(plan);
  const Problem problem = plan_problem(plan);
  const auto& p1 = std::get<Problem1D>(problem);
  FiniteTimeResult out;

  // Autocorrelation: reference, Lamperti and time-rescaled runs of one integrator.
  const IntegratorKind acf_kind = integrator_from_string(plan.acf_integrator);
  const std::vector<double> acf_grid = uniform_grid(plan.acf_T, plan.acf_h);
  const auto max_lag = static_cast<std::size_t>(std::llround(plan.acf_max_lag / plan.acf_h));
  const TransformKind acf_transforms[3] = {TransformKind::None, TransformKind::Lamperti, TransformKind::TimeRescale};
  AcfEstimate* acf_out[3] = {&out.acf_reference, &out.acf_lamperti, &out.acf_time_rescale};
  for (std::size_t ti = 0; ti < 3; ++ti) {
    const BuiltMethod m = build_method(problem, MethodSpec{acf_kind, acf_transforms[ti]}, plan, plan.kT);
    std::vector<std::vector<double>> acfs(plan.acf_trajectories);
    std::vector<RunRecord> recs(plan.acf_trajectories);
    parallel_for(plan.acf_trajectories, worker_count(), [&](std::size_t i) {
      const auto start = std::chrono::steady_clock::now();
      const double x0 = standard_normal(derive_seed(plan.seed, {kInitialDrawTag, kAcfTag, i}));
      const std::uint64_t seed = derive_seed(plan.seed, {kAcfTag, ti, i});
      std::vector<double> path;
      RunStatus st;
      double t = 0.0;
      if (!sample_on_grid(m, x0, plan.acf_h, acf_grid, seed, plan.blow_up_threshold, path, st, t))
        throw std::runtime_error("ACF trajectory of " + m.method.label() + " blew up or was truncated");
      acfs[i] = acf_fft(path, max_lag);
      recs[i] = make_record("finite-time/acf", m.method, plan.acf_h, i, seed, seconds_since(start), st, t);
    });
    *acf_out[ti] = aggregate_acf(acfs, plan.acf_h);
    for (auto& r : recs) out.runs.push_back(std::move(r));
  }
  out.diff_lamperti = acf_difference(out.acf_lamperti, out.acf_reference);
  out.diff_time_rescale = acf_difference(out.acf_time_rescale, out.acf_reference);

  // Evolving distribution against a reference ensemble.
  out.snapshot_times = uniform_grid(plan.snapshot_end, plan.snapshot_dt);
  const std::size_t ns = out.snapshot_times.size();
  const WeightedHistogram shape(plan.histogram);
  if (!plan.reference_path.empty()) {
    out.reference_masses = load_reference_masses(plan.reference_path, ns, shape.bin_count());
  } else {
    const BuiltMethod ref = build_method(problem, MethodSpec{IntegratorKind::SH, TransformKind::None}, plan, plan.kT);
    const auto e = run_ensemble(ref, plan, plan.reference_h, plan.reference_trajectories, out.snapshot_times,
                                kReferenceTag, 0, out.runs, "reference:sh");
    for (const auto& hk : e.total) out.reference_masses.push_back(hk.normalized());
  }
  const ReferenceDensity invariant = ReferenceDensity::from_potential(*p1.potential, Temperature(plan.kT), plan.histogram);
  for (std::size_t k = 0; k < ns; ++k)
    out.evolving.push_back({"reference_vs_invariant", out.snapshot_times[k],
                            l1_error(out.reference_masses[k], invariant.masses()), 0.0});
  for (std::size_t mi = 0; mi < plan.methods.size(); ++mi) {
    const BuiltMethod m = build_method(problem, plan.methods[mi], plan, plan.kT);
    const auto e = run_ensemble(m, plan, plan.evolve_h, plan.evolve_trajectories, out.snapshot_times, kEvolveTag, mi,
                                out.runs, m.method.label());
    for (std::size_t k = 0; k < ns; ++k) {
      std::vector<double> g;
      for (const auto& grp : e.groups)
        if (grp[k].total_mass() > 0.0) g.push_back(l1_error(grp[k].normalized(), out.reference_masses[k]));
      out.evolving.push_back(
          {m.method.label(), out.snapshot_times[k], l1_error(e.total[k].normalized(), out.reference_masses[k]), se_of(g)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single trajectory

SimulationResult simulate(const ExperimentPlan& plan) {
  validate(plan);
  const Problem problem = plan_problem(plan);
  const BuiltMethod m = build_method(problem, plan.methods.front(), plan, plan.kT);
  SimulationResult r;
  r.method = m.method;
  const std::uint64_t seed = derive_seed(plan.seed, {kSimulateTag});
  RunOptions opts;
  opts.blow_up_threshold = plan.blow_up_threshold;
  opts.clock = m.rescaled() ? Clock::RescaledTime : Clock::PhysicalTime;
  std::vector<double> g;
  if (m.s1) {
    r.trajectory = run_trajectory(m.s1->dynamics, m.spec, m.s1->to_dynamics(plan.x_init[0]), plan.h, plan.n_steps,
                                  seed, {}, opts);
    for (double y : r.trajectory.samples) {
      const double x = m.s1->to_original(y);
      r.original.push_back(x);
      g.push_back(m.s1->weight(x));
    }
  } else {
    const Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(plan.x_init.data(), 2);
    Eigen::VectorXd y0(2);
    m.sn->to_dynamics(x0, y0);
    r.trajectory = run_trajectory(m.sn->dynamics, m.spec, y0, plan.h, plan.n_steps, seed, {}, opts);
    Eigen::VectorXd x(2);
    for (std::size_t i = 0; i < r.trajectory.size(); ++i) {
      const auto s = r.trajectory.state(i);
      m.sn->to_original(Eigen::Map<const Eigen::VectorXd>(s.data(), 2), x);
      r.original.push_back(x[0]);
      r.original.push_back(x[1]);
      g.push_back(m.sn->weight(x));
    }
  }
  r.t_values = accumulate_clock(g, plan.h);
  return r;
}

}  // namespace bdx
