#pragma once

// The six Brownian-dynamics integrators (EM, MM, LM, HLM, SH, LMVD) in 1D,
// multivariate EM/LM/HLM/SH, and the trajectory runner.
//
// Step functions are pure: the caller supplies every normal draw. The runner
// owns the noise stream and carries w_{n+1} of one step into w_n of the next
// for the LM family.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "bdx/model.hpp"
#include "bdx/rng.hpp"
#include "bdx/transforms.hpp"

namespace bdx {

enum class IntegratorKind { EM, MM, LM, HLM, SH, LMVD };

std::string to_string(IntegratorKind kind);
IntegratorKind integrator_from_string(const std::string& name);

/// LM, HLM and LMVD average or split two consecutive draws per step.
bool uses_noise_overlap(IntegratorKind kind);
/// EM, LM, HLM and SH have multivariate forms.
bool supports_nd(IntegratorKind kind);

struct IntegratorSpec {
  IntegratorKind kind = IntegratorKind::LM;
  int lmvd_substeps = 8;
};

inline constexpr double kDefaultBlowUpThreshold = 1e8;

// ---------------------------------------------------------------------------
// 1D steps. a = -D V' + kT D', sigma = sqrt(2 kT D).

double step_em(double x, double h, const System1D& s, double w);
double step_mm(double x, double h, const System1D& s, double w);
double step_lm(double x, double h, const System1D& s, double w_n, double w_next);
double step_hlm(double x, double h, const System1D& s, double w_n, double w_next);
double step_sh(double x, double h, const System1D& s, double w);
double step_lmvd(double x, double h, const System1D& s, double w_n, double w_next, int substeps = 8);

/// Classical RK4 for dx/dt = rate(x) over `duration` with `substeps` uniform
/// steps. A substep whose endpoint crosses one of `kinks` (points where rate is
/// not smooth) is split there: the time to reach the kink is found by
/// bracketed root finding on the RK4 step length, then the remainder is
/// integrated from the kink. Assumes rate keeps one sign along the flow.
template <class Rate>
double rk4_flow(double x, double duration, int substeps, Rate&& rate, std::span<const double> kinks = {}) {
  const auto step = [&](double z, double dt) {
    const double k1 = rate(z);
    const double k2 = rate(z + 0.5 * dt * k1);
    const double k3 = rate(z + 0.5 * dt * k2);
    const double k4 = rate(z + dt * k3);
    return z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  };
  const double dt = duration / substeps;
  for (int i = 0; i < substeps; ++i) {
    double remaining = dt;
    while (remaining > 0.0) {
      const double next = step(x, remaining);
      const double* hit = nullptr;
      for (const double& k : kinks)
        if ((x - k) * (next - k) < 0.0 && (!hit || std::abs(k - x) < std::abs(*hit - x))) hit = &k;
      if (!hit) {
        x = next;
        break;
      }
      // Illinois regula falsi for step(x, s) = kink on s in (0, remaining).
      const double k = *hit;
      double a = 0.0, ga = x - k, b = remaining, gb = next - k;
      const double tol = 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(k));
      double reach = remaining;
      int side = 0;
      for (int it = 0; it < 100; ++it) {
        const double s = (a * gb - b * ga) / (gb - ga);
        const double gs = step(x, s) - k;
        reach = s;
        if (std::abs(gs) <= tol || b - a <= 1e-15 * remaining) break;
        if ((gs < 0.0) == (ga < 0.0)) {
          a = s;
          ga = gs;
          if (side == -1) gb *= 0.5;
          side = -1;
        } else {
          b = s;
          gb = gs;
          if (side == 1) ga *= 0.5;
          side = 1;
        }
      }
      x = k;
      remaining -= reach;
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Multivariate steps (matrix convention). Drift -(DD^T) grad V + kT div(DD^T),
// noise sqrt(2 kT) D(X) sqrt(h) W.

void step_em_nd(const SystemND& s, const Eigen::Ref<const Eigen::VectorXd>& x, double h,
                const Eigen::Ref<const Eigen::VectorXd>& w, Eigen::Ref<Eigen::VectorXd> out);
void step_lm_nd(const SystemND& s, const Eigen::Ref<const Eigen::VectorXd>& x, double h,
                const Eigen::Ref<const Eigen::VectorXd>& w_n, const Eigen::Ref<const Eigen::VectorXd>& w_next,
                Eigen::Ref<Eigen::VectorXd> out);
/// LM plus (kT/4) div(DD^T) h; requires a diagonal diffusion.
void step_hlm_nd(const SystemND& s, const Eigen::Ref<const Eigen::VectorXd>& x, double h,
                 const Eigen::Ref<const Eigen::VectorXd>& w_n, const Eigen::Ref<const Eigen::VectorXd>& w_next,
                 Eigen::Ref<Eigen::VectorXd> out);
/// Predictor-corrector on the Stratonovich drift a - kT sum_jk D_jk d_j D_ik.
void step_sh_nd(const SystemND& s, const Eigen::Ref<const Eigen::VectorXd>& x, double h,
                const Eigen::Ref<const Eigen::VectorXd>& w, Eigen::Ref<Eigen::VectorXd> out);

// ---------------------------------------------------------------------------
// Runner

struct RunStatus {
  std::size_t steps_completed = 0;
  bool blew_up = false;
  std::size_t blow_up_step = 0;  // index of the step whose output was rejected
  std::string blow_up_reason;
};

struct Trajectory {
  std::size_t dim = 1;
  std::vector<double> samples;  // dim values per stored state, x0 first
  double h = 0.0;
  Clock clock = Clock::PhysicalTime;
  std::uint64_t seed = 0;
  double kT = 1.0;
  std::size_t steps_requested = 0;
  RunStatus status;

  std::size_t size() const { return dim == 0 ? 0 : samples.size() / dim; }
  std::span<const double> state(std::size_t n) const { return {samples.data() + n * dim, dim}; }
};

/// Per-trajectory sample consumer; receives the initial state as step 0.
class Observer {
 public:
  virtual ~Observer() = default;
  virtual void observe(std::size_t step, std::span<const double> state) = 0;
};

struct RunOptions {
  double blow_up_threshold = kDefaultBlowUpThreshold;
  bool store_samples = true;
  Clock clock = Clock::PhysicalTime;
};

namespace detail {

inline bool escaped(double x, double threshold) { return !std::isfinite(x) || std::abs(x) > threshold; }

template <class F, class... Args>
bool call_continue(F& f, Args&&... args) {
  if constexpr (std::is_same_v<std::invoke_result_t<F&, Args...>, bool>) {
    return f(std::forward<Args>(args)...);
  } else {
    f(std::forward<Args>(args)...);
    return true;
  }
}

void check_step_args(double h, std::size_t n_steps, int lmvd_substeps);

}  // namespace detail

/// Resumable 1D integrator state: current x, the carried draw of the LM
/// family, and the owned noise stream. advance() calls on_sample(step, x)
/// after every accepted step; on_sample may return bool, false stops early.
/// A non-finite state, |x| above the threshold, or leaving a transform's
/// working domain ends the run as a blow-up (data, not an error).
class Stepper1D {
 public:
  Stepper1D(const System1D& system, const IntegratorSpec& spec, double x0, double h, std::uint64_t seed,
            double threshold = kDefaultBlowUpThreshold)
      : s_(system), spec_(spec), x_(x0), h_(h), noise_(seed), threshold_(threshold) {
    detail::check_step_args(h, 1, spec.lmvd_substeps);
    if (uses_noise_overlap(spec_.kind)) w_ = noise_.next();
  }

  template <class OnSample>
  const RunStatus& advance(std::size_t n_steps, OnSample&& on_sample) {
    if (status_.blew_up || stopped_) return status_;
    std::size_t n = status_.steps_completed;
    const std::size_t end = n + n_steps;
    try {
      while (n < end) {
        ++n;
        const double next = step();
        if (detail::escaped(next, threshold_)) {
          status_.blew_up = true;
          status_.blow_up_step = n;
          status_.blow_up_reason = std::isfinite(next) ? "threshold" : "non-finite";
          break;
        }
        x_ = next;
        status_.steps_completed = n;
        if (!detail::call_continue(on_sample, n, x_)) {
          stopped_ = true;
          break;
        }
      }
    } catch (const std::domain_error& e) {
      status_.blew_up = true;
      status_.blow_up_step = n;
      status_.blow_up_reason = std::string("domain: ") + e.what();
    }
    return status_;
  }

  double state() const { return x_; }
  const RunStatus& status() const { return status_; }
  const NoiseStream& noise() const { return noise_; }

 private:
  double step() {
    switch (spec_.kind) {
      case IntegratorKind::EM: return step_em(x_, h_, s_, noise_.next());
      case IntegratorKind::MM: return step_mm(x_, h_, s_, noise_.next());
      case IntegratorKind::SH: return step_sh(x_, h_, s_, noise_.next());
      case IntegratorKind::LM: {
        const double wn = noise_.next();
        const double next = step_lm(x_, h_, s_, w_, wn);
        w_ = wn;
        return next;
      }
      case IntegratorKind::HLM: {
        const double wn = noise_.next();
        const double next = step_hlm(x_, h_, s_, w_, wn);
        w_ = wn;
        return next;
      }
      case IntegratorKind::LMVD:
      default: {
        const double wn = noise_.next();
        const double next = step_lmvd(x_, h_, s_, w_, wn, spec_.lmvd_substeps);
        w_ = wn;
        return next;
      }
    }
  }

  const System1D& s_;
  IntegratorSpec spec_;
  double x_;
  double h_;
  NoiseStream noise_;
  double threshold_;
  double w_ = 0.0;
  RunStatus status_;
  bool stopped_ = false;
};

/// Multivariate counterpart of Stepper1D; on_sample(step, const VectorXd&).
class StepperND {
 public:
  StepperND(const SystemND& system, const IntegratorSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x0, double h,
            std::uint64_t seed, double threshold = kDefaultBlowUpThreshold)
      : s_(system), spec_(spec), x_(x0), h_(h), noise_(seed), threshold_(threshold) {
    detail::check_step_args(h, 1, spec.lmvd_substeps);
    if (!supports_nd(spec.kind)) throw std::invalid_argument(to_string(spec.kind) + " has no multivariate form");
    const auto dim = static_cast<Eigen::Index>(s_.potential->dim());
    if (x0.size() != dim || dimension(s_.diffusion) != s_.potential->dim())
      throw std::invalid_argument("multivariate run: dimension mismatch");
    if (spec.kind == IntegratorKind::HLM && !is_diagonal(s_.diffusion))
      throw std::invalid_argument("multivariate HLM requires a diagonal or isotropic diffusion");
    next_.resize(dim);
    w_.resize(dim);
    w_next_.resize(dim);
    if (uses_noise_overlap(spec_.kind)) draw(w_);
  }

  template <class OnSample>
  const RunStatus& advance(std::size_t n_steps, OnSample&& on_sample) {
    if (status_.blew_up || stopped_) return status_;
    std::size_t n = status_.steps_completed;
    const std::size_t end = n + n_steps;
    const auto dim = x_.size();
    try {
      while (n < end) {
        ++n;
        step();
        bool bad = false;
        bool finite = true;
        for (Eigen::Index i = 0; i < dim; ++i) {
          if (!std::isfinite(next_[i])) finite = false;
          if (detail::escaped(next_[i], threshold_)) bad = true;
        }
        if (bad) {
          status_.blew_up = true;
          status_.blow_up_step = n;
          status_.blow_up_reason = finite ? "threshold" : "non-finite";
          break;
        }
        x_.swap(next_);
        status_.steps_completed = n;
        if (!detail::call_continue(on_sample, n, static_cast<const Eigen::VectorXd&>(x_))) {
          stopped_ = true;
          break;
        }
      }
    } catch (const std::domain_error& e) {
      status_.blew_up = true;
      status_.blow_up_step = n;
      status_.blow_up_reason = std::string("domain: ") + e.what();
    }
    return status_;
  }

  const Eigen::VectorXd& state() const { return x_; }
  const RunStatus& status() const { return status_; }
  const NoiseStream& noise() const { return noise_; }

 private:
  void draw(Eigen::VectorXd& w) { noise_.fill({w.data(), static_cast<std::size_t>(w.size())}); }

  void step() {
    switch (spec_.kind) {
      case IntegratorKind::EM:
        draw(w_);
        step_em_nd(s_, x_, h_, w_, next_);
        break;
      case IntegratorKind::SH:
        draw(w_);
        step_sh_nd(s_, x_, h_, w_, next_);
        break;
      case IntegratorKind::LM:
        draw(w_next_);
        step_lm_nd(s_, x_, h_, w_, w_next_, next_);
        w_.swap(w_next_);
        break;
      case IntegratorKind::HLM:
      default:
        draw(w_next_);
        step_hlm_nd(s_, x_, h_, w_, w_next_, next_);
        w_.swap(w_next_);
        break;
    }
  }

  const SystemND& s_;
  IntegratorSpec spec_;
  Eigen::VectorXd x_;
  double h_;
  NoiseStream noise_;
  double threshold_;
  Eigen::VectorXd next_;
  Eigen::VectorXd w_;
  Eigen::VectorXd w_next_;
  RunStatus status_;
  bool stopped_ = false;
};

/// Runs n_steps from x0 (system coordinates), calling on_sample for step 0
/// and every accepted step.
template <class OnSample>
RunStatus integrate_1d(const System1D& s, const IntegratorSpec& spec, double x0, double h, std::size_t n_steps,
                       std::uint64_t seed, double threshold, OnSample&& on_sample) {
  detail::check_step_args(h, n_steps, spec.lmvd_substeps);
  Stepper1D stepper(s, spec, x0, h, seed, threshold);
  if (!detail::call_continue(on_sample, std::size_t{0}, x0)) return stepper.status();
  return stepper.advance(n_steps, on_sample);
}

template <class OnSample>
RunStatus integrate_nd(const SystemND& s, const IntegratorSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x0,
                       double h, std::size_t n_steps, std::uint64_t seed, double threshold, OnSample&& on_sample) {
  detail::check_step_args(h, n_steps, spec.lmvd_substeps);
  StepperND stepper(s, spec, x0, h, seed, threshold);
  if (!detail::call_continue(on_sample, std::size_t{0}, static_cast<const Eigen::VectorXd&>(stepper.state())))
    return stepper.status();
  return stepper.advance(n_steps, on_sample);
}

/// Convenience runner returning a metadata-complete trajectory and feeding
/// every sample to the observers. x0 is in the system's own coordinates.
Trajectory run_trajectory(const System1D& system, const IntegratorSpec& integrator, double x0, double h,
                          std::size_t n_steps, std::uint64_t seed, std::span<Observer* const> observers = {},
                          const RunOptions& options = {});

Trajectory run_trajectory(const SystemND& system, const IntegratorSpec& integrator,
                          const Eigen::Ref<const Eigen::VectorXd>& x0, double h, std::size_t n_steps,
                          std::uint64_t seed, std::span<Observer* const> observers = {},
                          const RunOptions& options = {});

}  // namespace bdx
