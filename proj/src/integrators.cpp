#include "bdx/integrators.hpp"

#include <algorithm>

namespace bdx {

std::string to_string(IntegratorKind kind) {
  switch (kind) {
    case IntegratorKind::EM: return "em";
    case IntegratorKind::MM: return "mm";
    case IntegratorKind::LM: return "lm";
    case IntegratorKind::HLM: return "hlm";
    case IntegratorKind::SH: return "sh";
    case IntegratorKind::LMVD: return "lmvd";
  }
  return "em";
}

IntegratorKind integrator_from_string(const std::string& name) {
  if (name == "em") return IntegratorKind::EM;
  if (name == "mm") return IntegratorKind::MM;
  if (name == "lm") return IntegratorKind::LM;
  if (name == "hlm") return IntegratorKind::HLM;
  if (name == "sh") return IntegratorKind::SH;
  if (name == "lmvd") return IntegratorKind::LMVD;
  throw std::invalid_argument("unknown integrator '" + name + "' (expected em|mm|lm|hlm|sh|lmvd)");
}

bool uses_noise_overlap(IntegratorKind kind) {
  return kind == IntegratorKind::LM || kind == IntegratorKind::HLM || kind == IntegratorKind::LMVD;
}

bool supports_nd(IntegratorKind kind) {
  return kind == IntegratorKind::EM || kind == IntegratorKind::LM || kind == IntegratorKind::HLM ||
         kind == IntegratorKind::SH;
}

namespace detail {

void check_step_args(double h, std::size_t n_steps, int lmvd_substeps) {
  if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("step size h must be > 0");
  if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
  if (lmvd_substeps < 1) throw std::invalid_argument("lmvd_substeps must be >= 1");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 1D

namespace {

struct Local1D {
  double grad;  // V'
  double d;     // D
  double dd;    // D'
};

Local1D evaluate(const System1D& s, double x) {
  const auto d = s.diffusion->sample(x);
  return {s.potential->gradient(x), d.value, d.gradient};
}

}  // namespace

double step_em(double x, double h, const System1D& s, double w) {
  const double kT = s.temperature.value();
  const auto f = evaluate(s, x);
  const double a = -f.d * f.grad + kT * f.dd;
  return x + a * h + std::sqrt(2.0 * kT * f.d * h) * w;
}

double step_mm(double x, double h, const System1D& s, double w) {
  const double kT = s.temperature.value();
  const auto f = evaluate(s, x);
  const double a = -f.d * f.grad + kT * f.dd;
  return x + a * h + std::sqrt(2.0 * kT * f.d * h) * w + 0.5 * kT * f.dd * (w * w - 1.0) * h;
}

double step_lm(double x, double h, const System1D& s, double w_n, double w_next) {
  const double kT = s.temperature.value();
  const auto f = evaluate(s, x);
  const double a = -f.d * f.grad + kT * f.dd;
  return x + a * h + std::sqrt(2.0 * kT * f.d * h) * 0.5 * (w_n + w_next);
}

double step_hlm(double x, double h, const System1D& s, double w_n, double w_next) {
  const double kT = s.temperature.value();
  const auto f = evaluate(s, x);
  const double a = -f.d * f.grad + kT * f.dd + 0.25 * kT * f.dd;
  return x + a * h + std::sqrt(2.0 * kT * f.d * h) * 0.5 * (w_n + w_next);
}

double step_sh(double x, double h, const System1D& s, double w) {
  const double kT = s.temperature.value();
  const double sqh = std::sqrt(h);
  const auto f0 = evaluate(s, x);
  const double a0 = -f0.d * f0.grad + 0.5 * kT * f0.dd;
  const double s0 = std::sqrt(2.0 * kT * f0.d);
  const double xp = x + a0 * h + s0 * sqh * w;
  const auto f1 = evaluate(s, xp);
  const double a1 = -f1.d * f1.grad + 0.5 * kT * f1.dd;
  const double s1 = std::sqrt(2.0 * kT * f1.d);
  return x + 0.5 * (a0 + a1) * h + 0.5 * (s0 + s1) * sqh * w;
}

double step_lmvd(double x, double h, const System1D& s, double w_n, double w_next, int substeps) {
  const double kT = s.temperature.value();
  const auto f = evaluate(s, x);
  const double kick =
      std::sqrt(kT) * w_n - std::sqrt(2.0 * h * f.d) * f.grad + kT * std::sqrt(h / (2.0 * f.d)) * f.dd;
  const double duration = std::sqrt(0.5 * h);
  const Diffusion1D& D = *s.diffusion;
  const std::vector<double> kinks = D.kinks();
  const double mid = rk4_flow(x, duration, substeps, [&](double z) { return std::sqrt(D.value(z)) * kick; }, kinks);
  const double redraw = std::sqrt(kT) * w_next;
  return rk4_flow(mid, duration, substeps, [&](double z) { return std::sqrt(D.value(z)) * redraw; }, kinks);
}

// ---------------------------------------------------------------------------
// nD

namespace {

/// Drift, diagonal noise entries and div(DD^T) at x for diagonal diffusions.
struct DiagonalLocal {
  Eigen::VectorXd grad;
  Eigen::VectorXd m;    // D_ii
  Eigen::VectorXd div;  // div(DD^T)
};

void evaluate_diagonal(const SystemND& s, const Eigen::Ref<const Eigen::VectorXd>& x, DiagonalLocal& out) {
  const auto n = x.size();
  out.grad.resize(n);
  out.m.resize(n);
  out.div.resize(n);
  s.potential->gradient(x, out.grad);
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, IsotropicDiffusion>) {
          const double v = d.magnitude->value(x);
          out.m.setConstant(v);
          if (d.magnitude->is_constant()) {
            out.div.setZero();
          } else {
            d.magnitude->gradient(x, out.div);
            out.div *= 2.0 * v;
          }
        } else if constexpr (std::is_same_v<T, DiagonalDiffusion>) {
          for (Eigen::Index i = 0; i < n; ++i) {
            const auto a = d.axes[static_cast<std::size_t>(i)]->sample(x[i]);
            out.m[i] = a.value;
            out.div[i] = 2.0 * a.value * a.gradient;
          }
        } else {
          const double v = d.iso.magnitude->value(x);
          d.iso.magnitude->gradient(x, out.div);
          for (Eigen::Index i = 0; i < n; ++i) {
            const auto a = d.diag.axes[static_cast<std::size_t>(i)]->sample(x[i]);
            out.m[i] = v * a.value;
            out.div[i] = 2.0 * v * out.div[i] * a.value * a.value + 2.0 * v * v * a.value * a.gradient;
          }
        }
      },
      s.diffusion);
}

/// Ito drift plus a multiple of div(DD^T): -(DD^T) grad V + (kT + extra) div.
Eigen::VectorXd diagonal_drift(const DiagonalLocal& f, double kT_div) {
  return -(f.m.array().square() * f.grad.array()).matrix() + kT_div * f.div;
}

void check_dims(const SystemND& s, const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Index w_size) {
  const auto n = static_cast<Eigen::Index>(s.potential->dim());
  if (x.size() != n || w_size != n) throw std::invalid_argument("multivariate step: dimension mismatch");
}

thread_local DiagonalLocal tl_local0;
thread_local DiagonalLocal tl_local1;

}  // namespace

void step_em_nd(const SystemND& s, const Eigen::Ref<const Eigen::VectorXd>& x, double h,
                const Eigen::Ref<const Eigen::VectorXd>& w, Eigen::Ref<Eigen::VectorXd> out) {
  check_dims(s, x, w.size());
  const double kT = s.temperature.value();
  if (is_diagonal(s.diffusion)) {
    auto& f = tl_local0;
    evaluate_diagonal(s, x, f);
    out = x + diagonal_drift(f, kT) * h + std::sqrt(2.0 * kT * h) * (f.m.array() * w.array()).matrix();
    return;
  }
  const Eigen::MatrixXd m = diffusion_matrix(s.diffusion, x);
  out = x + drift_nd(*s.potential, s.diffusion, s.temperature, x) * h + std::sqrt(2.0 * kT * h) * (m * w);
}

void step_lm_nd(const SystemND& s, const Eigen::Ref<const Eigen::VectorXd>& x, double h,
                const Eigen::Ref<const Eigen::VectorXd>& w_n, const Eigen::Ref<const Eigen::VectorXd>& w_next,
                Eigen::Ref<Eigen::VectorXd> out) {
  check_dims(s, x, w_n.size());
  check_dims(s, x, w_next.size());
  const double kT = s.temperature.value();
  if (is_diagonal(s.diffusion)) {
    auto& f = tl_local0;
    evaluate_diagonal(s, x, f);
    out = x + diagonal_drift(f, kT) * h +
          std::sqrt(2.0 * kT * h) * 0.5 * (f.m.array() * (w_n + w_next).array()).matrix();
    return;
  }
  const Eigen::MatrixXd m = diffusion_matrix(s.diffusion, x);
  out = x + drift_nd(*s.potential, s.diffusion, s.temperature, x) * h +
        std::sqrt(2.0 * kT * h) * 0.5 * (m * (w_n + w_next));
}

void step_hlm_nd(const SystemND& s, const Eigen::Ref<const Eigen::VectorXd>& x, double h,
                 const Eigen::Ref<const Eigen::VectorXd>& w_n, const Eigen::Ref<const Eigen::VectorXd>& w_next,
                 Eigen::Ref<Eigen::VectorXd> out) {
  check_dims(s, x, w_n.size());
  check_dims(s, x, w_next.size());
  if (!is_diagonal(s.diffusion))
    throw std::invalid_argument("multivariate HLM requires a diagonal or isotropic diffusion");
  const double kT = s.temperature.value();
  auto& f = tl_local0;
  evaluate_diagonal(s, x, f);
  out = x + diagonal_drift(f, 1.25 * kT) * h +
        std::sqrt(2.0 * kT * h) * 0.5 * (f.m.array() * (w_n + w_next).array()).matrix();
}

void step_sh_nd(const SystemND& s, const Eigen::Ref<const Eigen::VectorXd>& x, double h,
                const Eigen::Ref<const Eigen::VectorXd>& w, Eigen::Ref<Eigen::VectorXd> out) {
  check_dims(s, x, w.size());
  const double kT = s.temperature.value();
  const double sq = std::sqrt(2.0 * kT * h);
  if (is_diagonal(s.diffusion)) {
    // Stratonovich drift: Ito drift minus (kT/2) div(DD^T) for diagonal D.
    auto& f0 = tl_local0;
    auto& f1 = tl_local1;
    evaluate_diagonal(s, x, f0);
    const Eigen::VectorXd a0 = diagonal_drift(f0, 0.5 * kT);
    const Eigen::VectorXd xp = x + a0 * h + sq * (f0.m.array() * w.array()).matrix();
    evaluate_diagonal(s, xp, f1);
    const Eigen::VectorXd a1 = diagonal_drift(f1, 0.5 * kT);
    out = x + 0.5 * (a0 + a1) * h + sq * 0.5 * ((f0.m + f1.m).array() * w.array()).matrix();
    return;
  }
  const auto n = x.size();
  Eigen::VectorXd c(n);
  stratonovich_correction(s.diffusion, kT, x, c);
  const Eigen::VectorXd a0 = drift_nd(*s.potential, s.diffusion, s.temperature, x) - c;
  const Eigen::MatrixXd m0 = diffusion_matrix(s.diffusion, x);
  const Eigen::VectorXd xp = x + a0 * h + sq * (m0 * w);
  stratonovich_correction(s.diffusion, kT, xp, c);
  const Eigen::VectorXd a1 = drift_nd(*s.potential, s.diffusion, s.temperature, xp) - c;
  const Eigen::MatrixXd m1 = diffusion_matrix(s.diffusion, xp);
  out = x + 0.5 * (a0 + a1) * h + sq * 0.5 * ((m0 + m1) * w);
}

// ---------------------------------------------------------------------------
// Runner

namespace {

void notify(std::span<Observer* const> observers, std::size_t step, std::span<const double> state) {
  for (Observer* o : observers) o->observe(step, state);
}

}  // namespace

Trajectory run_trajectory(const System1D& system, const IntegratorSpec& integrator, double x0, double h,
                          std::size_t n_steps, std::uint64_t seed, std::span<Observer* const> observers,
                          const RunOptions& options) {
  Trajectory t;
  t.dim = 1;
  t.h = h;
  t.clock = options.clock;
  t.seed = seed;
  t.kT = system.temperature.value();
  t.steps_requested = n_steps;
  if (options.store_samples) t.samples.reserve(n_steps + 1);
  t.status = integrate_1d(system, integrator, x0, h, n_steps, seed, options.blow_up_threshold,
                          [&](std::size_t n, double x) {
                            if (options.store_samples) t.samples.push_back(x);
                            notify(observers, n, {&x, 1});
                          });
  return t;
}

Trajectory run_trajectory(const SystemND& system, const IntegratorSpec& integrator,
                          const Eigen::Ref<const Eigen::VectorXd>& x0, double h, std::size_t n_steps,
                          std::uint64_t seed, std::span<Observer* const> observers, const RunOptions& options) {
  Trajectory t;
  t.dim = system.potential->dim();
  t.h = h;
  t.clock = options.clock;
  t.seed = seed;
  t.kT = system.temperature.value();
  t.steps_requested = n_steps;
  if (options.store_samples) t.samples.reserve((n_steps + 1) * t.dim);
  t.status = integrate_nd(system, integrator, x0, h, n_steps, seed, options.blow_up_threshold,
                          [&](std::size_t n, const Eigen::VectorXd& x) {
                            if (options.store_samples) t.samples.insert(t.samples.end(), x.data(), x.data() + x.size());
                            notify(observers, n, {x.data(), static_cast<std::size_t>(x.size())});
                          });
  return t;
}

}  // namespace bdx
