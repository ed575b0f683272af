#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "bdx/integrators.hpp"
#include "catch_amalgamated.hpp"

using namespace bdx;
using Catch::Approx;

namespace {

/// Counts evaluations of the wrapped diffusion.
class CountingDiffusion final : public Diffusion1D {
 public:
  explicit CountingDiffusion(std::shared_ptr<const Diffusion1D> inner) : inner_(std::move(inner)) {}
  double value(double x) const override {
    ++values;
    return inner_->value(x);
  }
  double gradient(double x) const override {
    ++gradients;
    return inner_->gradient(x);
  }
  DiffusionSample sample(double x) const override {
    ++samples;
    return inner_->sample(x);
  }
  mutable std::size_t values = 0;
  mutable std::size_t gradients = 0;
  mutable std::size_t samples = 0;

 private:
  std::shared_ptr<const Diffusion1D> inner_;
};

class CountingPotential final : public Potential1D {
 public:
  double value(double x) const override { return 0.5 * x * x; }
  double gradient(double x) const override {
    ++gradients;
    return x;
  }
  mutable std::size_t gradients = 0;
};

System1D sin_abs(double kT = 1.0) {
  return {std::make_shared<SinQuadraticPotential>(), std::make_shared<AbsLinearDiffusion>(), Temperature(kT)};
}

}  // namespace

TEST_CASE("integrator names", "[integrators]") {
  for (auto k : {IntegratorKind::EM, IntegratorKind::MM, IntegratorKind::LM, IntegratorKind::HLM, IntegratorKind::SH,
                 IntegratorKind::LMVD})
    CHECK(integrator_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(integrator_from_string("rk4"), std::invalid_argument);
  CHECK(uses_noise_overlap(IntegratorKind::LM));
  CHECK_FALSE(uses_noise_overlap(IntegratorKind::EM));
  CHECK_FALSE(supports_nd(IntegratorKind::LMVD));
}

TEST_CASE("single steps match hand-written updates", "[integrators]") {
  const System1D s = sin_abs(0.7);
  const double kT = 0.7;
  const double h = 0.013;
  const SinQuadraticPotential V;
  const AbsLinearDiffusion D;
  for (double x : {-1.3, 0.4, 2.2}) {
    const double w = 0.37;
    const double w2 = -1.1;
    const double d = D.value(x);
    const double dd = D.gradient(x);
    const double a = -d * V.gradient(x) + kT * dd;
    CHECK(step_em(x, h, s, w) == Approx(x + a * h + std::sqrt(2.0 * kT * d * h) * w).epsilon(1e-15));
    CHECK(step_mm(x, h, s, w) ==
          Approx(x + a * h + std::sqrt(2.0 * kT * d * h) * w + 0.5 * kT * dd * h * (w * w - 1.0)).epsilon(1e-15));
    CHECK(step_lm(x, h, s, w, w2) == Approx(x + a * h + std::sqrt(2.0 * kT * d * h) * 0.5 * (w + w2)).epsilon(1e-15));
    CHECK(step_hlm(x, h, s, w, w2) ==
          Approx(x + a * h + 0.25 * kT * dd * h + std::sqrt(2.0 * kT * d * h) * 0.5 * (w + w2)).epsilon(1e-15));
    // Stratonovich Heun on drift a - (kT/2) D'.
    const auto strat = [&](double z) { return -D.value(z) * V.gradient(z) + 0.5 * kT * D.gradient(z); };
    const auto sig = [&](double z) { return std::sqrt(2.0 * kT * D.value(z)); };
    const double xp = x + strat(x) * h + sig(x) * std::sqrt(h) * w;
    const double sh = x + 0.5 * (strat(x) + strat(xp)) * h + 0.5 * (sig(x) + sig(xp)) * std::sqrt(h) * w;
    CHECK(step_sh(x, h, s, w) == Approx(sh).epsilon(1e-15));
  }
}

TEST_CASE("reduction identities for constant diffusion", "[integrators]") {
  const System1D s{std::make_shared<SinQuadraticPotential>(), std::make_shared<ConstantDiffusion>(1.7), Temperature(0.9)};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(-4.0, 4.0);
  std::normal_distribution<double> n01;
  double worst_mm = 0.0;
  double worst_hlm = 0.0;
  double worst_lmvd = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = ux(rng);
    const double w = n01(rng);
    const double w2 = n01(rng);
    worst_mm = std::max(worst_mm, std::abs(step_mm(x, 0.05, s, w) - step_em(x, 0.05, s, w)));
    worst_hlm = std::max(worst_hlm, std::abs(step_hlm(x, 0.05, s, w, w2) - step_lm(x, 0.05, s, w, w2)));
    if (i < 1000) worst_lmvd = std::max(worst_lmvd, std::abs(step_lmvd(x, 0.05, s, w, w2) - step_lm(x, 0.05, s, w, w2)));
  }
  CHECK(worst_mm <= 1e-14);
  CHECK(worst_hlm <= 1e-14);
  CHECK(worst_lmvd <= 1e-12);
}

TEST_CASE("RK4 flow against exact solutions", "[integrators]") {
  // Global error of RK4 is O(dt^4); tolerances are a few times that bound.
  CHECK(rk4_flow(0.5, 0.3, 64, [](double z) { return z; }) == Approx(0.5 * std::exp(0.3)).epsilon(1e-11));
  // dx/ds = c sqrt(1 + x) for x > -1 has x(s) = (sqrt(1 + x0) + c s / 2)^2 - 1.
  const double c = 0.8;
  const double exact = std::pow(std::sqrt(1.5) + 0.5 * c * 0.2, 2) - 1.0;
  CHECK(rk4_flow(0.5, 0.2, 64, [&](double z) { return c * std::sqrt(1.0 + z); }) == Approx(exact).epsilon(1e-12));
}

TEST_CASE("RK4 flow splits substeps at kinks", "[integrators]") {
  // dx/ds = c sqrt(1 + |x|) from x0 < 0: sqrt(1 - x) falls at rate c/2 until
  // x = 0 at s0 = 2 (sqrt(1 - x0) - 1) / c, then sqrt(1 + x) rises at c/2.
  const double c = 1.3;
  const auto rate = [&](double z) { return c * std::sqrt(1.0 + std::abs(z)); };
  const std::vector<double> kinks{0.0};
  for (double x0 : {-0.05, -0.01, -1e-6}) {
    const double s0 = 2.0 * (std::sqrt(1.0 - x0) - 1.0) / c;
    const double duration = 0.07;
    const double exact = std::pow(1.0 + 0.5 * c * (duration - s0), 2) - 1.0;
    CHECK(std::abs(rk4_flow(x0, duration, 8, rate, kinks) - exact) < 1e-9);
  }
  {
    // Without the split the kink costs several orders of accuracy.
    const double s0 = 2.0 * (std::sqrt(1.05) - 1.0) / c;
    const double exact = std::pow(1.0 + 0.5 * c * (0.07 - s0), 2) - 1.0;
    CHECK(std::abs(rk4_flow(-0.05, 0.07, 8, rate) - exact) > 1e-7);
  }
  // Moving away from a kink, or starting on it, needs no split.
  CHECK(rk4_flow(0.0, 0.07, 8, rate, kinks) == rk4_flow(0.0, 0.07, 8, rate));
  CHECK(rk4_flow(0.3, 0.07, 8, rate, kinks) == rk4_flow(0.3, 0.07, 8, rate));
}

TEST_CASE("LMVD inner solver converged at 8 substeps", "[integrators]") {
  const System1D s = sin_abs();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ux(-4.0, 4.0);
  std::normal_distribution<double> n01;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = ux(rng);
    const double w = n01(rng);
    const double w2 = n01(rng);
    worst = std::max(worst, std::abs(step_lmvd(x, 0.01, s, w, w2, 8) - step_lmvd(x, 0.01, s, w, w2, 1024)));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("evaluation counts per step", "[integrators]") {
  auto diff = std::make_shared<CountingDiffusion>(std::make_shared<AbsLinearDiffusion>());
  auto pot = std::make_shared<CountingPotential>();
  const System1D s{pot, diff, Temperature(1.0)};
  const auto reset = [&] {
    diff->values = diff->gradients = diff->samples = 0;
    pot->gradients = 0;
  };
  const auto evaluations = [&] { return diff->values + diff->samples; };
  reset();
  step_em(0.3, 0.01, s, 0.1);
  CHECK(evaluations() == 1);
  CHECK(pot->gradients == 1);
  reset();
  step_lm(0.3, 0.01, s, 0.1, 0.2);
  CHECK(evaluations() == 1);
  CHECK(pot->gradients == 1);
  reset();
  step_sh(0.3, 0.01, s, 0.1);
  CHECK(evaluations() == 2);
  CHECK(pot->gradients == 2);
  reset();
  step_lmvd(0.3, 0.01, s, 0.1, 0.2, 8);
  CHECK(diff->samples == 1);
  CHECK(diff->values == 8 * 8);  // two flows x substeps x four stages
  CHECK(pot->gradients == 1);
}

TEST_CASE("noise draws per step", "[integrators]") {
  const System1D s = sin_abs();
  for (auto kind : {IntegratorKind::EM, IntegratorKind::MM, IntegratorKind::SH, IntegratorKind::LM, IntegratorKind::HLM,
                    IntegratorKind::LMVD}) {
    Stepper1D st(s, IntegratorSpec{kind, 8}, 0.0, 0.01, 42);
    const auto before = st.noise().draws();
    st.advance(100, [](std::size_t, double) {});
    CHECK(st.noise().draws() - before == 100);
    CHECK(before == (uses_noise_overlap(kind) ? 1u : 0u));
  }
}

TEST_CASE("runs are deterministic and resumable", "[integrators]") {
  const System1D s = sin_abs();
  const IntegratorSpec spec{IntegratorKind::LM, 8};
  const auto a = run_trajectory(s, spec, 0.2, 0.01, 500, 77, {}, {});
  const auto b = run_trajectory(s, spec, 0.2, 0.01, 500, 77, {}, {});
  const auto c = run_trajectory(s, spec, 0.2, 0.01, 500, 78, {}, {});
  CHECK(a.samples == b.samples);
  CHECK(a.samples != c.samples);
  REQUIRE(a.size() == 501);
  CHECK(a.samples.front() == 0.2);
  Stepper1D st(s, spec, 0.2, 0.01, 77);
  std::vector<double> pieces{0.2};
  st.advance(123, [&](std::size_t, double x) { pieces.push_back(x); });
  st.advance(377, [&](std::size_t, double x) { pieces.push_back(x); });
  CHECK(pieces == a.samples);
}

TEST_CASE("blow-up is reported, not thrown", "[integrators]") {
  const System1D s{std::make_shared<HarmonicPotential>(), std::make_shared<ConstantDiffusion>(1.0), Temperature(1.0)};
  const auto t = run_trajectory(s, IntegratorSpec{IntegratorKind::EM, 8}, 1.0, 3.0, 1000, 1, {}, {});
  CHECK(t.status.blew_up);
  CHECK(t.status.blow_up_reason == "threshold");
  CHECK(t.size() == t.status.steps_completed + 1);
  CHECK(t.status.blow_up_step == t.status.steps_completed + 1);
  CHECK_THROWS_AS(run_trajectory(s, IntegratorSpec{IntegratorKind::EM, 8}, 1.0, -0.1, 10, 1, {}, {}),
                  std::invalid_argument);
}

TEST_CASE("deterministic EM stability threshold on the harmonic potential", "[integrators]") {
  // With zero temperature noise is negligible: x_{n+1} = (1 - h) x_n.
  const System1D s{std::make_shared<HarmonicPotential>(), std::make_shared<ConstantDiffusion>(1.0), Temperature(1e-300)};
  for (double h : {1.9, 1.99}) CHECK_FALSE(run_trajectory(s, IntegratorSpec{IntegratorKind::EM, 8}, 1.0, h, 20000, 1, {}, {}).status.blew_up);
  CHECK(run_trajectory(s, IntegratorSpec{IntegratorKind::EM, 8}, 1.0, 2.01, 20000, 1, {}, {}).status.blew_up);
}

TEST_CASE("multivariate steps reduce to the scalar ones", "[integrators]") {
  auto pot = std::make_shared<const HarmonicPotentialND>(2);
  const SystemND iso{pot, IsotropicDiffusion{std::make_shared<ConstantScalarField>(2, 1.3)}, Temperature(0.8)};
  const System1D one{std::make_shared<HarmonicPotential>(), std::make_shared<ConstantDiffusion>(1.3 * 1.3), Temperature(0.8)};
  Eigen::VectorXd x(2), w(2), w2(2), out(2), out2(2);
  x << 0.4, -1.2;
  w << 0.3, -0.8;
  w2 << 1.1, 0.2;
  step_em_nd(iso, x, 0.02, w, out);
  for (int i = 0; i < 2; ++i) CHECK(out[i] == Approx(step_em(x[i], 0.02, one, w[i])).epsilon(1e-14));
  step_lm_nd(iso, x, 0.02, w, w2, out);
  for (int i = 0; i < 2; ++i) CHECK(out[i] == Approx(step_lm(x[i], 0.02, one, w[i], w2[i])).epsilon(1e-14));
  step_hlm_nd(iso, x, 0.02, w, w2, out2);
  CHECK((out2 - out).norm() <= 1e-14);
  step_sh_nd(iso, x, 0.02, w, out);
  for (int i = 0; i < 2; ++i) CHECK(out[i] == Approx(step_sh(x[i], 0.02, one, w[i])).epsilon(1e-14));
}

TEST_CASE("multivariate general path matches the diagonal fast path", "[integrators]") {
  auto pot = std::make_shared<const QuadrupleWellPotential>();
  auto mag = std::make_shared<const MoroCardinField>();
  auto axis = std::make_shared<const AbsLinearDiffusion>();
  const SystemND fast{pot, CombinedDiffusion{IsotropicDiffusion{mag}, DiagonalDiffusion{{axis, axis}},
                                             Eigen::MatrixXd::Identity(2, 2)},
                      Temperature(1.0)};
  // A rotation by 2 pi is the identity numerically but not structurally,
  // which routes the step through the general matrix path.
  Eigen::MatrixXd almost(2, 2);
  almost << std::cos(2 * M_PI), -std::sin(2 * M_PI), std::sin(2 * M_PI), std::cos(2 * M_PI);
  const SystemND general{pot, CombinedDiffusion{IsotropicDiffusion{mag}, DiagonalDiffusion{{axis, axis}}, almost},
                         Temperature(1.0)};
  Eigen::VectorXd x(2), w(2), w2(2), a(2), b(2);
  x << 0.35, -0.6;
  w << 0.5, 1.5;
  w2 << -0.2, 0.9;
  step_em_nd(fast, x, 0.01, w, a);
  step_em_nd(general, x, 0.01, w, b);
  CHECK((a - b).norm() < 1e-9);
  step_lm_nd(fast, x, 0.01, w, w2, a);
  step_lm_nd(general, x, 0.01, w, w2, b);
  CHECK((a - b).norm() < 1e-9);
  step_sh_nd(fast, x, 0.01, w, a);
  step_sh_nd(general, x, 0.01, w, b);
  CHECK((a - b).norm() < 1e-8);
  CHECK_THROWS_AS(step_hlm_nd(general, x, 0.01, w, w2, b), std::invalid_argument);
}

TEST_CASE("multivariate runner", "[integrators]") {
  auto pot = std::make_shared<const QuadrupleWellPotential>();
  const SystemND s{pot, IsotropicDiffusion{std::make_shared<MoroCardinField>()}, Temperature(1.0)};
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
  const auto t = run_trajectory(s, IntegratorSpec{IntegratorKind::LM, 8}, x0, 0.01, 200, 3, {}, {});
  CHECK(t.dim == 2);
  CHECK(t.size() == 201);
  CHECK_THROWS_AS(run_trajectory(s, IntegratorSpec{IntegratorKind::LMVD, 8}, x0, 0.01, 10, 3, {}, {}),
                  std::invalid_argument);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(run_trajectory(s, IntegratorSpec{IntegratorKind::EM, 8}, bad, 0.01, 10, 3, {}, {}),
                  std::invalid_argument);
}
