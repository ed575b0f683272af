#include <cmath>
#include <memory>
#include <random>

#include "bdx/quadrature.hpp"
#include "bdx/transforms.hpp"
#include "catch_amalgamated.hpp"

using namespace bdx;
using Catch::Approx;

namespace {

/// 1 + |x| without registered closed forms, forcing the quadrature map.
class NumericAbsLinear final : public Diffusion1D {
 public:
  double value(double x) const override { return 1.0 + std::abs(x); }
  double gradient(double x) const override { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
  std::vector<double> kinks() const override { return {0.0}; }
};

/// Smooth, strongly varying diffusion 1 + 0.5 sin(2x) + x^2 / 4.
class WavyDiffusion final : public Diffusion1D {
 public:
  double value(double x) const override { return 1.0 + 0.5 * std::sin(2.0 * x) + 0.25 * x * x; }
  double gradient(double x) const override { return std::cos(2.0 * x) + 0.5 * x; }
};

template <class F>
double central_difference(F&& f, double x, double step = 1e-6) {
  return (f(x + step) - f(x - step)) / (2.0 * step);
}

Eigen::MatrixXd rotation(double angle) {
  Eigen::MatrixXd R(2, 2);
  R << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return R;
}

}  // namespace

TEST_CASE("transform names round-trip", "[transforms]") {
  for (auto k : {TransformKind::None, TransformKind::Lamperti, TransformKind::TimeRescale, TransformKind::Combined})
    CHECK(transform_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(transform_from_string("bogus"), std::invalid_argument);
}

TEST_CASE("quadrature map agrees with the closed form", "[transforms]") {
  const LampertiMap1D closed(std::make_shared<AbsLinearDiffusion>(), LampertiConvention::ScalarCoefficient, {});
  const LampertiMap1D grid(std::make_shared<NumericAbsLinear>(), LampertiConvention::ScalarCoefficient, {});
  REQUIRE(closed.has_closed_form());
  REQUIRE_FALSE(grid.has_closed_form());
  for (double x = -7.9; x <= 7.9; x += 0.173) {
    CHECK(grid.forward(x) == Approx(closed.forward(x)).margin(1e-10));
    CHECK(grid.dy_dx(x) == Approx(1.0 / std::sqrt(1.0 + std::abs(x))).epsilon(1e-14));
  }
  const LampertiMap1D closed_tr(std::make_shared<AbsLinearDiffusion>(), LampertiConvention::MatrixEntry, {});
  const LampertiMap1D grid_tr(std::make_shared<NumericAbsLinear>(), LampertiConvention::MatrixEntry, {});
  for (double x = -7.9; x <= 7.9; x += 0.31) CHECK(grid_tr.forward(x) == Approx(closed_tr.forward(x)).margin(1e-10));
}

TEST_CASE("Lamperti round trip on 1e4 points", "[transforms]") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-7.5, 7.5);
  const LampertiMap1D closed(std::make_shared<AbsLinearDiffusion>(), LampertiConvention::ScalarCoefficient, {});
  const LampertiMap1D wavy(std::make_shared<WavyDiffusion>(), LampertiConvention::ScalarCoefficient, {});
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = u(rng);
    worst = std::max(worst, std::abs(closed.inverse(closed.forward(x)) - x));
    worst = std::max(worst, std::abs(wavy.inverse(wavy.forward(x)) - x));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("anchor and domain of the quadrature map", "[transforms]") {
  MapOptions opts;
  opts.x0 = 1.5;
  opts.domain = {-3.0, 4.0};
  const LampertiMap1D m(std::make_shared<WavyDiffusion>(), LampertiConvention::ScalarCoefficient, opts);
  CHECK(m.forward(1.5) == Approx(0.0).margin(1e-14));
  CHECK(m.forward(3.0) == Approx(integrate([](double x) { return 1.0 / std::sqrt(WavyDiffusion().value(x)); }, 1.5, 3.0)).epsilon(1e-10));
  CHECK_THROWS_AS(m.forward(4.5), std::domain_error);
  CHECK_THROWS_AS(m.inverse(m.forward(4.0) + 0.1), std::domain_error);
  CHECK_THROWS_AS(LampertiMap1D(std::make_shared<WavyDiffusion>(), LampertiConvention::ScalarCoefficient,
                                MapOptions{5.0, {-3.0, 4.0}, 4096}),
                  std::invalid_argument);
}

TEST_CASE("1D effective potentials", "[transforms]") {
  auto v = std::make_shared<const SinQuadraticPotential>();
  auto d = std::make_shared<const AbsLinearDiffusion>();
  const Temperature kT(0.9);
  auto map = std::make_shared<const LampertiMap1D>(d, LampertiConvention::ScalarCoefficient, MapOptions{});
  const auto lam = lamperti_effective_potential_1d(v, d, kT, map);
  const auto tr = time_rescale_1d(v, d, kT);
  CHECK(lam.provenance == TransformKind::Lamperti);
  CHECK(tr.potential.provenance == TransformKind::TimeRescale);
  for (double x : {-3.1, -0.7, 0.2, 1.9}) {
    const double y = map->forward(x);
    CHECK(lam.potential->value(y) == Approx(v->value(x) - 0.45 * std::log(d->value(x))));
    CHECK(lam.potential->gradient(y) ==
          Approx(central_difference([&](double z) { return lam.potential->value(z); }, y)).epsilon(1e-6));
    CHECK(tr.potential.potential->value(x) == Approx(v->value(x) - 0.9 * std::log(d->value(x))));
    CHECK(tr.potential.potential->gradient(x) ==
          Approx(central_difference([&](double z) { return tr.potential.potential->value(z); }, x)).epsilon(1e-6));
    CHECK(tr.clock.rate(x) == Approx(1.0 / d->value(x)));
  }
}

TEST_CASE("partition functions agree and the pullback recovers the density", "[transforms]") {
  auto v = std::make_shared<const SinQuadraticPotential>();
  for (auto d : {std::shared_ptr<const Diffusion1D>(std::make_shared<AbsLinearDiffusion>()),
                 std::shared_ptr<const Diffusion1D>(std::make_shared<WavyDiffusion>())}) {
    const double kT = 1.0;
    auto map = std::make_shared<const LampertiMap1D>(d, LampertiConvention::ScalarCoefficient, MapOptions{});
    const auto lam = lamperti_effective_potential_1d(v, d, Temperature(kT), map);
    const auto tr = time_rescale_1d(v, d, Temperature(kT));
    const double a = -7.5;
    const double b = 7.5;
    const double z = integrate([&](double x) { return std::exp(-v->value(x) / kT); }, a, b);
    const double z_lam =
        integrate([&](double y) { return std::exp(-lam.potential->value(y) / kT); }, map->forward(a), map->forward(b));
    const double z_tr = integrate(
        [&](double x) { return tr.clock.rate(x) * std::exp(-tr.potential.potential->value(x) / kT); }, a, b);
    CHECK(std::abs(z_lam - z) / z < 1e-6);
    CHECK(std::abs(z_tr - z) / z < 1e-6);
    double worst = 0.0;
    for (double x = -5.0; x <= 5.0; x += 0.01) {
      const double rho = std::exp(-v->value(x) / kT) / z;
      const double pulled = std::exp(-lam.potential->value(map->forward(x)) / kT) / z_lam * map->dy_dx(x);
      worst = std::max(worst, std::abs(pulled - rho));
    }
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("transformed 1D systems", "[transforms]") {
  const Problem1D p{std::make_shared<SinQuadraticPotential>(), std::make_shared<AbsLinearDiffusion>()};
  const Temperature kT(1.0);
  const auto none = make_system_1d(p, kT, TransformKind::None);
  const auto lam = make_system_1d(p, kT, TransformKind::Lamperti);
  const auto tr = make_system_1d(p, kT, TransformKind::TimeRescale);
  CHECK(none.to_dynamics(0.7) == 0.7);
  CHECK(none.weight(0.7) == 1.0);
  CHECK(lam.dynamics.diffusion->is_constant());
  CHECK(lam.dynamics.diffusion->value(3.0) == 1.0);
  CHECK(lam.to_original(lam.to_dynamics(2.3)) == Approx(2.3).epsilon(1e-13));
  CHECK(lam.clock_kind() == Clock::PhysicalTime);
  CHECK(tr.clock_kind() == Clock::RescaledTime);
  CHECK(tr.dynamics.diffusion->value(-4.0) == 1.0);
  CHECK(tr.weight(2.0) == Approx(1.0 / 3.0));
  CHECK_THROWS_AS(make_system_1d(p, kT, TransformKind::Combined), UnsupportedTransform);
}

TEST_CASE("multivariate Lamperti for diagonal diffusion", "[transforms]") {
  auto v = std::make_shared<const QuadrupleWellPotential>();
  auto axis = std::make_shared<const AbsLinearDiffusion>();
  const DiffusionND d = DiagonalDiffusion{{axis, axis}};
  const double kT = 0.8;
  const auto lam = lamperti_nd_diagonal(v, d, Temperature(kT));
  REQUIRE(lam.maps.size() == 2);
  Eigen::VectorXd x(2);
  x << 0.6, -1.1;
  Eigen::VectorXd y(2);
  y << lam.maps[0]->forward(x[0]), lam.maps[1]->forward(x[1]);
  CHECK(lam.potential.potential->value(y) ==
        Approx(v->value(x) - kT * (std::log(axis->value(x[0])) + std::log(axis->value(x[1])))));
  Eigen::VectorXd g(2);
  lam.potential.potential->gradient(y, g);
  for (int i = 0; i < 2; ++i) {
    Eigen::VectorXd a = y;
    Eigen::VectorXd b = y;
    a[i] += 1e-6;
    b[i] -= 1e-6;
    CHECK(g[i] == Approx((lam.potential.potential->value(a) - lam.potential.potential->value(b)) / 2e-6).epsilon(1e-6));
  }
  CHECK_THROWS_AS(lamperti_nd_diagonal(v, DiffusionND(IsotropicDiffusion{std::make_shared<MoroCardinField>()}), Temperature(kT)),
                  UnsupportedTransform);
}

TEST_CASE("multivariate time rescaling with a linear map", "[transforms]") {
  auto v = std::make_shared<const QuadrupleWellPotential>();
  auto mag = std::make_shared<const MoroCardinField>(5.0, 0.3);
  const double kT = 1.1;
  const Eigen::MatrixXd R = rotation(0.3) * 1.5;
  const auto tr = time_rescale_nd(v, IsotropicDiffusion{mag}, Temperature(kT), R);
  Eigen::VectorXd Y(2);
  Y << 0.2, -0.35;
  const Eigen::VectorXd X = R * Y;
  CHECK(tr.potential.potential->value(Y) == Approx(v->value(X) - 2.0 * kT * std::log(mag->value(X))));
  CHECK((tr.R_inverse * R - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-13);
  CHECK(tr.clock.rate(X) == Approx(1.0 / (mag->value(X) * mag->value(X))));
  Eigen::VectorXd g(2);
  tr.potential.potential->gradient(Y, g);
  for (int i = 0; i < 2; ++i) {
    Eigen::VectorXd a = Y;
    Eigen::VectorXd b = Y;
    a[i] += 1e-6;
    b[i] -= 1e-6;
    CHECK(g[i] == Approx((tr.potential.potential->value(a) - tr.potential.potential->value(b)) / 2e-6).epsilon(1e-6));
  }
  Eigen::MatrixXd singular(2, 2);
  singular << 1.0, 1.0, 1.0, 1.0;
  CHECK_THROWS(time_rescale_nd(v, IsotropicDiffusion{mag}, Temperature(kT), singular));
}

TEST_CASE("combined transform requires R = I", "[transforms]") {
  auto v = std::make_shared<const QuadrupleWellPotential>();
  auto mag = std::make_shared<const MoroCardinField>(5.0, 0.3);
  auto axis = std::make_shared<const AbsLinearDiffusion>();
  const double kT = 1.0;
  const CombinedDiffusion ok{IsotropicDiffusion{mag}, DiagonalDiffusion{{axis, axis}}, Eigen::MatrixXd::Identity(2, 2)};
  const auto c = combined_transform_nd(v, ok, Temperature(kT));
  Eigen::VectorXd X(2);
  X << -0.4, 0.9;
  Eigen::VectorXd Y(2);
  Y << c.maps[0]->forward(X[0]), c.maps[1]->forward(X[1]);
  CHECK(c.potential.potential->value(Y) ==
        Approx(v->value(X) - 2.0 * kT * std::log(mag->value(X)) -
               kT * (std::log(axis->value(X[0])) + std::log(axis->value(X[1])))));
  const CombinedDiffusion rotated{IsotropicDiffusion{mag}, DiagonalDiffusion{{axis, axis}}, rotation(0.5)};
  CHECK_THROWS_AS(combined_transform_nd(v, rotated, Temperature(kT)), UnsupportedTransform);
}

TEST_CASE("clock accumulation", "[transforms]") {
  const std::vector<double> g{1.0, 0.5, 0.25, 1.0};
  const auto t = accumulate_clock(g, 0.1);
  REQUIRE(t.size() == 4);
  CHECK(t[0] == 0.0);
  CHECK(t[1] == Approx(0.075));
  CHECK(t[2] == Approx(0.075 + 0.0375));
  CHECK(t[3] == Approx(0.075 + 0.0375 + 0.0625));
  const ClockMap1D clock(std::make_shared<AbsLinearDiffusion>());
  const std::vector<double> path{0.0, 1.0, -1.0};
  const auto tt = tau_to_t(path, 0.2, clock);
  CHECK(tt[2] == Approx(0.1 * (1.0 + 0.5) + 0.1 * (0.5 + 0.5)));
}

TEST_CASE("multivariate transformed systems map coordinates both ways", "[transforms]") {
  auto axis = std::make_shared<const AbsLinearDiffusion>();
  const ProblemND diag{std::make_shared<QuadrupleWellPotential>(), DiagonalDiffusion{{axis, axis}}};
  const ProblemND iso{std::make_shared<QuadrupleWellPotential>(), IsotropicDiffusion{std::make_shared<MoroCardinField>()}};
  const Temperature kT(1.0);
  const auto lam = make_system_nd(diag, kT, TransformKind::Lamperti);
  const auto tr = make_system_nd(iso, kT, TransformKind::TimeRescale);
  Eigen::VectorXd x(2);
  x << 0.3, -2.0;
  Eigen::VectorXd y(2);
  Eigen::VectorXd back(2);
  lam.to_dynamics(x, y);
  lam.to_original(y, back);
  CHECK((back - x).norm() < 1e-12);
  CHECK(is_diagonal(lam.dynamics.diffusion));
  tr.to_dynamics(x, y);
  CHECK((y - x).norm() == 0.0);
  CHECK(tr.weight(x) == Approx(std::pow(MoroCardinField().value(x), -2.0)));
  CHECK_THROWS_AS(make_system_nd(iso, kT, TransformKind::Lamperti), UnsupportedTransform);
}
