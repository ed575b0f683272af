#include "bdx/quadrature.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>

namespace bdx {

double integrate(const std::function<double(double)>& f, double a, double b, double abs_tol) {
  if (a == b) return 0.0;
  using boost::math::quadrature::gauss_kronrod;
  // Boost terminates on error <= tol * L1, so turn the absolute target into a
  // relative one using a single-panel estimate of the L1 norm. Relative
  // targets near machine precision are unreachable under roundoff and make
  // the bisection exhaust its depth, hence the floor.
  constexpr double kMinRelTol = 1e-12;
  constexpr unsigned kMaxDepth = 15;
  double l1 = 0.0;
  gauss_kronrod<double, 15>::integrate(f, a, b, 0, 0.0, nullptr, &l1);
  const double rel = std::max(abs_tol / std::max(l1, 1e-300), kMinRelTol);
  return gauss_kronrod<double, 15>::integrate(f, a, b, kMaxDepth, rel);
}

double integrate_2d(const std::function<double(double, double)>& f, double ax, double bx, double ay, double by,
                    double abs_tol) {
  const double inner_tol = abs_tol / std::max(1.0, std::abs(bx - ax));
  return integrate(
      [&](double x) { return integrate([&](double y) { return f(x, y); }, ay, by, inner_tol); }, ax, bx, abs_tol);
}

}  // namespace bdx
