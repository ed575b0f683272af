#pragma once

#include <functional>

namespace bdx {

/// Adaptive Gauss-Kronrod (15-point) integral of f over [a, b] to the given
/// absolute tolerance.
double integrate(const std::function<double(double)>& f, double a, double b, double abs_tol = 1e-12);

/// Nested adaptive integral of f(x, y) over [ax, bx] x [ay, by].
double integrate_2d(const std::function<double(double, double)>& f, double ax, double bx, double ay, double by,
                    double abs_tol = 1e-10);

}  // namespace bdx
