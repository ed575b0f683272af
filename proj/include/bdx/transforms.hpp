#pragma once

// Transforms of Brownian dynamics to unit diffusion: Lamperti (change of
// coordinates), time rescaling (change of clock), and their combination.

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bdx/model.hpp"

namespace bdx {

enum class TransformKind { None, Lamperti, TimeRescale, Combined };

std::string to_string(TransformKind kind);
TransformKind transform_from_string(const std::string& name);

/// Raised for transforms that exist mathematically but do not yield Brownian
/// dynamics (e.g. a combined diffusion with non-identity R).
class UnsupportedTransform : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Interval {
  double lo;
  double hi;
  bool contains(double x) const { return x >= lo && x <= hi; }
  bool operator==(const Interval& o) const = default;
};

/// Integrand of the coordinate map. The scalar 1D coefficient uses D^{-1/2};
/// the per-axis map of a matrix-convention diagonal diffusion uses 1/D.
enum class LampertiConvention { ScalarCoefficient, MatrixEntry };

struct MapOptions {
  double x0 = 0.0;
  Interval domain{-8.0, 8.0};
  std::size_t grid_points = 4096;
  bool operator==(const MapOptions& o) const = default;
};

/// y(x) = integral from x0 to x of the rate dy/dx. Uses a registered closed
/// form when the diffusion provides one (then valid on all of R); otherwise a
/// quadrature-backed monotone grid over the working domain, outside of which
/// evaluation throws std::domain_error.
class LampertiMap1D {
 public:
  LampertiMap1D(std::shared_ptr<const Diffusion1D> diffusion, LampertiConvention convention,
                const MapOptions& options);

  double forward(double x) const;
  double inverse(double y) const;
  /// Analytic dy/dx.
  double dy_dx(double x) const;
  /// dx/dy at y, i.e. 1 / dy_dx(inverse(y)) evaluated without differencing.
  double dx_dy_at(double x) const { return 1.0 / dy_dx(x); }

  double anchor() const { return x0_; }
  bool has_closed_form() const { return closed_.has_value(); }
  Interval domain() const { return domain_; }
  LampertiConvention convention() const { return convention_; }

 private:
  double rate(double x) const;
  double forward_from_node(std::size_t node, double x) const;

  std::shared_ptr<const Diffusion1D> diffusion_;
  LampertiConvention convention_;
  double x0_;
  Interval domain_;
  std::optional<MonotoneMap> closed_;
  double offset_ = 0.0;
  std::vector<double> nodes_;
  std::vector<double> values_;
};

LampertiMap1D lamperti_1d(std::shared_ptr<const Diffusion1D> diffusion, const MapOptions& options = {});

struct EffectivePotential1D {
  std::shared_ptr<const Potential1D> potential;
  TransformKind provenance;
};

struct EffectivePotentialND {
  std::shared_ptr<const PotentialND> potential;
  TransformKind provenance;
};

/// Vhat(y) = V(x(y)) - (kT/2) ln D(x(y)).
EffectivePotential1D lamperti_effective_potential_1d(std::shared_ptr<const Potential1D> potential,
                                                     std::shared_ptr<const Diffusion1D> diffusion,
                                                     const Temperature& kT,
                                                     std::shared_ptr<const LampertiMap1D> map);

/// dt/dtau = g(x) = 1 / D(x).
class ClockMap1D {
 public:
  explicit ClockMap1D(std::shared_ptr<const Diffusion1D> diffusion);
  double rate(double x) const;

 private:
  std::shared_ptr<const Diffusion1D> diffusion_;
};

/// dt/dtau = g(X) = 1 / d(X)^2 for isotropic magnitude d.
class ClockMapND {
 public:
  explicit ClockMapND(std::shared_ptr<const ScalarFieldND> magnitude);
  double rate(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  std::shared_ptr<const ScalarFieldND> magnitude_;
};

struct TimeRescaling1D {
  EffectivePotential1D potential;
  ClockMap1D clock;
};

/// Vhat(x) = V(x) - kT ln D(x), g = 1/D.
TimeRescaling1D time_rescale_1d(std::shared_ptr<const Potential1D> potential,
                                std::shared_ptr<const Diffusion1D> diffusion, const Temperature& kT);

struct LampertiND {
  EffectivePotentialND potential;
  std::vector<std::shared_ptr<const LampertiMap1D>> maps;
};

/// Per-axis maps phi_i = integral of 1/D_i; Vhat(Y) = V(phi^-1(Y)) - kT sum_k ln D_k.
LampertiND lamperti_nd_diagonal(std::shared_ptr<const PotentialND> potential, const DiffusionND& diffusion,
                                const Temperature& kT, const MapOptions& options = {});

struct TimeRescalingND {
  EffectivePotentialND potential;
  ClockMapND clock;
  Eigen::MatrixXd R;
  Eigen::MatrixXd R_inverse;
};

/// Y = R^-1 X, g = 1/d^2, Vhat(Y) = V(RY) - 2 kT ln d(RY). R defaults to I.
TimeRescalingND time_rescale_nd(std::shared_ptr<const PotentialND> potential, const IsotropicDiffusion& diffusion,
                                const Temperature& kT, std::optional<Eigen::MatrixXd> R = std::nullopt);

struct CombinedTransformND {
  EffectivePotentialND potential;
  ClockMapND clock;
  std::vector<std::shared_ptr<const LampertiMap1D>> maps;
};

/// Time rescaling by g = 1/d^2 followed by per-axis Lamperti maps. Only R = I
/// yields a gradient drift; anything else throws UnsupportedTransform.
CombinedTransformND combined_transform_nd(std::shared_ptr<const PotentialND> potential,
                                          const CombinedDiffusion& diffusion, const Temperature& kT,
                                          const MapOptions& options = {});

/// Cumulative trapezoidal clock: t_0 = 0, t_{n+1} = t_n + (h/2)(g_n + g_{n+1}).
std::vector<double> accumulate_clock(std::span<const double> rates, double h);
std::vector<double> tau_to_t(std::span<const double> path, double h, const ClockMap1D& clock);
std::vector<double> tau_to_t(std::span<const Eigen::VectorXd> path, double h, const ClockMapND& clock);

// ---------------------------------------------------------------------------
// Transformed systems ready for integration

enum class Clock { PhysicalTime, RescaledTime };

/// A 1D Brownian-dynamics problem as integrated (possibly in transformed
/// coordinates and clock) together with the maps back to the original.
struct System1D {
  std::shared_ptr<const Potential1D> potential;
  std::shared_ptr<const Diffusion1D> diffusion;
  Temperature temperature;
};

struct TransformedSystem1D {
  TransformKind kind = TransformKind::None;
  System1D dynamics;
  Problem1D original;
  std::shared_ptr<const LampertiMap1D> map;
  std::optional<ClockMap1D> clock;

  Clock clock_kind() const { return clock ? Clock::RescaledTime : Clock::PhysicalTime; }
  double to_dynamics(double x) const { return map ? map->forward(x) : x; }
  double to_original(double y) const { return map ? map->inverse(y) : y; }
  /// Estimator weight of an original-coordinate sample.
  double weight(double x) const { return clock ? clock->rate(x) : 1.0; }
};

TransformedSystem1D make_system_1d(const Problem1D& problem, const Temperature& kT, TransformKind kind,
                                   const MapOptions& options = {});

struct SystemND {
  std::shared_ptr<const PotentialND> potential;
  DiffusionND diffusion;
  Temperature temperature;
};

struct TransformedSystemND {
  TransformKind kind = TransformKind::None;
  SystemND dynamics;
  ProblemND original;
  std::vector<std::shared_ptr<const LampertiMap1D>> maps;
  Eigen::MatrixXd R;          // empty unless a linear map is in use
  Eigen::MatrixXd R_inverse;  // empty unless a linear map is in use
  std::optional<ClockMapND> clock;

  std::size_t dim() const { return dynamics.potential->dim(); }
  Clock clock_kind() const { return clock ? Clock::RescaledTime : Clock::PhysicalTime; }
  void to_dynamics(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> y) const;
  void to_original(const Eigen::Ref<const Eigen::VectorXd>& y, Eigen::Ref<Eigen::VectorXd> x) const;
  double weight(const Eigen::Ref<const Eigen::VectorXd>& x) const { return clock ? clock->rate(x) : 1.0; }
};

TransformedSystemND make_system_nd(const ProblemND& problem, const Temperature& kT, TransformKind kind,
                                   const MapOptions& options = {});

/// D <= this is treated as a breakdown of the logarithmic potential terms.
inline constexpr double kMinDiffusion = 1e-12;

}  // namespace bdx
