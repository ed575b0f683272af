#pragma once

// Potentials, diffusion fields and the built-in problem instances used by the
// experiments. Everything here is immutable after construction and can be
// shared freely between concurrently running trajectories.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace bdx {

/// Thermal energy kT. Always strictly positive.
class Temperature {
 public:
  explicit Temperature(double kT) : kT_(kT) {
    if (!(kT > 0.0)) throw std::invalid_argument("temperature kT must be > 0");
  }
  double value() const { return kT_; }

 private:
  double kT_;
};

struct DiffusionSample {
  double value;
  double gradient;
};

/// Monotone coordinate map with a known closed-form inverse, anchored at 0.
struct MonotoneMap {
  std::function<double(double)> forward;
  std::function<double(double)> inverse;
};

class Potential1D {
 public:
  virtual ~Potential1D() = default;
  virtual double value(double x) const = 0;
  virtual double gradient(double x) const = 0;
};

/// Scalar diffusion coefficient D(x) > 0 of one-dimensional Brownian dynamics,
/// entering the noise as sqrt(2 kT D).
class Diffusion1D {
 public:
  virtual ~Diffusion1D() = default;
  virtual double value(double x) const = 0;
  virtual double gradient(double x) const = 0;
  virtual DiffusionSample sample(double x) const { return {value(x), gradient(x)}; }

  /// Points where D is not differentiable; gradient() returns the declared
  /// subgradient there.
  virtual std::vector<double> kinks() const { return {}; }

  virtual bool is_constant() const { return false; }

  /// Closed-form antiderivative of D^{-1/2} (the scalar Lamperti map), if known.
  virtual std::optional<MonotoneMap> inverse_sqrt_antiderivative() const { return std::nullopt; }
  /// Closed-form antiderivative of 1/D, if known.
  virtual std::optional<MonotoneMap> inverse_antiderivative() const { return std::nullopt; }
};

// ---------------------------------------------------------------------------
// Built-in 1D fields

/// V(x) = x^2/2 + sin(1 + 3x)
class SinQuadraticPotential final : public Potential1D {
 public:
  double value(double x) const override;
  double gradient(double x) const override;
};

/// V(x) = k x^2 / 2
class HarmonicPotential final : public Potential1D {
 public:
  explicit HarmonicPotential(double stiffness = 1.0) : k_(stiffness) {}
  double value(double x) const override { return 0.5 * k_ * x * x; }
  double gradient(double x) const override { return k_ * x; }

 private:
  double k_;
};

/// V(x) = -(1/4) hw^4 x^2 + (1/2) c^2 x^4. With hw = c = 2 the minima sit at
/// (+-1, -2) and the barrier top at (0, 0).
class DoubleWellPotential final : public Potential1D {
 public:
  explicit DoubleWellPotential(double hw = 2.0, double c = 2.0);
  double value(double x) const override;
  double gradient(double x) const override;

  double minimum_position() const { return x_min_; }
  double minimum_value() const { return v_min_; }
  /// Inflection point magnitude, x = x_min / sqrt(3).
  double inflection_position() const { return x_min_ / std::sqrt(3.0); }

 private:
  double hw4_;
  double c2_;
  double x_min_;
  double v_min_;
};

class ConstantDiffusion final : public Diffusion1D {
 public:
  explicit ConstantDiffusion(double d0 = 1.0);
  double value(double) const override { return d0_; }
  double gradient(double) const override { return 0.0; }
  bool is_constant() const override { return true; }
  std::optional<MonotoneMap> inverse_sqrt_antiderivative() const override;
  std::optional<MonotoneMap> inverse_antiderivative() const override;

 private:
  double d0_;
};

/// D(x) = 1 + |x|, with gradient 0 at the kink.
class AbsLinearDiffusion final : public Diffusion1D {
 public:
  double value(double x) const override { return 1.0 + std::abs(x); }
  double gradient(double x) const override { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
  std::vector<double> kinks() const override { return {0.0}; }
  std::optional<MonotoneMap> inverse_sqrt_antiderivative() const override;
  std::optional<MonotoneMap> inverse_antiderivative() const override;
};

/// D(x; alpha) = exp(alpha V(x) / kT) between the double-well minima and
/// exp(alpha V_min / kT) outside them.
class ScaledDiffusion final : public Diffusion1D {
 public:
  ScaledDiffusion(std::shared_ptr<const DoubleWellPotential> well, double alpha, double kT);
  double value(double x) const override;
  double gradient(double x) const override;
  DiffusionSample sample(double x) const override;
  std::vector<double> kinks() const override;
  bool is_constant() const override { return alpha_ == 0.0; }
  double alpha() const { return alpha_; }

 private:
  std::shared_ptr<const DoubleWellPotential> well_;
  double alpha_;
  double kT_;
  double outside_;
};

// ---------------------------------------------------------------------------
// Multivariate fields

class PotentialND {
 public:
  virtual ~PotentialND() = default;
  virtual std::size_t dim() const = 0;
  virtual double value(const Eigen::Ref<const Eigen::VectorXd>& x) const = 0;
  virtual void gradient(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const = 0;
};

/// Scalar field on R^n with gradient (the isotropic diffusion magnitude).
class ScalarFieldND {
 public:
  virtual ~ScalarFieldND() = default;
  virtual std::size_t dim() const = 0;
  virtual double value(const Eigen::Ref<const Eigen::VectorXd>& x) const = 0;
  virtual void gradient(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const = 0;
  virtual bool is_constant() const { return false; }
};

/// sum_i x_i^2 / 2
class HarmonicPotentialND final : public PotentialND {
 public:
  explicit HarmonicPotentialND(std::size_t dim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  double value(const Eigen::Ref<const Eigen::VectorXd>& x) const override { return 0.5 * x.squaredNorm(); }
  void gradient(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const override { out = x; }

 private:
  std::size_t dim_;
};

/// V(x, y) = sqrt(17/16 - 2x^2 + x^4) + sqrt(17/16 - 2y^2 + y^4)
class QuadrupleWellPotential final : public PotentialND {
 public:
  std::size_t dim() const override { return 2; }
  double value(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  void gradient(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const override;
};

class ConstantScalarField final : public ScalarFieldND {
 public:
  ConstantScalarField(std::size_t dim, double c);
  std::size_t dim() const override { return dim_; }
  double value(const Eigen::Ref<const Eigen::VectorXd>&) const override { return c_; }
  void gradient(const Eigen::Ref<const Eigen::VectorXd>&, Eigen::Ref<Eigen::VectorXd> out) const override { out.setZero(); }
  bool is_constant() const override { return true; }

 private:
  std::size_t dim_;
  double c_;
};

/// Moro-Cardin magnitude D(X) = (1 + A exp(-|X|^2 / (2 sigma^2)))^{-1}.
class MoroCardinField final : public ScalarFieldND {
 public:
  MoroCardinField(double A = 5.0, double sigma = 0.3);
  std::size_t dim() const override { return 2; }
  double value(const Eigen::Ref<const Eigen::VectorXd>& x) const override;
  void gradient(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const override;
  double amplitude() const { return A_; }

 private:
  double A_;
  double sigma_;
};

/// Matrix-convention diffusion D(X) = d(X) I. Noise enters as sqrt(2kT) D dW.
struct IsotropicDiffusion {
  std::shared_ptr<const ScalarFieldND> magnitude;
};

/// D(X) = diag(D_1(X_1), ..., D_n(X_n)), matrix convention.
struct DiagonalDiffusion {
  std::vector<std::shared_ptr<const Diffusion1D>> axes;
};

/// D(X) = d(X) R diag(D_i(X_i)).
struct CombinedDiffusion {
  IsotropicDiffusion iso;
  DiagonalDiffusion diag;
  Eigen::MatrixXd R;
};

using DiffusionND = std::variant<IsotropicDiffusion, DiagonalDiffusion, CombinedDiffusion>;

std::size_t dimension(const DiffusionND& diffusion);

/// Throws if fields are missing, dimensions disagree, or R is numerically
/// singular (reciprocal condition number below 1e-12).
void validate(const DiffusionND& diffusion);

bool is_identity(const Eigen::MatrixXd& R);

/// True when D(X) is diagonal for every X (isotropic, diagonal, or combined with R = I).
bool is_diagonal(const DiffusionND& diffusion);

/// Full diffusion matrix D(X) (not D D^T).
Eigen::MatrixXd diffusion_matrix(const DiffusionND& diffusion, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Row-wise divergence of D D^T. Analytic for diagonal forms; centered
/// differences with step 1e-5 for the combined form with R != I.
void tensor_divergence(const DiffusionND& diffusion, const Eigen::Ref<const Eigen::VectorXd>& x,
                       Eigen::Ref<Eigen::VectorXd> out);

/// Stratonovich correction c_i = kT sum_{j,k} D_jk d_j D_ik, so that the
/// Stratonovich drift is a - c.
void stratonovich_correction(const DiffusionND& diffusion, double kT, const Eigen::Ref<const Eigen::VectorXd>& x,
                             Eigen::Ref<Eigen::VectorXd> out);

inline constexpr double kDivergenceStep = 1e-5;

// ---------------------------------------------------------------------------
// Drift

/// Ito drift a(x) = -D V' + kT D'.
double drift_1d(const Potential1D& potential, const Diffusion1D& diffusion, const Temperature& kT, double x);

/// Ito drift -(D D^T) grad V + kT div(D D^T).
Eigen::VectorXd drift_nd(const PotentialND& potential, const DiffusionND& diffusion, const Temperature& kT,
                         const Eigen::Ref<const Eigen::VectorXd>& x);

/// The scalar 1D coefficient D enters the noise under a square root while the
/// matrix convention enters linearly, so the equivalent isotropic magnitude is
/// sqrt(D).
IsotropicDiffusion lift_1d_to_nd(std::shared_ptr<const Diffusion1D> diffusion);

// ---------------------------------------------------------------------------
// Built-in problems

struct Problem1D {
  std::shared_ptr<const Potential1D> potential;
  std::shared_ptr<const Diffusion1D> diffusion;
};

struct ProblemND {
  std::shared_ptr<const PotentialND> potential;
  DiffusionND diffusion;
};

using Problem = std::variant<Problem1D, ProblemND>;

/// Parameter names understood by builtin_problem().
using ProblemParams = std::map<std::string, double>;

/// Names: sin_quadratic_1d, abs_linear_diffusion_1d, double_well_1d,
/// scaled_diffusion_1d, quadruple_well_2d, moro_cardin_2d, ou_1d,
/// const_diffusion.
Problem builtin_problem(const std::string& name, const ProblemParams& params);

std::vector<std::string> builtin_problem_names();

/// Parameters each problem accepts (kT is accepted by all of them).
std::vector<std::string> builtin_problem_param_names(const std::string& name);

bool is_one_dimensional(const std::string& name);

}  // namespace bdx
