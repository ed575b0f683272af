#include "bdx/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace bdx {

double SinQuadraticPotential::value(double x) const { return 0.5 * x * x + std::sin(1.0 + 3.0 * x); }

double SinQuadraticPotential::gradient(double x) const { return x + 3.0 * std::cos(1.0 + 3.0 * x); }

DoubleWellPotential::DoubleWellPotential(double hw, double c) : hw4_(std::pow(hw, 4)), c2_(c * c) {
  if (!(hw > 0.0) || !(c > 0.0)) throw std::invalid_argument("double well parameters must be positive");
  // V' = -hw^4 x / 2 + 2 c^2 x^3 = 0
  x_min_ = std::sqrt(hw4_ / (4.0 * c2_));
  v_min_ = value(x_min_);
}

double DoubleWellPotential::value(double x) const {
  const double x2 = x * x;
  return -0.25 * hw4_ * x2 + 0.5 * c2_ * x2 * x2;
}

double DoubleWellPotential::gradient(double x) const { return -0.5 * hw4_ * x + 2.0 * c2_ * x * x * x; }

ConstantDiffusion::ConstantDiffusion(double d0) : d0_(d0) {
  if (!(d0 > 0.0)) throw std::invalid_argument("constant diffusion must be > 0");
}

std::optional<MonotoneMap> ConstantDiffusion::inverse_sqrt_antiderivative() const {
  const double s = std::sqrt(d0_);
  if (d0_ == 1.0) return MonotoneMap{[](double x) { return x; }, [](double y) { return y; }};
  return MonotoneMap{[s](double x) { return x / s; }, [s](double y) { return y * s; }};
}

std::optional<MonotoneMap> ConstantDiffusion::inverse_antiderivative() const {
  const double d = d0_;
  if (d == 1.0) return MonotoneMap{[](double x) { return x; }, [](double y) { return y; }};
  return MonotoneMap{[d](double x) { return x / d; }, [d](double y) { return y * d; }};
}

std::optional<MonotoneMap> AbsLinearDiffusion::inverse_sqrt_antiderivative() const {
  // y = 2 sign(x) (sqrt(1+|x|) - 1),  x = y (|y| + 4) / 4
  return MonotoneMap{[](double x) { return std::copysign(2.0 * (std::sqrt(1.0 + std::abs(x)) - 1.0), x); },
                     [](double y) { return 0.25 * y * (std::abs(y) + 4.0); }};
}

std::optional<MonotoneMap> AbsLinearDiffusion::inverse_antiderivative() const {
  return MonotoneMap{[](double x) { return std::copysign(std::log1p(std::abs(x)), x); },
                     [](double y) { return std::copysign(std::expm1(std::abs(y)), y); }};
}

ScaledDiffusion::ScaledDiffusion(std::shared_ptr<const DoubleWellPotential> well, double alpha, double kT)
    : well_(std::move(well)), alpha_(alpha), kT_(kT) {
  if (!well_) throw std::invalid_argument("scaled diffusion needs a double-well potential");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (!(kT > 0.0)) throw std::invalid_argument("temperature kT must be > 0");
  outside_ = std::exp(alpha_ * well_->minimum_value() / kT_);
}

double ScaledDiffusion::value(double x) const {
  const double xm = well_->minimum_position();
  if (x > -xm && x < xm) return std::exp(alpha_ * well_->value(x) / kT_);
  return outside_;
}

double ScaledDiffusion::gradient(double x) const { return sample(x).gradient; }

DiffusionSample ScaledDiffusion::sample(double x) const {
  const double xm = well_->minimum_position();
  if (x > -xm && x < xm) {
    const double d = std::exp(alpha_ * well_->value(x) / kT_);
    return {d, d * alpha_ * well_->gradient(x) / kT_};
  }
  return {outside_, 0.0};
}

std::vector<double> ScaledDiffusion::kinks() const {
  if (alpha_ == 0.0) return {};
  return {-well_->minimum_position(), well_->minimum_position()};
}

// ---------------------------------------------------------------------------

double QuadrupleWellPotential::value(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  double v = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double q = x[i] * x[i];
    v += std::sqrt(17.0 / 16.0 - 2.0 * q + q * q);
  }
  return v;
}

void QuadrupleWellPotential::gradient(const Eigen::Ref<const Eigen::VectorXd>& x,
                                      Eigen::Ref<Eigen::VectorXd> out) const {
  for (int i = 0; i < 2; ++i) {
    const double q = x[i] * x[i];
    out[i] = (2.0 * x[i] * q - 2.0 * x[i]) / std::sqrt(17.0 / 16.0 - 2.0 * q + q * q);
  }
}

ConstantScalarField::ConstantScalarField(std::size_t dim, double c) : dim_(dim), c_(c) {
  if (!(c > 0.0)) throw std::invalid_argument("constant diffusion must be > 0");
}

MoroCardinField::MoroCardinField(double A, double sigma) : A_(A), sigma_(sigma) {
  if (!(A > -1.0)) throw std::invalid_argument("Moro-Cardin amplitude A must be > -1");
  if (!(sigma > 0.0)) throw std::invalid_argument("Moro-Cardin width sigma must be > 0");
}

double MoroCardinField::value(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return 1.0 / (1.0 + A_ * std::exp(-x.squaredNorm() / (2.0 * sigma_ * sigma_)));
}

void MoroCardinField::gradient(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const {
  const double bump = A_ * std::exp(-x.squaredNorm() / (2.0 * sigma_ * sigma_));
  const double d = 1.0 / (1.0 + bump);
  out = (d * d * bump / (sigma_ * sigma_)) * x;
}

// ---------------------------------------------------------------------------

std::size_t dimension(const DiffusionND& diffusion) {
  return std::visit(
      [](const auto& d) -> std::size_t {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, IsotropicDiffusion>) {
          return d.magnitude ? d.magnitude->dim() : 0;
        } else if constexpr (std::is_same_v<T, DiagonalDiffusion>) {
          return d.axes.size();
        } else {
          return d.diag.axes.size();
        }
      },
      diffusion);
}

bool is_identity(const Eigen::MatrixXd& R) {
  return R.rows() == R.cols() && R == Eigen::MatrixXd::Identity(R.rows(), R.cols());
}

namespace {

void validate_diagonal(const DiagonalDiffusion& d) {
  if (d.axes.empty()) throw std::invalid_argument("diagonal diffusion needs at least one axis");
  for (const auto& a : d.axes)
    if (!a) throw std::invalid_argument("diagonal diffusion has a null axis field");
}

}  // namespace

void validate(const DiffusionND& diffusion) {
  std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, IsotropicDiffusion>) {
          if (!d.magnitude) throw std::invalid_argument("isotropic diffusion has no magnitude field");
        } else if constexpr (std::is_same_v<T, DiagonalDiffusion>) {
          validate_diagonal(d);
        } else {
          if (!d.iso.magnitude) throw std::invalid_argument("combined diffusion has no isotropic field");
          validate_diagonal(d.diag);
          const auto n = static_cast<Eigen::Index>(d.diag.axes.size());
          if (d.iso.magnitude->dim() != d.diag.axes.size())
            throw std::invalid_argument("combined diffusion: isotropic and diagonal dimensions differ");
          if (d.R.rows() != n || d.R.cols() != n)
            throw std::invalid_argument("combined diffusion: R must be n x n");
          Eigen::JacobiSVD<Eigen::MatrixXd> svd(d.R);
          const auto& s = svd.singularValues();
          if (!(s.maxCoeff() > 0.0) || s.minCoeff() / s.maxCoeff() < 1e-12)
            throw std::invalid_argument("combined diffusion: R is numerically singular");
        }
      },
      diffusion);
}

bool is_diagonal(const DiffusionND& diffusion) {
  if (const auto* c = std::get_if<CombinedDiffusion>(&diffusion)) return is_identity(c->R);
  return true;
}

Eigen::MatrixXd diffusion_matrix(const DiffusionND& diffusion, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const auto n = static_cast<Eigen::Index>(dimension(diffusion));
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, IsotropicDiffusion>) {
          m.diagonal().setConstant(d.magnitude->value(x));
        } else if constexpr (std::is_same_v<T, DiagonalDiffusion>) {
          for (Eigen::Index i = 0; i < n; ++i) m(i, i) = d.axes[i]->value(x[i]);
        } else {
          const double s = d.iso.magnitude->value(x);
          for (Eigen::Index j = 0; j < n; ++j) m.col(j) = s * d.R.col(j) * d.diag.axes[j]->value(x[j]);
        }
      },
      diffusion);
  return m;
}

namespace {

void finite_difference_divergence(const DiffusionND& diffusion, const Eigen::Ref<const Eigen::VectorXd>& x,
                                  Eigen::Ref<Eigen::VectorXd> out) {
  const auto n = x.size();
  out.setZero();
  Eigen::VectorXd xp = x;
  Eigen::VectorXd xm = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    xp[j] = x[j] + kDivergenceStep;
    xm[j] = x[j] - kDivergenceStep;
    const Eigen::MatrixXd mp = diffusion_matrix(diffusion, xp);
    const Eigen::MatrixXd mm = diffusion_matrix(diffusion, xm);
    const Eigen::MatrixXd tp = mp * mp.transpose();
    const Eigen::MatrixXd tm = mm * mm.transpose();
    out += (tp.col(j) - tm.col(j)) / (2.0 * kDivergenceStep);
    xp[j] = x[j];
    xm[j] = x[j];
  }
}

}  // namespace

void tensor_divergence(const DiffusionND& diffusion, const Eigen::Ref<const Eigen::VectorXd>& x,
                       Eigen::Ref<Eigen::VectorXd> out) {
  const auto n = x.size();
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, IsotropicDiffusion>) {
          // div(d^2 I)_i = 2 d d_i d
          if (d.magnitude->is_constant()) {
            out.setZero();
            return;
          }
          d.magnitude->gradient(x, out);
          out *= 2.0 * d.magnitude->value(x);
        } else if constexpr (std::is_same_v<T, DiagonalDiffusion>) {
          for (Eigen::Index i = 0; i < n; ++i) {
            const auto s = d.axes[i]->sample(x[i]);
            out[i] = 2.0 * s.value * s.gradient;
          }
        } else {
          if (!is_identity(d.R)) {
            finite_difference_divergence(diffusion, x, out);
            return;
          }
          // d_i (s^2 D_i^2) = 2 s d_i s D_i^2 + 2 s^2 D_i D_i'
          const double s = d.iso.magnitude->value(x);
          d.iso.magnitude->gradient(x, out);
          for (Eigen::Index i = 0; i < n; ++i) {
            const auto a = d.diag.axes[i]->sample(x[i]);
            out[i] = 2.0 * s * out[i] * a.value * a.value + 2.0 * s * s * a.value * a.gradient;
          }
        }
      },
      diffusion);
}

void stratonovich_correction(const DiffusionND& diffusion, double kT, const Eigen::Ref<const Eigen::VectorXd>& x,
                             Eigen::Ref<Eigen::VectorXd> out) {
  if (is_diagonal(diffusion)) {
    // D diagonal: kT D_ii d_i D_ii = (kT / 2) d_i (D_ii^2)
    tensor_divergence(diffusion, x, out);
    out *= 0.5 * kT;
    return;
  }
  const auto n = x.size();
  const Eigen::MatrixXd m = diffusion_matrix(diffusion, x);
  out.setZero();
  Eigen::VectorXd xp = x;
  Eigen::VectorXd xm = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    xp[j] = x[j] + kDivergenceStep;
    xm[j] = x[j] - kDivergenceStep;
    const Eigen::MatrixXd dm = (diffusion_matrix(diffusion, xp) - diffusion_matrix(diffusion, xm)) /
                               (2.0 * kDivergenceStep);
    // sum_k D_jk d_j D_ik
    out += dm * m.row(j).transpose();
    xp[j] = x[j];
    xm[j] = x[j];
  }
  out *= kT;
}

double drift_1d(const Potential1D& potential, const Diffusion1D& diffusion, const Temperature& kT, double x) {
  const auto d = diffusion.sample(x);
  return -d.value * potential.gradient(x) + kT.value() * d.gradient;
}

Eigen::VectorXd drift_nd(const PotentialND& potential, const DiffusionND& diffusion, const Temperature& kT,
                         const Eigen::Ref<const Eigen::VectorXd>& x) {
  const auto n = static_cast<Eigen::Index>(potential.dim());
  if (x.size() != n || dimension(diffusion) != potential.dim())
    throw std::invalid_argument("drift_nd: dimension mismatch");
  Eigen::VectorXd grad(n);
  potential.gradient(x, grad);
  Eigen::VectorXd div(n);
  tensor_divergence(diffusion, x, div);
  const Eigen::MatrixXd m = diffusion_matrix(diffusion, x);
  return -(m * m.transpose()) * grad + kT.value() * div;
}

namespace {

class SqrtOfScalarDiffusion final : public ScalarFieldND {
 public:
  explicit SqrtOfScalarDiffusion(std::shared_ptr<const Diffusion1D> d) : d_(std::move(d)) {}
  std::size_t dim() const override { return 1; }
  double value(const Eigen::Ref<const Eigen::VectorXd>& x) const override { return std::sqrt(d_->value(x[0])); }
  void gradient(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const override {
    const auto s = d_->sample(x[0]);
    out[0] = s.gradient / (2.0 * std::sqrt(s.value));
  }
  bool is_constant() const override { return d_->is_constant(); }

 private:
  std::shared_ptr<const Diffusion1D> d_;
};

}  // namespace

IsotropicDiffusion lift_1d_to_nd(std::shared_ptr<const Diffusion1D> diffusion) {
  if (!diffusion) throw std::invalid_argument("lift_1d_to_nd: null diffusion");
  return IsotropicDiffusion{std::make_shared<SqrtOfScalarDiffusion>(std::move(diffusion))};
}

// ---------------------------------------------------------------------------

namespace {

const std::map<std::string, std::vector<std::string>>& problem_params() {
  static const std::map<std::string, std::vector<std::string>> table = {
      {"sin_quadratic_1d", {"kT"}},
      {"abs_linear_diffusion_1d", {"kT"}},
      {"double_well_1d", {"kT"}},
      {"scaled_diffusion_1d", {"alpha", "kT"}},
      {"quadruple_well_2d", {"kT"}},
      {"moro_cardin_2d", {"A", "sigma", "kT"}},
      {"ou_1d", {"kT"}},
      {"const_diffusion", {"D0", "kT"}},
  };
  return table;
}

double param_or(const ProblemParams& p, const std::string& key, double fallback) {
  const auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

}  // namespace

std::vector<std::string> builtin_problem_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : problem_params()) names.push_back(k);
  return names;
}

std::vector<std::string> builtin_problem_param_names(const std::string& name) {
  const auto it = problem_params().find(name);
  if (it == problem_params().end()) throw std::invalid_argument("unknown problem '" + name + "'");
  return it->second;
}

bool is_one_dimensional(const std::string& name) {
  return name != "quadruple_well_2d" && name != "moro_cardin_2d";
}

Problem builtin_problem(const std::string& name, const ProblemParams& params) {
  const auto allowed = builtin_problem_param_names(name);
  for (const auto& [key, value] : params) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw std::invalid_argument("problem '" + name + "' does not take parameter '" + key + "'");
    if (!std::isfinite(value)) throw std::invalid_argument("parameter '" + key + "' is not finite");
  }
  const double kT = param_or(params, "kT", 1.0);
  if (!(kT > 0.0)) throw std::invalid_argument("kT must be > 0");

  if (name == "sin_quadratic_1d")
    return Problem1D{std::make_shared<SinQuadraticPotential>(), std::make_shared<AbsLinearDiffusion>()};
  if (name == "abs_linear_diffusion_1d")
    return Problem1D{std::make_shared<HarmonicPotential>(), std::make_shared<AbsLinearDiffusion>()};
  if (name == "double_well_1d")
    return Problem1D{std::make_shared<DoubleWellPotential>(), std::make_shared<ConstantDiffusion>(1.0)};
  if (name == "scaled_diffusion_1d") {
    const auto it = params.find("alpha");
    if (it == params.end()) throw std::invalid_argument("problem 'scaled_diffusion_1d' requires parameter 'alpha'");
    if (!(it->second >= 0.0 && it->second <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    auto well = std::make_shared<DoubleWellPotential>();
    return Problem1D{well, std::make_shared<ScaledDiffusion>(well, it->second, kT)};
  }
  if (name == "ou_1d")
    return Problem1D{std::make_shared<HarmonicPotential>(), std::make_shared<ConstantDiffusion>(1.0)};
  if (name == "const_diffusion") {
    const double d0 = param_or(params, "D0", 1.0);
    if (!(d0 > 0.0)) throw std::invalid_argument("D0 must be > 0");
    return Problem1D{std::make_shared<SinQuadraticPotential>(), std::make_shared<ConstantDiffusion>(d0)};
  }
  if (name == "quadruple_well_2d")
    return ProblemND{std::make_shared<QuadrupleWellPotential>(),
                     IsotropicDiffusion{std::make_shared<ConstantScalarField>(2, 1.0)}};
  if (name == "moro_cardin_2d") {
    const double A = param_or(params, "A", 5.0);
    const double sigma = param_or(params, "sigma", 0.3);
    if (!(A > -1.0)) throw std::invalid_argument("A must be > -1");
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
    return ProblemND{std::make_shared<QuadrupleWellPotential>(),
                     IsotropicDiffusion{std::make_shared<MoroCardinField>(A, sigma)}};
  }
  throw std::invalid_argument("unknown problem '" + name + "'");
}

}  // namespace bdx
