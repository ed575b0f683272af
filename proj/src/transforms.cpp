#include "bdx/transforms.hpp"

#include <algorithm>
#include <cmath>

#include "bdx/quadrature.hpp"

namespace bdx {

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::None: return "none";
    case TransformKind::Lamperti: return "lamperti";
    case TransformKind::TimeRescale: return "time_rescale";
    case TransformKind::Combined: return "combined";
  }
  return "none";
}

TransformKind transform_from_string(const std::string& name) {
  if (name == "none") return TransformKind::None;
  if (name == "lamperti") return TransformKind::Lamperti;
  if (name == "time_rescale") return TransformKind::TimeRescale;
  if (name == "combined") return TransformKind::Combined;
  throw std::invalid_argument("unknown transform '" + name + "' (expected none|lamperti|time_rescale|combined)");
}

namespace {

double checked_diffusion(double d) {
  if (!(d >= kMinDiffusion)) throw std::domain_error("diffusion coefficient fell below 1e-12");
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------

LampertiMap1D::LampertiMap1D(std::shared_ptr<const Diffusion1D> diffusion, LampertiConvention convention,
                             const MapOptions& options)
    : diffusion_(std::move(diffusion)), convention_(convention), x0_(options.x0), domain_(options.domain) {
  if (!diffusion_) throw std::invalid_argument("lamperti map: null diffusion");
  if (!(domain_.lo < domain_.hi)) throw std::invalid_argument("lamperti map: empty domain");
  if (!domain_.contains(x0_)) throw std::invalid_argument("lamperti map: anchor x0 outside the domain");

  closed_ = convention_ == LampertiConvention::ScalarCoefficient ? diffusion_->inverse_sqrt_antiderivative()
                                                                 : diffusion_->inverse_antiderivative();
  if (closed_) {
    offset_ = closed_->forward(x0_);
    return;
  }

  if (options.grid_points < 2) throw std::invalid_argument("lamperti map: need at least 2 grid points");
  const std::size_t n = options.grid_points;
  nodes_.reserve(n + 4);
  for (std::size_t i = 0; i < n; ++i)
    nodes_.push_back(domain_.lo + (domain_.hi - domain_.lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  nodes_.back() = domain_.hi;
  for (double k : diffusion_->kinks())
    if (k > domain_.lo && k < domain_.hi) nodes_.push_back(k);
  std::sort(nodes_.begin(), nodes_.end());
  nodes_.erase(std::unique(nodes_.begin(), nodes_.end()), nodes_.end());

  for (double x : nodes_) {
    if (!(diffusion_->value(x) > 0.0))
      throw std::invalid_argument("lamperti map: D <= 0 at x = " + std::to_string(x));
  }

  const double cell_tol = 1e-12 / static_cast<double>(nodes_.size());
  values_.assign(nodes_.size(), 0.0);
  for (std::size_t i = 1; i < nodes_.size(); ++i)
    values_[i] = values_[i - 1] + integrate([this](double z) { return rate(z); }, nodes_[i - 1], nodes_[i], cell_tol);

  // Shift so that forward(x0) = 0.
  const auto it = std::upper_bound(nodes_.begin(), nodes_.end(), x0_);
  const std::size_t node = it == nodes_.begin() ? 0 : static_cast<std::size_t>(it - nodes_.begin()) - 1;
  const double shift = forward_from_node(node, x0_);
  for (double& v : values_) v -= shift;
}

double LampertiMap1D::rate(double x) const {
  const double d = diffusion_->value(x);
  if (!(d > 0.0)) throw std::domain_error("lamperti map: D <= 0 encountered");
  return convention_ == LampertiConvention::ScalarCoefficient ? 1.0 / std::sqrt(d) : 1.0 / d;
}

double LampertiMap1D::dy_dx(double x) const { return rate(x); }

double LampertiMap1D::forward_from_node(std::size_t node, double x) const {
  return values_[node] + integrate([this](double z) { return rate(z); }, nodes_[node], x, 1e-14);
}

double LampertiMap1D::forward(double x) const {
  if (closed_) return closed_->forward(x) - offset_;
  if (!domain_.contains(x)) throw std::domain_error("lamperti map: x = " + std::to_string(x) + " outside domain");
  const auto it = std::upper_bound(nodes_.begin(), nodes_.end(), x);
  const std::size_t node = it == nodes_.begin() ? 0 : static_cast<std::size_t>(it - nodes_.begin()) - 1;
  if (nodes_[node] == x) return values_[node];
  return forward_from_node(node, x);
}

double LampertiMap1D::inverse(double y) const {
  if (closed_) return closed_->inverse(y + offset_);
  if (!(y >= values_.front() && y <= values_.back()))
    throw std::domain_error("lamperti map: y = " + std::to_string(y) + " outside the image of the domain");
  const auto it = std::upper_bound(values_.begin(), values_.end(), y);
  std::size_t node = it == values_.begin() ? 0 : static_cast<std::size_t>(it - values_.begin()) - 1;
  if (node + 1 >= nodes_.size()) return nodes_.back();
  if (values_[node] == y) return nodes_[node];

  double lo = nodes_[node];
  double hi = nodes_[node + 1];
  double x = lo + (hi - lo) * (y - values_[node]) / (values_[node + 1] - values_[node]);
  for (int iter = 0; iter < 60; ++iter) {
    const double f = forward_from_node(node, x) - y;
    if (f > 0.0) hi = x; else lo = x;
    double next = x - f / rate(x);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - x);
    x = next;
    if (step < 1e-13 * std::max(1.0, std::abs(x)) || hi - lo < 1e-15) break;
  }
  return x;
}

LampertiMap1D lamperti_1d(std::shared_ptr<const Diffusion1D> diffusion, const MapOptions& options) {
  return LampertiMap1D(std::move(diffusion), LampertiConvention::ScalarCoefficient, options);
}

// ---------------------------------------------------------------------------

namespace {

class LampertiPotential1D final : public Potential1D {
 public:
  LampertiPotential1D(std::shared_ptr<const Potential1D> v, std::shared_ptr<const Diffusion1D> d, double kT,
                      std::shared_ptr<const LampertiMap1D> map)
      : v_(std::move(v)), d_(std::move(d)), kT_(kT), map_(std::move(map)) {}

  double value(double y) const override {
    const double x = map_->inverse(y);
    return v_->value(x) - 0.5 * kT_ * std::log(checked_diffusion(d_->value(x)));
  }

  double gradient(double y) const override {
    const double x = map_->inverse(y);
    const auto d = d_->sample(x);
    checked_diffusion(d.value);
    return (v_->gradient(x) - 0.5 * kT_ * d.gradient / d.value) * std::sqrt(d.value);
  }

 private:
  std::shared_ptr<const Potential1D> v_;
  std::shared_ptr<const Diffusion1D> d_;
  double kT_;
  std::shared_ptr<const LampertiMap1D> map_;
};

class TimeRescaledPotential1D final : public Potential1D {
 public:
  TimeRescaledPotential1D(std::shared_ptr<const Potential1D> v, std::shared_ptr<const Diffusion1D> d, double kT)
      : v_(std::move(v)), d_(std::move(d)), kT_(kT) {}

  double value(double x) const override {
    return v_->value(x) - kT_ * std::log(checked_diffusion(d_->value(x)));
  }

  double gradient(double x) const override {
    const auto d = d_->sample(x);
    checked_diffusion(d.value);
    return v_->gradient(x) - kT_ * d.gradient / d.value;
  }

 private:
  std::shared_ptr<const Potential1D> v_;
  std::shared_ptr<const Diffusion1D> d_;
  double kT_;
};

/// Vhat(Y) = W(X) with X = R phi^-1(Y) and
/// W = V - 2 kT ln d (isotropic part) - kT sum_k ln D_k (per-axis maps).
class TransformedPotentialND final : public PotentialND {
 public:
  TransformedPotentialND(std::shared_ptr<const PotentialND> v, double kT, std::shared_ptr<const ScalarFieldND> iso,
                         std::vector<std::shared_ptr<const Diffusion1D>> axes,
                         std::vector<std::shared_ptr<const LampertiMap1D>> maps, Eigen::MatrixXd R)
      : v_(std::move(v)), kT_(kT), iso_(std::move(iso)), axes_(std::move(axes)), maps_(std::move(maps)),
        R_(std::move(R)) {}

  std::size_t dim() const override { return v_->dim(); }

  double value(const Eigen::Ref<const Eigen::VectorXd>& y) const override {
    const Eigen::VectorXd x = to_original(y);
    double w = v_->value(x);
    if (iso_) w -= 2.0 * kT_ * std::log(checked_diffusion(iso_->value(x)));
    for (std::size_t k = 0; k < axes_.size(); ++k)
      w -= kT_ * std::log(checked_diffusion(axes_[k]->value(x[static_cast<Eigen::Index>(k)])));
    return w;
  }

  void gradient(const Eigen::Ref<const Eigen::VectorXd>& y, Eigen::Ref<Eigen::VectorXd> out) const override {
    const Eigen::VectorXd x = to_original(y);
    const auto n = x.size();
    Eigen::VectorXd g(n);
    v_->gradient(x, g);
    if (iso_) {
      Eigen::VectorXd dg(n);
      iso_->gradient(x, dg);
      g -= (2.0 * kT_ / checked_diffusion(iso_->value(x))) * dg;
    }
    if (!axes_.empty()) {
      for (Eigen::Index k = 0; k < n; ++k) {
        const auto s = axes_[static_cast<std::size_t>(k)]->sample(x[k]);
        checked_diffusion(s.value);
        // dx_k/dy_k = D_k(x_k) for the 1/D_k map
        g[k] = (g[k] - kT_ * s.gradient / s.value) * s.value;
      }
    }
    if (R_.size() > 0) out = R_.transpose() * g; else out = g;
  }

 private:
  Eigen::VectorXd to_original(const Eigen::Ref<const Eigen::VectorXd>& y) const {
    Eigen::VectorXd x = y;
    if (!maps_.empty())
      for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = maps_[static_cast<std::size_t>(k)]->inverse(y[k]);
    if (R_.size() > 0) x = R_ * x;
    return x;
  }

  std::shared_ptr<const PotentialND> v_;
  double kT_;
  std::shared_ptr<const ScalarFieldND> iso_;
  std::vector<std::shared_ptr<const Diffusion1D>> axes_;
  std::vector<std::shared_ptr<const LampertiMap1D>> maps_;
  Eigen::MatrixXd R_;
};

std::vector<std::shared_ptr<const LampertiMap1D>> axis_maps(const DiagonalDiffusion& diag, const MapOptions& options) {
  std::vector<std::shared_ptr<const LampertiMap1D>> maps;
  for (const auto& axis : diag.axes)
    maps.push_back(std::make_shared<const LampertiMap1D>(axis, LampertiConvention::MatrixEntry, options));
  return maps;
}

}  // namespace

EffectivePotential1D lamperti_effective_potential_1d(std::shared_ptr<const Potential1D> potential,
                                                     std::shared_ptr<const Diffusion1D> diffusion,
                                                     const Temperature& kT,
                                                     std::shared_ptr<const LampertiMap1D> map) {
  if (!potential || !diffusion || !map) throw std::invalid_argument("lamperti potential: null field or map");
  if (map->convention() != LampertiConvention::ScalarCoefficient)
    throw std::invalid_argument("lamperti potential: map must use the scalar-coefficient convention");
  return {std::make_shared<LampertiPotential1D>(std::move(potential), std::move(diffusion), kT.value(), std::move(map)),
          TransformKind::Lamperti};
}

ClockMap1D::ClockMap1D(std::shared_ptr<const Diffusion1D> diffusion) : diffusion_(std::move(diffusion)) {
  if (!diffusion_) throw std::invalid_argument("clock map: null diffusion");
}

double ClockMap1D::rate(double x) const { return 1.0 / checked_diffusion(diffusion_->value(x)); }

ClockMapND::ClockMapND(std::shared_ptr<const ScalarFieldND> magnitude) : magnitude_(std::move(magnitude)) {
  if (!magnitude_) throw std::invalid_argument("clock map: null diffusion");
}

double ClockMapND::rate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const double d = checked_diffusion(magnitude_->value(x));
  return 1.0 / (d * d);
}

TimeRescaling1D time_rescale_1d(std::shared_ptr<const Potential1D> potential,
                                std::shared_ptr<const Diffusion1D> diffusion, const Temperature& kT) {
  if (!potential || !diffusion) throw std::invalid_argument("time rescaling: null field");
  ClockMap1D clock(diffusion);
  return {{std::make_shared<TimeRescaledPotential1D>(std::move(potential), std::move(diffusion), kT.value()),
           TransformKind::TimeRescale},
          std::move(clock)};
}

LampertiND lamperti_nd_diagonal(std::shared_ptr<const PotentialND> potential, const DiffusionND& diffusion,
                                const Temperature& kT, const MapOptions& options) {
  const auto* diag = std::get_if<DiagonalDiffusion>(&diffusion);
  if (!diag) throw UnsupportedTransform("lamperti_nd_diagonal requires a diagonal-separable diffusion");
  validate(diffusion);
  if (!potential || potential->dim() != diag->axes.size())
    throw std::invalid_argument("lamperti_nd_diagonal: dimension mismatch");
  auto maps = axis_maps(*diag, options);
  auto v = std::make_shared<TransformedPotentialND>(std::move(potential), kT.value(), nullptr, diag->axes, maps,
                                                    Eigen::MatrixXd());
  return {{std::move(v), TransformKind::Lamperti}, std::move(maps)};
}

TimeRescalingND time_rescale_nd(std::shared_ptr<const PotentialND> potential, const IsotropicDiffusion& diffusion,
                                const Temperature& kT, std::optional<Eigen::MatrixXd> R) {
  validate(DiffusionND{diffusion});
  if (!potential || potential->dim() != diffusion.magnitude->dim())
    throw std::invalid_argument("time_rescale_nd: dimension mismatch");
  const auto n = static_cast<Eigen::Index>(potential->dim());
  Eigen::MatrixXd r = R.value_or(Eigen::MatrixXd::Identity(n, n));
  if (r.rows() != n || r.cols() != n) throw std::invalid_argument("time_rescale_nd: R must be n x n");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
  const auto& s = svd.singularValues();
  if (!(s.maxCoeff() > 0.0) || s.minCoeff() / s.maxCoeff() < 1e-12)
    throw std::invalid_argument("time_rescale_nd: R is numerically singular");
  Eigen::MatrixXd r_used = is_identity(r) ? Eigen::MatrixXd() : r;
  auto v = std::make_shared<TransformedPotentialND>(std::move(potential), kT.value(), diffusion.magnitude,
                                                    std::vector<std::shared_ptr<const Diffusion1D>>{},
                                                    std::vector<std::shared_ptr<const LampertiMap1D>>{}, r_used);
  Eigen::MatrixXd r_inv = r.inverse();
  return {{std::move(v), TransformKind::TimeRescale}, ClockMapND(diffusion.magnitude), std::move(r), std::move(r_inv)};
}

CombinedTransformND combined_transform_nd(std::shared_ptr<const PotentialND> potential,
                                          const CombinedDiffusion& diffusion, const Temperature& kT,
                                          const MapOptions& options) {
  validate(DiffusionND{diffusion});
  if (!is_identity(diffusion.R))
    throw UnsupportedTransform(
        "combined transform requires R = I: for any other R the transformed drift is not the gradient of a "
        "potential, so the result is not Brownian dynamics");
  if (!potential || potential->dim() != diffusion.diag.axes.size())
    throw std::invalid_argument("combined_transform_nd: dimension mismatch");
  auto maps = axis_maps(diffusion.diag, options);
  auto v = std::make_shared<TransformedPotentialND>(std::move(potential), kT.value(), diffusion.iso.magnitude,
                                                    diffusion.diag.axes, maps, Eigen::MatrixXd());
  return {{std::move(v), TransformKind::Combined}, ClockMapND(diffusion.iso.magnitude), std::move(maps)};
}

std::vector<double> accumulate_clock(std::span<const double> rates, double h) {
  if (rates.empty()) throw std::invalid_argument("tau_to_t: empty path");
  std::vector<double> t(rates.size());
  t[0] = 0.0;
  for (std::size_t n = 1; n < rates.size(); ++n) t[n] = t[n - 1] + 0.5 * h * (rates[n - 1] + rates[n]);
  return t;
}

std::vector<double> tau_to_t(std::span<const double> path, double h, const ClockMap1D& clock) {
  std::vector<double> rates(path.size());
  std::transform(path.begin(), path.end(), rates.begin(), [&](double x) { return clock.rate(x); });
  return accumulate_clock(rates, h);
}

std::vector<double> tau_to_t(std::span<const Eigen::VectorXd> path, double h, const ClockMapND& clock) {
  std::vector<double> rates(path.size());
  std::transform(path.begin(), path.end(), rates.begin(), [&](const Eigen::VectorXd& x) { return clock.rate(x); });
  return accumulate_clock(rates, h);
}

// ---------------------------------------------------------------------------

TransformedSystem1D make_system_1d(const Problem1D& problem, const Temperature& kT, TransformKind kind,
                                   const MapOptions& options) {
  TransformedSystem1D s{kind, System1D{problem.potential, problem.diffusion, kT}, problem, nullptr, std::nullopt};
  switch (kind) {
    case TransformKind::None:
      break;
    case TransformKind::Lamperti: {
      s.map = std::make_shared<const LampertiMap1D>(lamperti_1d(problem.diffusion, options));
      s.dynamics.potential = lamperti_effective_potential_1d(problem.potential, problem.diffusion, kT, s.map).potential;
      s.dynamics.diffusion = std::make_shared<ConstantDiffusion>(1.0);
      break;
    }
    case TransformKind::TimeRescale: {
      auto tr = time_rescale_1d(problem.potential, problem.diffusion, kT);
      s.dynamics.potential = tr.potential.potential;
      s.dynamics.diffusion = std::make_shared<ConstantDiffusion>(1.0);
      s.clock = tr.clock;
      break;
    }
    case TransformKind::Combined:
      throw UnsupportedTransform("the combined transform is only defined for multivariate diffusion");
  }
  return s;
}

void TransformedSystemND::to_dynamics(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> y) const {
  if (!maps.empty()) {
    for (Eigen::Index k = 0; k < x.size(); ++k) y[k] = maps[static_cast<std::size_t>(k)]->forward(x[k]);
  } else if (R_inverse.size() > 0) {
    y = R_inverse * x;
  } else {
    y = x;
  }
}

void TransformedSystemND::to_original(const Eigen::Ref<const Eigen::VectorXd>& y, Eigen::Ref<Eigen::VectorXd> x) const {
  if (!maps.empty()) {
    for (Eigen::Index k = 0; k < y.size(); ++k) x[k] = maps[static_cast<std::size_t>(k)]->inverse(y[k]);
  } else if (R.size() > 0) {
    x = R * y;
  } else {
    x = y;
  }
}

TransformedSystemND make_system_nd(const ProblemND& problem, const Temperature& kT, TransformKind kind,
                                   const MapOptions& options) {
  validate(problem.diffusion);
  const std::size_t n = problem.potential->dim();
  if (dimension(problem.diffusion) != n) throw std::invalid_argument("make_system_nd: dimension mismatch");
  TransformedSystemND s{kind, SystemND{problem.potential, problem.diffusion, kT}, problem, {}, {}, {}, std::nullopt};
  const IsotropicDiffusion unit{std::make_shared<ConstantScalarField>(n, 1.0)};
  switch (kind) {
    case TransformKind::None:
      break;
    case TransformKind::Lamperti: {
      auto l = lamperti_nd_diagonal(problem.potential, problem.diffusion, kT, options);
      s.dynamics = SystemND{l.potential.potential, unit, kT};
      s.maps = std::move(l.maps);
      break;
    }
    case TransformKind::TimeRescale: {
      const auto* iso = std::get_if<IsotropicDiffusion>(&problem.diffusion);
      std::optional<Eigen::MatrixXd> R;
      IsotropicDiffusion field;
      if (iso) {
        field = *iso;
      } else if (const auto* c = std::get_if<CombinedDiffusion>(&problem.diffusion);
                 c && std::all_of(c->diag.axes.begin(), c->diag.axes.end(),
                                  [](const auto& a) { return a->is_constant() && a->value(0.0) == 1.0; })) {
        // d(X) R with unit per-axis factors
        field = c->iso;
        R = c->R;
      } else {
        throw std::invalid_argument("time rescaling requires an isotropic diffusion (optionally times constant R)");
      }
      auto tr = time_rescale_nd(problem.potential, field, kT, R);
      s.dynamics = SystemND{tr.potential.potential, unit, kT};
      s.clock = tr.clock;
      if (!is_identity(tr.R)) {
        s.R = tr.R;
        s.R_inverse = tr.R_inverse;
      }
      break;
    }
    case TransformKind::Combined: {
      const auto* c = std::get_if<CombinedDiffusion>(&problem.diffusion);
      if (!c) throw std::invalid_argument("combined transform requires a combined diffusion");
      auto ct = combined_transform_nd(problem.potential, *c, kT, options);
      s.dynamics = SystemND{ct.potential.potential, unit, kT};
      s.clock = ct.clock;
      s.maps = std::move(ct.maps);
      break;
    }
  }
  return s;
}

}  // namespace bdx
