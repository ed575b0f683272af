#include "bdx/observables.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numeric>
#include <stdexcept>

#include <fftw3.h>

#include "bdx/quadrature.hpp"

namespace bdx {

void HistogramSpec::validate() const {
  if (bins.empty() || bins.size() != range.size())
    throw std::invalid_argument("histogram spec: bins and range must be non-empty and of equal length");
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (bins[i] < 1) throw std::invalid_argument("histogram spec: bins must be >= 1");
    if (!(range[i].lo < range[i].hi)) throw std::invalid_argument("histogram spec: range must satisfy lo < hi");
  }
}

bool HistogramSpec::operator==(const HistogramSpec& o) const {
  if (bins != o.bins || range.size() != o.range.size()) return false;
  for (std::size_t i = 0; i < range.size(); ++i)
    if (range[i].lo != o.range[i].lo || range[i].hi != o.range[i].hi) return false;
  return true;
}

HistogramSpec default_histogram_1d() { return {{30}, {{-5.0, 5.0}}}; }
HistogramSpec default_histogram_2d() { return {{30, 30}, {{-3.0, 3.0}, {-3.0, 3.0}}}; }

// ---------------------------------------------------------------------------

WeightedHistogram::WeightedHistogram(HistogramSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t n = 1;
  for (std::size_t b : spec_.bins) n *= b;
  masses_.assign(n, 0.0);
}

double WeightedHistogram::edge(std::size_t axis, std::size_t j) const {
  const auto& r = spec_.range[axis];
  const std::size_t nb = spec_.bins[axis];
  if (j == nb) return r.hi;
  return r.lo + (r.hi - r.lo) * static_cast<double>(j) / static_cast<double>(nb);
}

std::vector<double> WeightedHistogram::edges(std::size_t axis) const {
  std::vector<double> e(spec_.bins[axis] + 1);
  for (std::size_t j = 0; j < e.size(); ++j) e[j] = edge(axis, j);
  return e;
}

std::optional<std::size_t> WeightedHistogram::locate_axis(std::size_t axis, double x) const {
  const auto& r = spec_.range[axis];
  const std::size_t nb = spec_.bins[axis];
  if (!(x >= r.lo && x <= r.hi)) return std::nullopt;
  if (x == r.hi) return nb - 1;
  auto i = static_cast<std::size_t>(std::floor((x - r.lo) / (r.hi - r.lo) * static_cast<double>(nb)));
  if (i >= nb) i = nb - 1;
  // Resolve rounding so the half-open convention holds against edge().
  if (i > 0 && x < edge(axis, i)) --i;
  else if (i + 1 < nb && x >= edge(axis, i + 1)) ++i;
  return i;
}

std::optional<std::size_t> WeightedHistogram::locate(std::span<const double> x) const {
  if (x.size() != dim()) throw std::invalid_argument("histogram: sample dimension mismatch");
  std::size_t flat = 0;
  for (std::size_t a = 0; a < x.size(); ++a) {
    const auto i = locate_axis(a, x[a]);
    if (!i) return std::nullopt;
    flat = flat * spec_.bins[a] + *i;
  }
  return flat;
}

void WeightedHistogram::add(double x, double weight) { add(std::span<const double>(&x, 1), weight); }

void WeightedHistogram::add(std::span<const double> x, double weight) {
  ++samples_;
  total_mass_ += weight;
  if (const auto i = locate(x)) {
    masses_[*i] += weight;
  } else {
    ++out_of_range_;
    out_of_range_mass_ += weight;
  }
}

void WeightedHistogram::merge(const WeightedHistogram& other) {
  if (!(spec_ == other.spec_)) throw std::invalid_argument("histogram merge: bin structures differ");
  for (std::size_t i = 0; i < masses_.size(); ++i) masses_[i] += other.masses_[i];
  total_mass_ += other.total_mass_;
  samples_ += other.samples_;
  out_of_range_ += other.out_of_range_;
  out_of_range_mass_ += other.out_of_range_mass_;
}

void WeightedHistogram::clear() {
  std::fill(masses_.begin(), masses_.end(), 0.0);
  total_mass_ = 0.0;
  samples_ = 0;
  out_of_range_ = 0;
  out_of_range_mass_ = 0.0;
}

double WeightedHistogram::in_range_mass() const { return std::accumulate(masses_.begin(), masses_.end(), 0.0); }

std::vector<double> WeightedHistogram::normalized() const {
  if (!(total_mass_ > 0.0)) throw std::domain_error("histogram: total mass is zero");
  std::vector<double> out(masses_.size());
  for (std::size_t i = 0; i < masses_.size(); ++i) out[i] = masses_[i] / total_mass_;
  return out;
}

// ---------------------------------------------------------------------------

ReferenceDensity ReferenceDensity::from_potential(const Potential1D& potential, const Temperature& kT,
                                                  const HistogramSpec& spec, Interval normalization, double tol) {
  spec.validate();
  if (spec.dim() != 1) throw std::invalid_argument("reference density: 1D potential needs a 1D histogram");
  const double beta = 1.0 / kT.value();
  const auto boltzmann = [&](double x) { return std::exp(-beta * potential.value(x)); };
  ReferenceDensity r;
  r.spec_ = spec;
  r.z_ = integrate(boltzmann, normalization.lo, normalization.hi, tol);
  WeightedHistogram h(spec);
  r.masses_.resize(spec.bins[0]);
  for (std::size_t i = 0; i < spec.bins[0]; ++i)
    r.masses_[i] = integrate(boltzmann, h.edge(0, i), h.edge(0, i + 1), tol * r.z_) / r.z_;
  return r;
}

ReferenceDensity ReferenceDensity::from_potential(const PotentialND& potential, const Temperature& kT,
                                                  const HistogramSpec& spec, Interval normalization, double tol) {
  spec.validate();
  if (spec.dim() != 2 || potential.dim() != 2)
    throw std::invalid_argument("reference density: multivariate reference is implemented for 2D");
  const double beta = 1.0 / kT.value();
  Eigen::VectorXd p(2);
  const auto boltzmann = [&](double x, double y) {
    p << x, y;
    return std::exp(-beta * potential.value(p));
  };
  ReferenceDensity r;
  r.spec_ = spec;
  r.z_ = integrate_2d(boltzmann, normalization.lo, normalization.hi, normalization.lo, normalization.hi, tol);
  WeightedHistogram h(spec);
  r.masses_.resize(h.bin_count());
  for (std::size_t i = 0; i < spec.bins[0]; ++i)
    for (std::size_t j = 0; j < spec.bins[1]; ++j)
      r.masses_[i * spec.bins[1] + j] =
          integrate_2d(boltzmann, h.edge(0, i), h.edge(0, i + 1), h.edge(1, j), h.edge(1, j + 1), tol * r.z_) / r.z_;
  return r;
}

ReferenceDensity ReferenceDensity::from_masses(HistogramSpec spec, std::vector<double> masses) {
  WeightedHistogram h(spec);
  if (masses.size() != h.bin_count()) throw std::invalid_argument("reference density: mass count mismatch");
  ReferenceDensity r;
  r.spec_ = std::move(spec);
  r.masses_ = std::move(masses);
  r.z_ = 1.0;
  return r;
}

double l1_error(std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != reference.size() || estimate.empty())
    throw std::invalid_argument("l1_error: bin structures differ");
  double s = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) s += std::abs(reference[i] - estimate[i]);
  return s / static_cast<double>(estimate.size());
}

double l1_error(const WeightedHistogram& hist, const ReferenceDensity& ref) {
  if (!(hist.spec() == ref.spec())) throw std::invalid_argument("l1_error: bin structures differ");
  const auto est = hist.normalized();
  return l1_error(est, ref.masses());
}

void accumulate_plain(WeightedHistogram& hist, double x) { hist.add(x, 1.0); }
void accumulate_plain(WeightedHistogram& hist, std::span<const double> x) { hist.add(x, 1.0); }

void accumulate_lamperti(WeightedHistogram& hist, double y, const LampertiMap1D& map) {
  hist.add(map.inverse(y), 1.0);
}

void accumulate_lamperti(WeightedHistogram& hist, std::span<const double> y,
                         std::span<const std::shared_ptr<const LampertiMap1D>> maps) {
  if (maps.size() != y.size()) throw std::invalid_argument("accumulate_lamperti: one map per axis required");
  std::vector<double> x(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) x[i] = maps[i]->inverse(y[i]);
  hist.add(x, 1.0);
}

void accumulate_time_rescaled(WeightedHistogram& hist, double x, double g) {
  if (!(g > 0.0)) throw std::invalid_argument("accumulate_time_rescaled: g must be > 0");
  hist.add(x, g);
}

void accumulate_time_rescaled(WeightedHistogram& hist, std::span<const double> x, double g) {
  if (!(g > 0.0)) throw std::invalid_argument("accumulate_time_rescaled: g must be > 0");
  hist.add(x, g);
}

// ---------------------------------------------------------------------------

TransitionCounter::TransitionCounter(double left, double right) : left_(left), right_(right) {
  if (!(left < right)) throw std::invalid_argument("transition counter: need left < right");
}

std::size_t transition_count(std::span<const double> path, double left, double right) {
  TransitionCounter c(left, right);
  for (double x : path) c.observe(x);
  return c.count();
}

// ---------------------------------------------------------------------------

namespace {

// FFTW planning is not thread-safe; execution is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

std::vector<double> acf_fft(std::span<const double> path, std::size_t max_lag) {
  const std::size_t n = path.size();
  if (n <= max_lag) throw std::invalid_argument("acf_fft: path length must exceed max_lag");
  const double mean = std::accumulate(path.begin(), path.end(), 0.0) / static_cast<double>(n);
  const std::size_t m = next_pow2(2 * n);
  const std::size_t nc = m / 2 + 1;
  double* in = fftw_alloc_real(m);
  fftw_complex* spec = fftw_alloc_complex(nc);
  fftw_plan fwd;
  fftw_plan bwd;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(m), in, spec, FFTW_ESTIMATE);
    bwd = fftw_plan_dft_c2r_1d(static_cast<int>(m), spec, in, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < n; ++i) in[i] = path[i] - mean;
  std::fill(in + n, in + m, 0.0);
  fftw_execute(fwd);
  for (std::size_t k = 0; k < nc; ++k) {
    spec[k][0] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    spec[k][1] = 0.0;
  }
  fftw_execute(bwd);
  std::vector<double> acf(max_lag + 1);
  const double c0 = in[0];
  const bool degenerate = !(c0 > 0.0) || c0 <= 1e-300 * static_cast<double>(m);
  if (!degenerate)
    for (std::size_t k = 0; k <= max_lag; ++k) acf[k] = in[k] / c0;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }
  fftw_free(in);
  fftw_free(spec);
  if (degenerate) throw std::domain_error("acf_fft: path has zero variance");
  return acf;
}

AcfEstimate aggregate_acf(std::span<const std::vector<double>> acfs, double dt) {
  if (acfs.empty()) throw std::invalid_argument("aggregate_acf: no trajectories");
  const std::size_t l = acfs.front().size();
  AcfEstimate e;
  e.n_trajectories = acfs.size();
  e.lags.resize(l);
  e.mean.assign(l, 0.0);
  e.se.assign(l, 0.0);
  for (std::size_t k = 0; k < l; ++k) e.lags[k] = static_cast<double>(k) * dt;
  for (const auto& a : acfs) {
    if (a.size() != l) throw std::invalid_argument("aggregate_acf: lag counts differ");
    for (std::size_t k = 0; k < l; ++k) e.mean[k] += a[k];
  }
  const double n = static_cast<double>(acfs.size());
  for (double& v : e.mean) v /= n;
  if (acfs.size() > 1) {
    for (const auto& a : acfs)
      for (std::size_t k = 0; k < l; ++k) e.se[k] += (a[k] - e.mean[k]) * (a[k] - e.mean[k]);
    for (double& v : e.se) v = std::sqrt(v / (n - 1.0) / n);
  }
  return e;
}

AcfEstimate ensemble_acf(std::span<const std::vector<double>> paths, double dt, std::size_t max_lag) {
  std::vector<std::vector<double>> acfs;
  acfs.reserve(paths.size());
  for (const auto& p : paths) acfs.push_back(acf_fft(p, max_lag));
  return aggregate_acf(acfs, dt);
}

AcfEstimate acf_difference(const AcfEstimate& a, const AcfEstimate& b) {
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("acf_difference: lag counts differ");
  AcfEstimate d = a;
  d.n_trajectories = std::min(a.n_trajectories, b.n_trajectories);
  for (std::size_t k = 0; k < a.mean.size(); ++k) {
    d.mean[k] = a.mean[k] - b.mean[k];
    d.se[k] = std::hypot(a.se[k], b.se[k]);
  }
  return d;
}

// ---------------------------------------------------------------------------

StreamingResampler::StreamingResampler(std::span<const double> t_grid, Emit emit)
    : grid_(t_grid.begin(), t_grid.end()), emit_(std::move(emit)) {
  if (!std::is_sorted(grid_.begin(), grid_.end())) throw std::invalid_argument("resampler: grid must be sorted");
}

void StreamingResampler::feed(double t, double x) {
  if (!has_prev_) {
    // Grid points at or before the first sample take its value.
    while (next_ < grid_.size() && grid_[next_] <= t) emit_(next_++, x);
    has_prev_ = true;
    t_prev_ = t;
    x_prev_ = x;
    return;
  }
  if (t < t_prev_) throw std::invalid_argument("resampler: time must be nondecreasing");
  while (next_ < grid_.size() && grid_[next_] <= t) {
    const double s = t > t_prev_ ? (grid_[next_] - t_prev_) / (t - t_prev_) : 1.0;
    emit_(next_, x_prev_ + s * (x - x_prev_));
    ++next_;
  }
  t_prev_ = t;
  x_prev_ = x;
}

ResampledPath resample(std::span<const double> path, std::span<const double> t_values,
                       std::span<const double> t_grid) {
  if (path.size() != t_values.size() || path.empty())
    throw std::invalid_argument("resample: path and times must be non-empty and equally long");
  ResampledPath out;
  out.values.reserve(t_grid.size());
  StreamingResampler r(t_grid, [&](std::size_t, double v) { out.values.push_back(v); });
  for (std::size_t i = 0; i < path.size(); ++i) r.feed(t_values[i], path[i]);
  out.truncated = !r.complete();
  return out;
}

ResampledPath resample_tau_to_t(std::span<const double> path, double h, const ClockMap1D& clock,
                                std::span<const double> t_grid) {
  const auto t = tau_to_t(path, h, clock);
  return resample(path, t, t_grid);
}

// ---------------------------------------------------------------------------

std::vector<WeightedHistogram> evolving_distribution(std::span<const std::vector<double>> snapshots,
                                                     std::size_t n_snapshots, const HistogramSpec& spec) {
  std::vector<WeightedHistogram> out(n_snapshots, WeightedHistogram(spec));
  const std::size_t d = spec.dim();
  for (const auto& row : snapshots) {
    if (row.size() < n_snapshots * d)
      throw std::invalid_argument("evolving_distribution: snapshot beyond trajectory duration");
    for (std::size_t k = 0; k < n_snapshots; ++k) out[k].add(std::span<const double>(row.data() + k * d, d), 1.0);
  }
  return out;
}

std::vector<double> uniform_grid(double t_end, double dt) {
  if (!(dt > 0.0) || !(t_end >= 0.0)) throw std::invalid_argument("uniform_grid: need dt > 0 and t_end >= 0");
  const auto n = static_cast<std::size_t>(std::floor(t_end / dt + 1e-9));
  std::vector<double> g(n + 1);
  for (std::size_t k = 0; k <= n; ++k) g[k] = static_cast<double>(k) * dt;
  return g;
}

std::vector<double> normal_bin_masses(const HistogramSpec& spec, double mu, double s) {
  if (spec.dim() != 1) throw std::invalid_argument("normal_bin_masses: 1D spec required");
  WeightedHistogram h(spec);
  std::vector<double> m(spec.bins[0]);
  const auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mu) / (s * std::sqrt(2.0))); };
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = cdf(h.edge(0, i + 1)) - cdf(h.edge(0, i));
  return m;
}

}  // namespace bdx
