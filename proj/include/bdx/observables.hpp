#pragma once

// Estimators and metrics: weighted histograms, quadrature reference densities,
// L1 error, counting estimators, transition counts, autocorrelation, tau to t
// resampling and evolving-distribution snapshots.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bdx/model.hpp"
#include "bdx/transforms.hpp"

namespace bdx {

/// Uniform bins per axis: bins[i] equal-width bins over range[i].
struct HistogramSpec {
  std::vector<std::size_t> bins;
  std::vector<Interval> range;

  std::size_t dim() const { return bins.size(); }
  void validate() const;
  bool operator==(const HistogramSpec& o) const;
};

/// 30 bins on [-5, 5].
HistogramSpec default_histogram_1d();
/// 30 x 30 bins on [-3, 3]^2.
HistogramSpec default_histogram_2d();

/// Bins are half-open [e_i, e_{i+1}) except the last, which is closed.
/// Samples outside the range are tallied separately; their weight still
/// enters total_mass so that normalization follows the ratio estimators.
class WeightedHistogram {
 public:
  explicit WeightedHistogram(HistogramSpec spec);

  const HistogramSpec& spec() const { return spec_; }
  std::size_t dim() const { return spec_.dim(); }
  std::size_t bin_count() const { return masses_.size(); }

  /// Edge j of an axis, j = 0..bins.
  double edge(std::size_t axis, std::size_t j) const;
  std::vector<double> edges(std::size_t axis) const;
  /// Bin index along one axis, or nullopt when outside.
  std::optional<std::size_t> locate_axis(std::size_t axis, double x) const;
  /// Flat (row-major, axis 0 slowest) bin index.
  std::optional<std::size_t> locate(std::span<const double> x) const;

  void add(double x, double weight = 1.0);
  void add(std::span<const double> x, double weight = 1.0);
  void merge(const WeightedHistogram& other);
  void clear();

  const std::vector<double>& masses() const { return masses_; }
  double total_mass() const { return total_mass_; }
  double in_range_mass() const;
  std::size_t sample_count() const { return samples_; }
  std::size_t out_of_range_count() const { return out_of_range_; }
  double out_of_range_mass() const { return out_of_range_mass_; }
  /// masses / total_mass.
  std::vector<double> normalized() const;

 private:
  HistogramSpec spec_;
  std::vector<double> masses_;
  double total_mass_ = 0.0;
  std::size_t samples_ = 0;
  std::size_t out_of_range_ = 0;
  double out_of_range_mass_ = 0.0;
};

/// Exact bin probabilities omega_i of rho = exp(-V/kT)/Z by adaptive quadrature.
class ReferenceDensity {
 public:
  /// Z over `normalization` (default [-10, 10]); per-bin tolerance 1e-10.
  static ReferenceDensity from_potential(const Potential1D& potential, const Temperature& kT, const HistogramSpec& spec,
                                         Interval normalization = {-10.0, 10.0}, double tol = 1e-10);
  /// 2D only; Z over the square `normalization`^2.
  static ReferenceDensity from_potential(const PotentialND& potential, const Temperature& kT, const HistogramSpec& spec,
                                         Interval normalization = {-10.0, 10.0}, double tol = 1e-10);
  static ReferenceDensity from_masses(HistogramSpec spec, std::vector<double> masses);

  const HistogramSpec& spec() const { return spec_; }
  const std::vector<double>& masses() const { return masses_; }
  double partition_function() const { return z_; }

 private:
  HistogramSpec spec_;
  std::vector<double> masses_;
  double z_ = 0.0;
};

/// (1/M) sum_i |omega_i - omega_hat_i| with omega_hat = masses / total_mass.
double l1_error(const WeightedHistogram& hist, const ReferenceDensity& ref);
double l1_error(std::span<const double> estimate, std::span<const double> reference);

void accumulate_plain(WeightedHistogram& hist, double x);
void accumulate_plain(WeightedHistogram& hist, std::span<const double> x);
/// Unit mass at x = map.inverse(y).
void accumulate_lamperti(WeightedHistogram& hist, double y, const LampertiMap1D& map);
void accumulate_lamperti(WeightedHistogram& hist, std::span<const double> y,
                         std::span<const std::shared_ptr<const LampertiMap1D>> maps);
/// Mass g at x; total mass grows by g even when x is out of range.
void accumulate_time_rescaled(WeightedHistogram& hist, double x, double g);
void accumulate_time_rescaled(WeightedHistogram& hist, std::span<const double> x, double g);

// ---------------------------------------------------------------------------
// Transition counts

/// Counts completed crossings between the markers. Reaching x <= left or
/// x >= right arms that side; reaching the opposite side from an armed state
/// completes one transition. Values between the markers change nothing.
class TransitionCounter {
 public:
  TransitionCounter(double left, double right);
  void observe(double x) {
    if (x <= left_) {
      if (side_ > 0) ++count_;
      side_ = -1;
    } else if (x >= right_) {
      if (side_ < 0) ++count_;
      side_ = 1;
    }
  }
  std::size_t count() const { return count_; }

 private:
  double left_;
  double right_;
  int side_ = 0;
  std::size_t count_ = 0;
};

std::size_t transition_count(std::span<const double> path, double left, double right);

// ---------------------------------------------------------------------------
// Autocorrelation

/// Normalized biased autocovariance (divide by N) of the mean-subtracted
/// path, lags 0..max_lag, via zero-padded FFT.
std::vector<double> acf_fft(std::span<const double> path, std::size_t max_lag);

struct AcfEstimate {
  std::vector<double> lags;  // time values
  std::vector<double> mean;
  std::vector<double> se;
  std::size_t n_trajectories = 0;
};

/// Average of per-trajectory normalized ACFs; SE = sample SD / sqrt(n).
AcfEstimate ensemble_acf(std::span<const std::vector<double>> paths, double dt, std::size_t max_lag);
/// Aggregates already computed per-trajectory ACFs.
AcfEstimate aggregate_acf(std::span<const std::vector<double>> acfs, double dt);
/// a - b with independent-ensemble SE sqrt(se_a^2 + se_b^2).
AcfEstimate acf_difference(const AcfEstimate& a, const AcfEstimate& b);

// ---------------------------------------------------------------------------
// tau to t resampling

/// Streams (t, x) pairs with nondecreasing t and emits the linear
/// interpolation at each grid time as soon as it is bracketed.
class StreamingResampler {
 public:
  using Emit = std::function<void(std::size_t grid_index, double value)>;
  StreamingResampler(std::span<const double> t_grid, Emit emit);
  void feed(double t, double x);
  /// Number of grid points emitted so far.
  std::size_t emitted() const { return next_; }
  bool complete() const { return next_ == grid_.size(); }

 private:
  std::vector<double> grid_;
  Emit emit_;
  std::size_t next_ = 0;
  bool has_prev_ = false;
  double t_prev_ = 0.0;
  double x_prev_ = 0.0;
};

struct ResampledPath {
  std::vector<double> values;
  bool truncated = false;  // grid extends past the path
};

/// Linear interpolation of x at each grid time given accumulated t values.
ResampledPath resample(std::span<const double> path, std::span<const double> t_values, std::span<const double> t_grid);
/// Accumulates t with the trapezoidal clock, then interpolates.
ResampledPath resample_tau_to_t(std::span<const double> path, double h, const ClockMap1D& clock,
                                std::span<const double> t_grid);

// ---------------------------------------------------------------------------
// Evolving distribution

/// One unit-weight histogram per snapshot time; each row of `snapshots` holds
/// one trajectory's state at every snapshot time.
std::vector<WeightedHistogram> evolving_distribution(std::span<const std::vector<double>> snapshots,
                                                     std::size_t n_snapshots, const HistogramSpec& spec);

/// Uniform grid {0, dt, ..., t_end} (endpoint included when it lands on the grid).
std::vector<double> uniform_grid(double t_end, double dt);

/// Reference bin masses of a normal density N(mu, s^2) for a 1D spec.
std::vector<double> normal_bin_masses(const HistogramSpec& spec, double mu, double s);

}  // namespace bdx
