#pragma once

// Seeded standard-normal streams. Each trajectory owns one stream; seeds for
// independent work units are derived by keyed hashing of a master seed.

#include <cstdint>
#include <initializer_list>
#include <span>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

namespace bdx {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Keyed hash of (master, keys...) used as a per-work-unit seed.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys);

/// Deterministic i.i.d. N(0,1) stream with a draw counter.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  double next() {
    ++draws_;
    return normal_(engine_);
  }

  void fill(std::span<double> out) {
    for (double& v : out) v = next();
  }

  std::uint64_t draws() const { return draws_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  boost::random::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_;
  std::uint64_t draws_ = 0;
};

}  // namespace bdx
