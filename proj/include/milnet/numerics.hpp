#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "milnet/errors.hpp"

namespace milnet {

using Vector = Eigen::VectorXd;
// Row-major so that one row is one instance (or one output neuron's weights).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

inline Vector matvec(const Matrix& m, const Vector& v) {
  if (m.cols() != v.size()) {
    throw ShapeError("matvec: matrix " + shape_str(m.rows(), m.cols()) + " vs vector of length " +
                     std::to_string(v.size()));
  }
  return m * v;
}

// SplitMix64 step; used for seeding and for deriving independent seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Stateless mix of a seed with two indices, e.g. (base seed, repeat, fold).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t s = seed;
  std::uint64_t h = splitmix64(s);
  s = h ^ (a * 0xD1B54A32D192ED03ULL);
  h = splitmix64(s);
  s = h ^ (b * 0xABC98388FB8FAC03ULL);
  return splitmix64(s);
}

/// xoshiro256** generator. The 256-bit state is filled from the 64-bit seed
/// with SplitMix64, so a given seed produces the same stream everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  // Direct state injection (reference-vector tests).
  static Rng from_state(const std::array<std::uint64_t, 4>& state) {
    Rng r;
    r.state_ = state;
    return r;
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream, 0x5EED)); }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_ = 0;
  std::array<std::uint64_t, 4> state_{};
};

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng.next_u64() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Unbiased integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw ShapeError("uniform_index: empty range");
  const std::uint64_t limit = -n % n;  // 2^64 mod n
  for (;;) {
    const std::uint64_t x = rng.next_u64();
    if (x >= limit) return x % n;
  }
}

/// Standard normal draw (Box-Muller, one value per call).
inline double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

inline double glorot_bound(Eigen::Index fan_in, Eigen::Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

/// fan_out x fan_in matrix, entries i.i.d. uniform on [-b, b].
inline Matrix glorot_uniform(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
  if (fan_in < 1 || fan_out < 1) {
    throw ShapeError("glorot_uniform: fan_in and fan_out must be >= 1, got " +
                     shape_str(fan_in, fan_out));
  }
  const double b = glorot_bound(fan_in, fan_out);
  Matrix w(fan_out, fan_in);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -b, b);
  return w;
}

}  // namespace milnet
