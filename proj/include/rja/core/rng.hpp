#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "rja/core/tensor.hpp"

namespace rja {

/// Seedable generator whose output stream is identical on every platform.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the standard; the
/// distributions are implemented here because the standard library ones are
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); n > 0. Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (no cached second value).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Engine state as text; restoring it resumes the exact stream.
  std::string state() const;
  void set_state(const std::string& text);

  /// Child generator for a named purpose: all randomness in a run flows from
  /// one seed through fixed labels.
  Rng derive(std::string_view label, std::uint64_t index = 0) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Stable 64-bit FNV-1a hash.
std::uint64_t fnv1a64(std::string_view bytes);

/// Fisher-Yates shuffle driven by Rng::below.
template <typename Container>
void shuffle(Container& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

template <typename Scalar = double>
RowMatrix<Scalar> uniform_matrix(Eigen::Index rows, Eigen::Index cols, Scalar lo, Scalar hi,
                                 Rng& rng) {
  RowMatrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(rng.uniform(lo, hi));
  return m;
}

template <typename Scalar = double>
RowMatrix<Scalar> normal_matrix(Eigen::Index rows, Eigen::Index cols, Scalar stddev, Rng& rng) {
  RowMatrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(stddev * rng.normal());
  return m;
}

/// Uniform in +-sqrt(6 / (fan_in + fan_out)), with fan_in = rows, fan_out = cols.
template <typename Scalar = double>
RowMatrix<Scalar> glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const Scalar limit = std::sqrt(Scalar(6) / static_cast<Scalar>(rows + cols));
  return uniform_matrix<Scalar>(rows, cols, -limit, limit, rng);
}

}  // namespace rja
