#pragma once

#include <array>
#include <cstdint>

#include "pmpt/common.hpp"

namespace pmpt {

// SplitMix64: used both as a small PRNG and to derive per-purpose
// substream seeds from the single problem seed.
struct SplitMix64 {
  std::uint64_t state = 0;

  explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1).
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  SplitMix64 s(seed ^ (0x5851f42d4c957f2dULL * (tag + 1)));
  s.next();
  return s.next();
}

namespace detail {
constexpr std::array<int, 8> kHaltonPrimes = {2, 3, 5, 7, 11, 13, 17, 19};
}

// Scrambled Halton sequence: digit permutation derived from the seed keeps
// runs reproducible while decorrelating dimensions.
class Halton {
 public:
  Halton(std::size_t dim, std::uint64_t seed) : dim_(dim) {
    for (std::size_t d = 0; d < dim_; ++d)
      offsets_.push_back(derive_seed(seed, 101 + d));
  }

  Vec next() {
    ++index_;
    Vec p(dim_);
    for (std::size_t d = 0; d < dim_; ++d)
      p[d] = radical_inverse(index_, detail::kHaltonPrimes[d % detail::kHaltonPrimes.size()],
                             offsets_[d]);
    return p;
  }

 private:
  static double radical_inverse(std::uint64_t i, int base, std::uint64_t scramble) {
    double inv = 1.0 / base, f = inv, x = 0.0;
    while (i > 0) {
      std::uint64_t digit = (i + scramble) % base;
      x += double(digit) * f;
      i /= base;
      scramble /= base;
      f *= inv;
    }
    return x < 1.0 ? x : std::nextafter(1.0, 0.0);
  }

  std::size_t dim_;
  std::uint64_t index_ = 0;
  std::vector<std::uint64_t> offsets_;
};

// Maps a [0,1)^n sample to the box [lo, hi].
inline Vec to_box(const Vec& unit_pt, const Vec& lo, const Vec& hi) {
  Vec x(unit_pt.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = lo[i] + (hi[i] - lo[i]) * unit_pt[i];
  return x;
}

// Maps a [0,1)^n sample to the closed ball of given radius (norm-radius
// reshaping, dimension-correct density is not needed for our sup-sampling).
inline Vec to_ball(const Vec& unit_pt, const Vec& center, double radius) {
  const std::size_t n = center.size();
  Vec dir(n);
  double s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dir[i] = 2.0 * unit_pt[i] - 1.0;
    s2 += dir[i] * dir[i];
  }
  if (s2 < 1e-300) return center;
  double r = radius * std::pow(unit_pt[n - 1] < 0.5 ? 2.0 * unit_pt[n - 1] : 2.0 - 2.0 * unit_pt[n - 1],
                               1.0 / double(n));
  double scale = r / std::sqrt(s2);
  Vec x(center);
  for (std::size_t i = 0; i < n; ++i) x[i] += scale * dir[i];
  return x;
}

}  // namespace pmpt
