#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gvssm/matrix.hpp"

namespace gvssm {

/// Counter-based generator: draw i of stream s is a pure function of (seed, s, i).
///
/// The key mixes seed and stream through SplitMix64 finalizers; each draw hashes
/// key + counter * golden-ratio increment. `split()` derives an independent child
/// stream without advancing the parent, so per-tile or per-epoch streams can be
/// created in any order and still reproduce.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double next_unit();
  /// Uniform clamped to [1e-12, 1 - 1e-12].
  double next_open_unit();
  /// Standard normal via Box-Muller (cosine branch only).
  double next_gaussian();
  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  Rng split(std::uint64_t child) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

inline constexpr double kUniformClamp = 1e-12;

std::vector<double> sample_gaussian(Rng& rng, std::size_t n);
/// Draws strictly inside (0, 1), clamped by kUniformClamp.
std::vector<double> sample_uniform(Rng& rng, std::size_t n);
/// Entries uniform in +-sqrt(6 / (rows + cols)).
Matrix glorot_init(Rng& rng, std::size_t rows, std::size_t cols);

/// Fisher-Yates shuffle driven by `rng`.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace gvssm
