#include "gvssm/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gvssm {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), key_(splitmix64(splitmix64(seed) ^ (stream * kGolden + 1))) {}

std::uint64_t Rng::next_u64() {
  const std::uint64_t out = splitmix64(key_ + counter_ * kGolden);
  ++counter_;
  return out;
}

double Rng::next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::next_open_unit() {
  return std::clamp(next_unit(), kUniformClamp, 1.0 - kUniformClamp);
}

double Rng::next_gaussian() {
  const double u1 = next_open_unit();
  const double u2 = next_unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  // Lemire's multiply-shift; bias is < n / 2^64 and irrelevant at these sizes.
  const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::uint64_t>(m >> 64);
}

Rng Rng::split(std::uint64_t child) const {
  return Rng(seed_, splitmix64(stream_ ^ splitmix64(child + 0x5bd1e995ULL)));
}

std::vector<double> sample_gaussian(Rng& rng, std::size_t n) {
  std::vector<double> out(n);
  for (double& v : out) v = rng.next_gaussian();
  return out;
}

std::vector<double> sample_uniform(Rng& rng, std::size_t n) {
  std::vector<double> out(n);
  for (double& v : out) v = rng.next_open_unit();
  return out;
}

Matrix glorot_init(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = (2.0 * rng.next_unit() - 1.0) * bound;
  return m;
}

}  // namespace gvssm
