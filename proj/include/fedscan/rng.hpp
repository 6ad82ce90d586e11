#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

#include "fedscan/errors.hpp"

namespace fedscan {

/// FNV-1a 64-bit hash, used for stream purpose tags and config hashes.
constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent stream key from a base seed and a path of integers
/// (purpose tag, round index, client id, ...). Splitmix64-style finalizer;
/// the same (seed, path) always yields the same key.
std::uint64_t derive_key(std::uint64_t seed,
                         std::initializer_list<std::uint64_t> path);

/// Deterministic random stream. All floating-point transforms are fixed
/// algorithms on top of std::mt19937_64 so sequences are reproducible
/// bitwise for a given key on one platform (stdlib distribution objects are
/// implementation-defined and deliberately avoided).
class Rng {
 public:
  explicit Rng(std::uint64_t key) : gen_(key) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in (0, 1), never exactly 0 or 1.
  double open01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Standard normal via Box-Muller; the spare deviate is cached.
  double normal();

  /// Gamma(alpha, 1) via Marsaglia-Tsang, boosted for alpha < 1.
  double gamma(double alpha);

  /// Symmetric Dirichlet(alpha) over k categories; entries sum to 1.
  std::vector<double> dirichlet(double alpha, int k);

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fedscan
