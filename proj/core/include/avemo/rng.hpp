#pragma once

#include <cstdint>
#include <vector>

#include "avemo/tensor.hpp"

namespace avemo {

/// Deterministic RNG with hand-rolled distributions so that generated bytes
/// are identical on every platform (std::normal_distribution is
/// implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix(seed + 0x9E3779B97F4A7C15ULL)) {}

  static uint64_t splitmix(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  /// Stable per-sample substream derivation.
  static uint64_t derive(uint64_t seed, uint64_t index) {
    return splitmix(seed ^ splitmix(index));
  }

  uint64_t next_u64() {
    state_ = splitmix(state_);
    return state_;
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) {  // [0, n)
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  /// Box-Muller, one value per call (the pair's second half is discarded to
  /// keep the stream position independent of call parity).
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  Tensor gaussian_tensor(std::vector<int> shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = gaussian() * stddev;
    return t;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace avemo
