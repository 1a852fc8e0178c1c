#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace rglm {

// Seeded random stream threaded explicitly through every stochastic
// operation. Distributions are computed here rather than through
// <random>'s distribution classes so streams are bit-identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  // Uniform integer on [0, n). n must be positive.
  std::size_t uniform_int(std::size_t n);
  double normal();
  double exponential();

  // Independent child stream; advances this stream by one draw.
  Rng split();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

}  // namespace rglm
