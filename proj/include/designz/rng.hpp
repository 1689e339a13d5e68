#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace designz {

/// xoshiro256** (Blackman & Vigna) seeded through splitmix64.
///
/// Every draw is defined by integer arithmetic on the 256-bit state, so
/// integer and uniform streams are bit-reproducible on any platform.
/// Doubles are built from the top 53 bits; normals use the Marsaglia
/// polar method on those uniforms.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  /// Generator for stream `stream` of a master seed. Distinct streams
  /// feed distinct counter inputs into splitmix64.
  static Rng for_stream(std::uint64_t master_seed, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer on [0, bound), unbiased (Lemire's multiply-and-reject).
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal variate.
  double normal();

 private:
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// One step of the splitmix64 mixer.
std::uint64_t splitmix64(std::uint64_t& x);

}  // namespace designz
