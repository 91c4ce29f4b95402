#pragma once

#include <array>
#include <cstdint>

namespace dolr {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

// Philox4x32 with 10 rounds (Salmon et al., Random123).
PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key);

std::uint64_t splitmix64(std::uint64_t x);

// Standard normal quantile; full double precision on (0, 1).
double inverse_normal_cdf(double p);

// Stateless generator: every draw is a pure function of (key, a, b, c).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  // Stream-separated generator derived from a user seed.
  static CounterRng stream(std::uint64_t seed, std::uint64_t stream_id);

  // Uniform on the open interval (0, 1), 53 random bits.
  double uniform(std::uint64_t a, std::uint64_t b, std::uint64_t c) const;
  double normal(std::uint64_t a, std::uint64_t b, std::uint64_t c) const;

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

}  // namespace dolr
