#pragma once

// Philox4x32-10 counter-based generator. A stream is the key; every draw is
// addressed by a 128-bit counter, so any draw can be regenerated in isolation.

#include <array>
#include <cstdint>

namespace quiver {

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      ctr = single_round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static constexpr Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

// A keyed stream of uniform draws. `at(a, b, c)` is a pure function of the key
// and the coordinates; there is no hidden state to advance.
class RandomStream {
 public:
  constexpr RandomStream(std::uint64_t seed, std::uint64_t stream_id)
      : key_{make_key(seed, stream_id)} {}

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform(std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d = 0) const {
    const auto out = Philox4x32::block({a, b, c, d}, key_);
    const std::uint64_t bits =
        (static_cast<std::uint64_t>(out[0]) << 21) ^ (static_cast<std::uint64_t>(out[1]) >> 11);
    return static_cast<double>(bits & ((1ULL << 53) - 1)) * 0x1.0p-53;
  }

  bool bernoulli(double p, std::uint32_t a, std::uint32_t b, std::uint32_t c,
                 std::uint32_t d = 0) const {
    return uniform(a, b, c, d) < p;
  }

 private:
  static constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  static constexpr Philox4x32::Key make_key(std::uint64_t seed, std::uint64_t stream_id) {
    const std::uint64_t k = splitmix64(seed ^ splitmix64(stream_id));
    return {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  Philox4x32::Key key_;
};

}  // namespace quiver
