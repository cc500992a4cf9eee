#pragma once

// Counter-based splittable RNG (Philox 4x32-10). Every (seed, stream)
// pair is an independent reproducible sequence, so runs, channel frames
// and training instances can draw concurrently without coordination.

#include <array>
#include <cmath>
#include <cstdint>

namespace eqsim {

class Philox {
 public:
  explicit Philox(uint64_t seed, uint64_t stream = 0)
      : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
        counter_{0, 0, static_cast<uint32_t>(stream),
                 static_cast<uint32_t>(stream >> 32)} {}

  // Independent stream derived from the same seed.
  Philox split(uint64_t substream) const {
    Philox p(key_[0] | (uint64_t(key_[1]) << 32), substream);
    return p;
  }

  uint32_t next_u32() {
    if (block_pos_ == 4) {
      block_ = compute_block();
      advance_counter();
      block_pos_ = 0;
    }
    return block_[block_pos_++];
  }

  uint64_t next_u64() {
    const uint64_t lo = next_u32();
    const uint64_t hi = next_u32();
    return lo | (hi << 32);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound) by rejection.
  uint32_t next_below(uint32_t bound) {
    const uint32_t limit = UINT32_MAX - (UINT32_MAX % bound + 1) % bound;
    uint32_t v = next_u32();
    while (v > limit) v = next_u32();
    return v % bound;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Standard normal via Box-Muller; second deviate cached.
  double next_gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = next_double();
    const double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  static uint32_t mul_hi(uint32_t a, uint32_t b) {
    return static_cast<uint32_t>((uint64_t(a) * b) >> 32);
  }

  std::array<uint32_t, 4> compute_block() const {
    std::array<uint32_t, 4> c = counter_;
    uint32_t k0 = key_[0];
    uint32_t k1 = key_[1];
    for (int round = 0; round < 10; ++round) {
      const uint32_t lo0 = kMul0 * c[0];
      const uint32_t hi0 = mul_hi(kMul0, c[0]);
      const uint32_t lo1 = kMul1 * c[2];
      const uint32_t hi1 = mul_hi(kMul1, c[2]);
      c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
      k0 += kWeyl0;
      k1 += kWeyl1;
    }
    return c;
  }

  void advance_counter() {
    if (++counter_[0] == 0) ++counter_[1];
  }

  static constexpr uint32_t kMul0 = 0xD2511F53;
  static constexpr uint32_t kMul1 = 0xCD9E8D57;
  static constexpr uint32_t kWeyl0 = 0x9E3779B9;
  static constexpr uint32_t kWeyl1 = 0xBB67AE85;

  std::array<uint32_t, 2> key_;
  std::array<uint32_t, 4> counter_;
  std::array<uint32_t, 4> block_{};
  int block_pos_ = 4;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace eqsim
