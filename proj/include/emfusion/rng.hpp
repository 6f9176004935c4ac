#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace emfusion {

//! Philox4x32-10 counter-based generator.
//!
//! A stream is identified by (seed, stream id); the draw index is the low
//! half of the counter. Two generators with the same seed and stream produce
//! the same sequence on every platform, and distinct streams are independent,
//! which is what per-scenario seed derivation relies on.
class CounterRng
{
public:
  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t stream = 0)
    : seed_(seed)
    , stream_(stream)
  {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  //! Independent generator for sub-stream `id` of this stream.
  CounterRng derive(std::uint64_t id) const
  {
    return CounterRng(seed_, mix(stream_ * 0x9E3779B97F4A7C15ULL + id + 1));
  }

  std::uint64_t next_u64()
  {
    if (buffered_ == 0) {
      refill();
    }
    --buffered_;
    std::uint64_t hi = block_[2 * buffered_ + 1];
    std::uint64_t lo = block_[2 * buffered_];
    return (hi << 32) | lo;
  }

  //! Uniform double in the open interval (0, 1).
  double uniform()
  {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  //! Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi)
  {
    auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) {
      return static_cast<std::int64_t>(next_u64());
    }
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v = next_u64();
    while (v >= limit) {
      v = next_u64();
    }
    return lo + static_cast<std::int64_t>(v % span);
  }

  //! Standard normal draw (Box-Muller, second value cached).
  double normal()
  {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

private:
  static std::uint64_t mix(std::uint64_t z)
  {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  void refill()
  {
    std::array<std::uint32_t, 4> ctr{ static_cast<std::uint32_t>(counter_),
                                      static_cast<std::uint32_t>(counter_ >> 32),
                                      static_cast<std::uint32_t>(stream_),
                                      static_cast<std::uint32_t>(stream_ >> 32) };
    std::array<std::uint32_t, 2> key{ static_cast<std::uint32_t>(seed_),
                                      static_cast<std::uint32_t>(seed_ >> 32) };
    for (int round = 0; round < 10; ++round) {
      std::uint64_t p0 = std::uint64_t{ 0xD2511F53u } * ctr[0];
      std::uint64_t p1 = std::uint64_t{ 0xCD9E8D57u } * ctr[2];
      ctr = { static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
              static_cast<std::uint32_t>(p1),
              static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
              static_cast<std::uint32_t>(p0) };
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    block_ = ctr;
    buffered_ = 2;
    ++counter_;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_{ 0 };
  std::array<std::uint32_t, 4> block_{};
  int buffered_{ 0 };
  double spare_{ 0.0 };
  bool has_spare_{ false };
};

} // namespace emfusion
