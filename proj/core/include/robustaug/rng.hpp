#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace robustaug {

// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as
// easy as 1, 2, 3"). Pure function of (counter, key).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

std::uint64_t hash_tag(std::string_view tag);

// Counter-based random stream keyed by (master seed, purpose tag, index,
// sub-index). Two streams with the same key produce the same sequence no
// matter when or on which thread they are created, which is what makes
// per-example augmentation and attack restarts independent of batching.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0, std::uint32_t sub = 0);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi] (inclusive), unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  double normal();
  double gamma(double shape);
  double beta(double a, double b);

  // Number of 64-bit words consumed so far.
  std::uint64_t draws() const { return draws_; }

 private:
  void refill();

  std::array<std::uint32_t, 2> key_{};
  std::uint64_t index_ = 0;
  std::uint32_t sub_ = 0;
  std::uint32_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int cursor_ = 4;
  std::uint64_t draws_ = 0;
};

}  // namespace robustaug
