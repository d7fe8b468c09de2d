#pragma once

#include <cstdint>

namespace gridflow {

/// Counter-based pseudo-random generator. Draw i from a stream with key k is
/// mix(k + i * GOLDEN), a pure function of (k, i), so sequences are stable
/// across platforms and independent of how work is scheduled. Streams are
/// derived from a root seed plus up to three tags (step, trajectory index,
/// state index, ...); deriving a stream never consumes draws from another.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  /// Hash (seed, a, b, c) into a stream key.
  static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t a,
                                  std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t k = mix(seed ^ 0x8f58'31aa'7ab3'19d5ULL);
    k = mix(k + a * 0x9e37'79b9'7f4a'7c15ULL);
    k = mix(k + b * 0xc2b2'ae3d'27d4'eb4fULL);
    k = mix(k + c * 0x1656'67b1'9e37'79f9ULL);
    return k;
  }

  static CounterRng from_stream(std::uint64_t seed, std::uint64_t a,
                                std::uint64_t b = 0, std::uint64_t c = 0) {
    return CounterRng(derive_key(seed, a, b, c));
  }

  std::uint64_t next_u64() {
    counter_ += 0x9e37'79b9'7f4a'7c15ULL;
    return mix(key_ + counter_);
  }

  /// Uniform double in [0, 1), 53 mantissa bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). Multiply-shift map; the bias of at most
  /// n / 2^64 is irrelevant for the small n used here.
  std::uint32_t next_below(std::uint32_t n) {
    return static_cast<std::uint32_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  // SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58'476d'1ce4'e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d0'49bb'1331'11ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Stream domains used by the trainer so that sampling, entropy estimation
/// and evaluation never share draws.
enum class RngDomain : std::uint64_t {
  kSample = 1,
  kEntropy = 2,
  kEval = 3,
};

}  // namespace gridflow
