#pragma once

#include <array>
#include <cstdint>

namespace spg {

/// Philox4x32-10 block function (Salmon et al., Random123).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// Counter-based random stream.
///
/// Draw k of stream s under seed x is philox(key = x, counter = {k, s}), so the
/// output depends only on (seed, stream, counter) and never on call history.
/// Streams with distinct ids occupy disjoint counter ranges.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t counter = 0)
      : seed_(seed), stream_(stream), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }
  void set_counter(std::uint64_t counter) noexcept { counter_ = counter; }

  /// Same seed, different stream id, counter reset.
  RngStream derive(std::uint64_t stream) const noexcept { return RngStream(seed_, stream, 0); }

  /// Value at an absolute counter position; does not advance.
  std::uint64_t at(std::uint64_t counter) const noexcept;

  std::uint64_t next_u64() noexcept { return at(counter_++); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Standard normal via Box-Muller; consumes two draws.
  double normal() noexcept;
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

/// Well-known stream ids. Each consumer of randomness gets its own stream.
namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t dropout = 3;
inline constexpr std::uint64_t trp_init = 4;
inline constexpr std::uint64_t data_train = 16;
inline constexpr std::uint64_t data_val = 17;
inline constexpr std::uint64_t data_test = 18;
inline constexpr std::uint64_t data_layout = 19;
}  // namespace streams

}  // namespace spg
