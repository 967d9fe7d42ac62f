#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace couplekit {

/// Splittable deterministic random stream.
///
/// A stream is identified by a root seed and a path of integers, e.g.
/// (module tag, design, replication, group). The generator state is derived
/// from a hash of (seed, path), so two streams with the same identity produce
/// bit-identical sequences and sibling paths are statistically independent.
/// Work that is split across threads should derive one child per task instead
/// of sharing an engine; the result is then independent of scheduling order.
///
/// The underlying engine is xoshiro256**.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::vector<std::uint64_t> path = {});

  RandomStream child(std::uint64_t id) const;
  RandomStream child(std::initializer_list<std::uint64_t> ids) const;

  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<std::uint64_t>& path() const noexcept { return path_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform on (0, 1).
  double uniform_open() noexcept;
  /// Standard normal via Box-Muller (one variate per call, no caching).
  double normal() noexcept;
  /// Unbiased integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) noexcept;
  /// Uniformly random permutation of {0, ..., size-1}.
  std::vector<std::size_t> permutation(std::size_t size) noexcept;

  // UniformRandomBitGenerator interface, so std::shuffle and friends work.
  using result_type = std::uint64_t;
  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }
  result_type operator()() noexcept { return next_u64(); }

 private:
  void reseed() noexcept;

  std::uint64_t seed_;
  std::vector<std::uint64_t> path_;
  std::uint64_t state_[4];
};

/// Module tags used as the first path component by library entry points.
namespace stream_tag {
inline constexpr std::uint64_t kMatching = 1;
inline constexpr std::uint64_t kCoupling = 2;
inline constexpr std::uint64_t kTransport = 3;
inline constexpr std::uint64_t kTable = 4;
inline constexpr std::uint64_t kSimulation = 5;
inline constexpr std::uint64_t kPopulation = 6;
inline constexpr std::uint64_t kAnalytics = 7;
}  // namespace stream_tag

}  // namespace couplekit
