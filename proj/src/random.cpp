#include "couplekit/random.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace couplekit {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

RandomStream::RandomStream(std::uint64_t seed, std::vector<std::uint64_t> path)
    : seed_(seed), path_(std::move(path)) {
  reseed();
}

RandomStream RandomStream::child(std::uint64_t id) const {
  auto path = path_;
  path.push_back(id);
  return RandomStream(seed_, std::move(path));
}

RandomStream RandomStream::child(std::initializer_list<std::uint64_t> ids) const {
  auto path = path_;
  path.insert(path.end(), ids.begin(), ids.end());
  return RandomStream(seed_, std::move(path));
}

void RandomStream::reseed() noexcept {
  // Fold the path into a key; the length is mixed in so that (a) and (a, 0)
  // hash differently.
  std::uint64_t key = mix64(seed_ + kGolden);
  for (std::uint64_t p : path_) key = mix64(key ^ mix64(p + 0x632be59bd9b4e019ULL)) + kGolden;
  key = mix64(key ^ static_cast<std::uint64_t>(path_.size()));
  for (auto& word : state_) {
    key += kGolden;
    word = mix64(key);
  }
  if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = kGolden;
}

std::uint64_t RandomStream::next_u64() noexcept {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RandomStream::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform_open() noexcept {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomStream::normal() noexcept {
  const double u1 = uniform_open();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

__extension__ typedef unsigned __int128 u128;

std::uint64_t RandomStream::below(std::uint64_t bound) noexcept {
  if (bound <= 1) return 0;
  // Lemire's nearly divisionless method.
  u128 m = static_cast<u128>(next_u64()) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      m = static_cast<u128>(next_u64()) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

std::vector<std::size_t> RandomStream::permutation(std::size_t size) noexcept {
  std::vector<std::size_t> perm(size);
  for (std::size_t i = 0; i < size; ++i) perm[i] = i;
  for (std::size_t i = size; i > 1; --i) {
    const auto j = static_cast<std::size_t>(below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace couplekit
