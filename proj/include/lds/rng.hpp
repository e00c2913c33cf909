#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace lds {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stateless draw: the value at position `index` of the stream named by `seed`.
constexpr std::uint64_t hash_at(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix64(seed ^ mix64(index ^ 0x632be59bd9b4e019ULL));
}

/// Uniform double in [0, 1) at a stream position.
constexpr double uniform_at(std::uint64_t seed, std::uint64_t index) noexcept {
  return static_cast<double>(hash_at(seed, index) >> 11) * 0x1.0p-53;
}

/// Counter-based generator: output k of seed s is hash_at(s, k), so streams
/// can be split, replayed and restored from (seed, counter) alone.
class Rng {
 public:
  struct State {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
    friend bool operator==(const State&, const State&) = default;
  };

  explicit Rng(std::uint64_t seed = 0) noexcept : state_{seed, 0} {}
  explicit Rng(State s) noexcept : state_(s) {}

  std::uint64_t next_u64() noexcept { return hash_at(state_.seed, state_.counter++); }
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection, so the result is unbiased.
  std::uint64_t uniform_int(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = 0;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Independent child stream; does not advance this generator.
  Rng fork(std::uint64_t tag) const noexcept { return Rng(mix64(state_.seed ^ mix64(tag + 1))); }

  State state() const noexcept { return state_; }
  std::uint64_t seed() const noexcept { return state_.seed; }

 private:
  State state_;
};

/// Fisher-Yates with our own generator, so permutations do not depend on the
/// standard library implementation.
template <class T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace lds
