#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace partyvec {

/// 64-bit FNV-1a. Used for config hashes and artifact digests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;
std::string hex64(std::uint64_t value);

/// Derives an independent seed for a named sub-stream of a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) noexcept;

// Seeded generator whose output is fully specified by the seed. std's
// distribution objects are implementation-defined, so sampling is done here
// on top of the raw mt19937_64 sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, std::string_view stream) : engine_(derive_seed(root, stream)) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  std::size_t below(std::size_t n);       // [0, n)
  double normal();                        // standard normal
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace partyvec
