#ifndef CTSURV_RANDOM_HPP
#define CTSURV_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "ctsurv/error.hpp"

namespace ctsurv {

// Draws are built directly on the raw 64-bit engine output so that every
// stream is identical across standard library implementations.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seed for (seed, a, b), e.g. (seed, trial, fold).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ (a + 0x632be59bd9b4e019ULL)) ^
                    (b + 0x85157af5ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    // Lemire-free rejection; n is always small here.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % n);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open0();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fold index per subject, stratified on the event indicator. Within each
/// stratum the subjects are shuffled and dealt round-robin.
inline std::vector<int> stratified_folds(std::span<const int> events, int n_folds,
                                         std::uint64_t seed) {
  if (n_folds < 2) throw Error(Errc::domain, "need at least 2 folds");
  std::vector<std::size_t> strata[2];
  for (std::size_t i = 0; i < events.size(); ++i) strata[events[i] ? 1 : 0].push_back(i);
  for (const auto& s : strata) {
    if (s.size() < static_cast<std::size_t>(n_folds)) {
      throw Error(Errc::too_few_per_stratum,
                  "stratum has " + std::to_string(s.size()) + " subjects for " +
                      std::to_string(n_folds) + " folds");
    }
  }
  std::vector<int> fold(events.size(), 0);
  Rng rng(derive_seed(seed, 0xf01d));
  for (auto& s : strata) {
    rng.shuffle(s);
    for (std::size_t k = 0; k < s.size(); ++k) fold[s[k]] = static_cast<int>(k % n_folds);
  }
  return fold;
}

}  // namespace ctsurv

#endif  // CTSURV_RANDOM_HPP
