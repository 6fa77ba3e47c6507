#ifndef DDCM_RNG_HPP
#define DDCM_RNG_HPP

#include <cmath>
#include <cstdint>

namespace ddcm {

/// Deterministic splitmix64 generator. Used everywhere instead of std::
/// distributions so that generated bytes are identical across platforms
/// and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Derives an independent stream from (seed, key...). Streams keyed by
  /// e.g. (seed, epoch, sample) never collide in practice and make results
  /// independent of worker count.
  template <typename... Keys>
  static Rng keyed(std::uint64_t seed, Keys... keys) {
    std::uint64_t s = mix(seed);
    ((s = mix(s ^ mix(static_cast<std::uint64_t>(keys)))), ...);
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection-free modulo is fine here: n is
  /// tiny compared to 2^64 so the bias is unobservable.
  std::uint64_t uniform_int(std::uint64_t n) { return n ? next_u64() % n : 0; }

  /// Standard normal via Box-Muller (deterministic, two u64 draws each).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ddcm

#endif  // DDCM_RNG_HPP
