#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

namespace matwm {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// reproducible across platforms and serializable byte-for-byte, which the
// checkpoint-resume contract needs (std::mt19937 + std distributions keep
// unspecified internal state).
class Rng {
 public:
  Rng() : Rng(0x9e3779b97f4a7c15ull) {}

  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : s_) {
      // splitmix64
      x += 0x9e3779b97f4a7c15ull;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      word = z ^ (z >> 31);
    }
    has_spare_ = false;
    spare_ = 0.0;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller; the spare is part of serialized state.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = mag * std::sin(two_pi * u2);
    has_spare_ = true;
    return mag * std::cos(two_pi * u2);
  }

  // Index sample from unnormalized non-negative weights (CDF inversion).
  template <typename T>
  int categorical(std::span<const T> weights) {
    double total = 0.0;
    for (const T w : weights) total += static_cast<double>(w);
    if (!(total > 0.0)) throw std::domain_error("Rng::categorical: weights sum to zero");
    double u = uniform() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      u -= static_cast<double>(weights[i]);
      if (u < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  // Derives an independent stream; used for evaluation so that eval rollouts
  // never perturb the training stream.
  Rng fork(uint64_t salt) {
    Rng child(next_u64() ^ (salt * 0x9e3779b97f4a7c15ull + 0xd1b54a32d192ed03ull));
    return child;
  }

  struct State {
    uint64_t s[4];
    uint8_t has_spare;
    double spare;
  };

  State state() const {
    State st{};
    for (int i = 0; i < 4; ++i) st.s[i] = s_[i];
    st.has_spare = has_spare_ ? 1 : 0;
    st.spare = spare_;
    return st;
  }

  void set_state(const State& st) {
    for (int i = 0; i < 4; ++i) s_[i] = st.s[i];
    has_spare_ = st.has_spare != 0;
    spare_ = st.spare;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace matwm
