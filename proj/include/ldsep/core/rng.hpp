#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>

#include "tensor.hpp"

namespace ldsep {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic PRNG (xoshiro256++) with explicitly defined transforms, so
// sequences are identical across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    for (auto& w : s_) {
      seed = splitmix64(seed);
      w = seed;
    }
    have_spare_ = false;
  }

  // Derive an independent stream from this seed plus a tag chain.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix64(seed);
    for (auto t : tags) h = splitmix64(h ^ t);
    return Rng(h);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl_(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl_(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t integer(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Tensor normal_tensor(std::vector<std::size_t> shape, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * normal();
    return t;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << std::setprecision(17) << s_[0] << ' ' << s_[1] << ' ' << s_[2] << ' '
       << s_[3] << ' ' << (have_spare_ ? 1 : 0) << ' ' << spare_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    int hs = 0;
    is >> s_[0] >> s_[1] >> s_[2] >> s_[3] >> hs >> spare_;
    have_spare_ = hs != 0;
  }

 private:
  static std::uint64_t rotl_(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4] = {};
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ldsep
