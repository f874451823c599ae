#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sflex {

// xoshiro256++ with splitmix64 seeding. Self-contained so that draws and the
// serialized state mean the same thing on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) {
      x += 0x9e3779b97f4a7c15ull;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      w = z ^ (z >> 31);
    }
    have_gauss_ = false;
    gauss_ = 0.0;
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    if (n <= 0) throw std::runtime_error("uniform_int: n must be positive");
    // rejection sampling, unbiased
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return static_cast<int>(v % un);
  }

  // Box-Muller, one spare cached
  double gaussian() {
    if (have_gauss_) {
      have_gauss_ = false;
      return gauss_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    gauss_ = r * std::sin(a);
    have_gauss_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double std) { return mean + std * gaussian(); }

  std::string state_str() const {
    std::ostringstream os;
    os << std::hex << s_[0] << " " << s_[1] << " " << s_[2] << " " << s_[3] << " "
       << (have_gauss_ ? 1 : 0);
    os << " ";
    // cache the spare gaussian bit-exactly
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(gauss_));
    std::memcpy(&bits, &gauss_, sizeof(bits));
    os << bits;
    return os.str();
  }

  void set_state_str(const std::string& s) {
    std::istringstream is(s);
    int hg = 0;
    uint64_t bits = 0;
    is >> std::hex >> s_[0] >> s_[1] >> s_[2] >> s_[3] >> hg >> bits;
    if (!is) throw std::runtime_error("rng: bad state string");
    have_gauss_ = hg != 0;
    std::memcpy(&gauss_, &bits, sizeof(bits));
  }

 private:
  std::array<uint64_t, 4> s_{};
  bool have_gauss_ = false;
  double gauss_ = 0.0;
};

}  // namespace sflex
