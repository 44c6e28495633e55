#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace irwgan {

// Deterministic, serializable PRNG (xoshiro256++ seeded via splitmix64).
// Every sampling helper consumes a fixed number of raw draws so that runs
// are replayable from (seed, stream tag) alone:
//   uniform01     -> 1 draw
//   normal        -> 2 draws
//   uniform_index -> 1 draw
class Rng {
 public:
  Rng() : Rng(0) {}

  explicit Rng(std::uint64_t seed, std::string_view stream = "") {
    std::uint64_t x = seed ^ fnv1a(stream);
    for (auto& s : state_) s = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n), n >= 1
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform01() * static_cast<double>(n)) % n;
  }

  // standard normal via Box-Muller; always consumes exactly two draws
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = 0x1.0p-53;  // uniform01 can return 0
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::array<std::uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::array<std::uint64_t, 4> state_{};
};

}  // namespace irwgan
