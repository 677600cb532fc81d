// Copyright 2026 The prosoflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PROSOFLOW_RNG_HPP_
#define PROSOFLOW_RNG_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "prosoflow/common.hpp"

namespace prosoflow {

// xoshiro256** seeded via splitmix64. Self-contained so that streams are
// reproducible across platforms and serializable into checkpoints.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  // Named stream: decorrelates per-purpose streams drawn from one run seed.
  Rng(std::uint64_t seed, const std::string& stream)
      : Rng(seed ^ fnv1a64(stream)) {}

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
    cached_ = false;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny relative to 2^64.
    return next_u64() % n;
  }

  double normal() {
    if (cached_) {
      cached_ = false;
      return cache_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 6.283185307179586476925286766559 * u2;
    cache_ = r * std::sin(th);
    cached_ = true;
    return r * std::cos(th);
  }

  Mat normal_mat(int rows, int cols, double stddev = 1.0) {
    Mat m(rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) m(r, c) = stddev * normal();
    return m;
  }

  Mat uniform_mat(int rows, int cols, double lo, double hi) {
    Mat m(rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) m(r, c) = uniform(lo, hi);
    return m;
  }

  std::array<std::uint64_t, 4> state() const { return {s_[0], s_[1], s_[2], s_[3]}; }
  void set_state(const std::array<std::uint64_t, 4>& st) {
    for (int i = 0; i < 4; ++i) s_[i] = st[i];
    cached_ = false;
  }

  std::uint64_t state_digest() const {
    return fnv1a64(s_, sizeof(s_));
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  std::uint64_t s_[4] = {};
  bool cached_ = false;
  double cache_ = 0.0;
};

}  // namespace prosoflow

#endif  // PROSOFLOW_RNG_HPP_
