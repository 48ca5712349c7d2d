// Copyright 2026 The widefluct Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef WIDEFLUCT_RNG_HPP
#define WIDEFLUCT_RNG_HPP

#include <cmath>
#include <cstdint>

namespace wf {

// Counter-based stream: output i is a pure function of (key, i), so streams can
// be split per ensemble member and sampled in any order with identical results
// on every platform.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_key(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master ^ 0x6a09e667f3bcc909ULL) + stream);
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t start = 0) : key_(key), ctr_(start) {}

  static CounterRng from(std::uint64_t master, std::uint64_t stream) {
    return CounterRng(derive_key(master, stream));
  }

  std::uint64_t next_u64() { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * (++ctr_)); }

  // Uniform in (0, 1]; never returns 0 so log() below is safe.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_uniform();
    double u2 = next_uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace wf

#endif  // WIDEFLUCT_RNG_HPP
