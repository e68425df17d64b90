// Copyright 2026 The FAVA-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FAVA_COMMON_HPP_
#define FAVA_COMMON_HPP_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace fava {

// Row-major so that a (rows*inner) x channels buffer can be reinterpreted as
// rows x (inner*channels) without copying.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 64-bit mixing function (splitmix64 finalizer).
constexpr uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent seed for a named substream, optionally indexed
// (e.g. by training step), so that every consumer of randomness can be
// replayed without carrying generator state around.
uint64_t derive_seed(uint64_t seed, std::string_view stream, uint64_t index = 0);

// Thin wrapper over mt19937_64 with distribution code written out here so
// draws are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  Rng(uint64_t seed, std::string_view stream, uint64_t index = 0)
      : engine_(derive_seed(seed, stream, index)) {}

  uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n);
  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) { return lo + uniform_int(hi - lo + 1); }
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Counter-based standard normal stream: element i depends only on
// (key, i), so matrices can be regenerated in any order.
double counter_normal(uint64_t key, uint64_t counter);

}  // namespace fava

#endif  // FAVA_COMMON_HPP_
