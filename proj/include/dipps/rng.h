// Copyright 2026 The dipps Authors
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

#ifndef DIPPS_RNG_H_
#define DIPPS_RNG_H_

#include <cstdint>
#include <random>
#include <span>

namespace dipps {

// Mixes a 64-bit value with the SplitMix64 finalizer.
uint64_t SplitMix64(uint64_t x);

// Derives an independent seed for stream `stream` of `master_seed`. The
// derivation depends only on its arguments, so per-client and per-cell
// streams do not depend on scheduling order.
uint64_t DeriveSeed(uint64_t master_seed, uint64_t stream);

// Seeded pseudo-random source. Every variate is produced from the raw
// 64-bit engine output by code in this file, so streams are bit-identical
// across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(SplitMix64(seed)) {}

  static Rng ForStream(uint64_t master_seed, uint64_t stream) {
    return Rng(DeriveSeed(master_seed, stream));
  }

  uint64_t NextU64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double Uniform();

  // Uniform on (0, 1).
  double UniformOpen();

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Uniform integer in [0, n). n must be positive.
  uint64_t UniformInt(uint64_t n);

  bool Bernoulli(double p) { return Uniform() < p; }

  double StandardNormal();

  // Zero-mean Laplace variate with the given scale.
  double Laplace(double scale);

  // Index drawn with probability proportional to `weights` (non-negative,
  // positive sum).
  int Categorical(std::span<const double> weights);

  template <typename T>
  void Shuffle(std::span<T> items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(UniformInt(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace dipps

#endif  // DIPPS_RNG_H_
