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

#include "dipps/rng.h"

#include <cmath>
#include <numbers>

namespace dipps {

uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t DeriveSeed(uint64_t master_seed, uint64_t stream) {
  return SplitMix64(SplitMix64(master_seed) ^
                    SplitMix64(stream + 0x632be59bd9b4e019ULL));
}

double Rng::Uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::UniformOpen() {
  double u;
  do {
    u = Uniform();
  } while (u == 0.0);
  return u;
}

uint64_t Rng::UniformInt(uint64_t n) {
  // Rejection sampling removes modulo bias.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::StandardNormal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  const double u1 = UniformOpen();
  const double u2 = Uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_normal_ = true;
  return radius * std::cos(angle);
}

double Rng::Laplace(double scale) {
  // Inverse CDF on u in (-1/2, 1/2).
  const double u = UniformOpen() - 0.5;
  const double magnitude = -scale * std::log1p(-2.0 * std::abs(u));
  return u < 0 ? -magnitude : magnitude;
}

int Rng::Categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  const double target = Uniform() * total;
  double cumulative = 0.0;
  int last_positive = 0;
  for (size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    cumulative += weights[k];
    last_positive = static_cast<int>(k);
    if (target < cumulative) return last_positive;
  }
  // Rounding can leave target == cumulative at the end.
  return last_positive;
}

}  // namespace dipps
