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

#include "dipps/ldp.h"

#include <algorithm>
#include <cmath>

#include "absl/strings/str_cat.h"

namespace dipps {

absl::StatusOr<PrivacyBudget> PrivacyBudget::Create(double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    return absl::InvalidArgumentError(
        absl::StrCat("epsilon must be a positive finite number, got ", epsilon));
  }
  return PrivacyBudget(epsilon);
}

ClassDistribution ExpMechDistribution(const ClassDistribution& rho,
                                      PrivacyBudget budget) {
  const Eigen::ArrayXd scores = 0.5 * budget.epsilon() * rho.array();
  const Eigen::ArrayXd unnormalized = (scores - scores.maxCoeff()).exp();
  return (unnormalized / unnormalized.sum()).matrix();
}

ClientReport ExpMechSample(const ClassDistribution& rho, PrivacyBudget budget,
                           Rng& rng) {
  const ClassDistribution p = ExpMechDistribution(rho, budget);
  return ClientReport{rng.Categorical(std::span<const double>(p.data(), p.size()))};
}

ClientReport DirectSample(const ClassDistribution& rho, Rng& rng) {
  return ClientReport{
      rng.Categorical(std::span<const double>(rho.data(), rho.size()))};
}

double LaplaceScale(int num_attributes, PrivacyBudget budget) {
  return 2.0 * num_attributes / budget.epsilon();
}

Eigen::VectorXd LaplacePerturbRecord(const Eigen::VectorXd& record,
                                     PrivacyBudget budget, Rng& rng) {
  const double scale = LaplaceScale(static_cast<int>(record.size()), budget);
  Eigen::VectorXd out = record;
  for (Eigen::Index j = 0; j < out.size(); ++j) out[j] += rng.Laplace(scale);
  return out;
}

double DuchiBound(PrivacyBudget budget) {
  const double e = std::exp(budget.epsilon());
  return (e + 1.0) / (e - 1.0);
}

double DuchiPerturb(double x, PrivacyBudget budget, Rng& rng) {
  const double e = std::exp(budget.epsilon());
  const double bound = (e + 1.0) / (e - 1.0);
  const double p_plus = 0.5 + x * (e - 1.0) / (2.0 * (e + 1.0));
  return rng.Bernoulli(p_plus) ? bound : -bound;
}

double PiecewiseBound(PrivacyBudget budget) {
  const double h = std::exp(budget.epsilon() / 2.0);
  return (h + 1.0) / (h - 1.0);
}

double PiecewisePerturb(double x, PrivacyBudget budget, Rng& rng) {
  const double h = std::exp(budget.epsilon() / 2.0);
  const double c = (h + 1.0) / (h - 1.0);
  const double left = (c + 1.0) / 2.0 * x - (c - 1.0) / 2.0;
  const double right = left + c - 1.0;
  if (rng.Bernoulli(h / (h + 1.0))) {
    return rng.Uniform(left, right);
  }
  // Uniform over [-C, left) U (right, C], split by length.
  const double low_len = left + c;
  const double high_len = c - right;
  const double u = rng.Uniform() * (low_len + high_len);
  return u < low_len ? -c + u : right + (u - low_len);
}

double HybridPiecewiseProbability(PrivacyBudget budget) {
  if (budget.epsilon() <= kHybridEpsilonThreshold) return 0.0;
  return 1.0 - std::exp(-budget.epsilon() / 2.0);
}

double HybridPerturb(double x, PrivacyBudget budget, Rng& rng) {
  if (budget.epsilon() <= kHybridEpsilonThreshold) {
    return DuchiPerturb(x, budget, rng);
  }
  if (rng.Bernoulli(HybridPiecewiseProbability(budget))) {
    return PiecewisePerturb(x, budget, rng);
  }
  return DuchiPerturb(x, budget, rng);
}

AttributeReport HybridPerturbRecord(const Eigen::VectorXd& record,
                                    PrivacyBudget budget, Rng& rng) {
  const auto m = static_cast<uint64_t>(record.size());
  const int j = static_cast<int>(rng.UniformInt(m));
  return AttributeReport{
      j, static_cast<double>(m) * HybridPerturb(record[j], budget, rng)};
}

}  // namespace dipps
