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

#ifndef DIPPS_LDP_H_
#define DIPPS_LDP_H_

#include <span>

#include "Eigen/Core"
#include "absl/status/statusor.h"
#include "dipps/model.h"
#include "dipps/rng.h"

namespace dipps {

// Privacy parameter epsilon of a local randomizer.
class PrivacyBudget {
 public:
  static absl::StatusOr<PrivacyBudget> Create(double epsilon);

  double epsilon() const { return epsilon_; }

 private:
  explicit PrivacyBudget(double epsilon) : epsilon_(epsilon) {}
  double epsilon_;
};

// The only message a categorical client sends. `class_index` is 0-based in
// memory and written 1-based on the wire.
struct ClientReport {
  int class_index = 0;

  friend bool operator==(const ClientReport&, const ClientReport&) = default;
};

// Exponential mechanism with utility u(rho, k) = rho_k and sensitivity 1:
// Pr[k] = exp(eps rho_k / 2) / sum_l exp(eps rho_l / 2).
ClassDistribution ExpMechDistribution(const ClassDistribution& rho,
                                      PrivacyBudget budget);

ClientReport ExpMechSample(const ClassDistribution& rho, PrivacyBudget budget,
                           Rng& rng);

// Non-private baseline: class k with probability rho_k.
ClientReport DirectSample(const ClassDistribution& rho, Rng& rng);

// Adds independent Laplace noise of scale 2m / eps to each of the m
// attributes. Output is not clipped.
Eigen::VectorXd LaplacePerturbRecord(const Eigen::VectorXd& record,
                                     PrivacyBudget budget, Rng& rng);

double LaplaceScale(int num_attributes, PrivacyBudget budget);

// Duchi et al. one-dimensional mechanism: returns +-(e^eps+1)/(e^eps-1).
double DuchiBound(PrivacyBudget budget);
double DuchiPerturb(double x, PrivacyBudget budget, Rng& rng);

// Piecewise mechanism with output support [-C, C],
// C = (e^{eps/2}+1)/(e^{eps/2}-1).
double PiecewiseBound(PrivacyBudget budget);
double PiecewisePerturb(double x, PrivacyBudget budget, Rng& rng);

// Mixes Piecewise (probability 1 - e^{-eps/2}) and Duchi above the
// threshold eps > 0.61; Duchi only below it.
inline constexpr double kHybridEpsilonThreshold = 0.61;
double HybridPiecewiseProbability(PrivacyBudget budget);
double HybridPerturb(double x, PrivacyBudget budget, Rng& rng);

// Scalar report for one sampled attribute of a record.
struct AttributeReport {
  int attribute = 0;  // 0-based in memory
  double value = 0.0;

  friend bool operator==(const AttributeReport&, const AttributeReport&) = default;
};

// Samples one attribute uniformly, perturbs it with HybridPerturb at the
// full budget, and scales the result by m so that per-attribute sums over
// clients divided by the client count estimate attribute means.
AttributeReport HybridPerturbRecord(const Eigen::VectorXd& record,
                                    PrivacyBudget budget, Rng& rng);

}  // namespace dipps

#endif  // DIPPS_LDP_H_
