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

#ifndef DIPPS_EVAL_H_
#define DIPPS_EVAL_H_

#include <string>

#include "Eigen/Core"
#include "absl/status/statusor.h"
#include "dipps/data.h"
#include "dipps/server.h"
#include "dipps/transport.h"

namespace dipps {

// Finite weighted point set; masses sum to 1.
struct DiscreteDistribution {
  Eigen::MatrixXd points;  // rows are support points
  Eigen::VectorXd masses;

  int dim() const { return static_cast<int>(points.cols()); }
  Eigen::Index size() const { return points.rows(); }

  absl::Status Validate() const;

  static DiscreteDistribution Uniform(const Eigen::MatrixXd& points);
  static DiscreteDistribution FromWeighted(const WeightedDataset& weighted);
};

// Drops zero-mass points and merges identical support points.
DiscreteDistribution Canonicalize(const DiscreteDistribution& d);

// (a_weight * A + (1 - a_weight) * B) over the union of supports.
DiscreteDistribution Mixture(const DiscreteDistribution& a,
                             const DiscreteDistribution& b, double a_weight);

// Wasserstein-1 distance with Euclidean ground cost, solved exactly as a
// transportation problem.
absl::StatusOr<double> Wasserstein1(const DiscreteDistribution& a,
                                    const DiscreteDistribution& b,
                                    const TransportOptions& options = {});

// Uniform random subsample of at most `max_points` support points with
// renormalized masses; returned unchanged when already small enough.
DiscreteDistribution Subsample(const DiscreteDistribution& d,
                               Eigen::Index max_points, uint64_t seed);

Eigen::VectorXd WeightedMean(const DiscreteDistribution& d);
// Population form: sum_i w_i (x_i - mean)^2.
Eigen::VectorXd WeightedVariance(const DiscreteDistribution& d);
// Lower weighted median per attribute: smallest value whose cumulative mass
// reaches one half.
Eigen::VectorXd WeightedMedian(const DiscreteDistribution& d);

struct StatReport {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::VectorXd median;

  static StatReport Of(const DiscreteDistribution& d);
};

// sum_j |estimate_j - truth_j| / m.
absl::StatusOr<double> MeanAbsoluteError(const Eigen::VectorXd& estimate,
                                         const Eigen::VectorXd& truth);

struct StatErrors {
  double mean = 0.0;
  double variance = 0.0;
  double median = 0.0;
};

absl::StatusOr<StatErrors> MaePerAttribute(const StatReport& estimate,
                                           const StatReport& truth);

// Baseline that ignores the non-participants.
DiscreteDistribution NaiveEstimate(const RecordMatrix& participants);

}  // namespace dipps

#endif  // DIPPS_EVAL_H_
