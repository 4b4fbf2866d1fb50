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

#ifndef DIPPS_SERVER_H_
#define DIPPS_SERVER_H_

#include <cstdint>
#include <span>
#include <vector>

#include "Eigen/Core"
#include "absl/status/statusor.h"
#include "dipps/data.h"
#include "dipps/ldp.h"
#include "json.hpp"

namespace dipps {

// Number of reports received for each class.
struct ClassCounts {
  std::vector<int64_t> counts;

  int64_t total() const;
  Eigen::VectorXd AsVector() const;
};

absl::StatusOr<ClassCounts> TallyReports(std::span<const ClientReport> reports,
                                         int num_classes);

// Estimated class mass of the non-participants; sums to 1.
using ClusterMassEstimate = Eigen::VectorXd;

struct InversionOptions {
  // Added to every count before log-ratios are taken.
  double smoothing = 0.5;
  // Entries are clipped to at least this value, then renormalized. Zero
  // disables clipping.
  double floor = 1e-6;
};

// Undoes the exponential-mechanism softmax on (possibly fractional) counts:
// U_k - U_l = (2 / eps) log(c_k / c_l) with sum_k U_k = 1.
absl::StatusOr<ClusterMassEstimate> InvertExponentialCounts(
    const Eigen::VectorXd& counts, PrivacyBudget budget,
    const InversionOptions& options = {});

absl::StatusOr<ClusterMassEstimate> InvertExponentialCounts(
    const ClassCounts& counts, PrivacyBudget budget,
    const InversionOptions& options = {});

// Relative frequencies of directly sampled classes.
absl::StatusOr<ClusterMassEstimate> DirectCountsToDistribution(
    const ClassCounts& counts);

// Per-class propensity e~(k) = S_k / (S_k + n0 U_k), where S_k is the total
// participant responsibility of class k.
absl::StatusOr<Eigen::VectorXd> ClusterPropensity(
    const Eigen::MatrixXd& participant_rho, const ClusterMassEstimate& mass,
    int64_t num_non_participants);

// e(d) = sum_k e~(k) rho_d(k).
double PointPropensity(const ClassDistribution& rho,
                       const Eigen::VectorXd& cluster_scores);

Eigen::VectorXd PointPropensities(const Eigen::MatrixXd& participant_rho,
                                  const Eigen::VectorXd& cluster_scores);

struct PropensityScores {
  Eigen::VectorXd cluster_scores;
  Eigen::VectorXd point_scores;
};

// Participant records with a probability mass per record.
struct WeightedDataset {
  RecordMatrix records;
  Eigen::VectorXd masses;

  // CSV with a trailing `mass` column.
  std::string ToCsv() const;
};

// Pr(D = d) estimate: raw mass 1 / ((n0 + n1) e(d)), normalized.
absl::StatusOr<WeightedDataset> ReweightEntire(
    const RecordMatrix& participants, const Eigen::VectorXd& point_scores,
    int64_t num_non_participants);

// Pr(D = d | Z = 0) estimate: raw mass (1 / e(d) - 1) / n0, normalized.
absl::StatusOr<WeightedDataset> ReweightNonParticipant(
    const RecordMatrix& participants, const Eigen::VectorXd& point_scores,
    int64_t num_non_participants);

// Unnormalized masses, exposed for diagnostics and tests.
absl::StatusOr<Eigen::VectorXd> RawEntireMasses(
    const Eigen::VectorXd& point_scores, int64_t num_non_participants);
absl::StatusOr<Eigen::VectorXd> RawNonParticipantMasses(
    const Eigen::VectorXd& point_scores, int64_t num_non_participants);

// Full server-side estimate from a class mass vector.
struct BiasCorrection {
  ClusterMassEstimate mass;
  PropensityScores propensity;
  WeightedDataset entire;
  WeightedDataset non_participant;

  nlohmann::json DiagnosticsJson() const;
};

absl::StatusOr<BiasCorrection> CorrectBias(const RecordMatrix& participants,
                                           const Eigen::MatrixXd& participant_rho,
                                           const ClusterMassEstimate& mass,
                                           int64_t num_non_participants);

}  // namespace dipps

#endif  // DIPPS_SERVER_H_
