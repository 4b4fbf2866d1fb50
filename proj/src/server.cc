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

#include "dipps/server.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "absl/strings/str_cat.h"
#include "dipps/status_macros.h"

namespace dipps {
namespace {

using Json = nlohmann::json;

Json ToJsonArray(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

absl::StatusOr<WeightedDataset> Normalized(const RecordMatrix& participants,
                                           Eigen::VectorXd raw) {
  const double total = raw.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    return absl::FailedPreconditionError(
        "estimated non-participant distribution is empty");
  }
  return WeightedDataset{participants, raw / total};
}

}  // namespace

int64_t ClassCounts::total() const {
  return std::accumulate(counts.begin(), counts.end(), int64_t{0});
}

Eigen::VectorXd ClassCounts::AsVector() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(counts.size()));
  for (size_t k = 0; k < counts.size(); ++k) {
    v[static_cast<Eigen::Index>(k)] = static_cast<double>(counts[k]);
  }
  return v;
}

absl::StatusOr<ClassCounts> TallyReports(std::span<const ClientReport> reports,
                                         int num_classes) {
  if (num_classes < 1) return absl::InvalidArgumentError("K must be >= 1");
  if (reports.empty()) return absl::InvalidArgumentError("no reports");
  ClassCounts out;
  out.counts.assign(static_cast<size_t>(num_classes), 0);
  for (const ClientReport& r : reports) {
    if (r.class_index < 0 || r.class_index >= num_classes) {
      return absl::OutOfRangeError(absl::StrCat(
          "report class ", r.class_index + 1, " outside 1..", num_classes));
    }
    ++out.counts[static_cast<size_t>(r.class_index)];
  }
  return out;
}

absl::StatusOr<ClusterMassEstimate> InvertExponentialCounts(
    const Eigen::VectorXd& counts, PrivacyBudget budget,
    const InversionOptions& options) {
  const Eigen::Index k = counts.size();
  if (k < 2) return absl::InvalidArgumentError("count inversion needs K >= 2");
  if (options.smoothing < 0.0 || options.floor < 0.0) {
    return absl::InvalidArgumentError("negative inversion option");
  }
  const Eigen::ArrayXd smoothed = counts.array() + options.smoothing;
  if ((smoothed <= 0.0).any()) {
    return absl::InvalidArgumentError(
        "zero count with smoothing disabled; log-ratio undefined");
  }
  // U_1 - U_k for every k, then U_1 = (1 + sum_k (U_1 - U_k)) / K.
  const double scale = 2.0 / budget.epsilon();
  const Eigen::ArrayXd gap = scale * (std::log(smoothed[0]) - smoothed.log());
  const double first = (1.0 + gap.sum()) / static_cast<double>(k);
  Eigen::VectorXd mass = (first - gap).matrix();
  if (options.floor > 0.0) {
    mass = mass.cwiseMax(options.floor);
    mass /= mass.sum();
  }
  return mass;
}

absl::StatusOr<ClusterMassEstimate> InvertExponentialCounts(
    const ClassCounts& counts, PrivacyBudget budget,
    const InversionOptions& options) {
  if (counts.total() <= 0) return absl::InvalidArgumentError("no reports");
  return InvertExponentialCounts(counts.AsVector(), budget, options);
}

absl::StatusOr<ClusterMassEstimate> DirectCountsToDistribution(
    const ClassCounts& counts) {
  const int64_t total = counts.total();
  if (counts.counts.empty() || total <= 0) {
    return absl::InvalidArgumentError("empty counts");
  }
  return ClusterMassEstimate(counts.AsVector() / static_cast<double>(total));
}

absl::StatusOr<Eigen::VectorXd> ClusterPropensity(
    const Eigen::MatrixXd& participant_rho, const ClusterMassEstimate& mass,
    int64_t num_non_participants) {
  if (participant_rho.rows() < 1) {
    return absl::InvalidArgumentError("no participant distributions");
  }
  if (participant_rho.cols() != mass.size()) {
    return absl::InvalidArgumentError("class count mismatch");
  }
  if (num_non_participants < 0) {
    return absl::InvalidArgumentError("negative non-participant count");
  }
  const Eigen::VectorXd sums = participant_rho.colwise().sum().transpose();
  const Eigen::VectorXd other =
      static_cast<double>(num_non_participants) * mass;
  Eigen::VectorXd scores(mass.size());
  for (Eigen::Index k = 0; k < mass.size(); ++k) {
    if (!(sums[k] > 0.0)) {
      return absl::FailedPreconditionError(
          absl::StrCat("class ", k + 1, " has no participant mass"));
    }
    if (other[k] < 0.0) {
      return absl::InvalidArgumentError("negative class mass");
    }
    scores[k] = sums[k] / (sums[k] + other[k]);
  }
  return scores;
}

double PointPropensity(const ClassDistribution& rho,
                       const Eigen::VectorXd& cluster_scores) {
  return rho.dot(cluster_scores);
}

Eigen::VectorXd PointPropensities(const Eigen::MatrixXd& participant_rho,
                                  const Eigen::VectorXd& cluster_scores) {
  return participant_rho * cluster_scores;
}

std::string WeightedDataset::ToCsv() const {
  return FormatCsv(records, "mass", &masses);
}

absl::StatusOr<Eigen::VectorXd> RawEntireMasses(
    const Eigen::VectorXd& point_scores, int64_t num_non_participants) {
  const double n = static_cast<double>(point_scores.size() + num_non_participants);
  Eigen::VectorXd raw(point_scores.size());
  for (Eigen::Index i = 0; i < point_scores.size(); ++i) {
    if (!(point_scores[i] > 0.0)) {
      return absl::InvalidArgumentError(
          absl::StrCat("zero propensity for participant ", i));
    }
    raw[i] = 1.0 / (n * point_scores[i]);
  }
  return raw;
}

absl::StatusOr<Eigen::VectorXd> RawNonParticipantMasses(
    const Eigen::VectorXd& point_scores, int64_t num_non_participants) {
  if (num_non_participants < 1) {
    return absl::InvalidArgumentError("no non-participants");
  }
  Eigen::VectorXd raw(point_scores.size());
  for (Eigen::Index i = 0; i < point_scores.size(); ++i) {
    const double e = point_scores[i];
    if (!(e > 0.0)) {
      return absl::InvalidArgumentError(
          absl::StrCat("zero propensity for participant ", i));
    }
    // Rounding in sum_k e~(k) rho_d(k) may exceed 1 by a few ulps.
    if (e > 1.0 + 1e-12) {
      return absl::InvalidArgumentError(
          absl::StrCat("propensity ", e, " > 1 for participant ", i));
    }
    raw[i] = std::max(0.0, 1.0 / e - 1.0) /
             static_cast<double>(num_non_participants);
  }
  return raw;
}

absl::StatusOr<WeightedDataset> ReweightEntire(
    const RecordMatrix& participants, const Eigen::VectorXd& point_scores,
    int64_t num_non_participants) {
  if (point_scores.size() != participants.rows()) {
    return absl::InvalidArgumentError("one propensity per participant required");
  }
  DIPPS_ASSIGN_OR_RETURN(Eigen::VectorXd raw,
                         RawEntireMasses(point_scores, num_non_participants));
  return Normalized(participants, std::move(raw));
}

absl::StatusOr<WeightedDataset> ReweightNonParticipant(
    const RecordMatrix& participants, const Eigen::VectorXd& point_scores,
    int64_t num_non_participants) {
  if (point_scores.size() != participants.rows()) {
    return absl::InvalidArgumentError("one propensity per participant required");
  }
  DIPPS_ASSIGN_OR_RETURN(
      Eigen::VectorXd raw,
      RawNonParticipantMasses(point_scores, num_non_participants));
  return Normalized(participants, std::move(raw));
}

Json BiasCorrection::DiagnosticsJson() const {
  return Json{{"cluster_mass", ToJsonArray(mass)},
              {"cluster_propensity", ToJsonArray(propensity.cluster_scores)},
              {"point_propensity", ToJsonArray(propensity.point_scores)}};
}

absl::StatusOr<BiasCorrection> CorrectBias(const RecordMatrix& participants,
                                           const Eigen::MatrixXd& participant_rho,
                                           const ClusterMassEstimate& mass,
                                           int64_t num_non_participants) {
  if (participant_rho.rows() != participants.rows()) {
    return absl::InvalidArgumentError("one class distribution per participant required");
  }
  BiasCorrection out;
  out.mass = mass;
  DIPPS_ASSIGN_OR_RETURN(
      out.propensity.cluster_scores,
      ClusterPropensity(participant_rho, mass, num_non_participants));
  out.propensity.point_scores =
      PointPropensities(participant_rho, out.propensity.cluster_scores);
  DIPPS_ASSIGN_OR_RETURN(out.entire,
                         ReweightEntire(participants, out.propensity.point_scores,
                                        num_non_participants));
  DIPPS_ASSIGN_OR_RETURN(
      out.non_participant,
      ReweightNonParticipant(participants, out.propensity.point_scores,
                             num_non_participants));
  return out;
}

}  // namespace dipps
