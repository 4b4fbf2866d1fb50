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

#ifndef DIPPS_MODEL_H_
#define DIPPS_MODEL_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "Eigen/Cholesky"
#include "Eigen/Core"
#include "absl/status/statusor.h"
#include "dipps/data.h"
#include "json.hpp"

namespace dipps {

// Principal-component projection y = components * (x - mean).
struct PcaModel {
  Eigen::VectorXd mean;                       // m
  Eigen::MatrixXd components;                 // q x m, orthonormal rows
  Eigen::VectorXd explained_variance_ratio;   // q, non-increasing

  int input_dim() const { return static_cast<int>(mean.size()); }
  int output_dim() const { return static_cast<int>(components.rows()); }

  Eigen::VectorXd Project(const Eigen::VectorXd& record) const;
  Eigen::MatrixXd ProjectRows(const Eigen::MatrixXd& records) const;
};

// Smallest q such that the first q ratios sum to at least `variance_target`.
int ComponentsForVarianceTarget(std::span<const double> ratios,
                                double variance_target);

// PCA by eigendecomposition of the sample covariance (divisor n - 1). Each
// component is sign-normalized so its largest-magnitude entry is positive.
// Directions with zero variance are never selected.
absl::StatusOr<PcaModel> FitPca(const RecordMatrix& records,
                                double variance_target);

// Full-covariance Gaussian mixture.
struct GmmModel {
  Eigen::VectorXd weights;                     // K
  Eigen::MatrixXd means;                       // K x q
  std::vector<Eigen::MatrixXd> covariances;    // K of q x q

  int num_components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }
};

struct EmConfig {
  double tolerance = 1e-4;     // relative log-likelihood change
  int max_iterations = 200;
  int restarts = 5;
  double regularization = 1e-6;  // added to every covariance diagonal
  uint64_t seed = 0;
};

struct GmmFit {
  GmmModel model;
  // Total log-likelihood of the data under `model`.
  double log_likelihood = 0.0;
  // Log-likelihood after each M-step of the winning restart.
  std::vector<double> log_likelihood_trace;
  int iterations = 0;
  bool converged = false;
};

// Fits a K-component GMM by EM; the best of `config.restarts` runs by final
// log-likelihood is returned. Restarts use independent seed-derived streams
// and are seeded by D^2-weighted (k-means++) center selection.
absl::StatusOr<GmmFit> FitGmm(const Eigen::MatrixXd& points, int k,
                              const EmConfig& config);

// Elbow rule on a log-likelihood curve: returns the interior grid value K
// maximizing 2 L(K) - L(K-1) - L(K+1), the smallest on ties.
absl::StatusOr<int> ElbowFromLogLikelihoods(std::span<const int> k_grid,
                                            std::span<const double> log_likelihoods);

// Fits a GMM for every K in the (ascending) grid and applies the elbow rule.
absl::StatusOr<int> SelectKElbow(const Eigen::MatrixXd& points,
                                 std::span<const int> k_grid,
                                 const EmConfig& config);

std::vector<int> DefaultKGrid();

// Length-K probability vector over classes.
using ClassDistribution = Eigen::VectorXd;

// PCA followed by a GMM over the projected space. Immutable once built;
// safe to share across threads.
class ClassAssignmentModel {
 public:
  static constexpr int kFormatVersion = 1;

  static absl::StatusOr<ClassAssignmentModel> Create(PcaModel pca,
                                                     GmmModel gmm);

  const PcaModel& pca() const { return pca_; }
  const GmmModel& gmm() const { return gmm_; }
  int num_classes() const { return gmm_.num_components(); }
  int input_dim() const { return pca_.input_dim(); }

  // Posterior responsibilities of the mixture components for `record`.
  absl::StatusOr<ClassDistribution> Assign(const Eigen::VectorXd& record) const;

  // One distribution per row of `records`, as rows of an n x K matrix.
  absl::StatusOr<Eigen::MatrixXd> AssignRows(
      const Eigen::MatrixXd& records) const;

  // Versioned JSON broadcast document.
  nlohmann::json ToJson() const;
  std::string Serialize() const;
  static absl::StatusOr<ClassAssignmentModel> FromJson(
      const nlohmann::json& doc);
  static absl::StatusOr<ClassAssignmentModel> Deserialize(
      const std::string& document);

 private:
  ClassAssignmentModel(PcaModel pca, GmmModel gmm);

  Eigen::VectorXd ResponsibilitiesOfProjected(const Eigen::VectorXd& y) const;

  PcaModel pca_;
  GmmModel gmm_;
  // Per component: lower Cholesky factor and log normalizing constant
  // log w_k - 0.5 (q log 2 pi + log det Sigma_k).
  std::vector<Eigen::MatrixXd> chol_;
  std::vector<double> log_norm_;
};

struct ModelFitConfig {
  double pca_variance_target = 0.8;
  // Fixed component count; when <= 0 the elbow rule over `k_grid` is used.
  int k = 0;
  std::vector<int> k_grid = DefaultKGrid();
  EmConfig em;
};

struct ModelFitResult {
  ClassAssignmentModel model;
  int selected_k;
  double log_likelihood;
};

// Fits PCA then GMM on participant records.
absl::StatusOr<ModelFitResult> FitClassAssignmentModel(
    const RecordMatrix& participants, const ModelFitConfig& config);

}  // namespace dipps

#endif  // DIPPS_MODEL_H_
