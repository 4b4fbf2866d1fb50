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

#include "dipps/model.h"

#include <cmath>
#include <vector>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "dipps/data.h"
#include "dipps/rng.h"
#include "test_util.h"

namespace dipps {
namespace {

using ::dipps::testing::StatusIs;
using ::testing::HasSubstr;

RecordMatrix Records(Eigen::MatrixXd values) {
  RecordMatrix r;
  r.values = std::move(values);
  for (Eigen::Index j = 0; j < r.values.cols(); ++j) {
    r.feature_names.push_back("f" + std::to_string(j));
  }
  return r;
}

// Two spherical blobs centred at (-5, -5) and (5, 5).
Eigen::MatrixXd TwoBlobs(int per_blob, uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(2 * per_blob, 2);
  for (int i = 0; i < 2 * per_blob; ++i) {
    const double c = i < per_blob ? -5.0 : 5.0;
    x(i, 0) = c + rng.StandardNormal();
    x(i, 1) = c + rng.StandardNormal();
  }
  return x;
}

TEST(PcaTest, ComponentsForVarianceTarget) {
  const std::vector<double> ratios = {0.6, 0.25, 0.10, 0.05};
  EXPECT_EQ(ComponentsForVarianceTarget(ratios, 0.8), 2);
  EXPECT_EQ(ComponentsForVarianceTarget(ratios, 1.0), 4);
  EXPECT_EQ(ComponentsForVarianceTarget(ratios, 0.5), 1);
}

TEST(PcaTest, FullTargetKeepsFullRank) {
  Rng rng(1);
  Eigen::MatrixXd x(100, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.StandardNormal();
  auto pca = FitPca(Records(x), 1.0);
  DIPPS_ASSERT_OK(pca);
  EXPECT_EQ(pca->output_dim(), 4);
  // Orthonormal rows, non-increasing positive ratios summing to <= 1.
  EXPECT_LE((pca->components * pca->components.transpose() -
             Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  for (int i = 0; i < 4; ++i) {
    EXPECT_GT(pca->explained_variance_ratio[i], 0.0);
    if (i > 0) {
      EXPECT_LE(pca->explained_variance_ratio[i], pca->explained_variance_ratio[i - 1]);
    }
  }
  EXPECT_LE(pca->explained_variance_ratio.sum(), 1.0 + 1e-9);
  // Reconstruction with every component reproduces the centred data.
  const Eigen::MatrixXd y = pca->ProjectRows(x);
  const Eigen::MatrixXd centered = x.rowwise() - pca->mean.transpose();
  EXPECT_LE((y * pca->components - centered).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(PcaTest, CollinearDataHasOneComponent) {
  // Points on the line y = 2x: the only direction is (1, 2) / sqrt(5).
  Eigen::MatrixXd x(5, 2);
  x << 0, 0, 1, 2, 2, 4, 3, 6, -1, -2;
  auto pca = FitPca(Records(x), 0.8);
  DIPPS_ASSERT_OK(pca);
  ASSERT_EQ(pca->output_dim(), 1);
  EXPECT_NEAR(pca->explained_variance_ratio[0], 1.0, 1e-12);
  EXPECT_NEAR(pca->components(0, 0), 1.0 / std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(pca->components(0, 1), 2.0 / std::sqrt(5.0), 1e-12);
}

TEST(PcaTest, Errors) {
  Eigen::MatrixXd one(1, 2);
  one << 1, 2;
  EXPECT_FALSE(FitPca(Records(one), 0.8).ok());
  Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(4, 2);
  EXPECT_FALSE(FitPca(Records(constant), 0.8).ok());
  EXPECT_FALSE(FitPca(Records(TwoBlobs(5, 1)), 0.0).ok());
  EXPECT_FALSE(FitPca(Records(TwoBlobs(5, 1)), 1.5).ok());
}

TEST(PcaTest, SignConvention) {
  auto pca = FitPca(Records(TwoBlobs(50, 3)), 1.0);
  DIPPS_ASSERT_OK(pca);
  for (Eigen::Index r = 0; r < pca->components.rows(); ++r) {
    Eigen::Index arg;
    pca->components.row(r).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(pca->components(r, arg), 0.0);
  }
}

TEST(GmmTest, SingleComponentIsClosedForm) {
  const Eigen::MatrixXd x = TwoBlobs(30, 2);
  EmConfig config;
  auto fit = FitGmm(x, 1, config);
  DIPPS_ASSERT_OK(fit);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows());
  cov.diagonal().array() += config.regularization;
  EXPECT_DOUBLE_EQ(fit->model.weights[0], 1.0);
  EXPECT_LE((fit->model.means.row(0) - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((fit->model.covariances[0] - cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GmmTest, RecoversSeparatedBlobs) {
  auto fit = FitGmm(TwoBlobs(200, 4), 2, EmConfig{});
  DIPPS_ASSERT_OK(fit);
  Eigen::MatrixXd means = fit->model.means;
  if (means(0, 0) > means(1, 0)) means.row(0).swap(means.row(1));
  EXPECT_NEAR(means(0, 0), -5.0, 0.1 + 3 * 1.0 / std::sqrt(200.0));
  EXPECT_NEAR(means(0, 1), -5.0, 0.1 + 3 * 1.0 / std::sqrt(200.0));
  EXPECT_NEAR(means(1, 0), 5.0, 0.1 + 3 * 1.0 / std::sqrt(200.0));
  EXPECT_NEAR(means(1, 1), 5.0, 0.1 + 3 * 1.0 / std::sqrt(200.0));
}

TEST(GmmTest, LogLikelihoodNonDecreasing) {
  Rng rng(5);
  Eigen::MatrixXd x(300, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.StandardNormal();
  EmConfig config;
  config.tolerance = 1e-12;
  config.max_iterations = 100;
  for (int k : {2, 3, 4}) {
    auto fit = FitGmm(x, k, config);
    DIPPS_ASSERT_OK(fit);
    const auto& trace = fit->log_likelihood_trace;
    ASSERT_GE(trace.size(), 2u);
    for (size_t t = 1; t < trace.size(); ++t) {
      EXPECT_GE(trace[t], trace[t - 1] - 1e-8 * std::abs(trace[t - 1]))
          << "k=" << k << " iteration " << t;
    }
  }
}

TEST(GmmTest, Errors) {
  const Eigen::MatrixXd x = TwoBlobs(2, 1);
  EXPECT_FALSE(FitGmm(x, 0, EmConfig{}).ok());
  EXPECT_FALSE(FitGmm(x, 5, EmConfig{}).ok());
}

TEST(GmmTest, DeterministicUnderSeed) {
  EmConfig config;
  config.seed = 17;
  auto a = FitGmm(TwoBlobs(50, 6), 3, config);
  auto b = FitGmm(TwoBlobs(50, 6), 3, config);
  DIPPS_ASSERT_OK(a);
  DIPPS_ASSERT_OK(b);
  EXPECT_EQ(a->model.means, b->model.means);
  EXPECT_EQ(a->model.weights, b->model.weights);
}

TEST(ElbowTest, HandComputedCurve) {
  const std::vector<int> grid = {1, 2, 3, 4, 5};
  const std::vector<double> ll = {-1000, -700, -600, -580, -575};
  auto k = ElbowFromLogLikelihoods(grid, ll);
  DIPPS_ASSERT_OK(k);
  EXPECT_EQ(*k, 2);
}

TEST(ElbowTest, LinearCurveTiesToSmallest) {
  const std::vector<int> grid = {2, 3, 4, 5};
  const std::vector<double> ll = {-100, -90, -80, -70};
  auto k = ElbowFromLogLikelihoods(grid, ll);
  DIPPS_ASSERT_OK(k);
  EXPECT_EQ(*k, 3);
}

TEST(ElbowTest, ShortGridRejected) {
  const std::vector<int> grid = {1, 2};
  const std::vector<double> ll = {-10, -5};
  EXPECT_FALSE(ElbowFromLogLikelihoods(grid, ll).ok());
  const std::vector<int> unsorted = {3, 2, 4};
  EXPECT_FALSE(SelectKElbow(TwoBlobs(20, 1), unsorted, EmConfig{}).ok());
}

TEST(ElbowTest, PicksTwoForTwoBlobs) {
  const std::vector<int> grid = {1, 2, 3, 4};
  auto k = SelectKElbow(TwoBlobs(100, 8), grid, EmConfig{});
  DIPPS_ASSERT_OK(k);
  EXPECT_EQ(*k, 2);
}

// A model with identity PCA in 2D and the given unit-variance components.
ClassAssignmentModel MakeModel(const std::vector<Eigen::Vector2d>& means,
                               const std::vector<double>& weights) {
  PcaModel pca;
  pca.mean = Eigen::Vector2d::Zero();
  pca.components = Eigen::Matrix2d::Identity();
  pca.explained_variance_ratio = Eigen::Vector2d(0.5, 0.5);
  GmmModel gmm;
  const int k = static_cast<int>(means.size());
  gmm.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(), k);
  gmm.means.resize(k, 2);
  for (int c = 0; c < k; ++c) gmm.means.row(c) = means[c].transpose();
  gmm.covariances.assign(k, Eigen::Matrix2d::Identity());
  auto model = ClassAssignmentModel::Create(pca, gmm);
  EXPECT_TRUE(model.ok());
  return *model;
}

TEST(AssignTest, EquidistantPointIsHalfHalf) {
  const auto model = MakeModel({{-1, 0}, {1, 0}}, {0.5, 0.5});
  auto rho = model.Assign(Eigen::Vector2d(0, 3));
  DIPPS_ASSERT_OK(rho);
  EXPECT_NEAR((*rho)[0], 0.5, 1e-15);
  EXPECT_NEAR((*rho)[1], 0.5, 1e-15);
}

TEST(AssignTest, PointAtSeparatedMean) {
  const auto model = MakeModel({{0, 0}, {10, 0}, {0, 10}}, {0.2, 0.4, 0.4});
  auto rho = model.Assign(Eigen::Vector2d(0, 0));
  DIPPS_ASSERT_OK(rho);
  EXPECT_GT((*rho)[0], 0.99);
  EXPECT_NEAR(rho->sum(), 1.0, 1e-12);
}

TEST(AssignTest, SingleComponentAndDimensionMismatch) {
  const auto model = MakeModel({{3, 3}}, {1.0});
  auto rho = model.Assign(Eigen::Vector2d(-40, 7));
  DIPPS_ASSERT_OK(rho);
  EXPECT_EQ(rho->size(), 1);
  EXPECT_DOUBLE_EQ((*rho)[0], 1.0);
  EXPECT_FALSE(model.Assign(Eigen::Vector3d(0, 0, 0)).ok());
}

TEST(AssignTest, FarPointStaysValid) {
  const auto model = MakeModel({{-1, 0}, {1, 0}}, {0.5, 0.5});
  auto rho = model.Assign(Eigen::Vector2d(1e6, -1e6));
  DIPPS_ASSERT_OK(rho);
  EXPECT_TRUE(rho->allFinite());
  EXPECT_NEAR(rho->sum(), 1.0, 1e-9);
  EXPECT_GE(rho->minCoeff(), 0.0);
}

TEST(SerializationTest, RoundTripGivesIdenticalAssignments) {
  ModelFitConfig config;
  config.k = 2;
  config.pca_variance_target = 1.0;
  auto fit = FitClassAssignmentModel(Records(TwoBlobs(50, 10)), config);
  DIPPS_ASSERT_OK(fit);
  auto back = ClassAssignmentModel::Deserialize(fit->model.Serialize());
  DIPPS_ASSERT_OK(back);
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector2d d(rng.Uniform(-8, 8), rng.Uniform(-8, 8));
    auto a = fit->model.Assign(d);
    auto b = back->Assign(d);
    DIPPS_ASSERT_OK(a);
    DIPPS_ASSERT_OK(b);
    EXPECT_LE((*a - *b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SerializationTest, TruncatedDocument) {
  const auto model = MakeModel({{-1, 0}, {1, 0}}, {0.5, 0.5});
  const std::string doc = model.Serialize();
  EXPECT_THAT(ClassAssignmentModel::Deserialize(doc.substr(0, doc.size() / 2)),
              StatusIs(absl::StatusCode::kInvalidArgument, HasSubstr("parse error")));
}

TEST(SerializationTest, WrongVersion) {
  const auto model = MakeModel({{-1, 0}, {1, 0}}, {0.5, 0.5});
  nlohmann::json doc = model.ToJson();
  doc["version"] = 99;
  EXPECT_THAT(ClassAssignmentModel::FromJson(doc),
              StatusIs(absl::StatusCode::kFailedPrecondition, HasSubstr("version")));
}

TEST(SerializationTest, ShapeMismatchRejected) {
  const auto model = MakeModel({{-1, 0}, {1, 0}}, {0.5, 0.5});
  nlohmann::json doc = model.ToJson();
  doc["gmm"]["means"] = {1.0, 2.0};
  EXPECT_FALSE(ClassAssignmentModel::FromJson(doc).ok());
}

TEST(ClassAssignmentTest, SyntheticResponsibilitiesMatchLabels) {
  SyntheticSpec spec;
  spec.means = {Eigen::Vector2d(-4, 0), Eigen::Vector2d(0, 4), Eigen::Vector2d(4, 0)};
  spec.covariances.assign(3, Eigen::Matrix2d::Identity() * 0.3);
  spec.participant_weights = {0.5, 0.3, 0.2};
  spec.non_participant_weights = {0.2, 0.3, 0.5};
  spec.num_participants = 900;
  spec.num_non_participants = 900;
  spec.seed = 12;
  auto sample = GenerateSynthetic(spec);
  DIPPS_ASSERT_OK(sample);
  ModelFitConfig config;
  config.k = 3;
  config.pca_variance_target = 1.0;
  auto fit = FitClassAssignmentModel(sample->data.participants, config);
  DIPPS_ASSERT_OK(fit);
  auto rho = fit->model.AssignRows(sample->data.participants.values);
  DIPPS_ASSERT_OK(rho);
  // Map every fitted component to the nearest true mean.
  std::vector<int> to_true(3);
  for (int c = 0; c < 3; ++c) {
    const Eigen::VectorXd mean_in_input =
        fit->model.pca().components.transpose() * fit->model.gmm().means.row(c).transpose() +
        fit->model.pca().mean;
    double best = 1e300;
    for (int t = 0; t < 3; ++t) {
      const double d = (mean_in_input - spec.means[t]).norm();
      if (d < best) {
        best = d;
        to_true[c] = t;
      }
    }
  }
  double tv = 0.0;
  for (Eigen::Index i = 0; i < rho->rows(); ++i) {
    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(3);
    onehot[sample->participant_labels[i]] = 1.0;
    Eigen::VectorXd mapped = Eigen::VectorXd::Zero(3);
    for (int c = 0; c < 3; ++c) mapped[to_true[c]] += (*rho)(i, c);
    tv += 0.5 * (mapped - onehot).cwiseAbs().sum();
  }
  EXPECT_LT(tv / static_cast<double>(rho->rows()), 0.05);
}

}  // namespace
}  // namespace dipps
