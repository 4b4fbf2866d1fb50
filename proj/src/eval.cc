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

#include "dipps/eval.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "absl/strings/str_cat.h"
#include "dipps/rng.h"
#include "dipps/status_macros.h"

namespace dipps {
namespace {

bool RowLess(const Eigen::MatrixXd& points, Eigen::Index a, Eigen::Index b) {
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    if (points(a, j) != points(b, j)) return points(a, j) < points(b, j);
  }
  return false;
}

bool RowEqual(const Eigen::MatrixXd& points, Eigen::Index a, Eigen::Index b) {
  return (points.row(a).array() == points.row(b).array()).all();
}

}  // namespace

absl::Status DiscreteDistribution::Validate() const {
  if (points.rows() < 1) return absl::InvalidArgumentError("empty support");
  if (masses.size() != points.rows()) {
    return absl::InvalidArgumentError("one mass per support point required");
  }
  if ((masses.array() < 0.0).any()) {
    return absl::InvalidArgumentError("negative mass");
  }
  if (std::abs(masses.sum() - 1.0) > 1e-9) {
    return absl::InvalidArgumentError(
        absl::StrCat("masses sum to ", masses.sum(), ", expected 1"));
  }
  return absl::OkStatus();
}

DiscreteDistribution DiscreteDistribution::Uniform(const Eigen::MatrixXd& points) {
  return DiscreteDistribution{
      points, Eigen::VectorXd::Constant(points.rows(), 1.0 / points.rows())};
}

DiscreteDistribution DiscreteDistribution::FromWeighted(
    const WeightedDataset& weighted) {
  return DiscreteDistribution{weighted.records.values, weighted.masses};
}

DiscreteDistribution Canonicalize(const DiscreteDistribution& d) {
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d.masses[i] > 0.0) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return RowLess(d.points, a, b);
  });
  std::vector<Eigen::Index> keep;
  std::vector<double> mass;
  for (Eigen::Index i : order) {
    if (!keep.empty() && RowEqual(d.points, keep.back(), i)) {
      mass.back() += d.masses[i];
    } else {
      keep.push_back(i);
      mass.push_back(d.masses[i]);
    }
  }
  DiscreteDistribution out;
  out.points = d.points(keep, Eigen::all);
  out.masses = Eigen::Map<const Eigen::VectorXd>(
      mass.data(), static_cast<Eigen::Index>(mass.size()));
  return out;
}

DiscreteDistribution Mixture(const DiscreteDistribution& a,
                             const DiscreteDistribution& b, double a_weight) {
  DiscreteDistribution out;
  out.points.resize(a.size() + b.size(), a.dim());
  out.points << a.points, b.points;
  out.masses.resize(a.size() + b.size());
  out.masses << a_weight * a.masses, (1.0 - a_weight) * b.masses;
  return Canonicalize(out);
}

absl::StatusOr<double> Wasserstein1(const DiscreteDistribution& a,
                                    const DiscreteDistribution& b,
                                    const TransportOptions& options) {
  DIPPS_RETURN_IF_ERROR(a.Validate());
  DIPPS_RETURN_IF_ERROR(b.Validate());
  if (a.dim() != b.dim()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "dimension mismatch: ", a.dim(), " vs ", b.dim()));
  }
  // Lexicographic order of both supports gives a north-west corner start
  // that is already optimal in one dimension.
  const DiscreteDistribution ca = Canonicalize(a);
  const DiscreteDistribution cb = Canonicalize(b);
  const int dim = a.dim();
  // Row-major copies for the inner pricing loop.
  std::vector<double> pa(static_cast<size_t>(ca.size() * dim));
  std::vector<double> pb(static_cast<size_t>(cb.size() * dim));
  for (Eigen::Index i = 0; i < ca.size(); ++i) {
    for (int j = 0; j < dim; ++j) pa[static_cast<size_t>(i * dim + j)] = ca.points(i, j);
  }
  for (Eigen::Index i = 0; i < cb.size(); ++i) {
    for (int j = 0; j < dim; ++j) pb[static_cast<size_t>(i * dim + j)] = cb.points(i, j);
  }
  auto cost = [&pa, &pb, dim](int i, int k) {
    const double* x = pa.data() + static_cast<size_t>(i) * dim;
    const double* y = pb.data() + static_cast<size_t>(k) * dim;
    double s = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double t = x[j] - y[j];
      s += t * t;
    }
    return std::sqrt(s);
  };
  DIPPS_ASSIGN_OR_RETURN(
      TransportSolution solution,
      SolveTransport(std::span<const double>(ca.masses.data(), ca.masses.size()),
                     std::span<const double>(cb.masses.data(), cb.masses.size()),
                     cost, options));
  return solution.cost;
}

DiscreteDistribution Subsample(const DiscreteDistribution& d,
                               Eigen::Index max_points, uint64_t seed) {
  if (max_points <= 0 || d.size() <= max_points) return d;
  std::vector<Eigen::Index> index(static_cast<size_t>(d.size()));
  std::iota(index.begin(), index.end(), 0);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < max_points; ++i) {
    const auto j = i + static_cast<Eigen::Index>(
                           rng.UniformInt(static_cast<uint64_t>(d.size() - i)));
    std::swap(index[static_cast<size_t>(i)], index[static_cast<size_t>(j)]);
  }
  index.resize(static_cast<size_t>(max_points));
  std::sort(index.begin(), index.end());
  DiscreteDistribution out;
  out.points = d.points(index, Eigen::all);
  out.masses = d.masses(index);
  const double total = out.masses.sum();
  if (total > 0.0) {
    out.masses /= total;
  } else {
    out.masses.setConstant(1.0 / static_cast<double>(max_points));
  }
  return out;
}

Eigen::VectorXd WeightedMean(const DiscreteDistribution& d) {
  return d.points.transpose() * d.masses;
}

Eigen::VectorXd WeightedVariance(const DiscreteDistribution& d) {
  const Eigen::VectorXd mean = WeightedMean(d);
  const Eigen::MatrixXd centered = d.points.rowwise() - mean.transpose();
  return centered.array().square().matrix().transpose() * d.masses;
}

Eigen::VectorXd WeightedMedian(const DiscreteDistribution& d) {
  const double total = d.masses.sum();
  const double half = 0.5 * total - 1e-12 * total;
  Eigen::VectorXd out(d.dim());
  std::vector<Eigen::Index> order(static_cast<size_t>(d.size()));
  for (int j = 0; j < d.dim(); ++j) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return d.points(a, j) < d.points(b, j);
    });
    double cumulative = 0.0;
    out[j] = d.points(order.back(), j);
    for (Eigen::Index i : order) {
      cumulative += d.masses[i];
      if (cumulative >= half) {
        out[j] = d.points(i, j);
        break;
      }
    }
  }
  return out;
}

StatReport StatReport::Of(const DiscreteDistribution& d) {
  return StatReport{WeightedMean(d), WeightedVariance(d), WeightedMedian(d)};
}

absl::StatusOr<double> MeanAbsoluteError(const Eigen::VectorXd& estimate,
                                         const Eigen::VectorXd& truth) {
  if (estimate.size() != truth.size() || truth.size() == 0) {
    return absl::InvalidArgumentError("dimension mismatch");
  }
  return (estimate - truth).cwiseAbs().sum() / static_cast<double>(truth.size());
}

absl::StatusOr<StatErrors> MaePerAttribute(const StatReport& estimate,
                                           const StatReport& truth) {
  StatErrors out;
  DIPPS_ASSIGN_OR_RETURN(out.mean, MeanAbsoluteError(estimate.mean, truth.mean));
  DIPPS_ASSIGN_OR_RETURN(out.variance,
                         MeanAbsoluteError(estimate.variance, truth.variance));
  DIPPS_ASSIGN_OR_RETURN(out.median,
                         MeanAbsoluteError(estimate.median, truth.median));
  return out;
}

DiscreteDistribution NaiveEstimate(const RecordMatrix& participants) {
  return DiscreteDistribution::Uniform(participants.values);
}

}  // namespace dipps
