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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "Eigen/Eigenvalues"
#include "absl/strings/str_cat.h"
#include "dipps/rng.h"
#include "dipps/status_macros.h"

namespace dipps {
namespace {

using Json = nlohmann::json;

constexpr char kModelFormat[] = "dipps.class_assignment_model";
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double LogSumExp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

// Mixture parameters plus cached factorizations for density evaluation.
struct Components {
  std::vector<Eigen::MatrixXd> chol;
  std::vector<double> log_norm;
};

bool Factorize(const GmmModel& gmm, Components* out) {
  const int k = gmm.num_components();
  const int q = gmm.dim();
  out->chol.assign(k, Eigen::MatrixXd());
  out->log_norm.assign(k, 0.0);
  for (int c = 0; c < k; ++c) {
    Eigen::LLT<Eigen::MatrixXd> llt(gmm.covariances[c]);
    if (llt.info() != Eigen::Success) return false;
    out->chol[c] = llt.matrixL();
    const double log_det = 2.0 * out->chol[c].diagonal().array().log().sum();
    if (!std::isfinite(log_det)) return false;
    out->log_norm[c] =
        std::log(gmm.weights[c]) - 0.5 * (q * kLog2Pi + log_det);
  }
  return true;
}

// n x K matrix of log(w_k N(x_i; mu_k, Sigma_k)).
Eigen::MatrixXd WeightedLogDensities(const Eigen::MatrixXd& points,
                                     const GmmModel& gmm,
                                     const Components& comps) {
  const int k = gmm.num_components();
  Eigen::MatrixXd out(points.rows(), k);
  for (int c = 0; c < k; ++c) {
    Eigen::MatrixXd diff =
        (points.rowwise() - gmm.means.row(c)).transpose();  // q x n
    comps.chol[c].triangularView<Eigen::Lower>().solveInPlace(diff);
    out.col(c) = (comps.log_norm[c] -
                  0.5 * diff.colwise().squaredNorm().array())
                     .matrix()
                     .transpose();
  }
  return out;
}

// Returns false when a component collapses.
bool MStep(const Eigen::MatrixXd& points, const Eigen::MatrixXd& resp,
           double regularization, GmmModel* gmm) {
  const Eigen::Index n = points.rows();
  const Eigen::Index q = points.cols();
  const int k = static_cast<int>(resp.cols());
  const Eigen::VectorXd mass = resp.colwise().sum().transpose();
  gmm->weights.resize(k);
  gmm->means.resize(k, q);
  gmm->covariances.assign(k, Eigen::MatrixXd());
  for (int c = 0; c < k; ++c) {
    if (!(mass[c] > 10.0 * std::numeric_limits<double>::epsilon() * n)) {
      return false;
    }
    gmm->weights[c] = mass[c] / static_cast<double>(n);
    const Eigen::RowVectorXd mean =
        (resp.col(c).transpose() * points) / mass[c];
    gmm->means.row(c) = mean;
    const Eigen::MatrixXd centered = points.rowwise() - mean;
    Eigen::MatrixXd cov =
        (centered.array().colwise() * resp.col(c).array()).matrix().transpose() *
        centered / mass[c];
    cov = 0.5 * (cov + cov.transpose());
    cov.diagonal().array() += regularization;
    gmm->covariances[c] = std::move(cov);
  }
  gmm->weights /= gmm->weights.sum();
  return true;
}

// D^2-weighted seeding; returns hard responsibilities.
Eigen::MatrixXd SeedResponsibilities(const Eigen::MatrixXd& points, int k,
                                     Rng& rng) {
  const Eigen::Index n = points.rows();
  std::vector<Eigen::Index> centers;
  centers.push_back(static_cast<Eigen::Index>(rng.UniformInt(n)));
  Eigen::VectorXd dist2 =
      (points.rowwise() - points.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    std::vector<double> w(dist2.data(), dist2.data() + n);
    Eigen::Index next;
    if (dist2.sum() > 0.0) {
      next = rng.Categorical(w);
    } else {
      next = static_cast<Eigen::Index>(rng.UniformInt(n));
    }
    centers.push_back(next);
    dist2 = dist2.cwiseMin(
        (points.rowwise() - points.row(next)).rowwise().squaredNorm());
  }
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      const double d = (points.row(i) - points.row(centers[c])).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    resp(i, best) = 1.0;
  }
  return resp;
}

// One EM run from a seeded start. Returns false if the run degenerates.
bool RunEm(const Eigen::MatrixXd& points, int k, const EmConfig& config,
           Rng& rng, GmmFit* fit) {
  Eigen::MatrixXd resp = SeedResponsibilities(points, k, rng);
  GmmModel gmm;
  if (!MStep(points, resp, config.regularization, &gmm)) {
    // Duplicate seeds can leave a center without points; fall back to
    // random soft responsibilities.
    for (Eigen::Index i = 0; i < resp.rows(); ++i) {
      for (int c = 0; c < k; ++c) resp(i, c) = rng.UniformOpen();
      resp.row(i) /= resp.row(i).sum();
    }
    if (!MStep(points, resp, config.regularization, &gmm)) return false;
  }
  fit->log_likelihood_trace.clear();
  fit->converged = false;
  double previous = -std::numeric_limits<double>::infinity();
  int iteration = 0;
  while (true) {
    Components comps;
    if (!Factorize(gmm, &comps)) return false;
    const Eigen::MatrixXd log_dens = WeightedLogDensities(points, gmm, comps);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      const double norm = LogSumExp(log_dens.row(i).transpose());
      ll += norm;
      resp.row(i) = (log_dens.row(i).array() - norm).exp();
    }
    if (!std::isfinite(ll)) return false;
    fit->log_likelihood_trace.push_back(ll);
    fit->model = gmm;
    fit->log_likelihood = ll;
    fit->iterations = iteration;
    if (std::isfinite(previous) &&
        std::abs(ll - previous) <= config.tolerance * std::abs(previous)) {
      fit->converged = true;
      return true;
    }
    if (iteration >= config.max_iterations) return true;
    previous = ll;
    GmmModel next;
    if (!MStep(points, resp, config.regularization, &next)) return false;
    gmm = std::move(next);
    ++iteration;
  }
}

Json FlatJson(const Eigen::MatrixXd& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  }
  return Json(flat);
}

absl::StatusOr<Eigen::MatrixXd> MatrixFromJson(const Json& doc,
                                               Eigen::Index rows,
                                               Eigen::Index cols,
                                               const char* what) {
  if (!doc.is_array() || static_cast<Eigen::Index>(doc.size()) != rows * cols) {
    return absl::InvalidArgumentError(
        absl::StrCat("model field '", what, "' has wrong shape"));
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const Json& v = doc[static_cast<size_t>(i * cols + j)];
      if (!v.is_number()) {
        return absl::InvalidArgumentError(
            absl::StrCat("model field '", what, "' must be numeric"));
      }
      m(i, j) = v.get<double>();
    }
  }
  return m;
}

}  // namespace

Eigen::VectorXd PcaModel::Project(const Eigen::VectorXd& record) const {
  return components * (record - mean);
}

Eigen::MatrixXd PcaModel::ProjectRows(const Eigen::MatrixXd& records) const {
  return (records.rowwise() - mean.transpose()) * components.transpose();
}

int ComponentsForVarianceTarget(std::span<const double> ratios,
                                double variance_target) {
  double cumulative = 0.0;
  for (size_t i = 0; i < ratios.size(); ++i) {
    cumulative += ratios[i];
    if (cumulative >= variance_target - 1e-12) return static_cast<int>(i + 1);
  }
  return static_cast<int>(ratios.size());
}

absl::StatusOr<PcaModel> FitPca(const RecordMatrix& records,
                                double variance_target) {
  if (!(variance_target > 0.0 && variance_target <= 1.0)) {
    return absl::InvalidArgumentError("variance target must lie in (0, 1]");
  }
  const Eigen::Index n = records.rows();
  if (n < 2) return absl::InvalidArgumentError("PCA needs at least 2 records");
  PcaModel pca;
  pca.mean = records.values.colwise().mean().transpose();
  const Eigen::MatrixXd centered =
      records.values.rowwise() - pca.mean.transpose();
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    return absl::InternalError("eigendecomposition failed");
  }
  // Eigen returns ascending eigenvalues.
  const Eigen::VectorXd values = solver.eigenvalues().reverse();
  const Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();
  const double top = values.size() > 0 ? values[0] : 0.0;
  if (!(top > 0.0)) {
    return absl::InvalidArgumentError("data has no direction with positive variance");
  }
  std::vector<double> ratios;
  double total = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] <= top * 1e-12) break;
    total += values[i];
  }
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] <= top * 1e-12) break;
    ratios.push_back(values[i] / total);
  }
  const int q = ComponentsForVarianceTarget(ratios, variance_target);
  pca.components.resize(q, records.cols());
  pca.explained_variance_ratio.resize(q);
  for (int i = 0; i < q; ++i) {
    Eigen::VectorXd v = vectors.col(i);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    pca.components.row(i) = v.transpose();
    pca.explained_variance_ratio[i] = ratios[static_cast<size_t>(i)];
  }
  return pca;
}

absl::StatusOr<GmmFit> FitGmm(const Eigen::MatrixXd& points, int k,
                              const EmConfig& config) {
  if (k < 1) return absl::InvalidArgumentError("K must be >= 1");
  if (points.rows() < k) {
    return absl::InvalidArgumentError(
        absl::StrCat("K = ", k, " exceeds the number of points (",
                     points.rows(), ")"));
  }
  if (config.restarts < 1 || config.max_iterations < 0) {
    return absl::InvalidArgumentError("invalid EM configuration");
  }
  GmmFit best;
  bool have_best = false;
  for (int r = 0; r < config.restarts; ++r) {
    Rng rng = Rng::ForStream(config.seed, static_cast<uint64_t>(r));
    GmmFit fit;
    if (!RunEm(points, k, config, rng, &fit)) continue;
    if (!have_best || fit.log_likelihood > best.log_likelihood) {
      best = std::move(fit);
      have_best = true;
    }
  }
  if (!have_best) {
    return absl::FailedPreconditionError(
        absl::StrCat("all ", config.restarts, " EM restarts degenerated for K = ", k));
  }
  return best;
}

absl::StatusOr<int> ElbowFromLogLikelihoods(
    std::span<const int> k_grid, std::span<const double> log_likelihoods) {
  if (k_grid.size() < 3) {
    return absl::InvalidArgumentError("elbow rule needs at least 3 grid points");
  }
  if (k_grid.size() != log_likelihoods.size()) {
    return absl::InvalidArgumentError("grid and log-likelihood lengths differ");
  }
  int best_k = k_grid[1];
  double best_bend = -std::numeric_limits<double>::infinity();
  for (size_t i = 1; i + 1 < k_grid.size(); ++i) {
    const double bend = 2.0 * log_likelihoods[i] - log_likelihoods[i - 1] -
                        log_likelihoods[i + 1];
    if (bend > best_bend) {
      best_bend = bend;
      best_k = k_grid[i];
    }
  }
  return best_k;
}

absl::StatusOr<int> SelectKElbow(const Eigen::MatrixXd& points,
                                 std::span<const int> k_grid,
                                 const EmConfig& config) {
  if (k_grid.size() < 3) {
    return absl::InvalidArgumentError("elbow rule needs at least 3 grid points");
  }
  if (!std::is_sorted(k_grid.begin(), k_grid.end()) ||
      std::adjacent_find(k_grid.begin(), k_grid.end()) != k_grid.end()) {
    return absl::InvalidArgumentError("K grid must be strictly ascending");
  }
  std::vector<double> lls;
  for (int k : k_grid) {
    DIPPS_ASSIGN_OR_RETURN(GmmFit fit, FitGmm(points, k, config));
    lls.push_back(fit.log_likelihood);
  }
  return ElbowFromLogLikelihoods(k_grid, lls);
}

std::vector<int> DefaultKGrid() { return {2, 3, 4, 5, 6, 7, 8, 9, 10}; }

ClassAssignmentModel::ClassAssignmentModel(PcaModel pca, GmmModel gmm)
    : pca_(std::move(pca)), gmm_(std::move(gmm)) {}

absl::StatusOr<ClassAssignmentModel> ClassAssignmentModel::Create(
    PcaModel pca, GmmModel gmm) {
  const int m = pca.input_dim();
  const int q = pca.output_dim();
  if (m < 1 || q < 1 || pca.components.cols() != m ||
      pca.explained_variance_ratio.size() != q) {
    return absl::InvalidArgumentError("inconsistent PCA shapes");
  }
  const int k = gmm.num_components();
  if (k < 1 || gmm.means.rows() != k ||
      static_cast<int>(gmm.covariances.size()) != k) {
    return absl::InvalidArgumentError("inconsistent GMM shapes");
  }
  if (gmm.dim() != q) {
    return absl::InvalidArgumentError(absl::StrCat(
        "GMM dimension ", gmm.dim(), " does not match PCA output dimension ", q));
  }
  if ((gmm.weights.array() < 0.0).any() ||
      std::abs(gmm.weights.sum() - 1.0) > 1e-9) {
    return absl::InvalidArgumentError("GMM weights are not a probability vector");
  }
  for (const auto& cov : gmm.covariances) {
    if (cov.rows() != q || cov.cols() != q) {
      return absl::InvalidArgumentError("GMM covariance has wrong shape");
    }
  }
  ClassAssignmentModel model(std::move(pca), std::move(gmm));
  Components comps;
  if (!Factorize(model.gmm_, &comps)) {
    return absl::InvalidArgumentError("GMM covariance is not positive definite");
  }
  model.chol_ = std::move(comps.chol);
  model.log_norm_ = std::move(comps.log_norm);
  return model;
}

Eigen::VectorXd ClassAssignmentModel::ResponsibilitiesOfProjected(
    const Eigen::VectorXd& y) const {
  const int k = num_classes();
  Eigen::VectorXd log_dens(k);
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd diff = y - gmm_.means.row(c).transpose();
    chol_[c].triangularView<Eigen::Lower>().solveInPlace(diff);
    log_dens[c] = log_norm_[c] - 0.5 * diff.squaredNorm();
  }
  const double norm = LogSumExp(log_dens);
  Eigen::VectorXd rho = (log_dens.array() - norm).exp();
  return rho / rho.sum();
}

absl::StatusOr<ClassDistribution> ClassAssignmentModel::Assign(
    const Eigen::VectorXd& record) const {
  if (record.size() != input_dim()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "record has dimension ", record.size(), ", model expects ",
        input_dim()));
  }
  return ResponsibilitiesOfProjected(pca_.Project(record));
}

absl::StatusOr<Eigen::MatrixXd> ClassAssignmentModel::AssignRows(
    const Eigen::MatrixXd& records) const {
  if (records.cols() != input_dim()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "records have dimension ", records.cols(), ", model expects ",
        input_dim()));
  }
  const Eigen::MatrixXd projected = pca_.ProjectRows(records);
  Eigen::MatrixXd out(records.rows(), num_classes());
  for (Eigen::Index i = 0; i < records.rows(); ++i) {
    out.row(i) = ResponsibilitiesOfProjected(projected.row(i).transpose())
                     .transpose();
  }
  return out;
}

Json ClassAssignmentModel::ToJson() const {
  Json covs = Json::array();
  for (const auto& cov : gmm_.covariances) {
    for (Eigen::Index i = 0; i < cov.rows(); ++i) {
      for (Eigen::Index j = 0; j < cov.cols(); ++j) covs.push_back(cov(i, j));
    }
  }
  return Json{
      {"format", kModelFormat},
      {"version", kFormatVersion},
      {"pca",
       {{"input_dim", pca_.input_dim()},
        {"output_dim", pca_.output_dim()},
        {"mean", FlatJson(pca_.mean.transpose())},
        {"components", FlatJson(pca_.components)},
        {"explained_variance_ratio",
         FlatJson(pca_.explained_variance_ratio.transpose())}}},
      {"gmm",
       {{"num_components", gmm_.num_components()},
        {"dim", gmm_.dim()},
        {"weights", FlatJson(gmm_.weights.transpose())},
        {"means", FlatJson(gmm_.means)},
        {"covariances", covs}}}};
}

std::string ClassAssignmentModel::Serialize() const { return ToJson().dump(); }

absl::StatusOr<ClassAssignmentModel> ClassAssignmentModel::FromJson(
    const Json& doc) {
  if (!doc.is_object() || !doc.contains("format") || !doc.contains("version")) {
    return absl::InvalidArgumentError("malformed model document");
  }
  if (doc["format"] != kModelFormat) {
    return absl::InvalidArgumentError("document is not a class assignment model");
  }
  if (!doc["version"].is_number_integer() ||
      doc["version"].get<int>() != kFormatVersion) {
    return absl::FailedPreconditionError(absl::StrCat(
        "unsupported model version ", doc["version"].dump(), ", expected ",
        kFormatVersion));
  }
  try {
    const Json& p = doc.at("pca");
    const Json& g = doc.at("gmm");
    const int m = p.at("input_dim").get<int>();
    const int q = p.at("output_dim").get<int>();
    const int k = g.at("num_components").get<int>();
    if (m < 1 || q < 1 || k < 1 || g.at("dim").get<int>() != q) {
      return absl::InvalidArgumentError("model document has invalid shapes");
    }
    PcaModel pca;
    GmmModel gmm;
    DIPPS_ASSIGN_OR_RETURN(Eigen::MatrixXd mean,
                           MatrixFromJson(p.at("mean"), 1, m, "pca.mean"));
    pca.mean = mean.transpose();
    DIPPS_ASSIGN_OR_RETURN(pca.components,
                           MatrixFromJson(p.at("components"), q, m,
                                          "pca.components"));
    DIPPS_ASSIGN_OR_RETURN(
        Eigen::MatrixXd ratios,
        MatrixFromJson(p.at("explained_variance_ratio"), 1, q,
                       "pca.explained_variance_ratio"));
    pca.explained_variance_ratio = ratios.transpose();
    DIPPS_ASSIGN_OR_RETURN(Eigen::MatrixXd weights,
                           MatrixFromJson(g.at("weights"), 1, k, "gmm.weights"));
    gmm.weights = weights.transpose();
    DIPPS_ASSIGN_OR_RETURN(gmm.means,
                           MatrixFromJson(g.at("means"), k, q, "gmm.means"));
    DIPPS_ASSIGN_OR_RETURN(Eigen::MatrixXd covs,
                           MatrixFromJson(g.at("covariances"), k, q * q,
                                          "gmm.covariances"));
    for (int c = 0; c < k; ++c) {
      Eigen::MatrixXd cov(q, q);
      for (int i = 0; i < q; ++i) {
        for (int j = 0; j < q; ++j) cov(i, j) = covs(c, i * q + j);
      }
      gmm.covariances.push_back(std::move(cov));
    }
    return Create(std::move(pca), std::move(gmm));
  } catch (const Json::exception& e) {
    return absl::InvalidArgumentError(
        absl::StrCat("malformed model document: ", e.what()));
  }
}

absl::StatusOr<ClassAssignmentModel> ClassAssignmentModel::Deserialize(
    const std::string& document) {
  Json doc = Json::parse(document, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) {
    return absl::InvalidArgumentError("model document parse error");
  }
  return FromJson(doc);
}

absl::StatusOr<ModelFitResult> FitClassAssignmentModel(
    const RecordMatrix& participants, const ModelFitConfig& config) {
  DIPPS_ASSIGN_OR_RETURN(PcaModel pca,
                         FitPca(participants, config.pca_variance_target));
  const Eigen::MatrixXd projected = pca.ProjectRows(participants.values);
  int k = config.k;
  if (k <= 0) {
    DIPPS_ASSIGN_OR_RETURN(k, SelectKElbow(projected, config.k_grid, config.em));
  }
  DIPPS_ASSIGN_OR_RETURN(GmmFit fit, FitGmm(projected, k, config.em));
  DIPPS_ASSIGN_OR_RETURN(
      ClassAssignmentModel model,
      ClassAssignmentModel::Create(std::move(pca), std::move(fit.model)));
  return ModelFitResult{std::move(model), k, fit.log_likelihood};
}

}  // namespace dipps
