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

// Acceptance checks. Prints one PASS/FAIL/SKIP line per check and exits
// non-zero if any check fails.
//
// The full-data reproduction check runs only when DIPPS_FOOD_CONFIG names an
// experiment config for the Food survey data (CSV path and split rule).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_format.h"
#include "dipps/data.h"
#include "dipps/eval.h"
#include "dipps/experiment.h"
#include "dipps/ldp.h"
#include "dipps/model.h"
#include "dipps/protocol.h"
#include "dipps/rng.h"
#include "dipps/server.h"
#include "dipps/status_macros.h"
#include "json.hpp"
#include "oracles.h"

namespace dipps {
namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double Seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

PrivacyBudget Eps(double eps) { return *PrivacyBudget::Create(eps); }

Eigen::VectorXd RandomSimplex(Rng& rng, int k) {
  Eigen::VectorXd p(k);
  for (int i = 0; i < k; ++i) p[i] = -std::log(rng.UniformOpen());
  return p / p.sum();
}

Outcome InversionExactness() {
  const auto start = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  InversionOptions options;
  options.smoothing = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.UniformInt(9));
    const Eigen::VectorXd p = RandomSimplex(rng, k);
    for (double eps : {0.5, 1.0, 4.0}) {
      const Eigen::VectorXd counts = 1000.0 * ExpMechDistribution(p, Eps(eps));
      auto u = InvertExponentialCounts(counts, Eps(eps), options);
      if (!u.ok()) return {false, u.status().ToString()};
      worst = std::max(worst, (*u - p).cwiseAbs().maxCoeff());
    }
  }
  const double t = Seconds(start);
  return {worst <= 1e-6 && t < 1.0,
          absl::StrFormat("max Linf error %.3g over 300 inversions, %.3f s", worst, t)};
}

Outcome ExponentialMechanismPrivacy() {
  const auto start = Clock::now();
  Rng rng(202);
  double worst_excess = -1e300;
  for (double eps : {0.1, 1.0, 8.0}) {
    for (int trial = 0; trial < 1000; ++trial) {
      const int k = 2 + static_cast<int>(rng.UniformInt(9));
      const Eigen::VectorXd a = ExpMechDistribution(RandomSimplex(rng, k), Eps(eps));
      const Eigen::VectorXd b = ExpMechDistribution(RandomSimplex(rng, k), Eps(eps));
      const double ratio = std::max((a.array() / b.array()).maxCoeff(),
                                    (b.array() / a.array()).maxCoeff());
      worst_excess = std::max(worst_excess, ratio - std::exp(eps));
    }
  }
  const double t = Seconds(start);
  return {worst_excess <= 1e-9 && t < 1.0,
          absl::StrFormat("max ratio - e^eps = %.3g over 3000 pairs, %.3f s", worst_excess, t)};
}

Outcome WassersteinOracles() {
  const auto start = Clock::now();
  Rng rng(303);
  double worst_tree = 0.0, worst_1d = 0.0;
  auto masses = [&rng](int n) {
    std::vector<double> w(n);
    double total = 0.0;
    const bool integer = rng.Bernoulli(0.5);
    for (double& x : w) {
      x = integer ? 1.0 + static_cast<double>(rng.UniformInt(3)) : rng.UniformOpen();
      total += x;
    }
    for (double& x : w) x /= total;
    return w;
  };
  auto dist = [](const Eigen::MatrixXd& p, const std::vector<double>& w) {
    DiscreteDistribution d;
    d.points = p;
    d.masses = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    return d;
  };
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.UniformInt(5));
    const int m = 1 + static_cast<int>(rng.UniformInt(5));
    const int dim = 1 + static_cast<int>(rng.UniformInt(3));
    Eigen::MatrixXd a(n, dim), b(m, dim);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.Uniform(-1, 1);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.Uniform(-1, 1);
    const std::vector<double> wa = masses(n), wb = masses(m);
    auto w = Wasserstein1(dist(a, wa), dist(b, wb));
    if (!w.ok()) return {false, w.status().ToString()};
    worst_tree = std::max(worst_tree, std::abs(*w - oracle::EnumeratedTransportCost(a, wa, b, wb)));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.UniformInt(60));
    const int m = 1 + static_cast<int>(rng.UniformInt(60));
    std::vector<double> a(n), b(m);
    for (double& x : a) x = rng.Uniform(-1, 1);
    for (double& x : b) x = rng.Uniform(-1, 1);
    const std::vector<double> wa = masses(n), wb = masses(m);
    auto w = Wasserstein1(dist(Eigen::Map<Eigen::VectorXd>(a.data(), n), wa),
                          dist(Eigen::Map<Eigen::VectorXd>(b.data(), m), wb));
    if (!w.ok()) return {false, w.status().ToString()};
    worst_1d = std::max(worst_1d, std::abs(*w - oracle::QuantileW1(a, wa, b, wb)));
  }
  const double t = Seconds(start);
  return {worst_tree <= 1e-9 && worst_1d <= 1e-9 && t < 10.0,
          absl::StrFormat("max deviation %.3g (enumeration), %.3g (quantile form), %.2f s",
                          worst_tree, worst_1d, t)};
}

Outcome WeightedStatistics() {
  Rng rng(404);
  double worst_mean = 0.0, worst_var = 0.0;
  int median_mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.UniformInt(15));
    const int dim = 1 + static_cast<int>(rng.UniformInt(3));
    DiscreteDistribution d;
    d.points.resize(n, dim);
    for (Eigen::Index i = 0; i < d.points.size(); ++i) {
      d.points.data()[i] = static_cast<double>(rng.UniformInt(9)) - 4.0 +
                           (rng.Bernoulli(0.5) ? rng.Uniform() : 0.0);
    }
    std::vector<int> mult(n);
    int total = 0;
    for (int& k : mult) total += (k = 1 + static_cast<int>(rng.UniformInt(6)));
    d.masses.resize(n);
    for (int i = 0; i < n; ++i) d.masses[i] = static_cast<double>(mult[i]) / total;
    const Eigen::VectorXd mean = WeightedMean(d);
    const Eigen::VectorXd var = WeightedVariance(d);
    const Eigen::VectorXd med = WeightedMedian(d);
    for (int j = 0; j < dim; ++j) {
      std::vector<double> expanded;
      for (int i = 0; i < n; ++i) expanded.insert(expanded.end(), mult[i], d.points(i, j));
      worst_mean = std::max(worst_mean, std::abs(mean[j] - oracle::MultisetMean(expanded)));
      worst_var = std::max(worst_var,
                           std::abs(var[j] - oracle::MultisetPopulationVariance(expanded)));
      median_mismatches += med[j] != oracle::MultisetLowerMedian(expanded);
    }
  }
  return {worst_mean <= 1e-12 && worst_var <= 1e-12 && median_mismatches == 0,
          absl::StrFormat("mean dev %.3g, variance dev %.3g, %d median mismatches", worst_mean,
                          worst_var, median_mismatches)};
}

Outcome MechanismUnbiasedness() {
  const auto start = Clock::now();
  const int n = 1000000;
  struct Mech {
    const char* name;
    std::function<double(double, PrivacyBudget, Rng&)> draw;
    std::function<double(double, double)> variance;
  };
  auto duchi_var = [](double x, double eps) {
    const double c = DuchiBound(Eps(eps));
    return c * c - x * x;
  };
  auto piecewise_var = [](double x, double eps) {
    const double t = std::exp(eps / 2);
    return x * x / (t - 1) + (t + 3) / (3 * (t - 1) * (t - 1));
  };
  const std::vector<Mech> mechs = {
      {"duchi", DuchiPerturb, duchi_var},
      {"piecewise", PiecewisePerturb, piecewise_var},
      {"hybrid", HybridPerturb,
       [&](double x, double eps) {
         const double p = HybridPiecewiseProbability(Eps(eps));
         return p * piecewise_var(x, eps) + (1 - p) * duchi_var(x, eps);
       }},
      {"laplace",
       [](double x, PrivacyBudget b, Rng& rng) {
         return LaplacePerturbRecord(Eigen::VectorXd::Constant(1, x), b, rng)[0];
       },
       [](double, double eps) {
         const double b = LaplaceScale(1, Eps(eps));
         return 2 * b * b;
       }},
  };
  double worst_z = 0.0;
  std::string worst;
  uint64_t stream = 0;
  for (const Mech& mech : mechs) {
    for (double x : {-0.7, 0.0, 0.4}) {
      for (double eps : {0.5, 2.0}) {
        Rng rng = Rng::ForStream(505, stream++);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) sum += mech.draw(x, Eps(eps), rng);
        const double z = std::abs(sum / n - x) / std::sqrt(mech.variance(x, eps) / n);
        if (z > worst_z) {
          worst_z = z;
          worst = absl::StrFormat("%s x=%g eps=%g", mech.name, x, eps);
        }
      }
    }
  }
  const double t = Seconds(start);
  return {worst_z <= 3.0 && t < 30.0,
          absl::StrFormat("largest deviation %.2f standard errors (%s), %.1f s", worst_z,
                          worst, t)};
}

// Shared synthetic setup for the end-to-end checks.
SyntheticSpec EndToEndSpec(uint64_t seed) {
  SyntheticSpec spec;
  spec.means = {Eigen::Vector2d(-4, -4), Eigen::Vector2d(0, 4), Eigen::Vector2d(4, -4)};
  spec.covariances.assign(3, Eigen::Matrix2d::Identity() * 0.5);
  spec.participant_weights = {0.6, 0.3, 0.1};
  spec.non_participant_weights = {0.1, 0.3, 0.6};
  spec.num_participants = 2000;
  spec.num_non_participants = 2000;
  spec.seed = seed;
  return spec;
}

struct EndToEndRun {
  double mass_l1 = 0.0;          // estimated class mass vs true weights, eps 4
  double w_dipps = 0.0;          // eps 4
  double w_naive = 0.0;
  double w_dipps_eps1 = 0.0;
  double w_ps = 0.0;
  double w_entire = 0.0;         // eps 4
  double seconds_core = 0.0;     // time spent on the eps-4 check
};

absl::StatusOr<EndToEndRun> RunEndToEnd(uint64_t seed) {
  const auto start = Clock::now();
  EndToEndRun out;
  const SyntheticSpec spec = EndToEndSpec(seed);
  DatasetSource source;
  source.synthetic = spec;
  DIPPS_ASSIGN_OR_RETURN(PreparedData data, PrepareData(source));
  const RecordMatrix& x1 = data.participants;
  const int64_t n0 = data.non_participants.rows();
  const int64_t n1 = x1.rows();

  // A fresh non-participant sample, normalized like the training data.
  DIPPS_ASSIGN_OR_RETURN(LabeledRecords fresh,
                         SampleMixture(spec, spec.non_participant_weights, n0, 2));
  DIPPS_ASSIGN_OR_RETURN(RecordMatrix fresh_norm, ApplyNormalizer(data.normalizer, fresh.records));
  const DiscreteDistribution truth = DiscreteDistribution::Uniform(fresh_norm.values);

  ModelFitConfig model_config;
  model_config.k = 3;
  model_config.pca_variance_target = 1.0;
  model_config.em.seed = DeriveSeed(seed, 1);
  DIPPS_ASSIGN_OR_RETURN(ModelFitResult fit, FitClassAssignmentModel(x1, model_config));
  const ClassAssignmentModel& model = fit.model;
  DIPPS_ASSIGN_OR_RETURN(Eigen::MatrixXd rho, model.AssignRows(x1.values));

  // Fitted component c corresponds to the true component whose normalized
  // mean is closest, over the best permutation.
  std::vector<Eigen::VectorXd> true_means;
  for (const auto& m : spec.means) {
    RecordMatrix r;
    r.feature_names = x1.feature_names;
    r.values = m.transpose();
    DIPPS_ASSIGN_OR_RETURN(RecordMatrix norm, ApplyNormalizer(data.normalizer, r));
    true_means.push_back(norm.values.row(0).transpose());
  }
  std::array<int, 3> perm = {0, 1, 2}, best_perm = perm;
  double best_cost = 1e300;
  do {
    double cost = 0.0;
    for (int c = 0; c < 3; ++c) {
      const Eigen::VectorXd fitted = model.pca().components.transpose() *
                                         model.gmm().means.row(c).transpose() +
                                     model.pca().mean;
      cost += (fitted - true_means[perm[c]]).norm();
    }
    if (cost < best_cost) {
      best_cost = cost;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  const DiscreteDistribution naive = NaiveEstimate(x1);
  DIPPS_ASSIGN_OR_RETURN(out.w_naive, Wasserstein1(naive, truth));

  auto corrected = [&](Mechanism mechanism, double eps,
                       uint64_t stream) -> absl::StatusOr<BiasCorrection> {
    DIPPS_ASSIGN_OR_RETURN(RoundTranscript transcript,
                           RunRound(model, data.non_participants.values, Eps(eps), mechanism,
                                    DeriveSeed(seed, stream)));
    DIPPS_ASSIGN_OR_RETURN(ClusterMassEstimate mass, EstimateClassMass(transcript, 3));
    return CorrectBias(x1, rho, mass, n0);
  };

  DIPPS_ASSIGN_OR_RETURN(BiasCorrection dipps4, corrected(Mechanism::kDipps, 4.0, 10));
  for (int c = 0; c < 3; ++c) {
    out.mass_l1 += std::abs(dipps4.mass[c] - spec.non_participant_weights[best_perm[c]]);
  }
  const DiscreteDistribution est4 = DiscreteDistribution::FromWeighted(dipps4.non_participant);
  DIPPS_ASSIGN_OR_RETURN(out.w_dipps, Wasserstein1(est4, truth));
  out.seconds_core = Seconds(start);

  DIPPS_ASSIGN_OR_RETURN(BiasCorrection dipps1, corrected(Mechanism::kDipps, 1.0, 11));
  DIPPS_ASSIGN_OR_RETURN(
      out.w_dipps_eps1,
      Wasserstein1(DiscreteDistribution::FromWeighted(dipps1.non_participant), truth));
  DIPPS_ASSIGN_OR_RETURN(BiasCorrection ps, corrected(Mechanism::kPs, 1.0, 12));
  DIPPS_ASSIGN_OR_RETURN(
      out.w_ps, Wasserstein1(DiscreteDistribution::FromWeighted(ps.non_participant), truth));

  const double share1 = static_cast<double>(n1) / static_cast<double>(n0 + n1);
  DIPPS_ASSIGN_OR_RETURN(out.w_entire,
                         Wasserstein1(Mixture(naive, est4, share1), Mixture(naive, truth, share1)));
  return out;
}

struct EndToEndOutcomes {
  Outcome bias_correction;
  Outcome ordering;
  Outcome mixture_bound;
};

EndToEndOutcomes EndToEnd() {
  EndToEndOutcomes out;
  std::vector<EndToEndRun> runs;
  double core_seconds = 0.0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    auto run = RunEndToEnd(seed);
    if (!run.ok()) {
      const Outcome failed{false, run.status().ToString()};
      return {failed, failed, failed};
    }
    core_seconds += run->seconds_core;
    runs.push_back(*run);
  }
  double mass_l1 = 0.0, dipps1 = 0.0, ps = 0.0, naive = 0.0;
  int wins = 0;
  double worst_slack = -1e300, max_ratio = 0.0;
  const double share0 = 0.5;
  for (const EndToEndRun& r : runs) {
    mass_l1 += r.mass_l1 / runs.size();
    wins += r.w_dipps < r.w_naive;
    dipps1 += r.w_dipps_eps1 / runs.size();
    ps += r.w_ps / runs.size();
    naive += r.w_naive / runs.size();
    worst_slack = std::max(worst_slack, r.w_entire - share0 * r.w_dipps);
    max_ratio = std::max(max_ratio, r.w_entire / r.w_dipps);
  }
  // The inversion assumes every client shares one utility vector. With
  // one-hot responsibilities the aggregate report distribution is a mixture
  // of softmaxes instead, so even noiseless counts invert to a biased U.
  const SyntheticSpec spec = EndToEndSpec(1);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(3);
  for (int k = 0; k < 3; ++k) {
    counts += spec.non_participant_weights[k] *
              ExpMechDistribution(Eigen::VectorXd::Unit(3, k), Eps(4.0));
  }
  InversionOptions exact;
  exact.smoothing = 0.0;
  const Eigen::VectorXd limit = *InvertExponentialCounts(1e6 * counts, Eps(4.0), exact);
  double limit_l1 = 0.0;
  for (int k = 0; k < 3; ++k) limit_l1 += std::abs(limit[k] - spec.non_participant_weights[k]);
  out.bias_correction = {
      mass_l1 <= 0.1 && wins >= 4 && core_seconds < 120.0,
      absl::StrFormat("mean class-mass L1 %.4f (noiseless inversion limit %.4f); DiPPS closer than Naive in %d/5 seeds "
                      "(W1 %.4f vs %.4f on the first); %.1f s",
                      mass_l1, limit_l1, wins, runs[0].w_dipps, runs[0].w_naive, core_seconds)};
  out.ordering = {ps <= dipps1 + 0.05 && dipps1 < naive,
                  absl::StrFormat("mean W1 at eps 1: PS %.4f, DiPPS %.4f, Naive %.4f", ps,
                                  dipps1, naive)};
  out.mixture_bound = {worst_slack <= 1e-9,
                       absl::StrFormat("max W1(entire) - n0/n W1(nonpart) = %.3g; "
                                       "max ratio W1(entire)/W1(nonpart) = %.4f (n0/n = 0.5)",
                                       worst_slack, max_ratio)};
  return out;
}

// Full-data reproduction on the Food survey data at eps 1 over 5 runs.
std::optional<Outcome> FoodReproduction() {
  const char* path = std::getenv("DIPPS_FOOD_CONFIG");
  if (path == nullptr || *path == '\0') return std::nullopt;
  auto text = ReadTextFile(path);
  if (!text.ok()) return Outcome{false, text.status().ToString()};
  nlohmann::json doc = nlohmann::json::parse(*text, nullptr, false);
  if (doc.is_discarded()) return Outcome{false, "config is not valid JSON"};
  doc["epsilons"] = {1.0};
  doc["wasserstein_epsilons"] = {1.0};
  doc["mechanisms"] = {"naive", "dipps"};
  doc["repetitions"] = 5;
  doc["targets"] = {"wasserstein.nonparticipant"};
  auto config = ExperimentConfig::FromJson(doc);
  if (!config.ok()) return Outcome{false, config.status().ToString()};
  auto report = RunExperiment(*config);
  if (!report.ok()) return Outcome{false, report.status().ToString()};
  double naive = -1.0, dipps = -1.0;
  for (const CellResult& c : report->cells) {
    if (c.method == Method::kNaive) naive = c.mean;
    if (c.method == Method::kDipps) dipps = c.mean;
  }
  return Outcome{std::abs(naive - 0.811) <= 0.05 && std::abs(dipps - 0.531) <= 2 * 0.103,
                 absl::StrFormat("Naive W1 %.3f (target 0.811 +- 0.05), DiPPS W1 %.3f "
                                 "(target 0.531 +- 0.206)",
                                 naive, dipps)};
}

}  // namespace
}  // namespace dipps

int main() {
  using dipps::Outcome;
  int failures = 0;
  auto report = [&failures](const char* name, const Outcome& o) {
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  report("inversion-exactness", dipps::InversionExactness());
  report("exponential-mechanism-ldp", dipps::ExponentialMechanismPrivacy());
  report("wasserstein-oracles", dipps::WassersteinOracles());
  report("weighted-statistics-oracle", dipps::WeightedStatistics());
  report("mechanism-unbiasedness", dipps::MechanismUnbiasedness());
  const dipps::EndToEndOutcomes e2e = dipps::EndToEnd();
  report("synthetic-bias-correction", e2e.bias_correction);
  report("synthetic-ordering-eps1", e2e.ordering);
  report("mixture-scaling-bound", e2e.mixture_bound);
  if (auto food = dipps::FoodReproduction()) {
    report("food-reproduction", *food);
  } else {
    std::printf("SKIP food-reproduction: optional; set DIPPS_FOOD_CONFIG to run\n");
  }
  return failures == 0 ? 0 : 1;
}
