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

#include "dipps/experiment.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "absl/strings/str_join.h"
#include "absl/strings/str_split.h"
#include "dipps/eval.h"
#include "dipps/ldp.h"
#include "dipps/protocol.h"
#include "dipps/rng.h"
#include "dipps/server.h"
#include "dipps/status_macros.h"

namespace dipps {
namespace {

using Json = nlohmann::json;

// Stream tags for seed derivation.
constexpr uint64_t kModelStream = 1;
constexpr uint64_t kRoundStream = 2;
constexpr uint64_t kSubsampleStream = 3;

constexpr Statistic kAllStatistics[] = {Statistic::kWasserstein, Statistic::kMean,
                                        Statistic::kVariance, Statistic::kMedian};
constexpr Population kAllPopulations[] = {Population::kNonParticipant,
                                          Population::kEntire};

uint64_t CellSeed(uint64_t master, uint64_t tag, uint64_t a, uint64_t b,
                  uint64_t c) {
  return DeriveSeed(DeriveSeed(DeriveSeed(DeriveSeed(master, tag), a), b), c);
}

// An estimate of one population: a distribution, or only a mean vector.
struct PopulationEstimate {
  std::optional<DiscreteDistribution> distribution;
  std::optional<Eigen::VectorXd> mean;
};

struct MethodEstimate {
  PopulationEstimate non_participant;
  PopulationEstimate entire;
};

struct Truth {
  DiscreteDistribution non_participant;
  DiscreteDistribution entire;
  StatReport non_participant_stats;
  StatReport entire_stats;
};

absl::StatusOr<double> EvaluateTarget(const Target& target,
                                      const MethodEstimate& estimate,
                                      const Truth& truth, int64_t ot_subsample,
                                      uint64_t subsample_seed) {
  const bool entire = target.population == Population::kEntire;
  const PopulationEstimate& est = entire ? estimate.entire : estimate.non_participant;
  const DiscreteDistribution& truth_dist =
      entire ? truth.entire : truth.non_participant;
  const StatReport& truth_stats =
      entire ? truth.entire_stats : truth.non_participant_stats;
  switch (target.statistic) {
    case Statistic::kWasserstein: {
      if (!est.distribution) {
        return absl::InvalidArgumentError("estimate has no distribution");
      }
      const DiscreteDistribution a =
          Subsample(*est.distribution, ot_subsample, DeriveSeed(subsample_seed, 0));
      const DiscreteDistribution b =
          Subsample(truth_dist, ot_subsample, DeriveSeed(subsample_seed, 1));
      return Wasserstein1(a, b);
    }
    case Statistic::kMean: {
      const Eigen::VectorXd mean =
          est.distribution ? WeightedMean(*est.distribution) : *est.mean;
      return MeanAbsoluteError(mean, truth_stats.mean);
    }
    case Statistic::kVariance:
      if (!est.distribution) {
        return absl::InvalidArgumentError("estimate has no distribution");
      }
      return MeanAbsoluteError(WeightedVariance(*est.distribution),
                               truth_stats.variance);
    case Statistic::kMedian:
      if (!est.distribution) {
        return absl::InvalidArgumentError("estimate has no distribution");
      }
      return MeanAbsoluteError(WeightedMedian(*est.distribution),
                               truth_stats.median);
  }
  return absl::InternalError("unknown statistic");
}

MethodEstimate FromCorrection(const BiasCorrection& correction) {
  MethodEstimate out;
  out.non_participant.distribution =
      DiscreteDistribution::FromWeighted(correction.non_participant);
  out.entire.distribution = DiscreteDistribution::FromWeighted(correction.entire);
  return out;
}

// Index of every produced cell: (method, epsilon index or -1, target).
struct CellKey {
  Method method;
  int epsilon_index;
  size_t target_index;

  auto operator<=>(const CellKey&) const = default;
};

struct RepetitionOutput {
  std::map<CellKey, double> values;
  int selected_k = 0;
};

class Runner {
 public:
  Runner(const ExperimentConfig& config, const PreparedData& data)
      : config_(config), data_(data), targets_(config.EffectiveTargets()) {
    truth_.non_participant = DiscreteDistribution::Uniform(data.non_participants.values);
    Eigen::MatrixXd all(data.participants.rows() + data.non_participants.rows(),
                        data.participants.cols());
    all << data.participants.values, data.non_participants.values;
    truth_.entire = DiscreteDistribution::Uniform(all);
    truth_.non_participant_stats = StatReport::Of(truth_.non_participant);
    truth_.entire_stats = StatReport::Of(truth_.entire);
  }

  const std::vector<Target>& targets() const { return targets_; }

  bool WantsEpsilon(Statistic statistic, double epsilon) const {
    if (statistic != Statistic::kWasserstein) return true;
    return std::find(config_.wasserstein_epsilons.begin(),
                     config_.wasserstein_epsilons.end(),
                     epsilon) != config_.wasserstein_epsilons.end();
  }

  absl::Status Record(Method method, int epsilon_index,
                      const MethodEstimate& estimate, uint64_t subsample_seed,
                      RepetitionOutput* out) const {
    for (size_t t = 0; t < targets_.size(); ++t) {
      const Target& target = targets_[t];
      if (!Supports(method, target.statistic)) continue;
      if (epsilon_index >= 0 &&
          !WantsEpsilon(target.statistic, config_.epsilons[epsilon_index])) {
        continue;
      }
      if (epsilon_index < 0 && target.statistic == Statistic::kWasserstein &&
          config_.wasserstein_epsilons.empty()) {
        continue;
      }
      DIPPS_ASSIGN_OR_RETURN(
          double value,
          EvaluateTarget(target, estimate, truth_, config_.ot_subsample,
                         DeriveSeed(subsample_seed, t)));
      out->values[CellKey{method, epsilon_index, t}] = value;
    }
    return absl::OkStatus();
  }

  absl::StatusOr<RepetitionOutput> RunNaive() const {
    RepetitionOutput out;
    MethodEstimate estimate;
    estimate.non_participant.distribution = NaiveEstimate(data_.participants);
    estimate.entire.distribution = estimate.non_participant.distribution;
    // Fixed subsample stream: the naive row does not depend on the seed.
    DIPPS_RETURN_IF_ERROR(Record(Method::kNaive, -1, estimate,
                                 DeriveSeed(0, kSubsampleStream), &out));
    return out;
  }

  absl::StatusOr<RepetitionOutput> RunRepetition(int repetition) const {
    RepetitionOutput out;
    const auto r = static_cast<uint64_t>(repetition);
    const RecordMatrix& x1 = data_.participants;
    const RecordMatrix& x0 = data_.non_participants;
    const int64_t n0 = x0.rows();
    const int64_t n1 = x1.rows();
    const double share1 = static_cast<double>(n1) / static_cast<double>(n0 + n1);

    const bool needs_model = HasMethod(Method::kPs) || HasMethod(Method::kDipps) ||
                             HasMethod(Method::kLaplace) || HasMethod(Method::kHybrid);
    if (!needs_model) return out;

    ModelFitConfig model_config = config_.model;
    model_config.em.seed = CellSeed(config_.seed, kModelStream, r, 0, 0);
    DIPPS_ASSIGN_OR_RETURN(ModelFitResult fit,
                           FitClassAssignmentModel(x1, model_config));
    out.selected_k = fit.selected_k;
    const ClassAssignmentModel& model = fit.model;
    DIPPS_ASSIGN_OR_RETURN(Eigen::MatrixXd rho, model.AssignRows(x1.values));

    for (Method method : config_.methods) {
      const auto method_tag = static_cast<uint64_t>(method);
      if (method == Method::kNaive) continue;
      if (method == Method::kPs) {
        DIPPS_ASSIGN_OR_RETURN(PrivacyBudget unused, PrivacyBudget::Create(1.0));
        DIPPS_ASSIGN_OR_RETURN(
            RoundTranscript transcript,
            RunRound(model, x0.values, unused, Mechanism::kPs,
                     CellSeed(config_.seed, kRoundStream, method_tag, 0, r)));
        DIPPS_ASSIGN_OR_RETURN(ClusterMassEstimate mass,
                               EstimateClassMass(transcript, model.num_classes()));
        DIPPS_ASSIGN_OR_RETURN(BiasCorrection correction,
                               CorrectBias(x1, rho, mass, n0));
        DIPPS_RETURN_IF_ERROR(WithCell(
            Record(method, -1, FromCorrection(correction),
                   CellSeed(config_.seed, kSubsampleStream, method_tag, 0, r), &out),
            method, std::nullopt, repetition));
        continue;
      }
      for (size_t e = 0; e < config_.epsilons.size(); ++e) {
        const double eps = config_.epsilons[e];
        const uint64_t round_seed =
            CellSeed(config_.seed, kRoundStream, method_tag, e + 1, r);
        const uint64_t subsample_seed =
            CellSeed(config_.seed, kSubsampleStream, method_tag, e + 1, r);
        absl::Status status =
            RunPrivateMethod(method, static_cast<int>(e), eps, model, rho, share1,
                             round_seed, subsample_seed, &out);
        DIPPS_RETURN_IF_ERROR(WithCell(status, method, eps, repetition));
      }
    }
    return out;
  }

 private:
  bool HasMethod(Method m) const {
    return std::find(config_.methods.begin(), config_.methods.end(), m) !=
           config_.methods.end();
  }

  absl::Status WithCell(const absl::Status& status, Method method,
                        std::optional<double> eps, int repetition) const {
    if (status.ok()) return status;
    return absl::Status(
        status.code(),
        absl::StrCat("dataset ", config_.dataset.name, ", method ",
                     MethodName(method), eps ? absl::StrCat(", eps ", *eps) : "",
                     ", repetition ", repetition, ": ", status.message()));
  }

  absl::Status RunPrivateMethod(Method method, int eps_index, double eps,
                                const ClassAssignmentModel& model,
                                const Eigen::MatrixXd& rho, double share1,
                                uint64_t round_seed, uint64_t subsample_seed,
                                RepetitionOutput* out) const {
    const RecordMatrix& x1 = data_.participants;
    const RecordMatrix& x0 = data_.non_participants;
    DIPPS_ASSIGN_OR_RETURN(PrivacyBudget budget, PrivacyBudget::Create(eps));
    MethodEstimate estimate;
    switch (method) {
      case Method::kDipps: {
        DIPPS_ASSIGN_OR_RETURN(
            RoundTranscript transcript,
            RunRound(model, x0.values, budget, Mechanism::kDipps, round_seed));
        DIPPS_ASSIGN_OR_RETURN(ClusterMassEstimate mass,
                               EstimateClassMass(transcript, model.num_classes()));
        DIPPS_ASSIGN_OR_RETURN(BiasCorrection correction,
                               CorrectBias(x1, rho, mass, x0.rows()));
        estimate = FromCorrection(correction);
        break;
      }
      case Method::kLaplace: {
        DIPPS_ASSIGN_OR_RETURN(
            RoundTranscript transcript,
            RunRound(model, x0.values, budget, Mechanism::kLaplace, round_seed));
        DIPPS_ASSIGN_OR_RETURN(
            Eigen::MatrixXd noisy,
            TranscriptRecords(transcript, static_cast<int>(x0.cols())));
        const DiscreteDistribution noisy_dist = DiscreteDistribution::Uniform(noisy);
        estimate.non_participant.distribution = noisy_dist;
        estimate.entire.distribution =
            Mixture(NaiveEstimate(x1), noisy_dist, share1);
        break;
      }
      case Method::kHybrid: {
        DIPPS_ASSIGN_OR_RETURN(
            RoundTranscript transcript,
            RunRound(model, x0.values, budget, Mechanism::kHybrid, round_seed));
        DIPPS_ASSIGN_OR_RETURN(
            Eigen::VectorXd mean,
            HybridMeanEstimate(transcript, static_cast<int>(x0.cols())));
        estimate.non_participant.mean = mean;
        estimate.entire.mean =
            share1 * x1.values.colwise().mean().transpose() + (1.0 - share1) * mean;
        break;
      }
      default:
        return absl::InternalError("not a private method");
    }
    return Record(method, eps_index, estimate, subsample_seed, out);
  }

  const ExperimentConfig& config_;
  const PreparedData& data_;
  std::vector<Target> targets_;
  Truth truth_;
};

double SampleStd(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string FormatDouble(double x) { return absl::StrFormat("%.6g", x); }

std::string EpsilonField(const std::optional<double>& eps) {
  return eps ? FormatDouble(*eps) : "";
}

std::vector<double> ParseDoubleList(const Json& doc) {
  return doc.get<std::vector<double>>();
}

}  // namespace

std::string MethodName(Method method) {
  switch (method) {
    case Method::kNaive: return "naive";
    case Method::kPs: return "ps";
    case Method::kDipps: return "dipps";
    case Method::kLaplace: return "laplace";
    case Method::kHybrid: return "hybrid";
  }
  return "unknown";
}

absl::StatusOr<Method> ParseMethod(const std::string& name) {
  if (name == "naive") return Method::kNaive;
  if (name == "ps") return Method::kPs;
  if (name == "dipps") return Method::kDipps;
  if (name == "laplace") return Method::kLaplace;
  if (name == "hybrid") return Method::kHybrid;
  return absl::InvalidArgumentError(absl::StrCat("unknown method '", name, "'"));
}

bool UsesEpsilon(Method method) {
  return method != Method::kNaive && method != Method::kPs;
}

std::string StatisticName(Statistic statistic) {
  switch (statistic) {
    case Statistic::kWasserstein: return "wasserstein";
    case Statistic::kMean: return "mean";
    case Statistic::kVariance: return "variance";
    case Statistic::kMedian: return "median";
  }
  return "unknown";
}

std::string PopulationName(Population population) {
  return population == Population::kEntire ? "entire" : "nonparticipant";
}

std::string TargetName(const Target& target) {
  return absl::StrCat(StatisticName(target.statistic), ".",
                      PopulationName(target.population));
}

absl::StatusOr<Target> ParseTarget(const std::string& text) {
  std::vector<std::string> parts = absl::StrSplit(text, '.');
  if (parts.size() != 2) {
    return absl::InvalidArgumentError(
        absl::StrCat("target '", text, "' must look like 'mean.entire'"));
  }
  Target target{};
  bool found = false;
  for (Statistic s : kAllStatistics) {
    if (StatisticName(s) == parts[0]) {
      target.statistic = s;
      found = true;
    }
  }
  if (!found) return absl::InvalidArgumentError(absl::StrCat("unknown statistic '", parts[0], "'"));
  if (parts[1] == "entire") {
    target.population = Population::kEntire;
  } else if (parts[1] == "nonparticipant") {
    target.population = Population::kNonParticipant;
  } else {
    return absl::InvalidArgumentError(absl::StrCat("unknown population '", parts[1], "'"));
  }
  return target;
}

bool Supports(Method method, Statistic statistic) {
  switch (method) {
    case Method::kNaive:
    case Method::kPs:
    case Method::kDipps:
      return true;
    case Method::kLaplace:
      return statistic == Statistic::kMean || statistic == Statistic::kMedian;
    case Method::kHybrid:
      return statistic == Statistic::kMean;
  }
  return false;
}

std::vector<Target> ExperimentConfig::EffectiveTargets() const {
  if (!targets.empty()) return targets;
  std::vector<Target> all;
  for (Statistic s : kAllStatistics) {
    for (Population p : kAllPopulations) all.push_back(Target{s, p});
  }
  return all;
}

absl::Status ExperimentConfig::Validate() const {
  if (repetitions < 1) return absl::InvalidArgumentError("repetitions must be >= 1");
  if (methods.empty()) return absl::InvalidArgumentError("no methods configured");
  for (double eps : epsilons) {
    if (!(eps > 0.0)) return absl::InvalidArgumentError("epsilon values must be > 0");
  }
  for (double eps : wasserstein_epsilons) {
    if (!(eps > 0.0)) return absl::InvalidArgumentError("epsilon values must be > 0");
  }
  const bool needs_eps =
      std::any_of(methods.begin(), methods.end(), [](Method m) { return UsesEpsilon(m); });
  if (needs_eps && epsilons.empty()) {
    return absl::InvalidArgumentError("no epsilon values configured");
  }
  if (threads < 1) return absl::InvalidArgumentError("threads must be >= 1");
  if (!(model.pca_variance_target > 0.0 && model.pca_variance_target <= 1.0)) {
    return absl::InvalidArgumentError("pca_variance must lie in (0, 1]");
  }
  if (model.k <= 0 && model.k_grid.size() < 3) {
    return absl::InvalidArgumentError("k_grid needs at least 3 values when k is not fixed");
  }
  if (dataset.synthetic) {
    DIPPS_RETURN_IF_ERROR(dataset.synthetic->Validate());
  } else if (dataset.csv_path.empty()) {
    return absl::InvalidArgumentError("dataset needs a csv path or a synthetic spec");
  }
  return absl::OkStatus();
}

Json ExperimentConfig::ToJson() const {
  Json ds{{"name", dataset.name}};
  if (dataset.synthetic) {
    ds["synthetic"] = dataset.synthetic->ToJson();
  } else {
    static constexpr const char* kOps[] = {"==", "!=", "<", "<=", ">", ">="};
    ds["csv"] = Json{{"path", dataset.csv_path},
                     {"feature_columns", dataset.schema.feature_columns},
                     {"drop_missing", dataset.schema.drop_missing},
                     {"categorical", dataset.schema.categorical},
                     {"split",
                      {{"column", dataset.split.column},
                       {"op", kOps[static_cast<int>(dataset.split.op)]},
                       {"value", dataset.split.value},
                       {"drop_column", dataset.split.drop_column}}}};
  }
  std::vector<std::string> method_names, target_names;
  for (Method m : methods) method_names.push_back(MethodName(m));
  for (const Target& t : EffectiveTargets()) target_names.push_back(TargetName(t));
  return Json{{"dataset", ds},
              {"epsilons", epsilons},
              {"mechanisms", method_names},
              {"repetitions", repetitions},
              {"seed", seed},
              {"pca_variance", model.pca_variance_target},
              {"k", model.k},
              {"k_grid", model.k_grid},
              {"em",
               {{"tolerance", model.em.tolerance},
                {"max_iterations", model.em.max_iterations},
                {"restarts", model.em.restarts},
                {"regularization", model.em.regularization}}},
              {"targets", target_names},
              {"wasserstein_epsilons", wasserstein_epsilons},
              {"ot_subsample", ot_subsample},
              {"threads", threads}};
}

absl::StatusOr<ExperimentConfig> ExperimentConfig::FromJson(const Json& doc) {
  ExperimentConfig config;
  try {
    const Json& ds = doc.at("dataset");
    config.dataset.name = ds.value("name", "dataset");
    if (ds.contains("synthetic")) {
      DIPPS_ASSIGN_OR_RETURN(SyntheticSpec spec, SyntheticSpec::FromJson(ds["synthetic"]));
      config.dataset.synthetic = std::move(spec);
    } else if (ds.contains("csv")) {
      const Json& csv = ds["csv"];
      config.dataset.csv_path = csv.at("path").get<std::string>();
      config.dataset.schema.feature_columns =
          csv.value("feature_columns", std::vector<std::string>{});
      config.dataset.schema.drop_missing = csv.value("drop_missing", true);
      if (csv.contains("categorical")) {
        config.dataset.schema.categorical =
            csv["categorical"].get<std::map<std::string, std::map<std::string, double>>>();
      }
      const Json& split = csv.at("split");
      config.dataset.split.column = split.at("column").get<std::string>();
      DIPPS_ASSIGN_OR_RETURN(config.dataset.split.op,
                             SplitRule::ParseOp(split.value("op", "==")));
      config.dataset.split.value = split.value("value", 1.0);
      config.dataset.split.drop_column = split.value("drop_column", true);
      // The split column must be loaded even if it is not a feature.
      auto& cols = config.dataset.schema.feature_columns;
      if (!cols.empty() &&
          std::find(cols.begin(), cols.end(), config.dataset.split.column) == cols.end()) {
        cols.push_back(config.dataset.split.column);
      }
    } else {
      return absl::InvalidArgumentError("dataset needs 'csv' or 'synthetic'");
    }
    if (doc.contains("epsilons")) config.epsilons = ParseDoubleList(doc["epsilons"]);
    if (doc.contains("mechanisms")) {
      config.methods.clear();
      for (const auto& name : doc["mechanisms"].get<std::vector<std::string>>()) {
        DIPPS_ASSIGN_OR_RETURN(Method m, ParseMethod(name));
        config.methods.push_back(m);
      }
    }
    config.repetitions = doc.value("repetitions", config.repetitions);
    config.seed = doc.value("seed", config.seed);
    config.model.pca_variance_target =
        doc.value("pca_variance", config.model.pca_variance_target);
    config.model.k = doc.value("k", 0);
    if (doc.contains("k_grid")) config.model.k_grid = doc["k_grid"].get<std::vector<int>>();
    if (doc.contains("em")) {
      const Json& em = doc["em"];
      config.model.em.tolerance = em.value("tolerance", config.model.em.tolerance);
      config.model.em.max_iterations =
          em.value("max_iterations", config.model.em.max_iterations);
      config.model.em.restarts = em.value("restarts", config.model.em.restarts);
      config.model.em.regularization =
          em.value("regularization", config.model.em.regularization);
    }
    if (doc.contains("targets")) {
      for (const auto& name : doc["targets"].get<std::vector<std::string>>()) {
        DIPPS_ASSIGN_OR_RETURN(Target t, ParseTarget(name));
        config.targets.push_back(t);
      }
    }
    if (doc.contains("wasserstein_epsilons")) {
      config.wasserstein_epsilons = ParseDoubleList(doc["wasserstein_epsilons"]);
    }
    config.ot_subsample = doc.value("ot_subsample", config.ot_subsample);
    config.threads = doc.value("threads", config.threads);
  } catch (const Json::exception& e) {
    return absl::InvalidArgumentError(absl::StrCat("malformed config: ", e.what()));
  }
  DIPPS_RETURN_IF_ERROR(config.Validate());
  return config;
}

absl::StatusOr<PreparedData> PrepareData(const DatasetSource& source) {
  SplitDataset split;
  if (source.synthetic) {
    DIPPS_ASSIGN_OR_RETURN(SyntheticSample sample, GenerateSynthetic(*source.synthetic));
    split = std::move(sample.data);
  } else {
    DIPPS_ASSIGN_OR_RETURN(RecordMatrix records, LoadCsv(source.csv_path, source.schema));
    DIPPS_ASSIGN_OR_RETURN(split, SplitByRule(records, source.split));
  }
  PreparedData out;
  DIPPS_ASSIGN_OR_RETURN(out.normalizer, FitNormalizer(split.participants));
  DIPPS_ASSIGN_OR_RETURN(out.participants,
                         ApplyNormalizer(out.normalizer, split.participants));
  DIPPS_ASSIGN_OR_RETURN(out.non_participants,
                         ApplyNormalizer(out.normalizer, split.non_participants));
  return out;
}

absl::StatusOr<ExperimentReport> RunExperiment(const ExperimentConfig& config) {
  DIPPS_RETURN_IF_ERROR(config.Validate());
  DIPPS_ASSIGN_OR_RETURN(PreparedData data, PrepareData(config.dataset));
  Runner runner(config, data);
  const std::vector<Target>& targets = runner.targets();

  ExperimentReport report;
  report.dataset = config.dataset.name;
  report.epsilons = config.epsilons;
  report.wasserstein_epsilons = config.wasserstein_epsilons;

  std::set<std::string> warned;
  for (Method m : config.methods) {
    for (const Target& t : targets) {
      if (!Supports(m, t.statistic)) {
        const std::string msg = absl::StrCat("method ", MethodName(m), " does not estimate ",
                                             StatisticName(t.statistic), "; rows omitted");
        if (warned.insert(msg).second) report.warnings.push_back(msg);
      }
    }
  }

  std::vector<absl::StatusOr<RepetitionOutput>> reps(
      static_cast<size_t>(config.repetitions), absl::UnknownError("not run"));
  {
    const int workers = std::min(config.threads, config.repetitions);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int r = w; r < config.repetitions; r += workers) {
          reps[static_cast<size_t>(r)] = runner.RunRepetition(r);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  std::optional<RepetitionOutput> naive;
  if (std::find(config.methods.begin(), config.methods.end(), Method::kNaive) !=
      config.methods.end()) {
    DIPPS_ASSIGN_OR_RETURN(naive, runner.RunNaive());
  }

  std::vector<int> selected_k;
  for (auto& rep : reps) {
    if (!rep.ok()) return rep.status();
    selected_k.push_back(rep->selected_k);
  }

  for (Method m : config.methods) {
    for (size_t t = 0; t < targets.size(); ++t) {
      const std::vector<int> eps_indices =
          UsesEpsilon(m) ? [&] {
            std::vector<int> v;
            for (size_t e = 0; e < config.epsilons.size(); ++e) v.push_back(static_cast<int>(e));
            return v;
          }()
                         : std::vector<int>{-1};
      for (int e : eps_indices) {
        const CellKey key{m, e, t};
        CellResult cell{m, e >= 0 ? std::optional<double>(config.epsilons[e]) : std::nullopt,
                        targets[t], {}, 0.0, 0.0};
        if (m == Method::kNaive) {
          const auto it = naive->values.find(key);
          if (it != naive->values.end()) cell.values.push_back(it->second);
        } else {
          for (const auto& rep : reps) {
            const auto it = rep->values.find(key);
            if (it != rep->values.end()) cell.values.push_back(it->second);
          }
        }
        if (cell.values.empty()) continue;
        double sum = 0.0;
        for (double v : cell.values) sum += v;
        cell.mean = sum / static_cast<double>(cell.values.size());
        cell.stddev = SampleStd(cell.values, cell.mean);
        report.cells.push_back(std::move(cell));
      }
    }
  }
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";

  report.metadata = Json{{"config", config.ToJson()},
                         {"model_refit", "per_repetition"},
                         {"selected_k", selected_k},
                         {"num_participants", data.participants.rows()},
                         {"num_non_participants", data.non_participants.rows()},
                         {"normalization", data.normalizer.ToJson()},
                         {"warnings", report.warnings}};
  return report;
}

std::string ReportCsv(const ExperimentReport& report) {
  std::string out = "dataset,method,epsilon,statistic,target,mean,std,runs,values\n";
  for (const CellResult& c : report.cells) {
    std::vector<std::string> values;
    for (double v : c.values) values.push_back(absl::StrFormat("%.10g", v));
    absl::StrAppend(&out, report.dataset, ",", MethodName(c.method), ",",
                    EpsilonField(c.epsilon), ",", StatisticName(c.target.statistic),
                    ",", PopulationName(c.target.population), ",",
                    absl::StrFormat("%.10g", c.mean), ",",
                    absl::StrFormat("%.10g", c.stddev), ",", c.values.size(), ",",
                    absl::StrJoin(values, ";"), "\n");
  }
  return out;
}

namespace {

// Budgets that form the columns of a table for `target`.
std::vector<double> TableEpsilons(const ExperimentReport& report, const Target& target) {
  std::vector<double> eps;
  for (const CellResult& c : report.cells) {
    if (c.target == target && c.epsilon &&
        std::find(eps.begin(), eps.end(), *c.epsilon) == eps.end()) {
      eps.push_back(*c.epsilon);
    }
  }
  if (eps.empty()) {
    eps = target.statistic == Statistic::kWasserstein ? report.wasserstein_epsilons
                                                        : report.epsilons;
  }
  std::sort(eps.begin(), eps.end());
  return eps;
}

std::vector<Target> ReportTargets(const ExperimentReport& report) {
  std::vector<Target> out;
  for (const CellResult& c : report.cells) {
    if (std::find(out.begin(), out.end(), c.target) == out.end()) out.push_back(c.target);
  }
  return out;
}

std::vector<Method> ReportMethods(const ExperimentReport& report, const Target& target) {
  std::vector<Method> out;
  for (const CellResult& c : report.cells) {
    if (c.target == target && std::find(out.begin(), out.end(), c.method) == out.end()) {
      out.push_back(c.method);
    }
  }
  return out;
}

const CellResult* FindCell(const ExperimentReport& report, Method m, const Target& t,
                           std::optional<double> eps) {
  for (const CellResult& c : report.cells) {
    if (c.method == m && c.target == t && c.epsilon == eps) return &c;
  }
  return nullptr;
}

}  // namespace

std::string ReportMarkdown(const ExperimentReport& report) {
  std::string out = absl::StrCat("# Results: ", report.dataset, "\n");
  for (const Target& target : ReportTargets(report)) {
    const std::vector<double> eps = TableEpsilons(report, target);
    absl::StrAppend(&out, "\n## ", StatisticName(target.statistic), " (",
                    PopulationName(target.population), ")\n\n| method |");
    for (double e : eps) absl::StrAppend(&out, " eps=", FormatDouble(e), " |");
    absl::StrAppend(&out, "\n|---|");
    for (size_t i = 0; i < eps.size(); ++i) absl::StrAppend(&out, "---|");
    out.push_back('\n');
    for (Method m : ReportMethods(report, target)) {
      absl::StrAppend(&out, "| ", MethodName(m), " |");
      for (double e : eps) {
        const CellResult* c =
            FindCell(report, m, target, UsesEpsilon(m) ? std::optional<double>(e) : std::nullopt);
        if (c == nullptr) {
          absl::StrAppend(&out, " - |");
        } else if (c->values.size() > 1) {
          absl::StrAppend(&out, absl::StrFormat(" %.3f ± %.3f |", c->mean, c->stddev));
        } else {
          absl::StrAppend(&out, absl::StrFormat(" %.3f |", c->mean));
        }
      }
      out.push_back('\n');
    }
  }
  return out;
}

std::string PlotDataCsv(const ExperimentReport& report) {
  std::string out = "dataset,method,epsilon,statistic,target,value\n";
  for (const Target& target : ReportTargets(report)) {
    const std::vector<double> eps = TableEpsilons(report, target);
    for (Method m : ReportMethods(report, target)) {
      for (double e : eps) {
        const CellResult* c =
            FindCell(report, m, target, UsesEpsilon(m) ? std::optional<double>(e) : std::nullopt);
        if (c == nullptr) continue;
        absl::StrAppend(&out, report.dataset, ",", MethodName(m), ",", FormatDouble(e), ",",
                        StatisticName(target.statistic), ",",
                        PopulationName(target.population), ",",
                        absl::StrFormat("%.10g", c->mean), "\n");
      }
    }
  }
  return out;
}

absl::Status WriteReport(const ExperimentReport& report, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) return absl::InternalError(absl::StrCat("cannot create ", out_dir, ": ", ec.message()));
  const std::filesystem::path dir(out_dir);
  DIPPS_RETURN_IF_ERROR(WriteTextFile((dir / "report.csv").string(), ReportCsv(report)));
  DIPPS_RETURN_IF_ERROR(WriteTextFile((dir / "report.md").string(), ReportMarkdown(report)));
  DIPPS_RETURN_IF_ERROR(
      WriteTextFile((dir / "plot_data.csv").string(), PlotDataCsv(report)));
  DIPPS_RETURN_IF_ERROR(WriteTextFile((dir / "metadata.json").string(),
                                      report.metadata.dump(2) + "\n"));
  return absl::OkStatus();
}

}  // namespace dipps
