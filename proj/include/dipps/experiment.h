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

#ifndef DIPPS_EXPERIMENT_H_
#define DIPPS_EXPERIMENT_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "dipps/data.h"
#include "dipps/model.h"
#include "json.hpp"

namespace dipps {

// Estimation methods compared by the experiment runner.
enum class Method { kNaive, kPs, kDipps, kLaplace, kHybrid };

std::string MethodName(Method method);
absl::StatusOr<Method> ParseMethod(const std::string& name);
// Naive and PS do not consume a privacy budget.
bool UsesEpsilon(Method method);

enum class Statistic { kWasserstein, kMean, kVariance, kMedian };
enum class Population { kEntire, kNonParticipant };

std::string StatisticName(Statistic statistic);
std::string PopulationName(Population population);

struct Target {
  Statistic statistic;
  Population population;

  friend bool operator==(const Target&, const Target&) = default;
};

// "wasserstein.nonparticipant", "mean.entire", ...
absl::StatusOr<Target> ParseTarget(const std::string& text);
std::string TargetName(const Target& target);

// Whether `method` produces an estimate usable for `statistic`.
bool Supports(Method method, Statistic statistic);

struct DatasetSource {
  std::string name = "dataset";
  // CSV source: records are split into participants and non-participants
  // by `split`.
  std::string csv_path;
  CsvSchema schema;
  SplitRule split;
  // Synthetic source, used when set.
  std::optional<SyntheticSpec> synthetic;
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<double> epsilons = {0.5, 1.0, 2.0, 4.0, 8.0};
  std::vector<Method> methods = {Method::kNaive, Method::kPs, Method::kDipps,
                                 Method::kLaplace, Method::kHybrid};
  int repetitions = 5;
  uint64_t seed = 0;
  ModelFitConfig model;
  std::vector<Target> targets;  // empty means every combination
  // Wasserstein distances are only computed at these budgets.
  std::vector<double> wasserstein_epsilons = {1.0};
  // Support points kept per side for the transport problem; <= 0 keeps all.
  int64_t ot_subsample = 2000;
  int threads = 1;

  std::vector<Target> EffectiveTargets() const;
  absl::Status Validate() const;

  nlohmann::json ToJson() const;
  static absl::StatusOr<ExperimentConfig> FromJson(const nlohmann::json& doc);
};

// Metric values of one (method, epsilon, target) cell across repetitions.
struct CellResult {
  Method method;
  std::optional<double> epsilon;  // empty for epsilon-free methods
  Target target;
  std::vector<double> values;     // one per repetition
  double mean = 0.0;
  double stddev = 0.0;            // sample standard deviation
};

struct ExperimentReport {
  std::string dataset;
  std::vector<double> epsilons;
  std::vector<double> wasserstein_epsilons;
  std::vector<CellResult> cells;
  std::vector<std::string> warnings;
  nlohmann::json metadata;
};

// Runs data -> model -> round -> server -> eval for every method, budget and
// repetition. Deterministic under `config.seed` for any thread count.
absl::StatusOr<ExperimentReport> RunExperiment(const ExperimentConfig& config);

// One row per dataset x method x epsilon x statistic x target.
std::string ReportCsv(const ExperimentReport& report);
// One table per statistic and target; methods by rows, budgets by columns.
std::string ReportMarkdown(const ExperimentReport& report);
// Long format (dataset, method, epsilon, statistic, target, value); budget-
// free methods are repeated at every budget of their table.
std::string PlotDataCsv(const ExperimentReport& report);

// Writes report.csv, report.md, plot_data.csv and metadata.json.
absl::Status WriteReport(const ExperimentReport& report,
                         const std::string& out_dir);

// Loaded, split and normalized data for a dataset source.
struct PreparedData {
  NormalizationSpec normalizer;
  RecordMatrix participants;      // normalized
  RecordMatrix non_participants;  // normalized with participant bounds
};

absl::StatusOr<PreparedData> PrepareData(const DatasetSource& source);

}  // namespace dipps

#endif  // DIPPS_EXPERIMENT_H_
