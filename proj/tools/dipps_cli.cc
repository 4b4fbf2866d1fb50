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

// Command-line front end: fit, round, run and eval verbs.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "dipps/data.h"
#include "dipps/eval.h"
#include "dipps/experiment.h"
#include "dipps/ldp.h"
#include "dipps/model.h"
#include "dipps/protocol.h"
#include "dipps/server.h"
#include "dipps/status_macros.h"
#include "json.hpp"

namespace dipps {
namespace {

using Json = nlohmann::json;
namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::optional<uint64_t> seed;
  std::vector<double> eps;
  std::vector<std::string> mechanisms;
  std::string out_dir = ".";
};

absl::Status EnsureDir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) return absl::InternalError(absl::StrCat("cannot create ", dir, ": ", ec.message()));
  return absl::OkStatus();
}

std::string PathIn(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

absl::StatusOr<ExperimentConfig> LoadConfig(const CommonFlags& flags) {
  if (flags.config.empty()) return absl::InvalidArgumentError("--config is required");
  DIPPS_ASSIGN_OR_RETURN(std::string text, ReadTextFile(flags.config));
  Json doc = Json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) {
    return absl::InvalidArgumentError(absl::StrCat(flags.config, ": not valid JSON"));
  }
  // Relative CSV paths resolve against the config file's directory.
  if (doc.contains("dataset") && doc["dataset"].contains("csv")) {
    Json& csv = doc["dataset"]["csv"];
    if (csv.contains("path") && csv["path"].is_string()) {
      fs::path p(csv["path"].get<std::string>());
      if (p.is_relative()) {
        csv["path"] = (fs::path(flags.config).parent_path() / p).string();
      }
    }
  }
  if (flags.seed) doc["seed"] = *flags.seed;
  if (!flags.eps.empty()) doc["epsilons"] = flags.eps;
  if (!flags.mechanisms.empty()) doc["mechanisms"] = flags.mechanisms;
  return ExperimentConfig::FromJson(doc);
}

absl::StatusOr<RecordMatrix> LoadRecords(const std::string& path) {
  return LoadCsv(path, CsvSchema{});
}

absl::Status RunFit(const CommonFlags& flags) {
  DIPPS_ASSIGN_OR_RETURN(ExperimentConfig config, LoadConfig(flags));
  DIPPS_ASSIGN_OR_RETURN(PreparedData data, PrepareData(config.dataset));
  ModelFitConfig model_config = config.model;
  model_config.em.seed = config.seed;
  DIPPS_ASSIGN_OR_RETURN(ModelFitResult fit,
                         FitClassAssignmentModel(data.participants, model_config));
  DIPPS_RETURN_IF_ERROR(EnsureDir(flags.out_dir));
  DIPPS_RETURN_IF_ERROR(WriteTextFile(PathIn(flags.out_dir, "model.json"),
                                      fit.model.ToJson().dump(2) + "\n"));
  DIPPS_RETURN_IF_ERROR(WriteTextFile(PathIn(flags.out_dir, "normalizer.json"),
                                      data.normalizer.ToJson().dump(2) + "\n"));
  DIPPS_RETURN_IF_ERROR(WriteTextFile(PathIn(flags.out_dir, "participants.csv"),
                                      FormatCsv(data.participants)));
  DIPPS_RETURN_IF_ERROR(WriteTextFile(PathIn(flags.out_dir, "nonparticipants.csv"),
                                      FormatCsv(data.non_participants)));
  std::cout << absl::StrFormat("fitted K=%d (log-likelihood %.6g, %d principal components)\n",
                               fit.selected_k, fit.log_likelihood,
                               fit.model.pca().output_dim());
  return absl::OkStatus();
}

absl::StatusOr<ClassAssignmentModel> LoadModel(const std::string& path) {
  DIPPS_ASSIGN_OR_RETURN(std::string text, ReadTextFile(path));
  return ClassAssignmentModel::Deserialize(text);
}

absl::Status RunRoundVerb(const CommonFlags& flags, const std::string& model_path,
                          const std::string& clients_path) {
  DIPPS_ASSIGN_OR_RETURN(ClassAssignmentModel model, LoadModel(model_path));
  DIPPS_ASSIGN_OR_RETURN(RecordMatrix clients, LoadRecords(clients_path));
  const std::vector<double> eps = flags.eps.empty() ? std::vector<double>{1.0} : flags.eps;
  const std::vector<std::string> mechs =
      flags.mechanisms.empty() ? std::vector<std::string>{"dipps"} : flags.mechanisms;
  DIPPS_RETURN_IF_ERROR(EnsureDir(flags.out_dir));
  for (const std::string& name : mechs) {
    DIPPS_ASSIGN_OR_RETURN(Mechanism mechanism, ParseMechanism(name));
    for (double e : eps) {
      DIPPS_ASSIGN_OR_RETURN(PrivacyBudget budget, PrivacyBudget::Create(e));
      DIPPS_ASSIGN_OR_RETURN(
          RoundTranscript transcript,
          RunRound(model, clients.values, budget, mechanism, flags.seed.value_or(0)));
      const std::string file =
          eps.size() == 1 ? absl::StrCat("transcript_", name, ".jsonl")
                          : absl::StrCat("transcript_", name, "_eps", e, ".jsonl");
      DIPPS_RETURN_IF_ERROR(
          WriteTextFile(PathIn(flags.out_dir, file), transcript.ToJsonLines()));
      std::cout << "wrote " << PathIn(flags.out_dir, file) << " ("
                << transcript.num_clients() << " reports)\n";
    }
  }
  return absl::OkStatus();
}

absl::StatusOr<Json> MetricsAgainst(const DiscreteDistribution& estimate,
                                    const RecordMatrix& reference,
                                    int64_t ot_subsample, uint64_t seed) {
  const DiscreteDistribution truth = DiscreteDistribution::Uniform(reference.values);
  const StatReport est_stats = StatReport::Of(estimate);
  const StatReport truth_stats = StatReport::Of(truth);
  DIPPS_ASSIGN_OR_RETURN(StatErrors errors, MaePerAttribute(est_stats, truth_stats));
  DIPPS_ASSIGN_OR_RETURN(
      double w1, Wasserstein1(Subsample(estimate, ot_subsample, DeriveSeed(seed, 0)),
                              Subsample(truth, ot_subsample, DeriveSeed(seed, 1))));
  return Json{{"wasserstein", w1},
              {"mean_mae", errors.mean},
              {"variance_mae", errors.variance},
              {"median_mae", errors.median}};
}

// Reads a weighted CSV whose last column is `mass`.
absl::StatusOr<DiscreteDistribution> LoadWeighted(const std::string& path) {
  DIPPS_ASSIGN_OR_RETURN(RecordMatrix table, LoadRecords(path));
  const int mass_col = table.ColumnIndex("mass");
  if (mass_col < 0) {
    return absl::InvalidArgumentError(absl::StrCat(path, ": no 'mass' column"));
  }
  DiscreteDistribution d;
  d.points.resize(table.rows(), table.cols() - 1);
  int out = 0;
  for (int c = 0; c < table.cols(); ++c) {
    if (c == mass_col) continue;
    d.points.col(out++) = table.values.col(c);
  }
  d.masses = table.values.col(mass_col);
  const double total = d.masses.sum();
  if (!(total > 0.0)) return absl::InvalidArgumentError(absl::StrCat(path, ": zero total mass"));
  d.masses /= total;
  return d;
}

struct EvalFlags {
  std::string model;
  std::string participants;
  std::string transcript;
  std::string weights;
  std::string reference;
  int64_t ot_subsample = 2000;
};

absl::Status RunEval(const CommonFlags& flags, const EvalFlags& eval) {
  DIPPS_RETURN_IF_ERROR(EnsureDir(flags.out_dir));
  const uint64_t seed = flags.seed.value_or(0);
  std::optional<RecordMatrix> reference;
  if (!eval.reference.empty()) {
    DIPPS_ASSIGN_OR_RETURN(reference, LoadRecords(eval.reference));
  }
  Json metrics = Json::object();
  if (!eval.weights.empty()) {
    if (!reference) return absl::InvalidArgumentError("--weights needs --reference");
    DIPPS_ASSIGN_OR_RETURN(DiscreteDistribution d, LoadWeighted(eval.weights));
    DIPPS_ASSIGN_OR_RETURN(metrics["weights"],
                           MetricsAgainst(d, *reference, eval.ot_subsample, seed));
  } else {
    if (eval.transcript.empty()) {
      return absl::InvalidArgumentError("eval needs --transcript or --weights");
    }
    DIPPS_ASSIGN_OR_RETURN(std::string text, ReadTextFile(eval.transcript));
    DIPPS_ASSIGN_OR_RETURN(RoundTranscript transcript, RoundTranscript::FromJsonLines(text));
    if (transcript.mechanism == Mechanism::kLaplace ||
        transcript.mechanism == Mechanism::kHybrid) {
      if (!reference) return absl::InvalidArgumentError("record mechanisms need --reference");
      const int m = static_cast<int>(reference->cols());
      if (transcript.mechanism == Mechanism::kLaplace) {
        DIPPS_ASSIGN_OR_RETURN(Eigen::MatrixXd noisy, TranscriptRecords(transcript, m));
        const StatReport est = StatReport::Of(DiscreteDistribution::Uniform(noisy));
        const StatReport truth =
            StatReport::Of(DiscreteDistribution::Uniform(reference->values));
        DIPPS_ASSIGN_OR_RETURN(metrics["nonparticipant"]["mean_mae"],
                               MeanAbsoluteError(est.mean, truth.mean));
        DIPPS_ASSIGN_OR_RETURN(metrics["nonparticipant"]["median_mae"],
                               MeanAbsoluteError(est.median, truth.median));
      } else {
        DIPPS_ASSIGN_OR_RETURN(Eigen::VectorXd mean, HybridMeanEstimate(transcript, m));
        DIPPS_ASSIGN_OR_RETURN(
            metrics["nonparticipant"]["mean_mae"],
            MeanAbsoluteError(mean, reference->values.colwise().mean().transpose()));
      }
    } else {
      if (eval.model.empty() || eval.participants.empty()) {
        return absl::InvalidArgumentError("categorical transcripts need --model and --participants");
      }
      DIPPS_ASSIGN_OR_RETURN(ClassAssignmentModel model, LoadModel(eval.model));
      DIPPS_ASSIGN_OR_RETURN(RecordMatrix participants, LoadRecords(eval.participants));
      DIPPS_ASSIGN_OR_RETURN(Eigen::MatrixXd rho, model.AssignRows(participants.values));
      DIPPS_ASSIGN_OR_RETURN(ClusterMassEstimate mass,
                             EstimateClassMass(transcript, model.num_classes()));
      DIPPS_ASSIGN_OR_RETURN(
          BiasCorrection correction,
          CorrectBias(participants, rho, mass,
                      static_cast<int64_t>(transcript.num_clients())));
      DIPPS_RETURN_IF_ERROR(WriteTextFile(PathIn(flags.out_dir, "weights_entire.csv"),
                                          correction.entire.ToCsv()));
      DIPPS_RETURN_IF_ERROR(
          WriteTextFile(PathIn(flags.out_dir, "weights_nonparticipant.csv"),
                        correction.non_participant.ToCsv()));
      DIPPS_RETURN_IF_ERROR(WriteTextFile(PathIn(flags.out_dir, "diagnostics.json"),
                                          correction.DiagnosticsJson().dump(2) + "\n"));
      if (reference) {
        DIPPS_ASSIGN_OR_RETURN(
            metrics["nonparticipant"],
            MetricsAgainst(DiscreteDistribution::FromWeighted(correction.non_participant),
                           *reference, eval.ot_subsample, seed));
      }
    }
  }
  DIPPS_RETURN_IF_ERROR(
      WriteTextFile(PathIn(flags.out_dir, "metrics.json"), metrics.dump(2) + "\n"));
  std::cout << metrics.dump(2) << "\n";
  return absl::OkStatus();
}

absl::Status RunRun(const CommonFlags& flags, std::optional<int> repetitions,
                    std::optional<int> threads) {
  DIPPS_ASSIGN_OR_RETURN(ExperimentConfig config, LoadConfig(flags));
  if (repetitions) config.repetitions = *repetitions;
  if (threads) config.threads = *threads;
  DIPPS_RETURN_IF_ERROR(config.Validate());
  DIPPS_ASSIGN_OR_RETURN(ExperimentReport report, RunExperiment(config));
  DIPPS_RETURN_IF_ERROR(WriteReport(report, flags.out_dir));
  std::cout << ReportMarkdown(report);
  return absl::OkStatus();
}

void AddCommonFlags(CLI::App* app, CommonFlags* flags, bool config) {
  if (config) app->add_option("--config", flags->config, "JSON experiment config")->required();
  app->add_option("--seed", flags->seed, "master seed");
  app->add_option("--eps", flags->eps, "privacy budgets")->delimiter(',');
  app->add_option("--mechanisms", flags->mechanisms,
                  "subset of naive,ps,dipps,laplace,hybrid")
      ->delimiter(',');
  app->add_option("--out-dir", flags->out_dir, "output directory");
}

}  // namespace
}  // namespace dipps

int main(int argc, char** argv) {
  using dipps::CommonFlags;
  CLI::App app{"Private participation-bias correction experiments"};
  app.require_subcommand(1);

  CommonFlags fit_flags, round_flags, run_flags, eval_flags;
  CLI::App* fit = app.add_subcommand("fit", "fit the class-assignment model");
  dipps::AddCommonFlags(fit, &fit_flags, /*config=*/true);

  std::string model_path, clients_path;
  CLI::App* round = app.add_subcommand("round", "simulate one report round");
  dipps::AddCommonFlags(round, &round_flags, /*config=*/false);
  round->add_option("--model", model_path, "model JSON")->required();
  round->add_option("--clients", clients_path, "non-participant records CSV")->required();

  std::optional<int> repetitions, threads;
  CLI::App* run = app.add_subcommand("run", "run a full experiment");
  dipps::AddCommonFlags(run, &run_flags, /*config=*/true);
  run->add_option("--repetitions", repetitions, "repetitions per cell");
  run->add_option("--threads", threads, "worker threads");

  dipps::EvalFlags eval_opts;
  CLI::App* eval = app.add_subcommand("eval", "metrics from a transcript or weights");
  dipps::AddCommonFlags(eval, &eval_flags, /*config=*/false);
  eval->add_option("--model", eval_opts.model, "model JSON");
  eval->add_option("--participants", eval_opts.participants, "participant records CSV");
  eval->add_option("--transcript", eval_opts.transcript, "round transcript JSONL");
  eval->add_option("--weights", eval_opts.weights, "weighted CSV with a mass column");
  eval->add_option("--reference", eval_opts.reference, "true records CSV");
  eval->add_option("--ot-subsample", eval_opts.ot_subsample, "transport support cap");

  CLI11_PARSE(app, argc, argv);

  absl::Status status;
  if (*fit) {
    status = dipps::RunFit(fit_flags);
  } else if (*round) {
    status = dipps::RunRoundVerb(round_flags, model_path, clients_path);
  } else if (*run) {
    status = dipps::RunRun(run_flags, repetitions, threads);
  } else if (*eval) {
    status = dipps::RunEval(eval_flags, eval_opts);
  }
  if (!status.ok()) {
    std::cerr << "error: " << status << "\n";
    return 1;
  }
  return 0;
}
