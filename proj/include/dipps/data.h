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

#ifndef DIPPS_DATA_H_
#define DIPPS_DATA_H_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "Eigen/Core"
#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "json.hpp"

namespace dipps {

// An n x m table of numeric records, one record per row.
struct RecordMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> feature_names;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  // Index of the named column, or -1.
  int ColumnIndex(const std::string& name) const;
};

// Column-level description of a CSV file to load.
struct CsvSchema {
  // Columns to keep, in order. Empty keeps every column.
  std::vector<std::string> feature_columns;
  // Rows with a missing cell in a kept column are removed when set, and
  // rejected otherwise.
  bool drop_missing = true;
  // Ordinal encodings for categorical columns: column -> (token -> value).
  std::map<std::string, std::map<std::string, double>> categorical;
};

// Parses an RFC-4180 CSV file with a header row. Empty cells and the tokens
// "NA", "NaN", "nan" and "?" count as missing.
absl::StatusOr<RecordMatrix> LoadCsv(const std::string& path,
                                     const CsvSchema& schema);

// Same as LoadCsv on in-memory text.
absl::StatusOr<RecordMatrix> ParseCsv(const std::string& text,
                                      const CsvSchema& schema);

// Writes `records` with a header row. Extra trailing columns are appended
// when `extra_name` is non-empty.
std::string FormatCsv(const RecordMatrix& records,
                      const std::string& extra_name = "",
                      const Eigen::VectorXd* extra = nullptr);

absl::Status WriteTextFile(const std::string& path, const std::string& text);
absl::StatusOr<std::string> ReadTextFile(const std::string& path);

// Affine per-feature map x -> 2 (x - lo) / (hi - lo) - 1, clipped to [-1, 1].
struct NormalizationSpec {
  std::vector<std::string> feature_names;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  nlohmann::json ToJson() const;
  static absl::StatusOr<NormalizationSpec> FromJson(const nlohmann::json& doc);
};

// Bounds are the per-feature min and max of `participants`.
absl::StatusOr<NormalizationSpec> FitNormalizer(
    const RecordMatrix& participants);

absl::StatusOr<RecordMatrix> ApplyNormalizer(const NormalizationSpec& spec,
                                             const RecordMatrix& records);

// Inverse of the affine map; exact only for values that were not clipped.
absl::StatusOr<RecordMatrix> InvertNormalizer(const NormalizationSpec& spec,
                                              const RecordMatrix& records);

// Participant (X1) and non-participant (X0) records with a shared schema.
struct SplitDataset {
  RecordMatrix participants;
  RecordMatrix non_participants;
};

// Rows for which `predicate(row[column])` holds become participants. The
// split column is removed from both sides when `drop_column` is set.
absl::StatusOr<SplitDataset> SplitByPredicate(
    const RecordMatrix& records, const std::string& column,
    const std::function<bool(double)>& predicate, bool drop_column = true);

// Declarative split predicate used by experiment configs, e.g. "bbs >= 1".
struct SplitRule {
  enum class Op { kEq, kNe, kLt, kLe, kGt, kGe };

  std::string column;
  Op op = Op::kEq;
  double value = 1.0;
  bool drop_column = true;

  bool Matches(double x) const;

  static absl::StatusOr<Op> ParseOp(const std::string& op);
};

absl::StatusOr<SplitDataset> SplitByRule(const RecordMatrix& records,
                                         const SplitRule& rule);

// Gaussian mixture from which participants and non-participants are drawn
// with different mixture weights.
struct SyntheticSpec {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  std::vector<double> participant_weights;
  std::vector<double> non_participant_weights;
  int64_t num_participants = 0;
  int64_t num_non_participants = 0;
  uint64_t seed = 0;

  int num_components() const { return static_cast<int>(means.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }

  absl::Status Validate() const;

  nlohmann::json ToJson() const;
  static absl::StatusOr<SyntheticSpec> FromJson(const nlohmann::json& doc);
};

// Synthetic draw. The true component labels are ground truth for tests and
// evaluation only; they never enter the protocol path.
struct SyntheticSample {
  SplitDataset data;
  std::vector<int> participant_labels;
  std::vector<int> non_participant_labels;
};

absl::StatusOr<SyntheticSample> GenerateSynthetic(const SyntheticSpec& spec);

struct LabeledRecords {
  RecordMatrix records;
  std::vector<int> labels;
};

// Draws `n` records from the mixture with the given weights using stream
// `stream` of the spec seed. Streams 0 and 1 are used by GenerateSynthetic.
absl::StatusOr<LabeledRecords> SampleMixture(const SyntheticSpec& spec,
                                             const std::vector<double>& weights,
                                             int64_t n, uint64_t stream);

}  // namespace dipps

#endif  // DIPPS_DATA_H_
