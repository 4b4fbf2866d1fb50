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

#include "dipps/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "Eigen/Cholesky"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_join.h"
#include "dipps/rng.h"
#include "dipps/status_macros.h"

namespace dipps {
namespace {

using Json = nlohmann::json;

// Splits CSV text into rows of fields, honouring quoted fields with embedded
// separators, doubled quotes and line breaks.
absl::StatusOr<std::vector<std::vector<std::string>>> TokenizeCsv(
    const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (field_started || !field.empty() || !row.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        field.clear();
        row.clear();
        field_started = false;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) return absl::InvalidArgumentError("unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

bool IsMissingToken(std::string_view token) {
  return token.empty() || token == "NA" || token == "NaN" || token == "nan" ||
         token == "?";
}

std::string Trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string_view::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return std::string(s.substr(begin, end - begin + 1));
}

Json VectorToJson(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

absl::StatusOr<Eigen::VectorXd> VectorFromJson(const Json& doc,
                                               const std::string& what) {
  if (!doc.is_array()) {
    return absl::InvalidArgumentError(absl::StrCat(what, " must be an array"));
  }
  Eigen::VectorXd v(doc.size());
  for (size_t i = 0; i < doc.size(); ++i) {
    if (!doc[i].is_number()) {
      return absl::InvalidArgumentError(
          absl::StrCat(what, " must contain numbers"));
    }
    v[i] = doc[i].get<double>();
  }
  return v;
}

absl::Status ValidateProbabilityVector(const std::vector<double>& p, int k,
                                       const std::string& what) {
  if (static_cast<int>(p.size()) != k) {
    return absl::InvalidArgumentError(
        absl::StrCat(what, " has length ", p.size(), ", expected ", k));
  }
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) {
      return absl::InvalidArgumentError(
          absl::StrCat(what, " has a negative entry"));
    }
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    return absl::InvalidArgumentError(
        absl::StrCat(what, " sums to ", total, ", expected 1"));
  }
  return absl::OkStatus();
}

}  // namespace

int RecordMatrix::ColumnIndex(const std::string& name) const {
  const auto it = std::find(feature_names.begin(), feature_names.end(), name);
  return it == feature_names.end()
             ? -1
             : static_cast<int>(it - feature_names.begin());
}

absl::StatusOr<RecordMatrix> ParseCsv(const std::string& text,
                                      const CsvSchema& schema) {
  DIPPS_ASSIGN_OR_RETURN(auto rows, TokenizeCsv(text));
  if (rows.empty()) return absl::InvalidArgumentError("missing header row");
  std::vector<std::string> header;
  for (const auto& name : rows[0]) header.push_back(Trim(name));

  std::vector<std::string> names = schema.feature_columns;
  if (names.empty()) names = header;
  std::vector<int> source;
  for (const auto& name : names) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      return absl::InvalidArgumentError(
          absl::StrCat("column '", name, "' not found in header"));
    }
    source.push_back(static_cast<int>(it - header.begin()));
  }

  std::vector<std::vector<double>> kept;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size()) {
      return absl::InvalidArgumentError(absl::StrCat(
          "line ", r + 1, " has ", row.size(), " fields, header has ",
          header.size()));
    }
    std::vector<double> values(names.size());
    bool missing = false;
    for (size_t j = 0; j < names.size(); ++j) {
      const std::string token = Trim(row[source[j]]);
      if (IsMissingToken(token)) {
        missing = true;
        break;
      }
      const auto encoding = schema.categorical.find(names[j]);
      if (encoding != schema.categorical.end()) {
        const auto code = encoding->second.find(token);
        if (code != encoding->second.end()) {
          values[j] = code->second;
          continue;
        }
      }
      if (!absl::SimpleAtod(token, &values[j]) || !std::isfinite(values[j])) {
        return absl::InvalidArgumentError(
            absl::StrCat("non-numeric value '", token, "' in column '",
                         names[j], "' on line ", r + 1));
      }
    }
    if (missing) {
      if (!schema.drop_missing) {
        return absl::InvalidArgumentError(
            absl::StrCat("missing value on line ", r + 1));
      }
      continue;
    }
    kept.push_back(std::move(values));
  }
  if (kept.empty()) return absl::InvalidArgumentError("empty result");

  RecordMatrix out;
  out.feature_names = names;
  out.values.resize(static_cast<Eigen::Index>(kept.size()),
                    static_cast<Eigen::Index>(names.size()));
  for (size_t i = 0; i < kept.size(); ++i) {
    for (size_t j = 0; j < names.size(); ++j) out.values(i, j) = kept[i][j];
  }
  return out;
}

absl::StatusOr<std::string> ReadTextFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

absl::Status WriteTextFile(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return absl::InternalError(absl::StrCat("cannot write ", path));
  out << text;
  out.close();
  if (!out) return absl::InternalError(absl::StrCat("write failed: ", path));
  return absl::OkStatus();
}

absl::StatusOr<RecordMatrix> LoadCsv(const std::string& path,
                                     const CsvSchema& schema) {
  DIPPS_ASSIGN_OR_RETURN(std::string text, ReadTextFile(path));
  return ParseCsv(text, schema);
}

std::string FormatCsv(const RecordMatrix& records,
                      const std::string& extra_name,
                      const Eigen::VectorXd* extra) {
  const bool with_extra = !extra_name.empty() && extra != nullptr;
  std::string out = absl::StrJoin(records.feature_names, ",");
  if (with_extra) absl::StrAppend(&out, ",", extra_name);
  out.push_back('\n');
  char buffer[32];
  for (Eigen::Index i = 0; i < records.rows(); ++i) {
    for (Eigen::Index j = 0; j < records.cols(); ++j) {
      if (j > 0) out.push_back(',');
      std::snprintf(buffer, sizeof(buffer), "%.17g", records.values(i, j));
      out += buffer;
    }
    if (with_extra) {
      std::snprintf(buffer, sizeof(buffer), "%.17g", (*extra)[i]);
      out.push_back(',');
      out += buffer;
    }
    out.push_back('\n');
  }
  return out;
}

Json NormalizationSpec::ToJson() const {
  return Json{{"feature_names", feature_names},
              {"lo", VectorToJson(lo)},
              {"hi", VectorToJson(hi)}};
}

absl::StatusOr<NormalizationSpec> NormalizationSpec::FromJson(const Json& doc) {
  if (!doc.is_object() || !doc.contains("lo") || !doc.contains("hi") ||
      !doc.contains("feature_names")) {
    return absl::InvalidArgumentError("malformed normalization document");
  }
  NormalizationSpec spec;
  try {
    spec.feature_names = doc["feature_names"].get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    return absl::InvalidArgumentError(e.what());
  }
  DIPPS_ASSIGN_OR_RETURN(spec.lo, VectorFromJson(doc["lo"], "lo"));
  DIPPS_ASSIGN_OR_RETURN(spec.hi, VectorFromJson(doc["hi"], "hi"));
  const auto m = static_cast<Eigen::Index>(spec.feature_names.size());
  if (spec.lo.size() != m || spec.hi.size() != m) {
    return absl::InvalidArgumentError("normalization bounds length mismatch");
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    if (!(spec.hi[j] > spec.lo[j])) {
      return absl::InvalidArgumentError(
          absl::StrCat("feature '", spec.feature_names[j], "' has hi <= lo"));
    }
  }
  return spec;
}

absl::StatusOr<NormalizationSpec> FitNormalizer(
    const RecordMatrix& participants) {
  if (participants.rows() < 1 || participants.cols() < 1) {
    return absl::InvalidArgumentError("cannot fit normalizer on empty data");
  }
  NormalizationSpec spec;
  spec.feature_names = participants.feature_names;
  spec.lo = participants.values.colwise().minCoeff().transpose();
  spec.hi = participants.values.colwise().maxCoeff().transpose();
  for (Eigen::Index j = 0; j < participants.cols(); ++j) {
    if (!(spec.hi[j] > spec.lo[j])) {
      return absl::InvalidArgumentError(absl::StrCat(
          "feature '", spec.feature_names[j], "' is constant on the fit data"));
    }
  }
  return spec;
}

absl::StatusOr<RecordMatrix> ApplyNormalizer(const NormalizationSpec& spec,
                                             const RecordMatrix& records) {
  if (records.feature_names != spec.feature_names) {
    return absl::InvalidArgumentError(
        "record schema does not match normalization spec");
  }
  RecordMatrix out = records;
  for (Eigen::Index j = 0; j < records.cols(); ++j) {
    const double lo = spec.lo[j];
    const double width = spec.hi[j] - lo;
    for (Eigen::Index i = 0; i < records.rows(); ++i) {
      const double x = 2.0 * (records.values(i, j) - lo) / width - 1.0;
      out.values(i, j) = std::clamp(x, -1.0, 1.0);
    }
  }
  return out;
}

absl::StatusOr<RecordMatrix> InvertNormalizer(const NormalizationSpec& spec,
                                              const RecordMatrix& records) {
  if (records.feature_names != spec.feature_names) {
    return absl::InvalidArgumentError(
        "record schema does not match normalization spec");
  }
  RecordMatrix out = records;
  for (Eigen::Index j = 0; j < records.cols(); ++j) {
    const double width = spec.hi[j] - spec.lo[j];
    out.values.col(j) =
        ((records.values.col(j).array() + 1.0) * (width / 2.0) + spec.lo[j])
            .matrix();
  }
  return out;
}

absl::StatusOr<SplitDataset> SplitByPredicate(
    const RecordMatrix& records, const std::string& column,
    const std::function<bool(double)>& predicate, bool drop_column) {
  const int split_col = records.ColumnIndex(column);
  if (split_col < 0) {
    return absl::InvalidArgumentError(
        absl::StrCat("split column '", column, "' not found"));
  }
  std::vector<Eigen::Index> yes, no;
  for (Eigen::Index i = 0; i < records.rows(); ++i) {
    (predicate(records.values(i, split_col)) ? yes : no).push_back(i);
  }
  if (yes.empty()) return absl::InvalidArgumentError("no participant rows");
  if (no.empty()) return absl::InvalidArgumentError("no non-participant rows");

  std::vector<Eigen::Index> keep_cols;
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < records.cols(); ++j) {
    if (drop_column && j == split_col) continue;
    keep_cols.push_back(j);
    names.push_back(records.feature_names[j]);
  }
  if (keep_cols.empty()) {
    return absl::InvalidArgumentError("no feature columns left after split");
  }
  auto take = [&](const std::vector<Eigen::Index>& rows) {
    RecordMatrix out;
    out.feature_names = names;
    out.values = records.values(rows, keep_cols);
    return out;
  };
  return SplitDataset{take(yes), take(no)};
}

bool SplitRule::Matches(double x) const {
  switch (op) {
    case Op::kEq: return x == value;
    case Op::kNe: return x != value;
    case Op::kLt: return x < value;
    case Op::kLe: return x <= value;
    case Op::kGt: return x > value;
    case Op::kGe: return x >= value;
  }
  return false;
}

absl::StatusOr<SplitRule::Op> SplitRule::ParseOp(const std::string& op) {
  if (op == "==") return Op::kEq;
  if (op == "!=") return Op::kNe;
  if (op == "<") return Op::kLt;
  if (op == "<=") return Op::kLe;
  if (op == ">") return Op::kGt;
  if (op == ">=") return Op::kGe;
  return absl::InvalidArgumentError(absl::StrCat("unknown split operator '", op, "'"));
}

absl::StatusOr<SplitDataset> SplitByRule(const RecordMatrix& records,
                                         const SplitRule& rule) {
  return SplitByPredicate(
      records, rule.column, [&rule](double x) { return rule.Matches(x); },
      rule.drop_column);
}

absl::Status SyntheticSpec::Validate() const {
  const int k = num_components();
  if (k < 1) return absl::InvalidArgumentError("synthetic spec has no components");
  if (static_cast<int>(covariances.size()) != k) {
    return absl::InvalidArgumentError("one covariance per component required");
  }
  const int d = dim();
  if (d < 1) return absl::InvalidArgumentError("component dimension must be >= 1");
  for (int c = 0; c < k; ++c) {
    if (means[c].size() != d || covariances[c].rows() != d ||
        covariances[c].cols() != d) {
      return absl::InvalidArgumentError(
          absl::StrCat("component ", c, " has inconsistent dimensions"));
    }
    if (!covariances[c].isApprox(covariances[c].transpose(), 1e-12)) {
      return absl::InvalidArgumentError(
          absl::StrCat("covariance ", c, " is not symmetric"));
    }
    Eigen::LLT<Eigen::MatrixXd> llt(covariances[c]);
    if (llt.info() != Eigen::Success) {
      return absl::InvalidArgumentError(
          absl::StrCat("covariance ", c, " is not positive definite"));
    }
  }
  DIPPS_RETURN_IF_ERROR(ValidateProbabilityVector(participant_weights, k,
                                                  "participant_weights"));
  DIPPS_RETURN_IF_ERROR(ValidateProbabilityVector(
      non_participant_weights, k, "non_participant_weights"));
  if (num_participants < 1 || num_non_participants < 1) {
    return absl::InvalidArgumentError("sample sizes must be >= 1");
  }
  return absl::OkStatus();
}

Json SyntheticSpec::ToJson() const {
  Json comps = Json::array();
  for (size_t c = 0; c < means.size(); ++c) {
    Json cov = Json::array();
    for (Eigen::Index i = 0; i < covariances[c].rows(); ++i) {
      cov.push_back(VectorToJson(covariances[c].row(i).transpose()));
    }
    comps.push_back({{"mean", VectorToJson(means[c])}, {"covariance", cov}});
  }
  return Json{{"components", comps},
              {"participant_weights", participant_weights},
              {"non_participant_weights", non_participant_weights},
              {"num_participants", num_participants},
              {"num_non_participants", num_non_participants},
              {"seed", seed}};
}

absl::StatusOr<SyntheticSpec> SyntheticSpec::FromJson(const Json& doc) {
  SyntheticSpec spec;
  try {
    for (const auto& comp : doc.at("components")) {
      DIPPS_ASSIGN_OR_RETURN(Eigen::VectorXd mean,
                             VectorFromJson(comp.at("mean"), "mean"));
      const auto& rows = comp.at("covariance");
      Eigen::MatrixXd cov(static_cast<Eigen::Index>(rows.size()), mean.size());
      for (size_t i = 0; i < rows.size(); ++i) {
        DIPPS_ASSIGN_OR_RETURN(Eigen::VectorXd row,
                               VectorFromJson(rows[i], "covariance row"));
        if (row.size() != mean.size()) {
          return absl::InvalidArgumentError("covariance row length mismatch");
        }
        cov.row(static_cast<Eigen::Index>(i)) = row.transpose();
      }
      spec.means.push_back(std::move(mean));
      spec.covariances.push_back(std::move(cov));
    }
    spec.participant_weights =
        doc.at("participant_weights").get<std::vector<double>>();
    spec.non_participant_weights =
        doc.at("non_participant_weights").get<std::vector<double>>();
    spec.num_participants = doc.at("num_participants").get<int64_t>();
    spec.num_non_participants = doc.at("num_non_participants").get<int64_t>();
    spec.seed = doc.value("seed", uint64_t{0});
  } catch (const Json::exception& e) {
    return absl::InvalidArgumentError(
        absl::StrCat("malformed synthetic spec: ", e.what()));
  }
  DIPPS_RETURN_IF_ERROR(spec.Validate());
  return spec;
}

absl::StatusOr<LabeledRecords> SampleMixture(const SyntheticSpec& spec,
                                             const std::vector<double>& weights,
                                             int64_t n, uint64_t stream) {
  DIPPS_RETURN_IF_ERROR(spec.Validate());
  DIPPS_RETURN_IF_ERROR(ValidateProbabilityVector(weights,
                                                  spec.num_components(),
                                                  "mixture weights"));
  if (n < 1) return absl::InvalidArgumentError("sample size must be >= 1");
  const int d = spec.dim();
  std::vector<Eigen::MatrixXd> factors;
  for (const auto& cov : spec.covariances) {
    factors.push_back(Eigen::LLT<Eigen::MatrixXd>(cov).matrixL());
  }
  Rng rng = Rng::ForStream(spec.seed, stream);
  LabeledRecords out;
  out.records.values.resize(n, d);
  for (int j = 0; j < d; ++j) out.records.feature_names.push_back(absl::StrCat("x", j + 1));
  out.labels.resize(static_cast<size_t>(n));
  Eigen::VectorXd z(d);
  for (int64_t i = 0; i < n; ++i) {
    const int c = rng.Categorical(weights);
    for (int j = 0; j < d; ++j) z[j] = rng.StandardNormal();
    out.records.values.row(i) = (spec.means[c] + factors[c] * z).transpose();
    out.labels[static_cast<size_t>(i)] = c;
  }
  return out;
}

absl::StatusOr<SyntheticSample> GenerateSynthetic(const SyntheticSpec& spec) {
  DIPPS_ASSIGN_OR_RETURN(
      LabeledRecords participants,
      SampleMixture(spec, spec.participant_weights, spec.num_participants, 0));
  DIPPS_ASSIGN_OR_RETURN(LabeledRecords non_participants,
                         SampleMixture(spec, spec.non_participant_weights,
                                       spec.num_non_participants, 1));
  SyntheticSample sample;
  sample.data.participants = std::move(participants.records);
  sample.data.non_participants = std::move(non_participants.records);
  sample.participant_labels = std::move(participants.labels);
  sample.non_participant_labels = std::move(non_participants.labels);
  return sample;
}

}  // namespace dipps
