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

#include "dipps/protocol.h"

#include <limits>
#include <sstream>

#include "absl/strings/str_cat.h"
#include "dipps/status_macros.h"

namespace dipps {
namespace {

using Json = nlohmann::json;

// Stream of the master seed reserved for the server-side shuffle; client
// streams are indexed by client id.
constexpr uint64_t kShuffleStream = std::numeric_limits<uint64_t>::max();

Json PayloadToJson(const ReportPayload& payload) {
  if (const auto* c = std::get_if<ClientReport>(&payload)) {
    return c->class_index + 1;
  }
  if (const auto* a = std::get_if<AttributeReport>(&payload)) {
    return Json::array({a->attribute + 1, a->value});
  }
  const auto& r = std::get<RecordReport>(payload);
  return Json(std::vector<double>(r.data(), r.data() + r.size()));
}

absl::StatusOr<ReportPayload> PayloadFromJson(const Json& doc,
                                              Mechanism mechanism) {
  switch (mechanism) {
    case Mechanism::kDipps:
    case Mechanism::kPs:
      if (!doc.is_number_integer() || doc.get<int64_t>() < 1) {
        return absl::InvalidArgumentError("categorical report must be an integer >= 1");
      }
      return ClientReport{static_cast<int>(doc.get<int64_t>() - 1)};
    case Mechanism::kHybrid:
      if (!doc.is_array() || doc.size() != 2 || !doc[0].is_number_integer() ||
          !doc[1].is_number() || doc[0].get<int64_t>() < 1) {
        return absl::InvalidArgumentError("hybrid report must be [attribute, value]");
      }
      return AttributeReport{static_cast<int>(doc[0].get<int64_t>() - 1),
                             doc[1].get<double>()};
    case Mechanism::kLaplace: {
      if (!doc.is_array() || doc.empty()) {
        return absl::InvalidArgumentError("laplace report must be a non-empty array");
      }
      RecordReport r(static_cast<Eigen::Index>(doc.size()));
      for (size_t j = 0; j < doc.size(); ++j) {
        if (!doc[j].is_number()) {
          return absl::InvalidArgumentError("laplace report must be numeric");
        }
        r[static_cast<Eigen::Index>(j)] = doc[j].get<double>();
      }
      return r;
    }
  }
  return absl::InvalidArgumentError("unknown mechanism");
}

}  // namespace

std::string MechanismName(Mechanism mechanism) {
  switch (mechanism) {
    case Mechanism::kDipps: return "dipps";
    case Mechanism::kPs: return "ps";
    case Mechanism::kLaplace: return "laplace";
    case Mechanism::kHybrid: return "hybrid";
  }
  return "unknown";
}

absl::StatusOr<Mechanism> ParseMechanism(const std::string& name) {
  if (name == "dipps") return Mechanism::kDipps;
  if (name == "ps") return Mechanism::kPs;
  if (name == "laplace") return Mechanism::kLaplace;
  if (name == "hybrid") return Mechanism::kHybrid;
  return absl::InvalidArgumentError(absl::StrCat("unknown mechanism '", name, "'"));
}

bool IsCategorical(Mechanism mechanism) {
  return mechanism == Mechanism::kDipps || mechanism == Mechanism::kPs;
}

absl::StatusOr<ClientMessage> Client::Respond(const ClassAssignmentModel& model,
                                              Mechanism mechanism,
                                              PrivacyBudget budget,
                                              uint64_t master_seed) const {
  if (record_.size() != model.input_dim()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "client ", id_, " record has dimension ", record_.size(),
        ", model expects ", model.input_dim()));
  }
  Rng rng = Rng::ForStream(master_seed, id_);
  ClientMessage message{id_, ClientReport{}};
  switch (mechanism) {
    case Mechanism::kDipps: {
      DIPPS_ASSIGN_OR_RETURN(ClassDistribution rho, model.Assign(record_));
      message.report = ExpMechSample(rho, budget, rng);
      break;
    }
    case Mechanism::kPs: {
      DIPPS_ASSIGN_OR_RETURN(ClassDistribution rho, model.Assign(record_));
      message.report = DirectSample(rho, rng);
      break;
    }
    case Mechanism::kLaplace:
      message.report = LaplacePerturbRecord(record_, budget, rng);
      break;
    case Mechanism::kHybrid:
      message.report = HybridPerturbRecord(record_, budget, rng);
      break;
  }
  return message;
}

absl::StatusOr<RoundTranscript> RunRound(const ClassAssignmentModel& model,
                                         const Eigen::MatrixXd& clients,
                                         PrivacyBudget budget,
                                         Mechanism mechanism,
                                         uint64_t master_seed) {
  if (clients.rows() < 1) return absl::InvalidArgumentError("no clients");
  RoundTranscript transcript;
  transcript.broadcast = ModelBroadcast{model.Serialize(), budget.epsilon(),
                                        kProtocolVersion};
  transcript.mechanism = mechanism;
  transcript.master_seed = master_seed;

  // Clients decode the broadcast payload, as they would over a network.
  DIPPS_ASSIGN_OR_RETURN(
      ClassAssignmentModel received,
      ClassAssignmentModel::Deserialize(transcript.broadcast.model_document));
  DIPPS_ASSIGN_OR_RETURN(PrivacyBudget received_budget,
                         PrivacyBudget::Create(transcript.broadcast.epsilon));

  transcript.messages.reserve(static_cast<size_t>(clients.rows()));
  for (Eigen::Index i = 0; i < clients.rows(); ++i) {
    const Client client(static_cast<uint64_t>(i), clients.row(i).transpose());
    DIPPS_ASSIGN_OR_RETURN(
        ClientMessage message,
        client.Respond(received, mechanism, received_budget, master_seed));
    transcript.messages.push_back(std::move(message));
  }
  Rng shuffler = Rng::ForStream(master_seed, kShuffleStream);
  shuffler.Shuffle(std::span<ClientMessage>(transcript.messages));
  return transcript;
}

std::string RoundTranscript::ToJsonLines() const {
  Json model = Json::parse(broadcast.model_document, nullptr, false);
  Json header{{"type", "broadcast"},
              {"protocol_version", broadcast.protocol_version},
              {"mechanism", MechanismName(mechanism)},
              {"epsilon", broadcast.epsilon},
              {"master_seed", master_seed},
              {"num_clients", messages.size()},
              {"model", model}};
  std::string out = header.dump();
  out.push_back('\n');
  for (const ClientMessage& m : messages) {
    out += Json{{"client_id", m.client_id}, {"report", PayloadToJson(m.report)}}
               .dump();
    out.push_back('\n');
  }
  return out;
}

absl::StatusOr<RoundTranscript> RoundTranscript::FromJsonLines(
    const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    return absl::InvalidArgumentError("empty transcript");
  }
  Json header = Json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object() ||
      header.value("type", "") != "broadcast") {
    return absl::InvalidArgumentError("transcript must start with a broadcast line");
  }
  RoundTranscript t;
  try {
    t.broadcast.protocol_version = header.at("protocol_version").get<int>();
    if (t.broadcast.protocol_version != kProtocolVersion) {
      return absl::FailedPreconditionError(absl::StrCat(
          "unsupported protocol version ", t.broadcast.protocol_version));
    }
    DIPPS_ASSIGN_OR_RETURN(t.mechanism,
                           ParseMechanism(header.at("mechanism").get<std::string>()));
    t.broadcast.epsilon = header.at("epsilon").get<double>();
    t.master_seed = header.at("master_seed").get<uint64_t>();
    t.broadcast.model_document = header.at("model").dump();
    const auto expected = header.at("num_clients").get<size_t>();
    size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      Json doc = Json::parse(line, nullptr, false);
      if (doc.is_discarded() || !doc.is_object() || doc.size() != 2 ||
          !doc.contains("client_id") || !doc.contains("report")) {
        return absl::InvalidArgumentError(
            absl::StrCat("malformed message on line ", line_no));
      }
      DIPPS_ASSIGN_OR_RETURN(ReportPayload payload,
                             PayloadFromJson(doc["report"], t.mechanism));
      t.messages.push_back(
          ClientMessage{doc["client_id"].get<uint64_t>(), std::move(payload)});
    }
    if (t.messages.size() != expected) {
      return absl::InvalidArgumentError(absl::StrCat(
          "transcript declares ", expected, " clients but holds ",
          t.messages.size(), " messages"));
    }
  } catch (const Json::exception& e) {
    return absl::InvalidArgumentError(
        absl::StrCat("malformed transcript: ", e.what()));
  }
  return t;
}

absl::StatusOr<ClassCounts> TranscriptToCounts(const RoundTranscript& transcript,
                                               int num_classes) {
  if (!IsCategorical(transcript.mechanism)) {
    return absl::InvalidArgumentError("not a categorical round");
  }
  std::vector<ClientReport> reports;
  reports.reserve(transcript.messages.size());
  for (const ClientMessage& m : transcript.messages) {
    const auto* r = std::get_if<ClientReport>(&m.report);
    if (r == nullptr) return absl::InvalidArgumentError("not a categorical round");
    reports.push_back(*r);
  }
  return TallyReports(reports, num_classes);
}

absl::StatusOr<ClusterMassEstimate> EstimateClassMass(
    const RoundTranscript& transcript, int num_classes,
    const InversionOptions& options) {
  DIPPS_ASSIGN_OR_RETURN(ClassCounts counts,
                         TranscriptToCounts(transcript, num_classes));
  if (transcript.mechanism == Mechanism::kPs) {
    return DirectCountsToDistribution(counts);
  }
  if (num_classes == 1) return ClusterMassEstimate::Ones(1);
  DIPPS_ASSIGN_OR_RETURN(PrivacyBudget budget,
                         PrivacyBudget::Create(transcript.broadcast.epsilon));
  return InvertExponentialCounts(counts, budget, options);
}

absl::StatusOr<Eigen::MatrixXd> TranscriptRecords(const RoundTranscript& transcript,
                                                  int num_attributes) {
  if (transcript.mechanism != Mechanism::kLaplace) {
    return absl::InvalidArgumentError("not a laplace round");
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(transcript.messages.size()),
                      num_attributes);
  for (size_t i = 0; i < transcript.messages.size(); ++i) {
    const auto& r = std::get<RecordReport>(transcript.messages[i].report);
    if (r.size() != num_attributes) {
      return absl::InvalidArgumentError("laplace report has wrong dimension");
    }
    out.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return out;
}

absl::StatusOr<Eigen::VectorXd> HybridMeanEstimate(const RoundTranscript& transcript,
                                                   int num_attributes) {
  if (transcript.mechanism != Mechanism::kHybrid) {
    return absl::InvalidArgumentError("not a hybrid round");
  }
  if (transcript.messages.empty()) return absl::InvalidArgumentError("no reports");
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(num_attributes);
  for (const ClientMessage& m : transcript.messages) {
    const auto& a = std::get<AttributeReport>(m.report);
    if (a.attribute < 0 || a.attribute >= num_attributes) {
      return absl::OutOfRangeError("hybrid report attribute out of range");
    }
    sums[a.attribute] += a.value;
  }
  return sums / static_cast<double>(transcript.messages.size());
}

}  // namespace dipps
