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

#ifndef DIPPS_PROTOCOL_H_
#define DIPPS_PROTOCOL_H_

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "Eigen/Core"
#include "absl/status/statusor.h"
#include "dipps/ldp.h"
#include "dipps/model.h"
#include "dipps/server.h"

namespace dipps {

inline constexpr int kProtocolVersion = 1;

// Client-side randomizer used in a round.
enum class Mechanism { kDipps, kPs, kLaplace, kHybrid };

std::string MechanismName(Mechanism mechanism);
absl::StatusOr<Mechanism> ParseMechanism(const std::string& name);
bool IsCategorical(Mechanism mechanism);

// What the server sends to every client before the round.
struct ModelBroadcast {
  std::string model_document;
  double epsilon = 1.0;
  int protocol_version = kProtocolVersion;
};

// A noisy record (Laplace) is the whole perturbed vector.
using RecordReport = Eigen::VectorXd;

using ReportPayload = std::variant<ClientReport, AttributeReport, RecordReport>;

struct ClientMessage {
  uint64_t client_id = 0;
  ReportPayload report;
};

// Everything exchanged in one round. `messages` is in shuffled order; the
// per-client randomness is the stream `client_id` of `master_seed`.
struct RoundTranscript {
  ModelBroadcast broadcast;
  Mechanism mechanism = Mechanism::kDipps;
  uint64_t master_seed = 0;
  std::vector<ClientMessage> messages;

  size_t num_clients() const { return messages.size(); }

  // JSON Lines: a broadcast header line, then one {client_id, report} line
  // per client.
  std::string ToJsonLines() const;
  static absl::StatusOr<RoundTranscript> FromJsonLines(const std::string& text);
};

// One simulated non-participant. Holds its private record and answers a
// broadcast with exactly one message.
class Client {
 public:
  Client(uint64_t id, Eigen::VectorXd record) : id_(id), record_(std::move(record)) {}

  absl::StatusOr<ClientMessage> Respond(const ClassAssignmentModel& model,
                                        Mechanism mechanism,
                                        PrivacyBudget budget,
                                        uint64_t master_seed) const;

 private:
  uint64_t id_;
  Eigen::VectorXd record_;
};

// Broadcasts `model`, collects one report from every row of `clients`, and
// shuffles the reports. Replaying with the same arguments reproduces the
// transcript byte for byte.
absl::StatusOr<RoundTranscript> RunRound(const ClassAssignmentModel& model,
                                         const Eigen::MatrixXd& clients,
                                         PrivacyBudget budget,
                                         Mechanism mechanism,
                                         uint64_t master_seed);

// Tallies a dipps or ps transcript.
absl::StatusOr<ClassCounts> TranscriptToCounts(const RoundTranscript& transcript,
                                               int num_classes);

// Server-side class mass estimate: softmax inversion for dipps, relative
// frequencies for ps.
absl::StatusOr<ClusterMassEstimate> EstimateClassMass(
    const RoundTranscript& transcript, int num_classes,
    const InversionOptions& options = {});

// Noisy records of a laplace transcript, in message order.
absl::StatusOr<Eigen::MatrixXd> TranscriptRecords(const RoundTranscript& transcript,
                                                  int num_attributes);

// Per-attribute mean estimate from a hybrid transcript.
absl::StatusOr<Eigen::VectorXd> HybridMeanEstimate(const RoundTranscript& transcript,
                                                   int num_attributes);

}  // namespace dipps

#endif  // DIPPS_PROTOCOL_H_
