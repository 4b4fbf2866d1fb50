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

#ifndef DIPPS_STATUS_MACROS_H_
#define DIPPS_STATUS_MACROS_H_

#include "absl/status/status.h"
#include "absl/status/statusor.h"

#define DIPPS_CONCAT_INNER_(a, b) a##b
#define DIPPS_CONCAT_(a, b) DIPPS_CONCAT_INNER_(a, b)

#define DIPPS_RETURN_IF_ERROR(expr)            \
  do {                                         \
    const absl::Status dipps_status_ = (expr); \
    if (!dipps_status_.ok()) {                 \
      return dipps_status_;                    \
    }                                          \
  } while (0)

#define DIPPS_ASSIGN_OR_RETURN_IMPL_(tmp, lhs, rexpr) \
  auto tmp = (rexpr);                                 \
  if (!tmp.ok()) {                                    \
    return tmp.status();                              \
  }                                                   \
  lhs = std::move(tmp).value()

// Evaluates an absl::StatusOr<T> expression, returning its status on error
// and otherwise binding the value to `lhs`.
#define DIPPS_ASSIGN_OR_RETURN(lhs, rexpr) \
  DIPPS_ASSIGN_OR_RETURN_IMPL_(            \
      DIPPS_CONCAT_(dipps_statusor_, __LINE__), lhs, rexpr)

#endif  // DIPPS_STATUS_MACROS_H_
