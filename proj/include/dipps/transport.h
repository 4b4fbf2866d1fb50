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

#ifndef DIPPS_TRANSPORT_H_
#define DIPPS_TRANSPORT_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"

namespace dipps {

struct TransportOptions {
  // An arc enters the basis when its reduced cost is below
  // -tolerance * (1 + |cost|).
  double tolerance = 1e-12;
  // Relative supply/demand imbalance accepted (and absorbed by rescaling the
  // demand side).
  double balance_tolerance = 1e-9;
  int64_t max_pivots = -1;  // default: 100 (n + m)^2 + 10000
};

struct TransportArc {
  int source;
  int sink;
  double flow;
};

struct TransportSolution {
  double cost = 0.0;
  std::vector<TransportArc> plan;  // basic arcs with positive flow
  int64_t pivots = 0;
};

// Exact solver for the balanced transportation problem
//   min sum_ij c(i, j) x_ij  s.t.  sum_j x_ij = supply_i, sum_i x_ij = demand_j,
//   x >= 0
// by the primal network simplex method on the bipartite graph. The basis is
// a spanning tree of the n + m nodes with n + m - 1 arcs; the initial basis
// is the north-west corner rule in the given node order, entering arcs are
// chosen by block search over the n m arcs, and node potentials are updated
// on the subtree re-attached by each pivot. `cost(i, j)` is evaluated on
// demand, so dense cost matrices are never stored.
template <typename CostFn>
class TransportSimplex {
 public:
  TransportSimplex(std::span<const double> supply, std::span<const double> demand,
                   CostFn cost, TransportOptions options = {})
      : n_(static_cast<int>(supply.size())),
        m_(static_cast<int>(demand.size())),
        supply_(supply.begin(), supply.end()),
        demand_(demand.begin(), demand.end()),
        cost_(std::move(cost)),
        options_(options) {}

  absl::StatusOr<TransportSolution> Solve() {
    if (n_ < 1 || m_ < 1) return absl::InvalidArgumentError("empty support");
    double total_supply = 0.0, total_demand = 0.0;
    for (double s : supply_) {
      if (!(s >= 0.0)) return absl::InvalidArgumentError("negative supply");
      total_supply += s;
    }
    for (double d : demand_) {
      if (!(d >= 0.0)) return absl::InvalidArgumentError("negative demand");
      total_demand += d;
    }
    if (!(total_supply > 0.0)) return absl::InvalidArgumentError("zero total mass");
    if (std::abs(total_supply - total_demand) >
        options_.balance_tolerance * total_supply) {
      return absl::InvalidArgumentError(absl::StrCat(
          "unbalanced problem: supply ", total_supply, " demand ", total_demand));
    }
    for (double& d : demand_) d *= total_supply / total_demand;

    InitNorthWest();
    ComputePotentials();
    const int64_t num_nodes = n_ + m_;
    const int64_t max_pivots = options_.max_pivots > 0
                                   ? options_.max_pivots
                                   : 100 * num_nodes * num_nodes + 10000;
    const int64_t num_arcs = static_cast<int64_t>(n_) * m_;
    const int64_t block =
        std::max<int64_t>(std::min<int64_t>(num_arcs, 64),
                          static_cast<int64_t>(0.3 * std::sqrt(static_cast<double>(num_arcs))));
    int64_t next = 0;
    int64_t pivots = 0;
    bool verified = false;
    while (true) {
      int best_i = -1, best_j = -1;
      double best_rc = 0.0;
      int64_t scanned = 0;
      while (scanned < num_arcs) {
        const int64_t stop = std::min(num_arcs, scanned + block);
        for (; scanned < stop; ++scanned) {
          const int i = static_cast<int>(next / m_);
          const int j = static_cast<int>(next % m_);
          if (++next == num_arcs) next = 0;
          const double c = cost_(i, j);
          const double rc = c - pot_[i] - pot_[n_ + j];
          if (rc < best_rc && rc < -options_.tolerance * (1.0 + std::abs(c))) {
            best_rc = rc;
            best_i = i;
            best_j = j;
          }
        }
        if (best_i >= 0) break;
      }
      if (best_i < 0) {
        // Potentials accumulate rounding through subtree shifts; confirm
        // optimality against freshly computed ones before stopping.
        if (verified) break;
        ComputePotentials();
        verified = true;
        continue;
      }
      verified = false;
      if (++pivots > max_pivots) {
        return absl::InternalError("transport simplex exceeded pivot limit");
      }
      Pivot(best_i, best_j);
      if (pivots % 4096 == 0) ComputePotentials();
    }

    TransportSolution solution;
    solution.pivots = pivots;
    for (size_t b = 0; b < arc_src_.size(); ++b) {
      if (flow_[b] <= 0.0) continue;
      const int i = arc_src_[b];
      const int j = arc_dst_[b] - n_;
      solution.plan.push_back(TransportArc{i, j, flow_[b]});
      solution.cost += flow_[b] * cost_(i, j);
    }
    return solution;
  }

 private:
  void AddArc(int i, int j, double flow) {
    const int id = static_cast<int>(arc_src_.size());
    arc_src_.push_back(i);
    arc_dst_.push_back(n_ + j);
    flow_.push_back(std::max(0.0, flow));
    adj_[i].push_back(id);
    adj_[n_ + j].push_back(id);
  }

  void InitNorthWest() {
    adj_.assign(static_cast<size_t>(n_ + m_), {});
    arc_src_.clear();
    arc_dst_.clear();
    flow_.clear();
    int i = 0, j = 0;
    double s = supply_[0], d = demand_[0];
    while (true) {
      const double x = std::min(s, d);
      AddArc(i, j, x);
      s -= x;
      d -= x;
      if (i == n_ - 1 && j == m_ - 1) break;
      if (j == m_ - 1 || (i < n_ - 1 && s <= d)) {
        ++i;
        s = supply_[i];
      } else {
        ++j;
        d = demand_[j];
      }
    }
    pot_.assign(static_cast<size_t>(n_ + m_), 0.0);
    parent_.assign(static_cast<size_t>(n_ + m_), -1);
    parent_arc_.assign(static_cast<size_t>(n_ + m_), -1);
    depth_.assign(static_cast<size_t>(n_ + m_), 0);
  }

  int Other(int arc, int node) const {
    return arc_src_[arc] == node ? arc_dst_[arc] : arc_src_[arc];
  }

  double ArcCost(int arc) const { return cost_(arc_src_[arc], arc_dst_[arc] - n_); }

  void ComputePotentials() {
    pot_[0] = 0.0;
    parent_[0] = -1;
    parent_arc_[0] = -1;
    depth_[0] = 0;
    Rehang(0);
  }

  // Adds the entering arc (i, j), removes the blocking arc of the cycle it
  // closes, and re-hangs the subtree cut off by the removal under the
  // entering arc.
  void Pivot(int i, int j) {
    const int target = n_ + j;
    // Cycle: i -> ... -> lca <- ... <- target, then target -> i by the
    // entering arc. Flow is pushed from i towards target along the tree, so
    // arcs traversed from a source node to a sink node lose flow.
    path_.clear();
    up_.clear();
    int a = i, b = target;
    while (a != b) {
      if (depth_[a] >= depth_[b]) {
        path_.push_back(a);
        a = parent_[a];
      } else {
        up_.push_back(b);
        b = parent_[b];
      }
    }
    // Candidate leaving arcs: on the i side the arc parent_arc_[v] is walked
    // from v to its parent; on the target side from the parent to v.
    int leaving_node = -1;
    double theta = std::numeric_limits<double>::infinity();
    for (int v : path_) {
      if (v < n_ && flow_[parent_arc_[v]] < theta) {
        theta = flow_[parent_arc_[v]];
        leaving_node = v;
      }
    }
    // Strict comparison on the second side keeps the first blocking arc
    // met from i, which keeps the pivot rule deterministic.
    for (auto it = up_.rbegin(); it != up_.rend(); ++it) {
      const int v = *it;
      if (parent_[v] < n_ && flow_[parent_arc_[v]] < theta) {
        theta = flow_[parent_arc_[v]];
        leaving_node = v;
      }
    }
    for (int v : path_) {
      double& f = flow_[parent_arc_[v]];
      f = v < n_ ? std::max(0.0, f - theta) : f + theta;
    }
    for (int v : up_) {
      double& f = flow_[parent_arc_[v]];
      f = parent_[v] < n_ ? std::max(0.0, f - theta) : f + theta;
    }
    const int out = parent_arc_[leaving_node];
    for (int node : {arc_src_[out], arc_dst_[out]}) {
      auto& list = adj_[node];
      auto it = std::find(list.begin(), list.end(), out);
      *it = list.back();
      list.pop_back();
    }
    // The cut subtree hangs below leaving_node and contains exactly one
    // endpoint of the entering arc.
    const bool i_side = std::find(path_.begin(), path_.end(), leaving_node) != path_.end();
    const int inner = i_side ? i : target;
    const int outer = i_side ? target : i;
    arc_src_[out] = i;
    arc_dst_[out] = target;
    flow_[out] = theta;
    adj_[i].push_back(out);
    adj_[target].push_back(out);
    parent_[inner] = outer;
    parent_arc_[inner] = out;
    depth_[inner] = depth_[outer] + 1;
    pot_[inner] = ArcCost(out) - pot_[outer];
    Rehang(inner);
  }

  // Recomputes parent, depth and potential below `root` from the adjacency
  // lists, given those of `root`.
  void Rehang(int root) {
    stack_.clear();
    stack_.push_back(root);
    while (!stack_.empty()) {
      const int node = stack_.back();
      stack_.pop_back();
      for (int arc : adj_[node]) {
        if (arc == parent_arc_[node]) continue;
        const int other = Other(arc, node);
        parent_[other] = node;
        parent_arc_[other] = arc;
        depth_[other] = depth_[node] + 1;
        pot_[other] = ArcCost(arc) - pot_[node];
        stack_.push_back(other);
      }
    }
  }

  int n_;
  int m_;
  std::vector<double> supply_;
  std::vector<double> demand_;
  CostFn cost_;
  TransportOptions options_;

  std::vector<std::vector<int>> adj_;
  std::vector<int> arc_src_;
  std::vector<int> arc_dst_;
  std::vector<double> flow_;
  std::vector<double> pot_;
  // Basis tree rooted at source 0.
  std::vector<int> parent_;
  std::vector<int> parent_arc_;
  std::vector<int> depth_;
  std::vector<int> stack_;
  std::vector<int> path_;
  std::vector<int> up_;
};

template <typename CostFn>
absl::StatusOr<TransportSolution> SolveTransport(std::span<const double> supply,
                                                 std::span<const double> demand,
                                                 CostFn cost,
                                                 TransportOptions options = {}) {
  TransportSimplex<CostFn> solver(supply, demand, std::move(cost), options);
  return solver.Solve();
}

}  // namespace dipps

#endif  // DIPPS_TRANSPORT_H_
