/*
 * Copyright 2026 The dsfl-sim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef DSFL_COMMS_HPP_
#define DSFL_COMMS_HPP_

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dsfl/errors.hpp"

namespace dsfl {

enum class Protocol { kFl, kFd, kDsflSa, kDsflEra };

inline std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::kFl: return "fl";
    case Protocol::kFd: return "fd";
    case Protocol::kDsflSa: return "dsfl_sa";
    case Protocol::kDsflEra: return "dsfl_era";
  }
  return "?";
}

inline Protocol parse_protocol(std::string_view name) {
  if (name == "fl") return Protocol::kFl;
  if (name == "fd") return Protocol::kFd;
  if (name == "dsfl_sa") return Protocol::kDsflSa;
  if (name == "dsfl_era") return Protocol::kDsflEra;
  throw InvalidInput("unknown protocol '" + std::string(name) + "'");
}

inline bool is_dsfl(Protocol p) {
  return p == Protocol::kDsflSa || p == Protocol::kDsflEra;
}

struct CostModel {
  std::uint64_t bytes_per_scalar = 4;  // 32-bit float payloads
  // Downlink is one multicast transmission regardless of K.
  bool broadcast_counts_once = true;
};

struct RoundCost {
  std::uint64_t uplink = 0;
  std::uint64_t downlink = 0;

  std::uint64_t total() const { return uplink + downlink; }
  friend bool operator==(const RoundCost&, const RoundCost&) = default;
};

// Bytes moved in one round.
//   FL:    up K * P,          down P          scalars (P = model parameters)
//   FD:    up K * N_L^2,      down N_L^2
//   DS-FL: up K * N_L * |o_r|, down N_L * |o_r|
inline RoundCost round_cost(Protocol protocol, std::uint64_t model_params,
                            std::uint64_t num_classes,
                            std::uint64_t open_per_round, std::uint64_t clients,
                            const CostModel& model = {}) {
  if (model.bytes_per_scalar < 1) {
    throw InvalidInput("round_cost: bytes_per_scalar must be >= 1");
  }
  std::uint64_t payload = 0;
  switch (protocol) {
    case Protocol::kFl:
      payload = model_params;
      break;
    case Protocol::kFd:
      payload = num_classes * num_classes;
      break;
    case Protocol::kDsflSa:
    case Protocol::kDsflEra:
      payload = num_classes * open_per_round;
      break;
    default:
      throw InvalidInput("round_cost: unknown protocol");
  }
  const std::uint64_t bytes = payload * model.bytes_per_scalar;
  return {clients * bytes,
          model.broadcast_counts_once ? bytes : clients * bytes};
}

// One multicast of the open dataset, 4 * N_S * I^o bytes.
inline std::uint64_t initial_open_cost(std::uint64_t open_size,
                                       std::uint64_t input_dim,
                                       const CostModel& model = {}) {
  return model.bytes_per_scalar * input_dim * open_size;
}

struct CurvePoint {
  int round = 0;
  double accuracy = 0.0;
  std::uint64_t cumulative_uplink = 0;
  std::uint64_t cumulative_downlink = 0;
  std::uint64_t initial_cost = 0;

  std::uint64_t cumulative_total() const {
    return initial_cost + cumulative_uplink + cumulative_downlink;
  }
};

struct AccuracyCurve {
  std::vector<CurvePoint> points;

  void validate() const {
    for (std::size_t i = 1; i < points.size(); ++i) {
      const auto& a = points[i - 1];
      const auto& b = points[i];
      if (b.round <= a.round) {
        throw InvalidInput("AccuracyCurve: rounds not strictly increasing");
      }
      if (b.cumulative_uplink < a.cumulative_uplink ||
          b.cumulative_downlink < a.cumulative_downlink) {
        throw InvalidInput("AccuracyCurve: cumulative bytes decreased");
      }
    }
  }
};

// ComU@x: cumulative bytes (including the initial open-data cost) at the
// first round whose accuracy reaches `threshold`; nullopt when never reached.
inline std::optional<std::uint64_t> comu_at(const AccuracyCurve& curve,
                                            double threshold) {
  for (const auto& p : curve.points) {
    if (p.accuracy >= threshold) return p.cumulative_total();
  }
  return std::nullopt;
}

inline std::optional<int> rounds_to(const AccuracyCurve& curve,
                                    double threshold) {
  for (const auto& p : curve.points) {
    if (p.accuracy >= threshold) return p.round;
  }
  return std::nullopt;
}

inline double top_accuracy(const AccuracyCurve& curve) {
  if (curve.points.empty()) throw InvalidInput("top_accuracy: empty curve");
  double best = curve.points.front().accuracy;
  for (const auto& p : curve.points) best = std::max(best, p.accuracy);
  return best;
}

}  // namespace dsfl

#endif  // DSFL_COMMS_HPP_
