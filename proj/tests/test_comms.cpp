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

#include <gtest/gtest.h>

#include <algorithm>

#include "dsfl/comms.hpp"
#include "dsfl/errors.hpp"
#include "dsfl/rng.hpp"

namespace dsfl {
namespace {

// |actual - reference| <= pct% of reference, in exact integer arithmetic.
bool within_percent(std::uint64_t actual, std::uint64_t reference, std::uint64_t pct) {
  const std::uint64_t diff = actual > reference ? actual - reference : reference - actual;
  return diff * 100 <= pct * reference;
}

TEST(RoundCost, FederatedDistillationHundredClients) {
  const auto c = round_cost(Protocol::kFd, 583242, 10, 1000, 100);
  EXPECT_EQ(c.uplink, 40000u);
  EXPECT_EQ(c.downlink, 400u);
  EXPECT_EQ(c.total(), 40400u);
}

TEST(RoundCost, DsflHundredClientsThousandOpenSamples) {
  const auto c = round_cost(Protocol::kDsflEra, 583242, 10, 1000, 100);
  EXPECT_EQ(c.uplink, 4000000u);
  EXPECT_EQ(c.downlink, 40000u);
  EXPECT_TRUE(within_percent(c.total(), 4000000, 1));
  EXPECT_EQ(round_cost(Protocol::kDsflSa, 583242, 10, 1000, 100), c);
}

TEST(RoundCost, FederatedLearningBothModels) {
  const auto small = round_cost(Protocol::kFl, 583242, 10, 1000, 100);
  EXPECT_EQ(small.total(), 101u * 4u * 583242u);
  EXPECT_TRUE(within_percent(small.total(), 236100000, 1));
  const auto large = round_cost(Protocol::kFl, 2760228, 10, 1000, 100);
  EXPECT_TRUE(within_percent(large.total(), 1100000000, 2));
}

TEST(RoundCost, UnicastDownlinkScalesWithClients) {
  CostModel unicast;
  unicast.broadcast_counts_once = false;
  const auto c = round_cost(Protocol::kFd, 1, 10, 1, 7, unicast);
  EXPECT_EQ(c.downlink, 7u * 400u);
}

TEST(RoundCost, OutputProtocolsIgnoreModelSize) {
  rng::Engine eng(4);
  for (int i = 0; i < 200; ++i) {
    const auto p1 = 1 + rng::uniform_index(eng, 1u << 30);
    const auto p2 = 1 + rng::uniform_index(eng, 1u << 30);
    const auto nl = 2 + rng::uniform_index(eng, 100);
    const auto o = 1 + rng::uniform_index(eng, 5000);
    const auto k = 1 + rng::uniform_index(eng, 500);
    for (auto p : {Protocol::kFd, Protocol::kDsflSa, Protocol::kDsflEra}) {
      EXPECT_EQ(round_cost(p, p1, nl, o, k), round_cost(p, p2, nl, o, k));
    }
  }
}

TEST(RoundCost, RejectsZeroScalarWidth) {
  CostModel bad;
  bad.bytes_per_scalar = 0;
  EXPECT_THROW(round_cost(Protocol::kFl, 1, 1, 1, 1, bad), InvalidInput);
}

TEST(InitialOpenCost, MnistSizes) {
  EXPECT_EQ(initial_open_cost(5000, 784), 15680000u);
  EXPECT_EQ(initial_open_cost(40000, 784), 125440000u);
  EXPECT_EQ(initial_open_cost(0, 784), 0u);
  EXPECT_TRUE(within_percent(initial_open_cost(10000, 784), 31000000, 2));
  EXPECT_TRUE(within_percent(initial_open_cost(20000, 784), 63000000, 2));
}

AccuracyCurve curve_of(std::vector<double> acc, std::uint64_t per_round,
                       std::uint64_t initial = 0) {
  AccuracyCurve c;
  for (std::size_t r = 0; r < acc.size(); ++r) {
    const auto n = static_cast<std::uint64_t>(r + 1);
    c.points.push_back({static_cast<int>(r + 1), acc[r], n * per_round,
                        n * (per_round / 10), initial});
  }
  return c;
}

TEST(ComuAt, ReachedInFirstRound) {
  const auto c = curve_of({0.9, 0.95}, 1000, 77);
  EXPECT_EQ(comu_at(c, 0.8), std::optional<std::uint64_t>(77 + 1000 + 100));
  EXPECT_EQ(rounds_to(c, 0.8), std::optional<int>(1));
}

TEST(ComuAt, NeverReached) {
  const auto c = curve_of({0.5, 0.6, 0.55}, 1000);
  EXPECT_FALSE(comu_at(c, 0.7).has_value());
  EXPECT_FALSE(rounds_to(c, 0.7).has_value());
}

TEST(ComuAt, ThreePointWalk) {
  AccuracyCurve c;
  c.points = {{1, 0.40, 300, 30, 5000},
              {2, 0.79, 600, 60, 5000},
              {3, 0.81, 900, 90, 5000}};
  EXPECT_EQ(*comu_at(c, 0.8), 5000u + 900u + 90u);
  EXPECT_EQ(*comu_at(c, 0.79), 5000u + 600u + 60u);
  EXPECT_EQ(*comu_at(c, 0.1), 5000u + 300u + 30u);
}

TEST(ComuAt, MonotoneInThreshold) {
  rng::Engine eng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> acc(1 + rng::uniform_index(eng, 30));
    for (double& a : acc) a = rng::uniform01(eng);
    const auto c = curve_of(acc, 1 + rng::uniform_index(eng, 10000));
    std::optional<std::uint64_t> prev = 0;
    for (double t = 0.01; t < 1.0; t += 0.01) {
      const auto v = comu_at(c, t);
      if (!prev) {
        EXPECT_FALSE(v.has_value());
      } else if (v) {
        EXPECT_GE(*v, *prev);
      }
      prev = v;
    }
  }
}

TEST(TopAccuracy, Examples) {
  EXPECT_DOUBLE_EQ(top_accuracy(curve_of({0.1, 0.4, 0.8}, 1)), 0.8);
  EXPECT_DOUBLE_EQ(top_accuracy(curve_of({0.3, 0.9, 0.7}, 1)), 0.9);
  EXPECT_THROW(top_accuracy(AccuracyCurve{}), InvalidInput);
}

TEST(TopAccuracy, MatchesBruteForce) {
  rng::Engine eng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> acc(1 + rng::uniform_index(eng, 50));
    for (double& a : acc) a = rng::uniform01(eng);
    EXPECT_EQ(top_accuracy(curve_of(acc, 1)), *std::max_element(acc.begin(), acc.end()));
  }
}

TEST(AccuracyCurve, ValidateCatchesDisorder) {
  AccuracyCurve c;
  c.points = {{2, 0.1, 10, 1, 0}, {1, 0.2, 20, 2, 0}};
  EXPECT_THROW(c.validate(), InvalidInput);
  c.points = {{1, 0.1, 10, 1, 0}, {2, 0.2, 5, 2, 0}};
  EXPECT_THROW(c.validate(), InvalidInput);
  c.points = {{1, 0.1, 10, 1, 0}, {2, 0.2, 20, 2, 0}};
  EXPECT_NO_THROW(c.validate());
}

TEST(Protocol, NamesRoundTrip) {
  for (auto p : {Protocol::kFl, Protocol::kFd, Protocol::kDsflSa, Protocol::kDsflEra}) {
    EXPECT_EQ(parse_protocol(to_string(p)), p);
  }
  EXPECT_THROW(parse_protocol("fedavg"), InvalidInput);
}

}  // namespace
}  // namespace dsfl
