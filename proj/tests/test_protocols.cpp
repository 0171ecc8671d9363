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

#include <map>
#include <stdexcept>

#include "dsfl/protocols.hpp"
#include "helpers.hpp"

namespace dsfl {
namespace {

struct World {
  LabeledDataset test;
  UnlabeledDataset open;
  ServerState server;
  std::vector<ClientState> clients;
};

// Small synthetic federation: 6 classes in 8 features, shards of 2 classes.
World make_world(std::size_t k, std::uint64_t seed, bool iid = false) {
  World w;
  const auto pool = synth_generate(6, 8, 120, 0.6, rng::derive(seed, "pool"));
  w.test = synth_generate(6, 8, 30, 0.6, rng::derive(seed, "test"));
  auto split = split_open_private(pool, 240, 480, seed);
  w.open = split.open;
  const auto plan = iid ? partition_iid(split.priv, k, seed)
                        : partition_noniid_shards(split.priv, k, 2, seed);
  const auto spec = ModelSpec::dense({8, 16, 6});
  for (std::size_t i = 0; i < k; ++i) {
    ClientState c;
    c.id = static_cast<int>(i);
    c.model = initialize(spec, rng::derive(seed, "client", i));
    c.private_data = std::make_shared<const LabeledDataset>(
        split.priv.subset(plan.assignments[i]));
    w.clients.push_back(std::move(c));
  }
  w.server.global_model = initialize(spec, rng::derive(seed, "server"));
  w.server.rng_seed = seed;
  return w;
}

RoundConfig config(Protocol p) {
  RoundConfig cfg;
  cfg.protocol = p;
  cfg.update_cfg.epochs = 2;
  cfg.update_cfg.batch_size = 20;
  cfg.distill_cfg.epochs = 2;
  cfg.distill_cfg.batch_size = 20;
  if (p == Protocol::kDsflEra) cfg.era = EraConfig{0.1};
  cfg.open_per_round = 60;
  return cfg;
}

RoundContext context(const World& w, int threads = 1) {
  RoundContext ctx;
  ctx.test = &w.test;
  ctx.open = &w.open;
  ctx.threads = threads;
  return ctx;
}

// ---------------------------------------------------------------------------
// evaluate

TEST(Evaluate, UniformModelPicksClassZero) {
  const auto data = synth_generate(10, 10, 20, 0.5, 1);
  EXPECT_DOUBLE_EQ(evaluate(ModelParams::zeros(ModelSpec::dense({10, 10})), data), 0.1);
}

TEST(Evaluate, MemorisedTrainingSet) {
  const auto data = synth_generate(4, 6, 25, 0.05, 2);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 10;
  const auto m = sgd_update(initialize(ModelSpec::dense({6, 12, 4}), 2),
                            data.samples, data.one_hot(), cfg);
  EXPECT_DOUBLE_EQ(evaluate(m, data), 1.0);
}

TEST(Evaluate, HandCountedToySet) {
  // Identity weights: the prediction is the larger coordinate.
  const ModelParams m(ModelSpec::dense({2, 2}), {1, 0, 0, 1, 0, 0});
  LabeledDataset d;
  d.num_classes = 2;
  d.samples.resize(2, 20);
  for (int j = 0; j < 20; ++j) {
    const bool first = j % 2 == 0;
    d.samples(0, j) = first ? 1.0f : 0.0f;
    d.samples(1, j) = first ? 0.0f : 1.0f;
    // Samples 0..12 labelled with the larger coordinate, the rest flipped.
    const int truth = first ? 0 : 1;
    d.labels.push_back(j < 13 ? truth : 1 - truth);
  }
  EXPECT_DOUBLE_EQ(evaluate(m, d), 13.0 / 20.0);
}

TEST(Evaluate, EmptyTestSetThrows) {
  LabeledDataset d;
  d.num_classes = 2;
  d.samples.resize(2, 0);
  EXPECT_THROW(evaluate(ModelParams::zeros(ModelSpec::dense({2, 2})), d), InvalidInput);
}

// ---------------------------------------------------------------------------
// FL

TEST(FlRound, SingleClientBecomesTheGlobalModel) {
  auto w = make_world(1, 3, true);
  const auto out = fl_round(w.server, w.clients, config(Protocol::kFl), context(w));
  EXPECT_EQ(out.server.global_model, out.clients[0].model);
  EXPECT_FALSE(out.server.global_model == w.server.global_model);
  EXPECT_EQ(out.server.round, 1);
}

// Uploads the client's own parameters, so FedAvg sees vectors a and b.
RoundContext upload_own(const World& w) {
  auto ctx = context(w);
  ctx.hooks.fl_upload = [](const ClientState& c, const ServerState&, int) {
    return std::optional<ModelParams>(c.model);
  };
  return ctx;
}

TEST(FlRound, EqualWeightsAverage) {
  auto w = make_world(2, 4, true);
  auto cfg = config(Protocol::kFl);
  cfg.update_cfg.learning_rate = 0.0;
  const auto out = fl_round(w.server, w.clients, cfg, upload_own(w));
  const auto a = w.clients[0].model.values();
  const auto b = w.clients[1].model.values();
  for (std::size_t p = 0; p < a.size(); ++p) {
    EXPECT_FLOAT_EQ(out.server.global_model.values()[p], (a[p] + b[p]) / 2.0f);
  }
}

TEST(FlRound, SampleCountWeights) {
  auto w = make_world(2, 5, true);
  const auto base = synth_generate(6, 8, 50, 0.6, 5);
  std::vector<std::size_t> first(300), second(100);
  std::iota(first.begin(), first.end(), 0u);
  std::iota(second.begin(), second.end(), 0u);
  w.clients[0].private_data = std::make_shared<const LabeledDataset>(base.subset(first));
  w.clients[1].private_data = std::make_shared<const LabeledDataset>(base.subset(second));
  auto cfg = config(Protocol::kFl);
  cfg.update_cfg.learning_rate = 0.0;
  const auto out = fl_round(w.server, w.clients, cfg, upload_own(w));
  const auto a = w.clients[0].model.values();
  const auto b = w.clients[1].model.values();
  for (std::size_t p = 0; p < a.size(); ++p) {
    EXPECT_NEAR(out.server.global_model.values()[p], 0.75 * a[p] + 0.25 * b[p], 1e-7);
  }
}

TEST(FlRound, MetricsMatchCostModel) {
  auto w = make_world(3, 6, true);
  const auto cfg = config(Protocol::kFl);
  const auto out = fl_round(w.server, w.clients, cfg, context(w));
  const auto expected = round_cost(Protocol::kFl, w.server.global_model.size(), 6, 60, 3);
  EXPECT_EQ(out.metrics.uplink_bytes, expected.uplink);
  EXPECT_EQ(out.metrics.downlink_bytes, expected.downlink);
  EXPECT_FALSE(out.metrics.global_logit_entropy.has_value());
  EXPECT_DOUBLE_EQ(out.metrics.accuracy, evaluate(out.server.global_model, w.test));
}

TEST(FlRound, WrongProtocolIsRejected) {
  auto w = make_world(2, 6);
  EXPECT_THROW(fl_round(w.server, w.clients, config(Protocol::kFd), context(w)), InvalidInput);
  EXPECT_THROW(dsfl_round(w.server, w.clients, config(Protocol::kFl), context(w)), InvalidInput);
  EXPECT_THROW(fd_round(w.server, w.clients, config(Protocol::kFl), context(w)), InvalidInput);
}

// ---------------------------------------------------------------------------
// FD

TEST(FdRound, ZeroGammaIsPlainLocalTraining) {
  auto w = make_world(3, 7);
  auto cfg = config(Protocol::kFd);
  cfg.fd_gamma = 0.0;
  const auto out = fd_round(w.server, w.clients, cfg, context(w));
  for (const auto& c : w.clients) {
    TrainConfig t = cfg.update_cfg;
    t.seed = rng::derive(w.server.rng_seed, "fd-distill", c.id, 1);
    const auto expected = sgd_update(c.model, c.private_data->samples,
                                     c.private_data->one_hot(), t);
    EXPECT_EQ(out.clients[static_cast<std::size_t>(c.id)].model, expected);
  }
}

TEST(FdRound, SingleClientUsesFallback) {
  auto w = make_world(1, 8, true);
  auto cfg = config(Protocol::kFd);
  const auto& data = *w.clients[0].private_data;
  const auto local = fd_local_perlabel(w.clients[0].model, data);
  const auto global = fd_global_perlabel(std::vector{local});
  const Matrix targets = fd_training_targets(data, global, local, 0.5);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int n = data.labels[i];
    Vector expected = 0.5f * global.values.col(n);
    expected(n) += 1.0f;
    EXPECT_LT((targets.col(static_cast<Eigen::Index>(i)) - expected).cwiseAbs().maxCoeff(), 1e-7);
  }
  EXPECT_NO_THROW(fd_round(w.server, w.clients, cfg, context(w)));
}

TEST(FdRound, TwoClientsOfOneClassSeeEachOther) {
  LabeledDataset a, b;
  a.num_classes = b.num_classes = 3;
  rng::Engine eng(9);
  a.samples = testing::random_matrix(4, 5, eng);
  b.samples = testing::random_matrix(4, 7, eng);
  a.labels.assign(5, 1);
  b.labels.assign(7, 1);
  const auto ma = initialize(ModelSpec::dense({4, 3}), 1);
  const auto mb = initialize(ModelSpec::dense({4, 3}), 2);
  const auto la = fd_local_perlabel(ma, a);
  const auto lb = fd_local_perlabel(mb, b);
  const auto g = fd_global_perlabel(std::vector{la, lb});
  const Matrix t = fd_training_targets(a, g, la, 1.0);
  Vector expected = lb.values.col(1);
  expected(1) += 1.0f;
  for (Eigen::Index j = 0; j < 5; ++j) {
    EXPECT_LT((t.col(j) - expected).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FdRound, CostsAndMeanClientAccuracy) {
  auto w = make_world(4, 10);
  const auto cfg = config(Protocol::kFd);
  const auto clients = fd_initial_update(w.server, w.clients, cfg, context(w));
  const auto out = fd_round(w.server, clients, cfg, context(w));
  EXPECT_EQ(out.metrics.uplink_bytes, 4u * 4u * 36u);
  EXPECT_EQ(out.metrics.downlink_bytes, 4u * 36u);
  double mean = 0.0;
  for (const auto& c : out.clients) mean += evaluate(c.model, w.test);
  EXPECT_DOUBLE_EQ(out.metrics.accuracy, mean / 4.0);
  ASSERT_TRUE(out.metrics.global_logit_entropy.has_value());
  for (const auto& c : out.clients) EXPECT_TRUE(c.fd_cache.has_value());
}

TEST(FdRound, InitialUpdateTrainsEveryClient) {
  auto w = make_world(3, 11);
  const auto out = fd_initial_update(w.server, w.clients, config(Protocol::kFd), context(w));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_FALSE(out[i].model == w.clients[i].model);
}

// ---------------------------------------------------------------------------
// DS-FL

TEST(DsflRound, IdenticalClientsGiveTheirOwnLogit) {
  auto w = make_world(1, 12, true);
  w.clients.push_back(w.clients[0]);  // same id, data and model
  const auto out = dsfl_round(w.server, w.clients, config(Protocol::kDsflSa), context(w));
  EXPECT_EQ(out.clients[0].model, out.clients[1].model);
  TrainConfig t = config(Protocol::kDsflSa).update_cfg;
  t.seed = rng::derive(w.server.rng_seed, "update", 0, 1);
  const auto& c = w.clients[0];
  const auto updated = sgd_update(c.model, c.private_data->samples, c.private_data->one_hot(), t);
  const auto o = sample_round_indices(w.open.size(), 60, 1, rng::derive(w.server.rng_seed, "open"));
  EXPECT_EQ(*out.server.last_global_logit, forward(updated, w.open.subset(o.indices)));
}

TEST(DsflRound, EraAndSaAgreeOnArgmax) {
  auto w = make_world(4, 13);
  const auto sa = dsfl_round(w.server, w.clients, config(Protocol::kDsflSa), context(w));
  const auto era = dsfl_round(w.server, w.clients, config(Protocol::kDsflEra), context(w));
  const auto& gs = *sa.server.last_global_logit;
  const auto& ge = *era.server.last_global_logit;
  ASSERT_EQ(gs.columns(), ge.columns());
  for (Eigen::Index j = 0; j < gs.columns(); ++j) {
    EXPECT_EQ(argmax(gs.column(j)), argmax(ge.column(j)));
  }
  EXPECT_LT(*era.metrics.global_logit_entropy, *sa.metrics.global_logit_entropy);
}

TEST(DsflRound, MetricsAndRoundCounter) {
  auto w = make_world(3, 14);
  const auto cfg = config(Protocol::kDsflEra);
  auto out = dsfl_round(w.server, w.clients, cfg, context(w));
  EXPECT_EQ(out.server.round, 1);
  EXPECT_EQ(out.metrics.uplink_bytes, 3u * 4u * 6u * 60u);
  EXPECT_EQ(out.metrics.downlink_bytes, 4u * 6u * 60u);
  EXPECT_DOUBLE_EQ(out.metrics.accuracy, evaluate(out.server.global_model, w.test));
  EXPECT_DOUBLE_EQ(*out.metrics.global_logit_entropy, mean_entropy(*out.server.last_global_logit));
  out = dsfl_round(out.server, out.clients, cfg, context(w));
  EXPECT_EQ(out.server.round, 2);
}

TEST(DsflRound, ClientModelsAreNeverReplacedByTheServer) {
  auto w = make_world(2, 15);
  const auto out = dsfl_round(w.server, w.clients, config(Protocol::kDsflEra), context(w));
  for (const auto& c : out.clients) EXPECT_FALSE(c.model == out.server.global_model);
}

TEST(DsflRound, NeedsOpenData) {
  auto w = make_world(2, 15);
  auto ctx = context(w);
  ctx.open = nullptr;
  EXPECT_THROW(dsfl_round(w.server, w.clients, config(Protocol::kDsflSa), ctx), InvalidInput);
}

TEST(RoundConfig, EraNeedsItsConfig) {
  RoundConfig cfg;
  cfg.protocol = Protocol::kDsflEra;
  cfg.era.reset();
  EXPECT_THROW(cfg.validate(), InvalidInput);
}

// ---------------------------------------------------------------------------
// Cross-cutting properties

TEST(Rounds, FailureLeavesStatesUntouched) {
  auto w = make_world(4, 16);
  const auto server_before = w.server;
  const auto clients_before = w.clients;
  auto ctx = context(w);
  ctx.hooks.dsfl_upload = [](const ClientState& c, const Matrix&, int) -> std::optional<LogitMatrix> {
    if (c.id == 2) throw TrainingDivergence(3);
    return std::nullopt;
  };
  EXPECT_THROW(dsfl_round(w.server, w.clients, config(Protocol::kDsflEra), ctx), TrainingDivergence);
  EXPECT_EQ(w.server.global_model, server_before.global_model);
  EXPECT_EQ(w.server.round, server_before.round);
  ASSERT_EQ(w.clients.size(), clients_before.size());
  for (std::size_t i = 0; i < w.clients.size(); ++i) {
    EXPECT_EQ(w.clients[i].model, clients_before[i].model);
  }
}

TEST(Rounds, ClientsOnlyReadTheirOwnPrivateData) {
  auto w = make_world(5, 17);
  std::map<int, int> reads;
  std::mutex mu;
  auto ctx = context(w, 3);
  ctx.hooks.on_private_read = [&](int acting, const LabeledDataset* data) {
    std::lock_guard lock(mu);
    EXPECT_EQ(data, w.clients[static_cast<std::size_t>(acting)].private_data.get());
    ++reads[acting];
  };
  const auto fd_cfg = config(Protocol::kFd);
  const auto initial = fd_initial_update(w.server, w.clients, fd_cfg, ctx);
  fd_round(w.server, initial, fd_cfg, ctx);
  dsfl_round(w.server, w.clients, config(Protocol::kDsflEra), ctx);
  EXPECT_EQ(reads.size(), 5u);
}

TEST(Rounds, ThreadCountDoesNotChangeResults) {
  for (auto p : {Protocol::kFl, Protocol::kFd, Protocol::kDsflSa, Protocol::kDsflEra}) {
    auto w = make_world(5, 18);
    const auto cfg = config(p);
    auto run = [&](int threads) {
      auto ctx = context(w, threads);
      ServerState s = w.server;
      auto clients = p == Protocol::kFd ? fd_initial_update(s, w.clients, cfg, ctx) : w.clients;
      std::vector<double> acc;
      for (int r = 0; r < 3; ++r) {
        auto out = run_round(s, clients, cfg, ctx);
        s = out.server;
        clients = out.clients;
        acc.push_back(out.metrics.accuracy);
      }
      return std::make_tuple(s.global_model, clients[4].model, acc);
    };
    EXPECT_EQ(run(1), run(4)) << to_string(p);
  }
}

TEST(Rounds, RepeatedRunsAreBitIdentical) {
  auto w = make_world(4, 19);
  const auto cfg = config(Protocol::kDsflEra);
  auto a = dsfl_round(w.server, w.clients, cfg, context(w));
  auto b = dsfl_round(w.server, w.clients, cfg, context(w));
  EXPECT_EQ(a.server.global_model, b.server.global_model);
  EXPECT_EQ(*a.server.last_global_logit, *b.server.last_global_logit);
}

TEST(Rounds, ReportedBytesMatchTheCostModelForEveryProtocol) {
  for (auto p : {Protocol::kFl, Protocol::kFd, Protocol::kDsflSa, Protocol::kDsflEra}) {
    auto w = make_world(3, 20);
    const auto cfg = config(p);
    const auto out = run_round(w.server, w.clients, cfg, context(w));
    const auto expected = round_cost(p, w.server.global_model.size(), 6, 60, 3);
    EXPECT_EQ(out.metrics.uplink_bytes, expected.uplink) << to_string(p);
    EXPECT_EQ(out.metrics.downlink_bytes, expected.downlink) << to_string(p);
  }
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  try {
    parallel_for(10, 4, [](std::size_t i) {
      if (i == 3 || i == 7) throw std::runtime_error("task " + std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "task 3");
  }
}

}  // namespace
}  // namespace dsfl
