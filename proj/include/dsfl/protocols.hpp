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

#ifndef DSFL_PROTOCOLS_HPP_
#define DSFL_PROTOCOLS_HPP_

// Round engines for FL (parameter exchange with FedAvg), FD (per-label logit
// exchange) and DS-FL (logit exchange over a shared open dataset, with SA or
// ERA aggregation).
//
// Every round function is pure: it takes the current server/client states by
// const reference and returns the successor states, so an exception leaves
// the caller's states untouched. Per-client work may run on several threads;
// each client draws from its own seed stream derived from
// (server.rng_seed, phase, client id, round) and aggregation sums in client
// order, so results do not depend on the thread count.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsfl/aggregation.hpp"
#include "dsfl/comms.hpp"
#include "dsfl/data.hpp"
#include "dsfl/errors.hpp"
#include "dsfl/nn.hpp"
#include "dsfl/parallel.hpp"
#include "dsfl/rng.hpp"

namespace dsfl {

struct ClientState {
  int id = 0;
  ModelParams model;
  std::shared_ptr<const LabeledDataset> private_data;
  std::optional<PerLabelLogits> fd_cache;  // last local per-label table (FD)
};

struct ServerState {
  ModelParams global_model;  // w_0 for FL, w_g for DS-FL, unused by FD
  int round = 0;
  std::uint64_t rng_seed = 0;
  std::optional<LogitMatrix> last_global_logit;
};

struct RoundConfig {
  Protocol protocol = Protocol::kDsflEra;
  TrainConfig update_cfg;   // local update on private data (eta)
  TrainConfig distill_cfg;  // distillation on the open subset (eta_dist)
  std::optional<EraConfig> era;
  double fd_gamma = 1.0;
  int open_per_round = 1000;
  // Parameter count charged by the cost model; 0 means the model's own.
  std::uint64_t cost_model_params = 0;

  void validate() const {
    update_cfg.validate();
    distill_cfg.validate();
    if (protocol == Protocol::kDsflEra) {
      if (!era) throw InvalidInput("RoundConfig: dsfl_era needs an EraConfig");
      era->validate();
    }
    if (!(fd_gamma >= 0.0)) throw InvalidInput("RoundConfig: fd_gamma < 0");
    if (is_dsfl(protocol) && open_per_round < 1) {
      throw InvalidInput("RoundConfig: open_per_round must be >= 1");
    }
  }
};

struct RoundMetrics {
  int round = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> global_logit_entropy;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  double wall_ms = 0.0;
};

// Per-round interception points used by attack scheduling. All optional.
struct RoundHooks {
  // True if the client performs no training this round (frozen attacker).
  std::function<bool(const ClientState&, int round)> frozen;
  // FL: replaces the parameters a client uploads.
  std::function<std::optional<ModelParams>(const ClientState&,
                                           const ServerState&, int round)>
      fl_upload;
  // DS-FL: replaces the local logit a client uploads for the open subset.
  std::function<std::optional<LogitMatrix>(const ClientState&,
                                           const Matrix& open_subset,
                                           int round)>
      dsfl_upload;
  // Called whenever client-side code reads a private dataset, with the id of
  // the client doing the work. Lets a harness audit the information boundary.
  std::function<void(int acting_client, const LabeledDataset* data)>
      on_private_read;
};

struct RoundContext {
  const LabeledDataset* test = nullptr;     // evaluation set (may be null)
  const UnlabeledDataset* open = nullptr;  // DS-FL only
  int threads = 1;
  RoundHooks hooks;
};

struct RoundResult {
  ServerState server;
  std::vector<ClientState> clients;
  RoundMetrics metrics;
};

// Fraction of samples whose argmax prediction equals the label (ties go to
// the lowest class index).
inline double evaluate(const ModelParams& model, const LabeledDataset& test) {
  if (test.size() == 0) throw InvalidInput("evaluate: empty test set");
  constexpr Eigen::Index kChunk = 2048;
  std::size_t correct = 0;
  const Eigen::Index n = test.samples.cols();
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - start);
    const LogitMatrix pred =
        forward(model, test.samples.middleCols(start, len));
    for (Eigen::Index j = 0; j < len; ++j) {
      if (argmax(pred.column(j)) ==
          test.labels[static_cast<std::size_t>(start + j)]) {
        ++correct;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since)
      .count();
}

inline void check_round_inputs(const ServerState& server,
                               const std::vector<ClientState>& clients,
                               const RoundConfig& cfg, const char* who) {
  cfg.validate();
  if (clients.empty()) throw InvalidInput(std::string(who) + ": no clients");
  for (const auto& c : clients) {
    if (!c.private_data) {
      throw InvalidInput(std::string(who) + ": client " + std::to_string(c.id) +
                         " has no private data");
    }
    if (c.model.spec() != clients[0].model.spec()) {
      throw InvalidInput(std::string(who) + ": client model specs differ");
    }
  }
  if (server.global_model.size() != 0 &&
      server.global_model.spec() != clients[0].model.spec()) {
    throw InvalidInput(std::string(who) +
                       ": server and client model specs differ");
  }
}

inline const LabeledDataset& read_private(const RoundContext& ctx,
                                          const ClientState& c) {
  if (ctx.hooks.on_private_read) {
    ctx.hooks.on_private_read(c.id, c.private_data.get());
  }
  return *c.private_data;
}

inline bool is_frozen(const RoundContext& ctx, const ClientState& c,
                      int round) {
  return ctx.hooks.frozen && ctx.hooks.frozen(c, round);
}

inline TrainConfig seeded(TrainConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  return cfg;
}

inline std::uint64_t charged_params(const RoundConfig& cfg,
                                    const ModelSpec& spec) {
  return cfg.cost_model_params != 0 ? cfg.cost_model_params
                                    : spec.parameter_count();
}

inline double maybe_evaluate(const RoundContext& ctx, const ModelParams& m) {
  return ctx.test ? evaluate(m, *ctx.test)
                  : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

// Metrics bytes for a round of `cfg` with `clients` participants.
inline RoundCost expected_round_cost(const RoundConfig& cfg,
                                     const ModelSpec& spec,
                                     std::size_t clients) {
  return round_cost(cfg.protocol, detail::charged_params(cfg, spec),
                    static_cast<std::uint64_t>(spec.num_classes()),
                    static_cast<std::uint64_t>(cfg.open_per_round), clients);
}

// ---------------------------------------------------------------------------
// FL

// Every client trains from the broadcast w_0 on its private data; the server
// sets w_0 <- sum_k (I_k / I) w_k (accumulated in double, client order).
inline RoundResult fl_round(const ServerState& server,
                            const std::vector<ClientState>& clients,
                            const RoundConfig& cfg, const RoundContext& ctx) {
  if (cfg.protocol != Protocol::kFl) {
    throw InvalidInput("fl_round: protocol is not fl");
  }
  detail::check_round_inputs(server, clients, cfg, "fl_round");
  const auto t0 = detail::Clock::now();
  const int round = server.round + 1;
  const std::size_t k = clients.size();

  std::vector<ModelParams> trained(k);
  std::vector<ModelParams> uploads(k);
  parallel_for(k, ctx.threads, [&](std::size_t i) {
    const ClientState& c = clients[i];
    if (detail::is_frozen(ctx, c, round)) {
      trained[i] = c.model;
    } else {
      const LabeledDataset& data = detail::read_private(ctx, c);
      trained[i] = sgd_update(
          server.global_model, data.samples, data.one_hot(),
          detail::seeded(cfg.update_cfg,
                         rng::derive(server.rng_seed, "update", c.id, round)));
    }
    std::optional<ModelParams> replaced;
    if (ctx.hooks.fl_upload) replaced = ctx.hooks.fl_upload(c, server, round);
    uploads[i] = replaced ? std::move(*replaced) : trained[i];
    if (uploads[i].spec() != server.global_model.spec()) {
      throw InvalidInput("fl_round: uploaded model spec mismatch");
    }
  });

  std::size_t total = 0;
  for (const auto& c : clients) total += c.private_data->size();
  if (total == 0) throw InvalidInput("fl_round: clients hold no samples");
  std::vector<double> acc(server.global_model.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double weight = static_cast<double>(clients[i].private_data->size()) /
                          static_cast<double>(total);
    const auto v = uploads[i].values();
    for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += weight * v[p];
  }
  std::vector<float> merged(acc.begin(), acc.end());

  RoundResult out;
  out.server = server;
  out.server.round = round;
  out.server.global_model =
      ModelParams(server.global_model.spec(), std::move(merged));
  out.clients = clients;
  for (std::size_t i = 0; i < k; ++i) out.clients[i].model = std::move(trained[i]);

  const RoundCost cost = expected_round_cost(cfg, server.global_model.spec(), k);
  out.metrics.round = round;
  out.metrics.accuracy = detail::maybe_evaluate(ctx, out.server.global_model);
  out.metrics.uplink_bytes = cost.uplink;
  out.metrics.downlink_bytes = cost.downlink;
  out.metrics.wall_ms = detail::elapsed_ms(t0);
  return out;
}

// ---------------------------------------------------------------------------
// FD

// The once-only "Update" step of FD: every client trains on its private data
// from its current model.
inline std::vector<ClientState> fd_initial_update(
    const ServerState& server, const std::vector<ClientState>& clients,
    const RoundConfig& cfg, const RoundContext& ctx) {
  detail::check_round_inputs(server, clients, cfg, "fd_initial_update");
  std::vector<ClientState> out = clients;
  parallel_for(out.size(), ctx.threads, [&](std::size_t i) {
    ClientState& c = out[i];
    if (detail::is_frozen(ctx, c, 0)) return;
    const LabeledDataset& data = detail::read_private(ctx, c);
    c.model = sgd_update(
        c.model, data.samples, data.one_hot(),
        detail::seeded(cfg.update_cfg,
                       rng::derive(server.rng_seed, "fd-initial", c.id)));
  });
  return out;
}

// Distillation targets for one client: one-hot label plus gamma times the
// leave-one-out target of the sample's class. Classes with a single holder
// fall back to the global column; classes nobody holds add nothing.
inline Matrix fd_training_targets(const LabeledDataset& data,
                                  const PerLabelLogits& global,
                                  const PerLabelLogits& own, double gamma) {
  Matrix targets = data.one_hot();
  if (gamma == 0.0) return targets;
  const int nl = global.num_classes();
  std::vector<std::optional<Vector>> per_class(static_cast<std::size_t>(nl));
  for (int n = 0; n < nl; ++n) {
    if (!own.present(n) || !global.present(n)) continue;
    if (global.holders[static_cast<std::size_t>(n)] >= 2) {
      per_class[static_cast<std::size_t>(n)] =
          fd_distill_target(global, own, n);
    } else {
      per_class[static_cast<std::size_t>(n)] = global.values.col(n);
    }
  }
  const auto g = static_cast<float>(gamma);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& t = per_class[static_cast<std::size_t>(data.labels[i])];
    if (t) targets.col(static_cast<Eigen::Index>(i)) += g * *t;
  }
  return targets;
}

// One FD round (prediction, per-label upload, aggregation, broadcast,
// distillation). Accuracy is the mean test accuracy of the client models; the
// entropy metric averages the held columns of the global table.
inline RoundResult fd_round(const ServerState& server,
                            const std::vector<ClientState>& clients,
                            const RoundConfig& cfg, const RoundContext& ctx) {
  if (cfg.protocol != Protocol::kFd) {
    throw InvalidInput("fd_round: protocol is not fd");
  }
  detail::check_round_inputs(server, clients, cfg, "fd_round");
  const auto t0 = detail::Clock::now();
  const int round = server.round + 1;
  const std::size_t k = clients.size();

  std::vector<PerLabelLogits> locals(k);
  parallel_for(k, ctx.threads, [&](std::size_t i) {
    locals[i] =
        fd_local_perlabel(clients[i].model, detail::read_private(ctx, clients[i]));
  });
  const PerLabelLogits global = fd_global_perlabel(locals);

  RoundResult out;
  out.server = server;
  out.server.round = round;
  out.clients = clients;
  std::vector<double> accuracy(k, 0.0);
  parallel_for(k, ctx.threads, [&](std::size_t i) {
    ClientState& c = out.clients[i];
    c.fd_cache = locals[i];
    if (!detail::is_frozen(ctx, c, round)) {
      const LabeledDataset& data = detail::read_private(ctx, c);
      const Matrix targets =
          fd_training_targets(data, global, locals[i], cfg.fd_gamma);
      c.model = sgd_update(
          c.model, data.samples, targets,
          detail::seeded(cfg.update_cfg,
                         rng::derive(server.rng_seed, "fd-distill", c.id, round)));
    }
    accuracy[i] = detail::maybe_evaluate(ctx, c.model);
  });

  double mean_acc = 0.0;
  for (double a : accuracy) mean_acc += a;
  double h = 0.0;
  int held = 0;
  for (int n = 0; n < global.num_classes(); ++n) {
    if (!global.present(n)) continue;
    h += entropy(global.values.col(n));
    ++held;
  }

  const RoundCost cost = expected_round_cost(cfg, clients[0].model.spec(), k);
  out.metrics.round = round;
  out.metrics.accuracy = mean_acc / static_cast<double>(k);
  if (held > 0) out.metrics.global_logit_entropy = h / held;
  out.metrics.uplink_bytes = cost.uplink;
  out.metrics.downlink_bytes = cost.downlink;
  out.metrics.wall_ms = detail::elapsed_ms(t0);
  return out;
}

// ---------------------------------------------------------------------------
// DS-FL

// One DS-FL round: local update on private data, prediction on the shared
// subset o_r, upload, SA/ERA aggregation, broadcast, then distillation of
// every client model and of the server model w_g on (D^{o_r}, global logit).
// Accuracy is measured on w_g.
inline RoundResult dsfl_round(const ServerState& server,
                              const std::vector<ClientState>& clients,
                              const RoundConfig& cfg, const RoundContext& ctx) {
  if (!is_dsfl(cfg.protocol)) {
    throw InvalidInput("dsfl_round: protocol is not dsfl_sa/dsfl_era");
  }
  detail::check_round_inputs(server, clients, cfg, "dsfl_round");
  if (ctx.open == nullptr) throw InvalidInput("dsfl_round: no open dataset");
  const auto t0 = detail::Clock::now();
  const int round = server.round + 1;
  const std::size_t k = clients.size();

  // Update
  std::vector<ModelParams> models(k);
  std::vector<char> frozen(k, 0);
  parallel_for(k, ctx.threads, [&](std::size_t i) {
    const ClientState& c = clients[i];
    frozen[i] = detail::is_frozen(ctx, c, round) ? 1 : 0;
    if (frozen[i]) {
      models[i] = c.model;
      return;
    }
    const LabeledDataset& data = detail::read_private(ctx, c);
    models[i] = sgd_update(
        c.model, data.samples, data.one_hot(),
        detail::seeded(cfg.update_cfg,
                       rng::derive(server.rng_seed, "update", c.id, round)));
  });

  // Prediction on the shared subset
  const RoundIndexSet o_r = sample_round_indices(
      ctx.open->size(), static_cast<std::size_t>(cfg.open_per_round), round,
      rng::derive(server.rng_seed, "open"));
  const Matrix open_subset = ctx.open->subset(o_r.indices);
  std::vector<LogitMatrix> locals(k);
  parallel_for(k, ctx.threads, [&](std::size_t i) {
    std::optional<LogitMatrix> replaced;
    if (ctx.hooks.dsfl_upload) {
      replaced = ctx.hooks.dsfl_upload(clients[i], open_subset, round);
    }
    locals[i] = replaced ? std::move(*replaced) : forward(models[i], open_subset);
  });

  // Aggregation
  LogitMatrix global = cfg.protocol == Protocol::kDsflEra
                           ? aggregate_era(locals, *cfg.era)
                           : aggregate_sa(locals);

  // Distillation; task k is the server model.
  ModelParams server_model;
  parallel_for(k + 1, ctx.threads, [&](std::size_t i) {
    if (i == k) {
      server_model = sgd_update(
          server.global_model, open_subset, global,
          detail::seeded(cfg.distill_cfg,
                         rng::derive(server.rng_seed, "server-distill", round)));
      return;
    }
    if (frozen[i]) return;
    models[i] = sgd_update(
        models[i], open_subset, global,
        detail::seeded(cfg.distill_cfg,
                       rng::derive(server.rng_seed, "distill", clients[i].id,
                                   round)));
  });

  RoundResult out;
  out.server = server;
  out.server.round = round;
  out.server.global_model = std::move(server_model);
  out.clients = clients;
  for (std::size_t i = 0; i < k; ++i) out.clients[i].model = std::move(models[i]);

  const RoundCost cost = expected_round_cost(cfg, clients[0].model.spec(), k);
  out.metrics.round = round;
  out.metrics.accuracy = detail::maybe_evaluate(ctx, out.server.global_model);
  out.metrics.global_logit_entropy = mean_entropy(global);
  out.metrics.uplink_bytes = cost.uplink;
  out.metrics.downlink_bytes = cost.downlink;
  out.server.last_global_logit = std::move(global);
  out.metrics.wall_ms = detail::elapsed_ms(t0);
  return out;
}

// Dispatches on cfg.protocol. FD callers must run fd_initial_update first.
inline RoundResult run_round(const ServerState& server,
                             const std::vector<ClientState>& clients,
                             const RoundConfig& cfg, const RoundContext& ctx) {
  switch (cfg.protocol) {
    case Protocol::kFl: return fl_round(server, clients, cfg, ctx);
    case Protocol::kFd: return fd_round(server, clients, cfg, ctx);
    case Protocol::kDsflSa:
    case Protocol::kDsflEra: return dsfl_round(server, clients, cfg, ctx);
  }
  throw InvalidInput("run_round: unknown protocol");
}

}  // namespace dsfl

#endif  // DSFL_PROTOCOLS_HPP_
