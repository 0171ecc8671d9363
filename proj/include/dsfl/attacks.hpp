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

#ifndef DSFL_ATTACKS_HPP_
#define DSFL_ATTACKS_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dsfl/data.hpp"
#include "dsfl/errors.hpp"
#include "dsfl/nn.hpp"
#include "dsfl/rng.hpp"

namespace dsfl {

// ---------------------------------------------------------------------------
// Noisy labels

struct NoisyLabelSpec {
  int classes = 0;  // C
  std::uint64_t seed = 0;

  static NoisyLabelSpec for_client(std::uint64_t run_seed, int classes,
                                   int client_id) {
    return {classes, rng::derive(run_seed, "label-noise", client_id)};
  }
};

// Pairs (S_c, F_c): the first C entries of a seeded class permutation are
// the sources, the next C the false classes.
inline std::vector<std::pair<int, int>> label_noise_mapping(
    const NoisyLabelSpec& spec, int num_classes) {
  if (spec.classes < 0 || 2 * spec.classes > num_classes) {
    throw InvalidInput("label noise: C = " + std::to_string(spec.classes) +
                       " must lie in [0, " + std::to_string(num_classes / 2) +
                       "]");
  }
  rng::Engine eng(spec.seed);
  const auto perm = rng::permutation(static_cast<std::size_t>(num_classes), eng);
  std::vector<std::pair<int, int>> out;
  for (int c = 0; c < spec.classes; ++c) {
    out.emplace_back(static_cast<int>(perm[static_cast<std::size_t>(c)]),
                     static_cast<int>(
                         perm[static_cast<std::size_t>(spec.classes + c)]));
  }
  return out;
}

// Relabels every sample of class S_c as F_c. Samples are untouched.
inline LabeledDataset inject_label_noise(const LabeledDataset& ds,
                                         const NoisyLabelSpec& spec) {
  const auto mapping = label_noise_mapping(spec, ds.num_classes);
  std::vector<int> to(static_cast<std::size_t>(ds.num_classes));
  for (int n = 0; n < ds.num_classes; ++n) to[static_cast<std::size_t>(n)] = n;
  for (auto [s, f] : mapping) to[static_cast<std::size_t>(s)] = f;
  LabeledDataset out = ds;
  for (int& l : out.labels) l = to[static_cast<std::size_t>(l)];
  return out;
}

// ---------------------------------------------------------------------------
// Noisy open data

// The clean open set followed by the first I_n noise samples, then shuffled.
inline UnlabeledDataset inject_open_noise(const UnlabeledDataset& open,
                                          const UnlabeledDataset& noise,
                                          std::size_t noise_count,
                                          std::uint64_t seed) {
  if (noise_count > noise.size()) {
    throw InvalidInput("inject_open_noise: I_n = " +
                       std::to_string(noise_count) + " exceeds " +
                       std::to_string(noise.size()) + " noise samples");
  }
  if (noise_count > 0 && noise.feature_dim() != open.feature_dim()) {
    throw InvalidInput("inject_open_noise: feature dims differ (" +
                       std::to_string(open.feature_dim()) + " vs " +
                       std::to_string(noise.feature_dim()) + ")");
  }
  const std::size_t total = open.size() + noise_count;
  rng::Engine eng(rng::derive(seed, "open-noise"));
  const auto perm = rng::permutation(total, eng);
  UnlabeledDataset out;
  out.samples.resize(open.samples.rows(), static_cast<Eigen::Index>(total));
  for (std::size_t j = 0; j < total; ++j) {
    const std::size_t src = perm[j];
    out.samples.col(static_cast<Eigen::Index>(j)) =
        src < open.size()
            ? open.samples.col(static_cast<Eigen::Index>(src))
            : noise.samples.col(static_cast<Eigen::Index>(src - open.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model poisoning

struct PoisonSpec {
  ModelParams malicious_model;  // w_x
  int attack_period = 5;
  int malicious_client = 0;

  void validate() const {
    if (attack_period < 1) {
      throw InvalidInput("PoisonSpec: attack_period must be >= 1");
    }
    if (malicious_model.size() == 0) {
      throw InvalidInput("PoisonSpec: malicious model is empty");
    }
  }

  bool attacks_in(int round) const { return round % attack_period == 0; }
};

// w_M = K w_x - (K - 1) w_g, evaluated in double.
inline ModelParams poison_model_update(const ModelParams& w_x,
                                       const ModelParams& w_g, std::size_t k) {
  if (w_x.spec() != w_g.spec()) {
    throw InvalidInput("poison_model_update: model specs differ");
  }
  if (k < 2) throw InvalidInput("poison_model_update: K must be >= 2");
  const double kd = static_cast<double>(k);
  const auto x = w_x.values();
  const auto g = w_g.values();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(kd * x[i] - (kd - 1.0) * g[i]);
  }
  return ModelParams(w_x.spec(), std::move(out));
}

// The logit a frozen attacker uploads in DS-FL.
inline LogitMatrix poison_logits(const ModelParams& w_x,
                                 const Matrix& open_subset) {
  return forward(w_x, open_subset);
}

}  // namespace dsfl

#endif  // DSFL_ATTACKS_HPP_
