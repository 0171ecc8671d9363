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

#ifndef DSFL_RUNNER_HPP_
#define DSFL_RUNNER_HPP_

// Experiment orchestration: YAML run configs, data preparation, the round
// loop with attack hooks, metrics files and multi-run comparison tables.

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsfl/attacks.hpp"
#include "dsfl/comms.hpp"
#include "dsfl/data.hpp"
#include "dsfl/errors.hpp"
#include "dsfl/nn.hpp"
#include "dsfl/protocols.hpp"
#include "dsfl/rng.hpp"

namespace dsfl {

// ---------------------------------------------------------------------------
// Configuration

struct SyntheticConfig {
  int classes = 10;
  int features = 20;
  int per_class = 1000;
  int test_per_class = 200;
  double spread = 0.5;

  friend bool operator==(const SyntheticConfig&,
                         const SyntheticConfig&) = default;
};

struct DatasetConfig {
  std::string source = "idx";  // idx | synthetic
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  int num_classes = 10;
  SyntheticConfig synthetic;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct SplitConfig {
  std::size_t open = 5000;
  std::size_t priv = 5000;
  std::optional<std::uint64_t> seed;  // defaults to the run seed

  friend bool operator==(const SplitConfig&, const SplitConfig&) = default;
};

struct PartitionConfig {
  PartitionMode mode = PartitionMode::kNonIidShards;
  int clients = 10;
  int shards_per_client = 2;

  friend bool operator==(const PartitionConfig&,
                         const PartitionConfig&) = default;
};

struct ProtocolConfig {
  Protocol name = Protocol::kDsflEra;
  TrainConfig update;
  TrainConfig distill;
  double era_temperature = 0.1;
  double fd_gamma = 1.0;
  int open_per_round = 500;
  std::uint64_t cost_model_params = 0;

  friend bool operator==(const ProtocolConfig&,
                         const ProtocolConfig&) = default;
};

enum class AttackKind { kNone, kNoisyLabels, kNoisyOpen, kPoisoning };

struct AttackConfig {
  AttackKind kind = AttackKind::kNone;
  int label_noise_classes = 0;       // noisy_labels.classes (C)
  std::size_t open_noise_count = 0;  // noisy_open.count (I_n)
  std::string open_noise_source = "uniform";  // uniform | idx
  std::string open_noise_images;
  int poison_period = 5;
  int malicious_client = 0;
  int wx_epochs = 10;
  int backdoor_per_class = 500;
  int backdoor_test_per_class = 200;

  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

struct RunConfig {
  std::string name;  // label in comparison tables; defaults to the protocol
  std::uint64_t seed = 1;
  int rounds = 50;
  std::string output_dir;
  DatasetConfig dataset;
  SplitConfig split;
  PartitionConfig partition;
  std::vector<int> hidden = {128};
  ProtocolConfig protocol;
  AttackConfig attack;
  bool eval_round0 = false;
  bool wall_time = false;
  std::vector<double> thresholds = {0.8, 0.85};

  std::uint64_t data_seed() const { return split.seed.value_or(seed); }
  std::string label() const {
    return name.empty() ? std::string(to_string(protocol.name)) : name;
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline std::string_view to_string(AttackKind k) {
  switch (k) {
    case AttackKind::kNone: return "none";
    case AttackKind::kNoisyLabels: return "noisy_labels";
    case AttackKind::kNoisyOpen: return "noisy_open";
    case AttackKind::kPoisoning: return "poisoning";
  }
  return "?";
}

inline std::string_view to_string(PartitionMode m) {
  return m == PartitionMode::kIid ? "iid" : "non_iid";
}

namespace detail {

// Reads one YAML mapping, remembering the keys consumed so that unknown keys
// can be reported with their full path.
class Section {
 public:
  Section(YAML::Node node, std::string path)
      : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      throw ConfigError(path_.empty() ? "<root>" : path_, "expected a mapping");
    }
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) const {
    return node_ && node_.IsMap() && node_[key];
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    try {
      return node_[key].template as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(field(key), "cannot parse value '" +
                                        scalar_text(node_[key]) + "'");
    }
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    return Section(has(key) ? node_[key] : YAML::Node(), field(key));
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  static std::string scalar_text(const YAML::Node& n) {
    if (n.IsScalar()) return n.Scalar();
    std::ostringstream os;
    os << n;
    return os.str();
  }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

inline TrainConfig read_train(Section s) {
  TrainConfig t;
  t.learning_rate = s.get("learning_rate", t.learning_rate);
  t.epochs = s.get("epochs", t.epochs);
  t.batch_size = s.get("batch_size", t.batch_size);
  s.finish();
  return t;
}

inline std::string resolve_path(const std::string& p,
                                const std::filesystem::path& base) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return p;
  return (base / path).lexically_normal().string();
}

}  // namespace detail

// Checks every field; throws ConfigError naming the offending field.
inline void validate(const RunConfig& c) {
  if (c.rounds < 0) throw ConfigError("rounds", "must be >= 0");
  const auto& d = c.dataset;
  if (d.source == "idx") {
    for (auto [field, value] :
         {std::pair{"dataset.train_images", &d.train_images},
          std::pair{"dataset.train_labels", &d.train_labels},
          std::pair{"dataset.test_images", &d.test_images},
          std::pair{"dataset.test_labels", &d.test_labels}}) {
      if (value->empty()) throw ConfigError(field, "path required");
    }
    if (d.num_classes < 2) {
      throw ConfigError("dataset.num_classes", "must be >= 2");
    }
  } else if (d.source == "synthetic") {
    const auto& s = d.synthetic;
    if (s.classes < 2) throw ConfigError("dataset.synthetic.classes", ">= 2");
    if (s.features < s.classes) {
      throw ConfigError("dataset.synthetic.features", "must be >= classes");
    }
    if (s.per_class < 1) {
      throw ConfigError("dataset.synthetic.per_class", "must be >= 1");
    }
    if (s.test_per_class < 1) {
      throw ConfigError("dataset.synthetic.test_per_class", "must be >= 1");
    }
    if (!(s.spread >= 0.0)) {
      throw ConfigError("dataset.synthetic.spread", "must be >= 0");
    }
  } else {
    throw ConfigError("dataset.source",
                      "expected idx or synthetic, got '" + d.source + "'");
  }
  if (c.split.priv == 0) throw ConfigError("split.private", "must be >= 1");
  if (c.partition.clients < 1) {
    throw ConfigError("partition.clients", "must be >= 1");
  }
  if (c.partition.mode == PartitionMode::kNonIidShards &&
      c.partition.shards_per_client < 1) {
    throw ConfigError("partition.shards_per_client", "must be >= 1");
  }
  for (int h : c.hidden) {
    if (h < 1) throw ConfigError("model.hidden", "layer sizes must be >= 1");
  }
  const auto& p = c.protocol;
  for (auto [field, t] : {std::pair{"protocol.update", &p.update},
                          std::pair{"protocol.distill", &p.distill}}) {
    if (!(t->learning_rate >= 0.0) || !std::isfinite(t->learning_rate)) {
      throw ConfigError(std::string(field) + ".learning_rate", "must be >= 0");
    }
    if (t->epochs < 1) {
      throw ConfigError(std::string(field) + ".epochs", "must be >= 1");
    }
    if (t->batch_size < 1) {
      throw ConfigError(std::string(field) + ".batch_size", "must be >= 1");
    }
  }
  if (!(p.era_temperature > 0.0)) {
    throw ConfigError("protocol.era_temperature", "must be > 0");
  }
  if (!(p.fd_gamma >= 0.0)) throw ConfigError("protocol.fd_gamma", ">= 0");
  if (is_dsfl(p.name)) {
    if (c.split.open == 0) {
      throw ConfigError("split.open", "DS-FL needs a non-empty open set");
    }
    if (p.open_per_round < 1 ||
        static_cast<std::size_t>(p.open_per_round) > c.split.open) {
      throw ConfigError("protocol.open_per_round",
                        "must lie in [1, split.open]");
    }
  }
  const auto& a = c.attack;
  switch (a.kind) {
    case AttackKind::kNone: break;
    case AttackKind::kNoisyLabels: {
      const int nl = d.source == "synthetic" ? d.synthetic.classes
                                             : d.num_classes;
      if (a.label_noise_classes < 0 || 2 * a.label_noise_classes > nl) {
        throw ConfigError("attack.noisy_labels.classes",
                          "must lie in [0, num_classes / 2]");
      }
      break;
    }
    case AttackKind::kNoisyOpen:
      if (!is_dsfl(p.name)) {
        throw ConfigError("attack.kind", "noisy_open needs a DS-FL protocol");
      }
      if (a.open_noise_source == "idx") {
        if (a.open_noise_images.empty()) {
          throw ConfigError("attack.noisy_open.images", "path required");
        }
      } else if (a.open_noise_source != "uniform") {
        throw ConfigError("attack.noisy_open.source",
                          "expected uniform or idx");
      }
      break;
    case AttackKind::kPoisoning:
      if (p.name == Protocol::kFd) {
        throw ConfigError("attack.kind", "poisoning supports fl and dsfl only");
      }
      if (d.source != "synthetic") {
        throw ConfigError("attack.kind",
                          "poisoning needs a synthetic dataset (backdoor set)");
      }
      if (d.synthetic.features < 2 * d.synthetic.classes) {
        throw ConfigError("dataset.synthetic.features",
                          "poisoning needs >= 2 * classes features");
      }
      if (c.partition.clients < 2) {
        throw ConfigError("partition.clients", "poisoning needs >= 2 clients");
      }
      if (a.poison_period < 1) {
        throw ConfigError("attack.poisoning.period", "must be >= 1");
      }
      if (a.malicious_client < 0 || a.malicious_client >= c.partition.clients) {
        throw ConfigError("attack.poisoning.malicious_client",
                          "must lie in [0, clients)");
      }
      if (a.wx_epochs < 1) {
        throw ConfigError("attack.poisoning.wx_epochs", "must be >= 1");
      }
      if (a.backdoor_per_class < 1 || a.backdoor_test_per_class < 1) {
        throw ConfigError("attack.poisoning.backdoor_per_class", "must be >= 1");
      }
      break;
  }
  for (double t : c.thresholds) {
    if (!(t > 0.0 && t < 1.0)) {
      throw ConfigError("compare.thresholds", "entries must lie in (0, 1)");
    }
  }
}

// Parses a config tree. Relative paths are resolved against base_dir.
inline RunConfig parse_config(const YAML::Node& root,
                              const std::filesystem::path& base_dir = {}) {
  using detail::Section;
  RunConfig c;
  Section top(root, "");
  c.name = top.get("name", c.name);
  c.seed = top.get("seed", c.seed);
  c.rounds = top.get("rounds", c.rounds);
  c.output_dir = detail::resolve_path(top.get("output_dir", c.output_dir),
                                      base_dir);
  {
    Section s = top.sub("dataset");
    auto& d = c.dataset;
    d.source = s.get("source", d.source);
    d.train_images = detail::resolve_path(s.get("train_images", d.train_images), base_dir);
    d.train_labels = detail::resolve_path(s.get("train_labels", d.train_labels), base_dir);
    d.test_images = detail::resolve_path(s.get("test_images", d.test_images), base_dir);
    d.test_labels = detail::resolve_path(s.get("test_labels", d.test_labels), base_dir);
    d.num_classes = s.get("num_classes", d.num_classes);
    Section y = s.sub("synthetic");
    auto& g = d.synthetic;
    g.classes = y.get("classes", g.classes);
    g.features = y.get("features", g.features);
    g.per_class = y.get("per_class", g.per_class);
    g.test_per_class = y.get("test_per_class", g.test_per_class);
    g.spread = y.get("spread", g.spread);
    y.finish();
    s.finish();
  }
  {
    Section s = top.sub("split");
    c.split.open = s.get("open", c.split.open);
    c.split.priv = s.get("private", c.split.priv);
    if (s.has("seed")) c.split.seed = s.get<std::uint64_t>("seed", 0);
    else s.get<std::uint64_t>("seed", 0);
    s.finish();
  }
  {
    Section s = top.sub("partition");
    const auto mode = s.get<std::string>("mode", "non_iid");
    if (mode == "iid") c.partition.mode = PartitionMode::kIid;
    else if (mode == "non_iid") c.partition.mode = PartitionMode::kNonIidShards;
    else throw ConfigError("partition.mode", "expected iid or non_iid, got '" + mode + "'");
    c.partition.clients = s.get("clients", c.partition.clients);
    c.partition.shards_per_client =
        s.get("shards_per_client", c.partition.shards_per_client);
    s.finish();
  }
  {
    Section s = top.sub("model");
    c.hidden = s.get("hidden", c.hidden);
    s.finish();
  }
  {
    Section s = top.sub("protocol");
    auto& p = c.protocol;
    const auto name = s.get<std::string>("name", std::string(to_string(p.name)));
    try {
      p.name = parse_protocol(name);
    } catch (const InvalidInput&) {
      throw ConfigError("protocol.name", "unknown protocol '" + name + "'");
    }
    p.update = detail::read_train(s.sub("update"));
    p.distill = detail::read_train(s.sub("distill"));
    p.era_temperature = s.get("era_temperature", p.era_temperature);
    p.fd_gamma = s.get("fd_gamma", p.fd_gamma);
    p.open_per_round = s.get("open_per_round", p.open_per_round);
    p.cost_model_params = s.get("cost_model_params", p.cost_model_params);
    s.finish();
  }
  {
    Section s = top.sub("attack");
    auto& a = c.attack;
    const auto kind = s.get<std::string>("kind", "none");
    if (kind == "none") a.kind = AttackKind::kNone;
    else if (kind == "noisy_labels") a.kind = AttackKind::kNoisyLabels;
    else if (kind == "noisy_open") a.kind = AttackKind::kNoisyOpen;
    else if (kind == "poisoning") a.kind = AttackKind::kPoisoning;
    else throw ConfigError("attack.kind", "unknown attack '" + kind + "'");
    Section nl = s.sub("noisy_labels");
    a.label_noise_classes = nl.get("classes", a.label_noise_classes);
    nl.finish();
    Section no = s.sub("noisy_open");
    a.open_noise_count = no.get("count", a.open_noise_count);
    a.open_noise_source = no.get("source", a.open_noise_source);
    a.open_noise_images = detail::resolve_path(no.get("images", a.open_noise_images), base_dir);
    no.finish();
    Section po = s.sub("poisoning");
    a.poison_period = po.get("period", a.poison_period);
    a.malicious_client = po.get("malicious_client", a.malicious_client);
    a.wx_epochs = po.get("wx_epochs", a.wx_epochs);
    a.backdoor_per_class = po.get("backdoor_per_class", a.backdoor_per_class);
    a.backdoor_test_per_class =
        po.get("backdoor_test_per_class", a.backdoor_test_per_class);
    po.finish();
    s.finish();
  }
  {
    Section s = top.sub("evaluation");
    c.eval_round0 = s.get("round0", c.eval_round0);
    c.wall_time = s.get("wall_time", c.wall_time);
    s.finish();
  }
  {
    Section s = top.sub("compare");
    c.thresholds = s.get("thresholds", c.thresholds);
    s.finish();
  }
  top.finish();
  validate(c);
  return c;
}

// Applies "a.b.c=value" to a config tree; the value is read as YAML, so
// lists like [64, 32] work.
inline void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(assignment, "override must look like section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw ConfigError(path, std::string("bad override value: ") + e.what());
  }
  std::vector<std::string> keys;
  std::stringstream ss(path);
  for (std::string k; std::getline(ss, k, '.');) {
    if (k.empty()) throw ConfigError(path, "empty key in override path");
    keys.push_back(k);
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  std::vector<YAML::Node> chain{root};
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    YAML::Node next = chain.back()[keys[i]];
    if (!next || next.IsNull()) {
      chain.back()[keys[i]] = YAML::Node(YAML::NodeType::Map);
      next = chain.back()[keys[i]];
    } else if (!next.IsMap()) {
      throw ConfigError(path, "'" + keys[i] + "' is not a section");
    }
    chain.push_back(next);
  }
  chain.back()[keys.back()] = value;
}

inline RunConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {}) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError(path.string(), "cannot open config file");
  } catch (const YAML::Exception& e) {
    throw ConfigError(path.string(), e.what());
  }
  for (const auto& o : overrides) apply_override(root, o);
  return parse_config(root, path.parent_path());
}

namespace detail {

// Shortest decimal text that parses back to exactly x.
inline std::string exact_double(double x) {
  char buf[40];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  std::string s(buf);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

inline std::string train_yaml(const TrainConfig& t) {
  return "{learning_rate: " + exact_double(t.learning_rate) +
         ", epochs: " + std::to_string(t.epochs) +
         ", batch_size: " + std::to_string(t.batch_size) + "}";
}

}  // namespace detail

// Canonical YAML for a config; parse_config(to_yaml(c)) == c.
inline std::string to_yaml(const RunConfig& c) {
  using detail::exact_double;
  using detail::quoted;
  std::ostringstream os;
  os << "name: " << quoted(c.name) << "\n"
     << "seed: " << c.seed << "\n"
     << "rounds: " << c.rounds << "\n"
     << "output_dir: " << quoted(c.output_dir) << "\n";
  const auto& d = c.dataset;
  os << "dataset:\n"
     << "  source: " << d.source << "\n"
     << "  train_images: " << quoted(d.train_images) << "\n"
     << "  train_labels: " << quoted(d.train_labels) << "\n"
     << "  test_images: " << quoted(d.test_images) << "\n"
     << "  test_labels: " << quoted(d.test_labels) << "\n"
     << "  num_classes: " << d.num_classes << "\n"
     << "  synthetic: {classes: " << d.synthetic.classes
     << ", features: " << d.synthetic.features
     << ", per_class: " << d.synthetic.per_class
     << ", test_per_class: " << d.synthetic.test_per_class
     << ", spread: " << exact_double(d.synthetic.spread) << "}\n";
  os << "split:\n"
     << "  open: " << c.split.open << "\n"
     << "  private: " << c.split.priv << "\n";
  if (c.split.seed) os << "  seed: " << *c.split.seed << "\n";
  os << "partition:\n"
     << "  mode: " << to_string(c.partition.mode) << "\n"
     << "  clients: " << c.partition.clients << "\n"
     << "  shards_per_client: " << c.partition.shards_per_client << "\n";
  os << "model:\n  hidden: [";
  for (std::size_t i = 0; i < c.hidden.size(); ++i) {
    os << (i ? ", " : "") << c.hidden[i];
  }
  os << "]\n";
  const auto& p = c.protocol;
  os << "protocol:\n"
     << "  name: " << to_string(p.name) << "\n"
     << "  update: " << detail::train_yaml(p.update) << "\n"
     << "  distill: " << detail::train_yaml(p.distill) << "\n"
     << "  era_temperature: " << exact_double(p.era_temperature) << "\n"
     << "  fd_gamma: " << exact_double(p.fd_gamma) << "\n"
     << "  open_per_round: " << p.open_per_round << "\n"
     << "  cost_model_params: " << p.cost_model_params << "\n";
  const auto& a = c.attack;
  os << "attack:\n"
     << "  kind: " << to_string(a.kind) << "\n"
     << "  noisy_labels: {classes: " << a.label_noise_classes << "}\n"
     << "  noisy_open: {count: " << a.open_noise_count
     << ", source: " << a.open_noise_source
     << ", images: " << quoted(a.open_noise_images) << "}\n"
     << "  poisoning: {period: " << a.poison_period
     << ", malicious_client: " << a.malicious_client
     << ", wx_epochs: " << a.wx_epochs
     << ", backdoor_per_class: " << a.backdoor_per_class
     << ", backdoor_test_per_class: " << a.backdoor_test_per_class << "}\n";
  os << "evaluation:\n"
     << "  round0: " << (c.eval_round0 ? "true" : "false") << "\n"
     << "  wall_time: " << (c.wall_time ? "true" : "false") << "\n";
  os << "compare:\n  thresholds: [";
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    os << (i ? ", " : "") << exact_double(c.thresholds[i]);
  }
  os << "]\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Experiment preparation

struct Experiment {
  RunConfig config;
  LabeledDataset test;
  UnlabeledDataset open;
  std::vector<ClientState> clients;
  ServerState server;
  RoundConfig round_cfg;
  std::optional<PoisonSpec> poison;
  std::optional<LabeledDataset> backdoor_test;
  std::uint64_t initial_cost = 0;
};

namespace detail {

inline std::pair<LabeledDataset, LabeledDataset> load_pools(
    const RunConfig& c) {
  const auto& d = c.dataset;
  if (d.source == "idx") {
    return {load_idx(d.train_images, d.train_labels, d.num_classes),
            load_idx(d.test_images, d.test_labels, d.num_classes)};
  }
  const auto& s = d.synthetic;
  const auto seed = c.data_seed();
  return {synth_generate(s.classes, s.features, s.per_class, s.spread,
                         rng::derive(seed, "synth-train")),
          synth_generate(s.classes, s.features, s.test_per_class, s.spread,
                         rng::derive(seed, "synth-test"))};
}

inline UnlabeledDataset open_noise(const RunConfig& c, int feature_dim) {
  const auto& a = c.attack;
  UnlabeledDataset noise;
  if (a.open_noise_source == "idx") {
    const auto raw = read_maybe_gzip(a.open_noise_images);
    expect_magic(raw, kIdxImageMagic, a.open_noise_images);
    const std::uint32_t count = read_be32(raw, 4, a.open_noise_images);
    const std::uint32_t rows = read_be32(raw, 8, a.open_noise_images);
    const std::uint32_t cols = read_be32(raw, 12, a.open_noise_images);
    const std::size_t dim = std::size_t{rows} * cols;
    if (raw.size() < 16 + dim * count) {
      throw IdxError(IdxError::Kind::kTruncated, a.open_noise_images,
                     raw.size(), "image payload shorter than header claims");
    }
    noise.samples.resize(static_cast<Eigen::Index>(dim), count);
    for (std::uint32_t i = 0; i < count; ++i) {
      for (std::size_t p = 0; p < dim; ++p) {
        noise.samples(static_cast<Eigen::Index>(p), i) =
            static_cast<float>(raw[16 + i * dim + p]) / 255.0f;
      }
    }
    return noise;
  }
  rng::Engine eng(rng::derive(c.data_seed(), "noise-data"));
  noise.samples.resize(feature_dim,
                       static_cast<Eigen::Index>(a.open_noise_count));
  for (Eigen::Index j = 0; j < noise.samples.cols(); ++j) {
    for (Eigen::Index i = 0; i < feature_dim; ++i) {
      noise.samples(i, j) = static_cast<float>(rng::uniform01(eng));
    }
  }
  return noise;
}

}  // namespace detail

// Loads data, splits, partitions, applies data attacks, builds models.
inline Experiment prepare(const RunConfig& c) {
  validate(c);
  Experiment ex;
  ex.config = c;
  auto [pool, test] = detail::load_pools(c);
  ex.test = std::move(test);
  if (c.split.open + c.split.priv > pool.size()) {
    throw ConfigError("split", "open + private = " +
                                   std::to_string(c.split.open + c.split.priv) +
                                   " exceeds the " + std::to_string(pool.size()) +
                                   " training samples");
  }
  const std::uint64_t data_seed = c.data_seed();
  auto split = split_open_private(pool, c.split.open, c.split.priv, data_seed);
  ex.open = std::move(split.open);

  const auto k = static_cast<std::size_t>(c.partition.clients);
  const PartitionPlan plan =
      c.partition.mode == PartitionMode::kIid
          ? partition_iid(split.priv, k, data_seed)
          : partition_noniid_shards(split.priv, k,
                                    c.partition.shards_per_client, data_seed);

  std::vector<int> sizes{pool.feature_dim()};
  sizes.insert(sizes.end(), c.hidden.begin(), c.hidden.end());
  sizes.push_back(pool.num_classes);
  const ModelSpec spec = ModelSpec::dense(sizes);

  ex.clients.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    auto& cl = ex.clients[i];
    cl.id = static_cast<int>(i);
    LabeledDataset part = split.priv.subset(plan.assignments[i]);
    if (c.attack.kind == AttackKind::kNoisyLabels) {
      part = inject_label_noise(
          part, NoisyLabelSpec::for_client(c.seed, c.attack.label_noise_classes,
                                           cl.id));
    }
    cl.private_data = std::make_shared<const LabeledDataset>(std::move(part));
    cl.model = initialize(spec, rng::derive(c.seed, "init", cl.id));
  }
  ex.server.global_model = initialize(spec, rng::derive(c.seed, "init", "server"));
  ex.server.rng_seed = c.seed;

  if (c.attack.kind == AttackKind::kNoisyOpen) {
    const auto noise = detail::open_noise(c, pool.feature_dim());
    ex.open = inject_open_noise(ex.open, noise, c.attack.open_noise_count,
                                data_seed);
  }

  if (c.attack.kind == AttackKind::kPoisoning) {
    const auto& s = c.dataset.synthetic;
    LabeledDataset backdoor = synth_generate(
        s.classes, s.features, c.attack.backdoor_per_class, s.spread,
        rng::derive(data_seed, "backdoor-train"), s.classes);
    ex.backdoor_test = synth_generate(
        s.classes, s.features, c.attack.backdoor_test_per_class, s.spread,
        rng::derive(data_seed, "backdoor-test"), s.classes);
    LabeledDataset merged;
    merged.num_classes = pool.num_classes;
    merged.samples.resize(pool.samples.rows(),
                          pool.samples.cols() + backdoor.samples.cols());
    merged.samples << pool.samples, backdoor.samples;
    merged.labels = pool.labels;
    merged.labels.insert(merged.labels.end(), backdoor.labels.begin(),
                         backdoor.labels.end());
    TrainConfig wx_cfg = c.protocol.update;
    wx_cfg.epochs = c.attack.wx_epochs;
    wx_cfg.seed = rng::derive(c.seed, "wx");
    PoisonSpec poison;
    poison.malicious_model =
        sgd_update(initialize(spec, rng::derive(c.seed, "wx-init")),
                   merged.samples, merged.one_hot(), wx_cfg);
    poison.attack_period = c.attack.poison_period;
    poison.malicious_client = c.attack.malicious_client;
    if (is_dsfl(c.protocol.name)) {
      ex.clients[static_cast<std::size_t>(poison.malicious_client)].model =
          poison.malicious_model;
    }
    ex.poison = std::move(poison);
  }

  auto& rc = ex.round_cfg;
  rc.protocol = c.protocol.name;
  rc.update_cfg = c.protocol.update;
  rc.distill_cfg = c.protocol.distill;
  if (c.protocol.name == Protocol::kDsflEra) {
    rc.era = EraConfig{c.protocol.era_temperature};
  }
  rc.fd_gamma = c.protocol.fd_gamma;
  rc.open_per_round = c.protocol.open_per_round;
  rc.cost_model_params = c.protocol.cost_model_params;
  rc.validate();

  ex.initial_cost = is_dsfl(c.protocol.name)
                        ? initial_open_cost(ex.open.size(),
                                            static_cast<std::uint64_t>(
                                                ex.open.feature_dim()))
                        : 0;
  return ex;
}

// Round hooks that carry out the configured poisoning schedule. FL: the
// malicious client uploads w_M on attack rounds. DS-FL: the malicious client
// holds w_x, never trains and so uploads w_x's logit every round.
inline RoundHooks attack_hooks(const Experiment& ex) {
  RoundHooks hooks;
  if (!ex.poison) return hooks;
  const auto poison = std::make_shared<const PoisonSpec>(*ex.poison);
  const std::size_t k = ex.clients.size();
  if (ex.round_cfg.protocol == Protocol::kFl) {
    hooks.fl_upload = [poison, k](const ClientState& c, const ServerState& s,
                                  int round) -> std::optional<ModelParams> {
      if (c.id != poison->malicious_client || !poison->attacks_in(round)) {
        return std::nullopt;
      }
      return poison_model_update(poison->malicious_model, s.global_model, k);
    };
  } else {
    hooks.frozen = [poison](const ClientState& c, int) {
      return c.id == poison->malicious_client;
    };
    hooks.dsfl_upload = [poison](const ClientState& c, const Matrix& subset,
                                 int) -> std::optional<LogitMatrix> {
      if (c.id != poison->malicious_client) return std::nullopt;
      return poison_logits(poison->malicious_model, subset);
    };
  }
  return hooks;
}

// ---------------------------------------------------------------------------
// Running

struct RunOptions {
  int threads = 1;
  std::ostream* log = &std::cerr;  // per-round summaries; null for silence
};

struct RunResult {
  std::vector<RoundMetrics> rounds;  // includes round 0 when evaluated
  AccuracyCurve curve;
  std::uint64_t initial_cost = 0;
  std::optional<double> top_accuracy;
  std::vector<std::pair<double, std::optional<std::uint64_t>>> comu;
  std::vector<double> backdoor_accuracy;  // per row; empty without poisoning
  std::string metrics_csv;
  std::string backdoor_csv;
};

inline constexpr const char* kMetricsHeader =
    "round,accuracy,global_logit_entropy,uplink_bytes,downlink_bytes,"
    "cum_uplink_bytes,cum_downlink_bytes,initial_cost_bytes,wall_ms\n";

namespace detail {

inline void write_atomic(const std::filesystem::path& path,
                         const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw Error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace detail

inline RunResult run(const RunConfig& config, const RunOptions& opts = {}) {
  Experiment ex = prepare(config);
  const RunConfig& c = ex.config;
  std::filesystem::path out_dir;
  if (!c.output_dir.empty()) {
    out_dir = c.output_dir;
    std::filesystem::create_directories(out_dir);
    detail::write_atomic(out_dir / "config.yaml", to_yaml(c));
  }

  RoundContext ctx;
  ctx.test = &ex.test;
  ctx.open = &ex.open;
  ctx.threads = std::max(1, opts.threads);
  ctx.hooks = attack_hooks(ex);

  RunResult result;
  result.initial_cost = ex.initial_cost;
  result.metrics_csv = kMetricsHeader;
  if (ex.poison) result.backdoor_csv = "round,backdoor_accuracy\n";
  std::uint64_t cum_up = 0;
  std::uint64_t cum_down = 0;

  const auto flush = [&] {
    if (out_dir.empty()) return;
    detail::write_atomic(out_dir / "metrics.csv", result.metrics_csv);
    if (ex.poison) {
      detail::write_atomic(out_dir / "backdoor.csv", result.backdoor_csv);
    }
  };
  const auto record = [&](const RoundMetrics& m, const ModelParams& global) {
    cum_up += m.uplink_bytes;
    cum_down += m.downlink_bytes;
    result.rounds.push_back(m);
    result.curve.points.push_back(
        {m.round, m.accuracy, cum_up, cum_down, ex.initial_cost});
    std::string row = std::to_string(m.round) + "," +
                      detail::format_fixed(m.accuracy, 6) + ",";
    if (m.global_logit_entropy) {
      row += detail::format_fixed(*m.global_logit_entropy, 9);
    }
    row += "," + std::to_string(m.uplink_bytes) + "," +
           std::to_string(m.downlink_bytes) + "," + std::to_string(cum_up) +
           "," + std::to_string(cum_down) + "," +
           std::to_string(ex.initial_cost) + ",";
    if (c.wall_time) row += detail::format_fixed(m.wall_ms, 3);
    result.metrics_csv += row + "\n";
    if (ex.poison) {
      const double b = evaluate(global, *ex.backdoor_test);
      result.backdoor_accuracy.push_back(b);
      result.backdoor_csv += std::to_string(m.round) + "," +
                             detail::format_fixed(b, 6) + "\n";
    }
    flush();
    if (opts.log) {
      *opts.log << "[" << c.label() << " seed=" << c.seed << "] round "
                << m.round << "/" << c.rounds
                << " acc=" << detail::format_fixed(m.accuracy, 4);
      if (m.global_logit_entropy) {
        *opts.log << " H=" << detail::format_fixed(*m.global_logit_entropy, 4);
      }
      if (ex.poison) {
        *opts.log << " backdoor="
                  << detail::format_fixed(result.backdoor_accuracy.back(), 4);
      }
      *opts.log << " up=" << m.uplink_bytes << " down=" << m.downlink_bytes
                << " (" << detail::format_fixed(m.wall_ms, 0) << " ms)\n";
    }
  };

  const bool fd = c.protocol.name == Protocol::kFd;
  const auto fd_mean_accuracy = [&] {
    double sum = 0.0;
    for (const auto& cl : ex.clients) sum += evaluate(cl.model, ex.test);
    return sum / static_cast<double>(ex.clients.size());
  };

  flush();
  if (c.eval_round0) {
    RoundMetrics m0;
    m0.round = 0;
    m0.accuracy = fd ? fd_mean_accuracy()
                     : evaluate(ex.server.global_model, ex.test);
    record(m0, ex.server.global_model);
  }
  if (fd && c.rounds > 0) {
    ex.clients = fd_initial_update(ex.server, ex.clients, ex.round_cfg, ctx);
  }
  for (int r = 1; r <= c.rounds; ++r) {
    RoundResult step;
    try {
      step = run_round(ex.server, ex.clients, ex.round_cfg, ctx);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw Error("round " + std::to_string(r) + ": " + e.what());
    }
    ex.server = std::move(step.server);
    ex.clients = std::move(step.clients);
    record(step.metrics, ex.server.global_model);
  }

  if (!result.curve.points.empty()) {
    result.top_accuracy = top_accuracy(result.curve);
  }
  for (double t : c.thresholds) {
    result.comu.emplace_back(t, comu_at(result.curve, t));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Comparison

struct CompareRow {
  std::string name;
  Protocol protocol = Protocol::kFl;
  std::size_t open_size = 0;
  std::uint64_t initial_cost = 0;
  std::vector<std::optional<std::uint64_t>> comu;
  std::optional<double> top_accuracy;
};

struct CompareTable {
  std::vector<double> thresholds;
  std::vector<CompareRow> rows;
};

inline CompareRow compare_row(const RunConfig& c, const RunResult& r,
                              const std::vector<double>& thresholds) {
  CompareRow row;
  row.name = c.label();
  row.protocol = c.protocol.name;
  row.open_size = is_dsfl(c.protocol.name) ? c.split.open : 0;
  row.initial_cost = r.initial_cost;
  for (double t : thresholds) row.comu.push_back(comu_at(r.curve, t));
  row.top_accuracy = r.top_accuracy;
  return row;
}

inline void check_comparable(const std::vector<RunConfig>& configs) {
  if (configs.empty()) throw ConfigError("compare", "no configs given");
  for (std::size_t i = 1; i < configs.size(); ++i) {
    const auto& a = configs[0];
    const auto& b = configs[i];
    if (!(a.dataset == b.dataset)) {
      throw ConfigError("dataset", "config " + std::to_string(i + 1) +
                                       " uses a different dataset");
    }
    if (a.split.open != b.split.open || a.split.priv != b.split.priv ||
        a.data_seed() != b.data_seed()) {
      throw ConfigError("split", "config " + std::to_string(i + 1) +
                                     " uses a different open/private split");
    }
  }
}

// Runs every config and tabulates ComU@I, ComU@x and Top-Accuracy. The
// thresholds of the first config apply to all rows.
inline CompareTable compare(const std::vector<RunConfig>& configs,
                            const RunOptions& opts = {}) {
  for (const auto& c : configs) validate(c);
  check_comparable(configs);
  CompareTable table;
  table.thresholds = configs.front().thresholds;
  for (const auto& c : configs) {
    table.rows.push_back(compare_row(c, run(c, opts), table.thresholds));
  }
  return table;
}

namespace detail {

inline std::string percent_label(double t) {
  std::string s = exact_double(t * 100.0);
  if (s.size() > 2 && s.substr(s.size() - 2) == ".0") s.resize(s.size() - 2);
  return s + "%";
}

inline std::vector<std::vector<std::string>> table_cells(const CompareTable& t) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"method", "protocol", "open_size",
                                  "comu_initial_bytes"};
  for (double th : t.thresholds) {
    header.push_back("comu@" + percent_label(th) + "_bytes");
  }
  header.push_back("top_accuracy");
  cells.push_back(header);
  for (const auto& r : t.rows) {
    std::vector<std::string> row{r.name, std::string(to_string(r.protocol)),
                                 std::to_string(r.open_size),
                                 std::to_string(r.initial_cost)};
    for (const auto& v : r.comu) row.push_back(v ? std::to_string(*v) : "-");
    row.push_back(r.top_accuracy ? format_fixed(*r.top_accuracy, 4) : "-");
    cells.push_back(row);
  }
  return cells;
}

}  // namespace detail

inline std::string to_csv(const CompareTable& t) {
  std::string out;
  for (const auto& row : detail::table_cells(t)) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out += (i ? "," : "") + row[i];
    }
    out += "\n";
  }
  return out;
}

inline std::string to_text(const CompareTable& t) {
  const auto cells = detail::table_cells(t);
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      width[i] = std::max(width[i], row[i].size());
    }
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      if (i) os << "  ";
      if (i == 0) os << std::left; else os << std::right;
      os << std::setw(static_cast<int>(width[i])) << cells[r][i];
    }
    os << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << "\n";
    }
  }
  return os.str();
}

}  // namespace dsfl

#endif  // DSFL_RUNNER_HPP_
