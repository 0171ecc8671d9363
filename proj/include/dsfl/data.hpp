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

#ifndef DSFL_DATA_HPP_
#define DSFL_DATA_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include "dsfl/errors.hpp"
#include "dsfl/nn.hpp"
#include "dsfl/rng.hpp"
#include "dsfl/tensor.hpp"

namespace dsfl {

class OpenPrivateSplit;

namespace detail {
inline void check_indices(std::span<const std::size_t> index, std::size_t n) {
  for (std::size_t i : index) {
    if (i >= n) {
      throw InvalidInput("subset: index " + std::to_string(i) +
                         " out of range for " + std::to_string(n) + " samples");
    }
  }
}
}  // namespace detail

// Samples (N_S x I) with one class label per column.
struct LabeledDataset {
  Matrix samples;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  int feature_dim() const { return static_cast<int>(samples.rows()); }

  void validate() const {
    if (static_cast<std::size_t>(samples.cols()) != labels.size()) {
      throw InvalidInput("LabeledDataset: " + std::to_string(samples.cols()) +
                         " samples but " + std::to_string(labels.size()) +
                         " labels");
    }
    for (int l : labels) {
      if (l < 0 || l >= num_classes) {
        throw InvalidInput("LabeledDataset: label " + std::to_string(l) +
                           " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }

  Matrix one_hot() const { return dsfl::one_hot(labels, num_classes); }

  LabeledDataset subset(std::span<const std::size_t> index) const {
    detail::check_indices(index, size());
    LabeledDataset out;
    out.num_classes = num_classes;
    detail::gather_columns(samples, index, out.samples);
    out.labels.reserve(index.size());
    for (std::size_t i : index) out.labels.push_back(labels[i]);
    return out;
  }

  friend bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
    return a.num_classes == b.num_classes && a.labels == b.labels &&
           a.samples.rows() == b.samples.rows() &&
           a.samples.cols() == b.samples.cols() && a.samples == b.samples;
  }
};

// Shared open data. Carries no labels.
struct UnlabeledDataset {
  Matrix samples;

  std::size_t size() const { return static_cast<std::size_t>(samples.cols()); }
  int feature_dim() const { return static_cast<int>(samples.rows()); }

  Matrix subset(std::span<const std::size_t> index) const {
    detail::check_indices(index, size());
    Matrix out;
    detail::gather_columns(samples, index, out);
    return out;
  }
};

enum class PartitionMode { kIid, kNonIidShards };

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;  // one list per client
  PartitionMode mode = PartitionMode::kIid;
  int shards_per_client = 0;  // non-IID only
  std::size_t shard_size = 0;  // non-IID only
  std::size_t dropped = 0;     // samples left off the shard grid

  std::size_t clients() const { return assignments.size(); }
};

struct RoundIndexSet {
  int round = 0;
  std::vector<std::size_t> indices;  // ascending
};

// ---------------------------------------------------------------------------
// IDX

namespace detail {

inline std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) {
    throw IdxError(IdxError::Kind::kIo, path, 0, "cannot open file");
  }
  unsigned char magic[2] = {0, 0};
  probe.read(reinterpret_cast<char*>(magic), 2);
  const bool gz = probe.gcount() == 2 && magic[0] == 0x1f && magic[1] == 0x8b;
  std::vector<unsigned char> bytes;
  if (!gz) {
    probe.clear();
    probe.seekg(0, std::ios::end);
    bytes.resize(static_cast<std::size_t>(probe.tellg()));
    probe.seekg(0);
    probe.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    return bytes;
  }
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) {
    throw IdxError(IdxError::Kind::kIo, path, 0, "cannot open gzip stream");
  }
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) {
    bytes.insert(bytes.end(), buf, buf + n);
  }
  const bool failed = n < 0;
  gzclose(f);
  if (failed) {
    throw IdxError(IdxError::Kind::kTruncated, path, bytes.size(),
                   "corrupt gzip stream");
  }
  return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b,
                               std::size_t offset, const std::string& path) {
  if (offset + 4 > b.size()) {
    throw IdxError(IdxError::Kind::kTruncated, path, offset,
                   "truncated header");
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

inline void expect_magic(const std::vector<unsigned char>& b,
                         std::uint32_t expected, const std::string& path) {
  const std::uint32_t magic = read_be32(b, 0, path);
  if (magic != expected) {
    char msg[96];
    std::snprintf(msg, sizeof(msg), "magic 0x%08x, expected 0x%08x", magic,
                  expected);
    throw IdxError(IdxError::Kind::kMagicMismatch, path, 0, msg);
  }
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads an IDX image/label pair (optionally gzip-compressed). Pixels are
// scaled by 1/255 and flattened row-major into N_S = rows * cols features.
inline LabeledDataset load_idx(const std::string& images_path,
                               const std::string& labels_path,
                               int num_classes = 10) {
  const auto img = detail::read_maybe_gzip(images_path);
  detail::expect_magic(img, kIdxImageMagic, images_path);
  const std::uint32_t count = detail::read_be32(img, 4, images_path);
  const std::uint32_t rows = detail::read_be32(img, 8, images_path);
  const std::uint32_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t dim = std::size_t{rows} * cols;
  const std::size_t need = 16 + std::size_t{count} * dim;
  if (img.size() < need) {
    throw IdxError(IdxError::Kind::kTruncated, images_path, img.size(),
                   "expected " + std::to_string(need) + " bytes for " +
                       std::to_string(count) + " images");
  }

  const auto lab = detail::read_maybe_gzip(labels_path);
  detail::expect_magic(lab, kIdxLabelMagic, labels_path);
  const std::uint32_t label_count = detail::read_be32(lab, 4, labels_path);
  if (label_count != count) {
    throw IdxError(IdxError::Kind::kCountMismatch, labels_path, 4,
                   std::to_string(label_count) + " labels for " +
                       std::to_string(count) + " images in " + images_path);
  }
  if (lab.size() < 8 + std::size_t{count}) {
    throw IdxError(IdxError::Kind::kTruncated, labels_path, lab.size(),
                   "expected " + std::to_string(8 + std::size_t{count}) +
                       " bytes");
  }

  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.samples.resize(static_cast<Eigen::Index>(dim), count);
  ds.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const unsigned char* px = img.data() + 16 + std::size_t{i} * dim;
    for (std::size_t p = 0; p < dim; ++p) {
      ds.samples(static_cast<Eigen::Index>(p), i) =
          static_cast<float>(px[p]) / 255.0f;
    }
    const int label = lab[8 + i];
    if (label >= num_classes) {
      throw IdxError(IdxError::Kind::kCountMismatch, labels_path, 8 + i,
                     "label " + std::to_string(label) + " >= " +
                         std::to_string(num_classes));
    }
    ds.labels[i] = label;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data

// Balanced isotropic Gaussian clusters. Class c has mean e_{first_feature+c}
// (a unit vector, so means are pairwise sqrt(2) apart) and per-coordinate
// standard deviation `spread`. Samples are emitted class by class.
inline LabeledDataset synth_generate(int n_classes, int n_features,
                                     int n_per_class, double spread,
                                     std::uint64_t seed,
                                     int first_feature = 0) {
  if (n_classes < 1 || n_features < 1 || n_per_class < 1) {
    throw InvalidInput("synth_generate: counts must be >= 1");
  }
  if (!(spread >= 0.0)) throw InvalidInput("synth_generate: spread < 0");
  if (first_feature < 0 || first_feature + n_classes > n_features) {
    throw InvalidInput("synth_generate: need n_features >= first_feature + "
                       "n_classes for one-hot means");
  }
  LabeledDataset ds;
  ds.num_classes = n_classes;
  const auto total = static_cast<Eigen::Index>(n_classes) * n_per_class;
  ds.samples.resize(n_features, total);
  ds.labels.resize(static_cast<std::size_t>(total));
  rng::Engine eng(rng::derive(seed, "synth"));
  Eigen::Index j = 0;
  for (int c = 0; c < n_classes; ++c) {
    for (int i = 0; i < n_per_class; ++i, ++j) {
      for (int f = 0; f < n_features; ++f) {
        const double mean = (f == first_feature + c) ? 1.0 : 0.0;
        ds.samples(f, j) = static_cast<float>(mean + spread * rng::normal(eng));
      }
      ds.labels[static_cast<std::size_t>(j)] = c;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Open/private split

// Result of split_open_private. The open labels are kept only for
// diagnostics and are reachable solely through harness_open_labels().
class OpenPrivateSplit {
 public:
  UnlabeledDataset open;
  LabeledDataset priv;
  std::vector<std::size_t> open_source_index;     // rows of the input dataset
  std::vector<std::size_t> private_source_index;

 private:
  std::vector<int> hidden_open_labels_;
  friend OpenPrivateSplit split_open_private(const LabeledDataset&,
                                             std::size_t, std::size_t,
                                             std::uint64_t);
  friend const std::vector<int>& harness_open_labels(const OpenPrivateSplit&);
};

// Test-harness accessor for the ground truth of the open portion.
inline const std::vector<int>& harness_open_labels(const OpenPrivateSplit& s) {
  return s.hidden_open_labels_;
}

// Disjoint uniformly random selections of open_size and private_size samples.
inline OpenPrivateSplit split_open_private(const LabeledDataset& ds,
                                           std::size_t open_size,
                                           std::size_t private_size,
                                           std::uint64_t seed) {
  if (open_size + private_size > ds.size()) {
    throw InvalidInput("split_open_private: I_o + I_p = " +
                       std::to_string(open_size + private_size) + " exceeds " +
                       std::to_string(ds.size()) + " samples");
  }
  rng::Engine eng(rng::derive(seed, "split"));
  const auto perm = rng::permutation(ds.size(), eng);
  OpenPrivateSplit out;
  out.open_source_index.assign(perm.begin(), perm.begin() + open_size);
  out.private_source_index.assign(perm.begin() + open_size,
                                  perm.begin() + open_size + private_size);
  detail::gather_columns(ds.samples, out.open_source_index, out.open.samples);
  for (std::size_t i : out.open_source_index) {
    out.hidden_open_labels_.push_back(ds.labels[i]);
  }
  out.priv = ds.subset(out.private_source_index);
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning

// Shuffled contiguous chunks; the first I mod K clients get one extra sample.
inline PartitionPlan partition_iid(const LabeledDataset& ds, std::size_t k,
                                   std::uint64_t seed) {
  if (k == 0) throw InvalidInput("partition_iid: K must be >= 1");
  if (k > ds.size()) {
    throw InvalidInput("partition_iid: K = " + std::to_string(k) +
                       " exceeds I^p = " + std::to_string(ds.size()));
  }
  rng::Engine eng(rng::derive(seed, "partition-iid"));
  const auto perm = rng::permutation(ds.size(), eng);
  PartitionPlan plan;
  plan.mode = PartitionMode::kIid;
  plan.assignments.resize(k);
  const std::size_t base = ds.size() / k;
  const std::size_t extra = ds.size() % k;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t n = base + (c < extra ? 1 : 0);
    plan.assignments[c].assign(perm.begin() + pos, perm.begin() + pos + n);
    pos += n;
  }
  return plan;
}

// Label order of the dataset: stable by label, ties by original index.
inline std::vector<std::size_t> label_sorted_order(const LabeledDataset& ds) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return ds.labels[a] < ds.labels[b];
                   });
  return order;
}

// Sorts by label, cuts shards_per_client * K equal contiguous shards and
// deals them to clients through a seeded permutation. Samples beyond the
// shard grid are dropped and counted in PartitionPlan::dropped.
inline PartitionPlan partition_noniid_shards(const LabeledDataset& ds,
                                             std::size_t k,
                                             int shards_per_client,
                                             std::uint64_t seed) {
  if (k == 0) throw InvalidInput("partition_noniid_shards: K must be >= 1");
  if (shards_per_client < 1) {
    throw InvalidInput("partition_noniid_shards: shards_per_client < 1");
  }
  const std::size_t shards = k * static_cast<std::size_t>(shards_per_client);
  const std::size_t shard_size = ds.size() / shards;
  if (shard_size == 0) {
    throw InvalidInput("partition_noniid_shards: shard size is 0 (" +
                       std::to_string(ds.size()) + " samples, " +
                       std::to_string(shards) + " shards)");
  }
  const auto order = label_sorted_order(ds);
  rng::Engine eng(rng::derive(seed, "partition-shards"));
  const auto deal = rng::permutation(shards, eng);

  PartitionPlan plan;
  plan.mode = PartitionMode::kNonIidShards;
  plan.shards_per_client = shards_per_client;
  plan.shard_size = shard_size;
  plan.dropped = ds.size() - shards * shard_size;
  plan.assignments.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    auto& list = plan.assignments[c];
    for (int s = 0; s < shards_per_client; ++s) {
      const std::size_t shard = deal[c * shards_per_client + s];
      const auto begin = order.begin() + shard * shard_size;
      list.insert(list.end(), begin, begin + shard_size);
    }
  }
  return plan;
}

// o_r: `size` distinct open indices, a pure function of (seed, round) so that
// every party draws the same set.
inline RoundIndexSet sample_round_indices(std::size_t open_size,
                                          std::size_t size, int round,
                                          std::uint64_t seed) {
  if (size > open_size) {
    throw InvalidInput("sample_round_indices: |o_r| = " + std::to_string(size) +
                       " exceeds I^o = " + std::to_string(open_size));
  }
  rng::Engine eng(rng::derive(seed, "open-round", round));
  std::vector<std::size_t> pool(open_size);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t j = i + rng::uniform_index(eng, open_size - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(size);
  std::sort(pool.begin(), pool.end());
  return {round, std::move(pool)};
}

}  // namespace dsfl

#endif  // DSFL_DATA_HPP_
