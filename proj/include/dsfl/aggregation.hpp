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

#ifndef DSFL_AGGREGATION_HPP_
#define DSFL_AGGREGATION_HPP_

// Logit mathematics: entropy, temperature softmax, simple aggregation (SA),
// entropy reduction aggregation (ERA) and the per-label averaging used by
// federated distillation (FD).

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dsfl/data.hpp"
#include "dsfl/errors.hpp"
#include "dsfl/nn.hpp"
#include "dsfl/tensor.hpp"

namespace dsfl {

inline constexpr double kEntropySimplexTolerance = 1e-4;

// Natural-log entropy -sum t ln t with 0 ln 0 = 0.
template <class Derived>
double entropy(const Eigen::DenseBase<Derived>& column) {
  double sum = 0.0;
  double h = 0.0;
  for (Eigen::Index i = 0; i < column.size(); ++i) {
    const double t = static_cast<double>(column(i));
    if (!std::isfinite(t) || t < -kEntropySimplexTolerance ||
        t > 1.0 + kEntropySimplexTolerance) {
      throw InvalidInput("entropy: entry " + std::to_string(t) +
                         " outside [0,1]");
    }
    sum += t;
    if (t > 0.0) h -= t * std::log(t);
  }
  if (std::abs(sum - 1.0) > kEntropySimplexTolerance) {
    throw InvalidInput("entropy: column sums to " + std::to_string(sum));
  }
  return h;
}

inline double entropy(std::span<const double> column) {
  return entropy(Eigen::Map<const Eigen::VectorXd>(
      column.data(), static_cast<Eigen::Index>(column.size())));
}

// Mean column entropy; the per-round global-logit entropy metric.
inline double mean_entropy(const LogitMatrix& m) {
  if (m.columns() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index j = 0; j < m.columns(); ++j) total += entropy(m.column(j));
  return total / static_cast<double>(m.columns());
}

// exp(t / T) normalised, with max subtraction. Evaluated in double.
template <class Derived>
Eigen::VectorXd softmax_temp(const Eigen::DenseBase<Derived>& t,
                             double temperature) {
  if (!(temperature > 0.0)) {
    throw InvalidInput("softmax_temp: temperature must be > 0");
  }
  Eigen::VectorXd v = t.derived().template cast<double>();
  const double m = v.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v(i) = std::exp((v(i) - m) / temperature);
    sum += v(i);
  }
  return v / sum;
}

struct EraConfig {
  double temperature = 0.1;

  void validate() const {
    if (!(temperature > 0.0)) {
      throw InvalidInput("EraConfig: temperature must be > 0");
    }
  }

  friend bool operator==(const EraConfig&, const EraConfig&) = default;
};

namespace detail {
inline void check_locals(std::span<const LogitMatrix> locals,
                         const char* who) {
  if (locals.empty()) {
    throw InvalidInput(std::string(who) + ": no local logits");
  }
  for (const auto& m : locals) {
    if (m.classes() != locals[0].classes() ||
        m.columns() != locals[0].columns()) {
      throw InvalidInput(std::string(who) + ": local logit shape mismatch");
    }
  }
}

// Element-wise mean in double, summed in client order.
inline Eigen::MatrixXd mean_f64(std::span<const LogitMatrix> locals) {
  Eigen::MatrixXd acc =
      Eigen::MatrixXd::Zero(locals[0].classes(), locals[0].columns());
  for (const auto& m : locals) acc += m.values().cast<double>();
  return acc / static_cast<double>(locals.size());
}
}  // namespace detail

// SA: (1/K) sum_k T_k.
inline LogitMatrix aggregate_sa(std::span<const LogitMatrix> locals) {
  detail::check_locals(locals, "aggregate_sa");
  return LogitMatrix(detail::mean_f64(locals).cast<float>());
}

// ERA: column-wise softmax at temperature T of the SA mean.
inline LogitMatrix aggregate_era(std::span<const LogitMatrix> locals,
                                 const EraConfig& cfg) {
  detail::check_locals(locals, "aggregate_era");
  cfg.validate();
  const Eigen::MatrixXd mean = detail::mean_f64(locals);
  Matrix out(mean.rows(), mean.cols());
  for (Eigen::Index j = 0; j < mean.cols(); ++j) {
    out.col(j) = softmax_temp(mean.col(j), cfg.temperature).cast<float>();
  }
  return LogitMatrix(std::move(out));
}

// ---------------------------------------------------------------------------
// FD per-label logits

// N_L x N_L matrix; column n is the average prediction over class-n samples.
// `holders[n]` counts the clients that contributed column n (0 or 1 for a
// local table, |K_n| for the global one); a column with no holder is zero.
struct PerLabelLogits {
  Matrix values;
  std::vector<int> holders;

  int num_classes() const { return static_cast<int>(holders.size()); }
  bool present(int n) const { return holders[static_cast<std::size_t>(n)] > 0; }

  std::vector<bool> present_mask() const {
    std::vector<bool> mask(holders.size());
    for (std::size_t n = 0; n < holders.size(); ++n) mask[n] = holders[n] > 0;
    return mask;
  }
};

// Per client: mean of forward() over each held class.
inline PerLabelLogits fd_local_perlabel(const ModelParams& model,
                                        const LabeledDataset& data) {
  const int nl = model.spec().num_classes();
  if (data.num_classes != nl) {
    throw InvalidInput("fd_local_perlabel: dataset has " +
                       std::to_string(data.num_classes) +
                       " classes, model has " + std::to_string(nl));
  }
  PerLabelLogits out;
  out.values = Matrix::Zero(nl, nl);
  out.holders.assign(static_cast<std::size_t>(nl), 0);
  if (data.size() == 0) return out;
  const LogitMatrix pred = forward(model, data.samples);
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(nl, nl);
  std::vector<std::size_t> counts(static_cast<std::size_t>(nl), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int label = data.labels[i];
    sums.col(label) += pred.column(static_cast<Eigen::Index>(i)).cast<double>();
    ++counts[static_cast<std::size_t>(label)];
  }
  for (int n = 0; n < nl; ++n) {
    if (counts[static_cast<std::size_t>(n)] == 0) continue;
    out.values.col(n) =
        (sums.col(n) / static_cast<double>(counts[static_cast<std::size_t>(n)]))
            .cast<float>();
    out.holders[static_cast<std::size_t>(n)] = 1;
  }
  return out;
}

// Per class, mean over the clients holding it.
inline PerLabelLogits fd_global_perlabel(
    std::span<const PerLabelLogits> locals) {
  if (locals.empty()) {
    throw InvalidInput("fd_global_perlabel: no local tables");
  }
  const int nl = locals[0].num_classes();
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(nl, nl);
  PerLabelLogits out;
  out.holders.assign(static_cast<std::size_t>(nl), 0);
  for (const auto& local : locals) {
    if (local.num_classes() != nl) {
      throw InvalidInput("fd_global_perlabel: class count mismatch");
    }
    for (int n = 0; n < nl; ++n) {
      if (!local.present(n)) continue;
      sums.col(n) += local.values.col(n).cast<double>();
      ++out.holders[static_cast<std::size_t>(n)];
    }
  }
  out.values = Matrix::Zero(nl, nl);
  for (int n = 0; n < nl; ++n) {
    const int h = out.holders[static_cast<std::size_t>(n)];
    if (h > 0) out.values.col(n) = (sums.col(n) / h).cast<float>();
  }
  return out;
}

inline constexpr double kRenormalizeThreshold = 1e-6;

// Leave-one-out target (|K| t_g - t_k) / (|K| - 1) for class n. Throws
// TargetUndefined when fewer than two clients hold the class. Small negative
// entries from rounding are clipped and the column renormalised when its sum
// drifts by more than 1e-6.
inline Vector fd_distill_target(const PerLabelLogits& global,
                                const PerLabelLogits& own, int n) {
  if (n < 0 || n >= global.num_classes()) {
    throw InvalidInput("fd_distill_target: class out of range");
  }
  const int k = global.holders[static_cast<std::size_t>(n)];
  if (k <= 1) {
    throw TargetUndefined("fd_distill_target: class " + std::to_string(n) +
                          " has " + std::to_string(k) + " holder(s)");
  }
  if (!own.present(n)) {
    throw InvalidInput("fd_distill_target: own table lacks class " +
                       std::to_string(n));
  }
  Eigen::VectorXd t = (static_cast<double>(k) *
                           global.values.col(n).cast<double>() -
                       own.values.col(n).cast<double>()) /
                      static_cast<double>(k - 1);
  const double sum = t.sum();
  const bool negative = (t.array() < 0.0).any();
  if (negative || std::abs(sum - 1.0) > kRenormalizeThreshold) {
    t = t.cwiseMax(0.0);
    t /= t.sum();
  }
  return t.cast<float>();
}

}  // namespace dsfl

#endif  // DSFL_AGGREGATION_HPP_
