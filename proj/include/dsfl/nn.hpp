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

#ifndef DSFL_NN_HPP_
#define DSFL_NN_HPP_

// Dense ReLU network with a softmax output, trained by mini-batch SGD with
// hand-written backpropagation.
//
// Parameter layout (ModelParams::values): for each layer l = 0..L-1 in order,
// the out_l x in_l weight matrix in row-major order followed by the out_l
// biases. Inputs and outputs are column-major matrices with one sample per
// column.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsfl/errors.hpp"
#include "dsfl/rng.hpp"
#include "dsfl/tensor.hpp"

namespace dsfl {

enum class Activation { kRelu };

struct ModelSpec {
  // Input dimension first, class count last.
  std::vector<int> layer_sizes;
  Activation hidden_activation = Activation::kRelu;

  static ModelSpec dense(std::vector<int> sizes) {
    ModelSpec spec{std::move(sizes)};
    spec.validate();
    return spec;
  }

  void validate() const {
    if (layer_sizes.size() < 2) {
      throw InvalidInput("ModelSpec: need at least input and output sizes");
    }
    for (int s : layer_sizes) {
      if (s < 1) throw InvalidInput("ModelSpec: layer sizes must be >= 1");
    }
  }

  int input_dim() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  int fan_in(std::size_t layer) const { return layer_sizes[layer]; }
  int fan_out(std::size_t layer) const { return layer_sizes[layer + 1]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
      n += static_cast<std::size_t>(layer_sizes[l]) * layer_sizes[l + 1] +
           layer_sizes[l + 1];
    }
    return n;
  }

  // Offset of layer `layer`'s weight block; its biases follow the block.
  std::size_t weight_offset(std::size_t layer) const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layer; ++l) {
      n += static_cast<std::size_t>(fan_in(l)) * fan_out(l) + fan_out(l);
    }
    return n;
  }

  std::size_t bias_offset(std::size_t layer) const {
    return weight_offset(layer) +
           static_cast<std::size_t>(fan_in(layer)) * fan_out(layer);
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Parameter and gradient storage. The fixed 64-byte base keeps Eigen's
// vectorised kernels on the same code path for every copy of a model.
using ParamVector = std::vector<float, Eigen::aligned_allocator<float>>;

class ModelParams {
 public:
  ModelParams() = default;

  ModelParams(ModelSpec spec, std::vector<float> values)
      : spec_(std::move(spec)), values_(values.begin(), values.end()) {
    spec_.validate();
    if (values_.size() != spec_.parameter_count()) {
      throw InvalidInput("ModelParams: expected " +
                         std::to_string(spec_.parameter_count()) +
                         " values, got " + std::to_string(values_.size()));
    }
  }

  static ModelParams zeros(const ModelSpec& spec) {
    return ModelParams(spec, std::vector<float>(spec.parameter_count(), 0.0f));
  }

  const ModelSpec& spec() const { return spec_; }
  std::span<const float> values() const { return values_; }
  std::span<float> mutable_values() { return values_; }
  std::size_t size() const { return values_.size(); }

  Eigen::Map<const RowMatrix> weights(std::size_t layer) const {
    return {values_.data() + spec_.weight_offset(layer), spec_.fan_out(layer),
            spec_.fan_in(layer)};
  }
  Eigen::Map<const Vector> bias(std::size_t layer) const {
    return {values_.data() + spec_.bias_offset(layer), spec_.fan_out(layer)};
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  ModelSpec spec_;
  ParamVector values_;
};

// Glorot-uniform weights, zero biases.
inline ModelParams initialize(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams params = ModelParams::zeros(spec);
  rng::Engine eng(seed);
  auto values = params.mutable_values();
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(spec.fan_in(l) + spec.fan_out(l)));
    const std::size_t begin = spec.weight_offset(l);
    const std::size_t end = spec.bias_offset(l);
    for (std::size_t i = begin; i < end; ++i) {
      values[i] = static_cast<float>(rng::uniform(eng, -limit, limit));
    }
  }
  return params;
}

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 5;
  int batch_size = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw InvalidInput("TrainConfig: learning_rate must be finite and >= 0");
    }
    if (epochs < 1) throw InvalidInput("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) {
      throw InvalidInput("TrainConfig: batch_size must be >= 1");
    }
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline constexpr double kProbabilityFloor = 1e-12;

namespace detail {

inline void check_inputs(const ModelSpec& spec, const Matrix& inputs) {
  if (inputs.rows() != spec.input_dim()) {
    throw InvalidInput("input has " + std::to_string(inputs.rows()) +
                       " features, model expects " +
                       std::to_string(spec.input_dim()));
  }
}

// In-place column softmax; normalisation is accumulated in double.
inline void softmax_columns(Matrix& z) {
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    auto col = z.col(j);
    const float m = col.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      col(i) = std::exp(col(i) - m);
      sum += col(i);
    }
    const double inv = 1.0 / sum;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      col(i) = static_cast<float>(col(i) * inv);
    }
  }
}

// Scratch buffers reused across mini-batches.
struct Workspace {
  std::vector<Matrix> activations;  // activations[0] is the input batch
  Matrix delta;
  Matrix delta_prev;
};

// Forward pass keeping every layer's activation. The last entry holds the
// softmax output.
inline void forward_cached(const ModelParams& model, const Matrix& inputs,
                           Workspace& ws) {
  const ModelSpec& spec = model.spec();
  const std::size_t layers = spec.num_layers();
  ws.activations.resize(layers + 1);
  ws.activations[0] = inputs;
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix& out = ws.activations[l + 1];
    out.noalias() = model.weights(l) * ws.activations[l];
    out.colwise() += model.bias(l);
    if (l + 1 < layers) {
      out = out.cwiseMax(0.0f);
    } else {
      softmax_columns(out);
    }
  }
}

}  // namespace detail

// F(inputs | model): one probability column per input column.
inline LogitMatrix forward(const ModelParams& model, const Matrix& inputs) {
  detail::check_inputs(model.spec(), inputs);
  const std::size_t layers = model.spec().num_layers();
  Matrix act = inputs;
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix next = model.weights(l) * act;
    next.colwise() += model.bias(l);
    if (l + 1 < layers) {
      act = next.cwiseMax(0.0f);
    } else {
      detail::softmax_columns(next);
      act = std::move(next);
    }
  }
  return LogitMatrix::trusted(std::move(act));
}

// Total (not mean) soft-target cross-entropy over all columns, with
// predictions floored at kProbabilityFloor.
inline double cross_entropy(const LogitMatrix& predictions,
                            const LogitMatrix& targets) {
  if (predictions.classes() != targets.classes() ||
      predictions.columns() != targets.columns()) {
    throw InvalidInput("cross_entropy: shape mismatch");
  }
  double total = 0.0;
  const Matrix& p = predictions.values();
  const Matrix& t = targets.values();
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      if (t(i, j) == 0.0f) continue;
      const double prob =
          std::clamp(static_cast<double>(p(i, j)), kProbabilityFloor, 1.0);
      total -= static_cast<double>(t(i, j)) * std::log(prob);
    }
  }
  return total;
}

// Mean loss over the batch columns and its gradient with respect to every
// parameter (same layout as ModelParams). Target columns need not sum to one:
// a column with mass s contributes s * p - t at the output pre-activation,
// which is how weighted sums of cross-entropy terms are trained.
inline double loss_and_gradient(const ModelParams& model, const Matrix& inputs,
                                const Matrix& targets, ParamVector& grad,
                                detail::Workspace& ws) {
  const ModelSpec& spec = model.spec();
  detail::check_inputs(spec, inputs);
  if (targets.rows() != spec.num_classes() || targets.cols() != inputs.cols()) {
    throw InvalidInput("loss_and_gradient: targets not aligned with inputs");
  }
  const Eigen::Index batch = inputs.cols();
  grad.assign(spec.parameter_count(), 0.0f);
  if (batch == 0) return 0.0;

  detail::forward_cached(model, inputs, ws);
  const std::size_t layers = spec.num_layers();
  const Matrix& probs = ws.activations[layers];

  double loss = 0.0;
  ws.delta.resize(probs.rows(), batch);
  const float inv_batch = 1.0f / static_cast<float>(batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    double mass = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      const double t = targets(i, j);
      mass += t;
      if (t != 0.0) {
        loss -= t * std::log(std::clamp(static_cast<double>(probs(i, j)),
                                        kProbabilityFloor, 1.0));
      }
    }
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      ws.delta(i, j) = (static_cast<float>(mass) * probs(i, j) - targets(i, j)) *
                       inv_batch;
    }
  }

  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& input = ws.activations[l];
    Eigen::Map<RowMatrix> gw(grad.data() + spec.weight_offset(l),
                             spec.fan_out(l), spec.fan_in(l));
    Eigen::Map<Vector> gb(grad.data() + spec.bias_offset(l), spec.fan_out(l));
    gw.noalias() = ws.delta * input.transpose();
    gb = ws.delta.rowwise().sum();
    if (l > 0) {
      ws.delta_prev.noalias() = model.weights(l).transpose() * ws.delta;
      ws.delta_prev.array() *= (input.array() > 0.0f).cast<float>();
      std::swap(ws.delta, ws.delta_prev);
    }
  }
  return loss / static_cast<double>(batch);
}

inline double loss_and_gradient(const ModelParams& model, const Matrix& inputs,
                                const Matrix& targets,
                                ParamVector& grad) {
  detail::Workspace ws;
  return loss_and_gradient(model, inputs, targets, grad, ws);
}

namespace detail {
inline void gather_columns(const Matrix& src,
                           std::span<const std::size_t> index, Matrix& dst) {
  dst.resize(src.rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) {
    dst.col(static_cast<Eigen::Index>(j)) =
        src.col(static_cast<Eigen::Index>(index[j]));
  }
}
}  // namespace detail

// `epochs` passes of shuffled mini-batch SGD on the mean batch loss. Each
// epoch draws a fresh permutation from derive(cfg.seed, "epoch", e); the final
// batch of an epoch may be short.
inline ModelParams sgd_update(const ModelParams& model, const Matrix& inputs,
                              const Matrix& targets, const TrainConfig& cfg) {
  cfg.validate();
  detail::check_inputs(model.spec(), inputs);
  if (targets.rows() != model.spec().num_classes() ||
      targets.cols() != inputs.cols()) {
    throw InvalidInput("sgd_update: targets not column-aligned with inputs");
  }
  ModelParams w = model;
  const auto n = static_cast<std::size_t>(inputs.cols());
  if (cfg.learning_rate == 0.0 || n == 0) return w;

  detail::Workspace ws;
  ParamVector grad;
  Matrix xb, tb;
  const auto lr = static_cast<float>(cfg.learning_rate);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::size_t batch_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng::Engine eng(rng::derive(cfg.seed, "epoch", epoch));
    const std::vector<std::size_t> order = rng::permutation(n, eng);
    for (std::size_t start = 0; start < n; start += bs, ++batch_index) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(bs, n - start));
      detail::gather_columns(inputs, idx, xb);
      detail::gather_columns(targets, idx, tb);
      const double loss = loss_and_gradient(w, xb, tb, grad, ws);
      const bool finite =
          std::isfinite(loss) &&
          std::all_of(grad.begin(), grad.end(),
                      [](float g) { return std::isfinite(g); });
      if (!finite) throw TrainingDivergence(batch_index);
      auto values = w.mutable_values();
      for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grad[i];
      if (!w.all_finite()) throw TrainingDivergence(batch_index);
    }
  }
  return w;
}

inline ModelParams sgd_update(const ModelParams& model, const Matrix& inputs,
                              const LogitMatrix& targets,
                              const TrainConfig& cfg) {
  return sgd_update(model, inputs, targets.values(), cfg);
}

// Mean loss in double precision over a double-precision copy of the
// parameters. Used as the finite-difference side of gradient_check.
inline double loss_f64(const ModelSpec& spec, std::span<const double> params,
                       const Eigen::MatrixXd& inputs,
                       const Eigen::MatrixXd& targets) {
  using RowMatrixD =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::MatrixXd act = inputs;
  const std::size_t layers = spec.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::Map<const RowMatrixD> w(params.data() + spec.weight_offset(l),
                                   spec.fan_out(l), spec.fan_in(l));
    Eigen::Map<const Eigen::VectorXd> b(params.data() + spec.bias_offset(l),
                                        spec.fan_out(l));
    Eigen::MatrixXd z = w * act;
    z.colwise() += b;
    if (l + 1 < layers) {
      act = z.cwiseMax(0.0);
    } else {
      act = std::move(z);
    }
  }
  double loss = 0.0;
  for (Eigen::Index j = 0; j < act.cols(); ++j) {
    const double m = act.col(j).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < act.rows(); ++i) sum += std::exp(act(i, j) - m);
    for (Eigen::Index i = 0; i < act.rows(); ++i) {
      if (targets(i, j) == 0.0) continue;
      const double p = std::exp(act(i, j) - m) / sum;
      loss -= targets(i, j) * std::log(std::clamp(p, kProbabilityFloor, 1.0));
    }
  }
  return act.cols() == 0 ? 0.0 : loss / static_cast<double>(act.cols());
}

using GradientFn = std::function<void(const ModelParams&, const Matrix&,
                                      const Matrix&, ParamVector&)>;

struct GradientCheckOptions {
  std::size_t min_coordinates = 100;
  std::uint64_t seed = 0;
  // Analytic gradient under test; defaults to loss_and_gradient.
  GradientFn analytic;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  std::vector<std::size_t> coordinates;  // sorted
  std::vector<double> analytic;          // per checked coordinate
  std::vector<double> numeric;
};

// Compares the analytic gradient with central finite differences of loss_f64
// on a random subset of coordinates (all of them when the model is small).
// Relative error per coordinate is |a - f| / max(|a|, |f|, 1e-8).
inline GradientCheckResult gradient_check_detailed(
    const ModelParams& model, const Matrix& inputs, const Matrix& targets,
    double epsilon, const GradientCheckOptions& options = {}) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) {
    throw InvalidInput("gradient_check: epsilon must be in (0, 1e-2]");
  }
  const ModelSpec& spec = model.spec();
  const std::size_t count = spec.parameter_count();

  GradientCheckResult result;
  if (count <= options.min_coordinates) {
    result.coordinates.resize(count);
    std::iota(result.coordinates.begin(), result.coordinates.end(),
              std::size_t{0});
  } else {
    rng::Engine eng(rng::derive(options.seed, "gradient-check"));
    auto perm = rng::permutation(count, eng);
    perm.resize(options.min_coordinates);
    std::sort(perm.begin(), perm.end());
    result.coordinates = std::move(perm);
  }

  ParamVector grad;
  if (options.analytic) {
    options.analytic(model, inputs, targets, grad);
  } else {
    loss_and_gradient(model, inputs, targets, grad);
  }

  std::vector<double> params(model.values().begin(), model.values().end());
  const Eigen::MatrixXd x = inputs.cast<double>();
  const Eigen::MatrixXd t = targets.cast<double>();
  for (std::size_t c : result.coordinates) {
    const double saved = params[c];
    params[c] = saved + epsilon;
    const double up = loss_f64(spec, params, x, t);
    params[c] = saved - epsilon;
    const double down = loss_f64(spec, params, x, t);
    params[c] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = grad[c];
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    result.analytic.push_back(analytic);
    result.numeric.push_back(numeric);
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_coordinate = c;
    }
  }
  return result;
}

inline double gradient_check(const ModelParams& model, const Matrix& inputs,
                             const Matrix& targets, double epsilon,
                             const GradientCheckOptions& options = {}) {
  return gradient_check_detailed(model, inputs, targets, epsilon, options)
      .max_relative_error;
}

// Columns e_{label} for each label.
inline Matrix one_hot(std::span<const int> labels, int num_classes) {
  Matrix out = Matrix::Zero(num_classes, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t j = 0; j < labels.size(); ++j) {
    out(labels[j], static_cast<Eigen::Index>(j)) = 1.0f;
  }
  return out;
}

}  // namespace dsfl

#endif  // DSFL_NN_HPP_
