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

#ifndef DSFL_TENSOR_HPP_
#define DSFL_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "dsfl/errors.hpp"

namespace dsfl {

// Column-major float matrix, one sample per column (N_S x I, N_L x M).
using Matrix = Eigen::MatrixXf;
using Vector = Eigen::VectorXf;
using RowMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kSimplexTolerance = 1e-5;

// Returns an empty string if every column is a probability vector within
// `tol`, else a description of the first offending column.
inline std::string simplex_violation(const Matrix& m, double tol) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double v = m(i, j);
      if (!std::isfinite(v) || v < -tol || v > 1.0 + tol) {
        return "column " + std::to_string(j) + " has entry " +
               std::to_string(v) + " outside [0,1]";
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) {
      return "column " + std::to_string(j) + " sums to " + std::to_string(sum);
    }
  }
  return {};
}

// N_L x M matrix whose columns are class-probability vectors. This is the
// payload exchanged by output-sharing protocols.
class LogitMatrix {
 public:
  LogitMatrix() = default;

  // Validates the simplex invariant.
  explicit LogitMatrix(Matrix values, double tol = kSimplexTolerance)
      : values_(std::move(values)) {
    if (auto why = simplex_violation(values_, tol); !why.empty()) {
      throw InvalidInput("LogitMatrix: " + why);
    }
  }

  // For producers that guarantee the invariant by construction (softmax).
  static LogitMatrix trusted(Matrix values) {
    LogitMatrix out;
    out.values_ = std::move(values);
    return out;
  }

  const Matrix& values() const { return values_; }
  Eigen::Index classes() const { return values_.rows(); }
  Eigen::Index columns() const { return values_.cols(); }
  auto column(Eigen::Index j) const { return values_.col(j); }

  friend bool operator==(const LogitMatrix& a, const LogitMatrix& b) {
    return a.values_.rows() == b.values_.rows() &&
           a.values_.cols() == b.values_.cols() && a.values_ == b.values_;
  }

 private:
  Matrix values_;
};

// Lowest index wins ties.
template <class Derived>
Eigen::Index argmax(const Eigen::DenseBase<Derived>& column) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < column.size(); ++i) {
    if (column(i) > column(best)) best = i;
  }
  return best;
}

}  // namespace dsfl

#endif  // DSFL_TENSOR_HPP_
