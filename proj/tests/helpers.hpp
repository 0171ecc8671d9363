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

#ifndef DSFL_TESTS_HELPERS_HPP_
#define DSFL_TESTS_HELPERS_HPP_

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "dsfl/aggregation.hpp"
#include "dsfl/data.hpp"
#include "dsfl/nn.hpp"
#include "dsfl/rng.hpp"

namespace dsfl::testing {

using Big = boost::multiprecision::cpp_bin_float_50;
using BigColumn = std::vector<Big>;

inline Matrix random_matrix(int rows, int cols, rng::Engine& eng,
                            double scale = 1.0) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) {
      m(i, j) = static_cast<float>(scale * rng::normal(eng));
    }
  }
  return m;
}

// Random simplex columns; with `sharp` some columns are near one-hot.
inline LogitMatrix random_logits(int classes, int cols, rng::Engine& eng,
                                 double scale = 2.0) {
  Matrix m(classes, cols);
  for (int j = 0; j < cols; ++j) {
    Eigen::VectorXd z(classes);
    for (int i = 0; i < classes; ++i) z(i) = scale * rng::normal(eng);
    m.col(j) = softmax_temp(z, 1.0).cast<float>();
  }
  return LogitMatrix(std::move(m));
}

inline std::vector<int> random_labels(int n, int classes, rng::Engine& eng) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int& l : out) l = static_cast<int>(rng::uniform_index(eng, classes));
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("dsfl-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p,
                        const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

// ---------------------------------------------------------------------------
// Oracles in 50-digit binary floating point, written from the definitions
// without sharing code with the library.

inline BigColumn big_column(const Matrix& m, Eigen::Index j) {
  BigColumn out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.emplace_back(m(i, j));
  return out;
}

inline Big oracle_entropy(const BigColumn& p) {
  Big h = 0;
  for (const auto& v : p) {
    if (v > 0) h -= v * boost::multiprecision::log(v);
  }
  return h;
}

inline BigColumn oracle_softmax(const BigColumn& z, const Big& temperature) {
  BigColumn e;
  Big sum = 0;
  for (const auto& v : z) {
    e.push_back(boost::multiprecision::exp(v / temperature));
    sum += e.back();
  }
  for (auto& v : e) v /= sum;
  return e;
}

inline std::vector<BigColumn> oracle_mean(const std::vector<LogitMatrix>& locals) {
  const auto& first = locals.front().values();
  std::vector<BigColumn> out(static_cast<std::size_t>(first.cols()),
                             BigColumn(static_cast<std::size_t>(first.rows()), Big(0)));
  for (const auto& m : locals) {
    for (Eigen::Index j = 0; j < first.cols(); ++j) {
      for (Eigen::Index i = 0; i < first.rows(); ++i) {
        out[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] +=
            Big(m.values()(i, j));
      }
    }
  }
  for (auto& col : out) {
    for (auto& v : col) v /= static_cast<int>(locals.size());
  }
  return out;
}

// Per-class averages of given prediction columns; absent classes are empty.
inline std::vector<BigColumn> oracle_perlabel(const Matrix& predictions,
                                              const std::vector<int>& labels,
                                              int classes) {
  std::vector<BigColumn> sums(static_cast<std::size_t>(classes));
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (std::size_t s = 0; s < labels.size(); ++s) {
    auto& col = sums[static_cast<std::size_t>(labels[s])];
    if (col.empty()) col.assign(static_cast<std::size_t>(classes), Big(0));
    for (int i = 0; i < classes; ++i) {
      col[static_cast<std::size_t>(i)] +=
          Big(predictions(i, static_cast<Eigen::Index>(s)));
    }
    ++counts[static_cast<std::size_t>(labels[s])];
  }
  for (int n = 0; n < classes; ++n) {
    for (auto& v : sums[static_cast<std::size_t>(n)]) {
      v /= counts[static_cast<std::size_t>(n)];
    }
  }
  return sums;
}

inline double max_abs_diff(const BigColumn& a, const Eigen::Ref<const Vector>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Big d = a[i] - Big(b(static_cast<Eigen::Index>(i)));
    worst = std::max(worst, static_cast<double>(boost::multiprecision::abs(d)));
  }
  return worst;
}

}  // namespace dsfl::testing

#endif  // DSFL_TESTS_HELPERS_HPP_
