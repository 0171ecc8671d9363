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

#ifndef DSFL_SELFTEST_HPP_
#define DSFL_SELFTEST_HPP_

// Quick in-process sanity suite behind `dsfl selftest`: gradient checks on
// random models plus aggregation, cost and partition invariants.

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dsfl/aggregation.hpp"
#include "dsfl/attacks.hpp"
#include "dsfl/comms.hpp"
#include "dsfl/data.hpp"
#include "dsfl/nn.hpp"
#include "dsfl/rng.hpp"

namespace dsfl {

namespace detail {

inline Matrix random_matrix(int rows, int cols, rng::Engine& eng) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) {
      m(i, j) = static_cast<float>(rng::normal(eng));
    }
  }
  return m;
}

inline LogitMatrix random_logits(int classes, int cols, rng::Engine& eng) {
  Matrix m(classes, cols);
  for (int j = 0; j < cols; ++j) {
    Eigen::VectorXd z(classes);
    for (int i = 0; i < classes; ++i) z(i) = 3.0 * rng::normal(eng);
    m.col(j) = softmax_temp(z, 1.0).cast<float>();
  }
  return LogitMatrix(std::move(m));
}

}  // namespace detail

// Returns the number of failed checks; writes one line per check to `out`.
inline int selftest(std::ostream& out, std::uint64_t seed = 7) {
  int failures = 0;
  const auto check = [&](const std::string& name, bool ok,
                         const std::string& detail = {}) {
    out << (ok ? "PASS " : "FAIL ") << name;
    if (!detail.empty()) out << "  (" << detail << ")";
    out << "\n";
    if (!ok) ++failures;
  };

  rng::Engine eng(rng::derive(seed, "selftest"));

  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int in = 3 + static_cast<int>(rng::uniform_index(eng, 6));
    const int hidden = 2 + static_cast<int>(rng::uniform_index(eng, 7));
    const int classes = 2 + static_cast<int>(rng::uniform_index(eng, 5));
    const int batch = 1 + static_cast<int>(rng::uniform_index(eng, 8));
    const ModelSpec spec = ModelSpec::dense({in, hidden, classes});
    const ModelParams model = initialize(spec, rng::derive(seed, "gc", i));
    const Matrix x = detail::random_matrix(in, batch, eng);
    std::vector<int> labels(static_cast<std::size_t>(batch));
    for (int& l : labels) l = static_cast<int>(rng::uniform_index(eng, classes));
    GradientCheckOptions opts;
    opts.seed = seed;
    worst = std::max(worst, gradient_check(model, x, one_hot(labels, classes),
                                           1e-4, opts));
  }
  check("gradient check on 20 random models", worst < 1e-3,
        "max relative error " + std::to_string(worst));

  {
    const ModelSpec spec = ModelSpec::dense({4, 5, 3});
    const ModelParams model = initialize(spec, seed);
    const Matrix x = detail::random_matrix(4, 6, eng);
    const Matrix t = one_hot(std::vector<int>{0, 1, 2, 0, 1, 2}, 3);
    GradientCheckOptions opts;
    opts.analytic = [](const ModelParams& m, const Matrix& xs, const Matrix& ts,
                       ParamVector& g) {
      loss_and_gradient(m, xs, ts, g);
      g[g.size() / 2] += 0.5f;
    };
    check("corrupted gradient is detected",
          gradient_check(model, x, t, 1e-4, opts) > 1e-3);
  }

  bool era_ok = true;
  bool sa_ok = true;
  for (int i = 0; i < 50; ++i) {
    const int classes = 2 + static_cast<int>(rng::uniform_index(eng, 9));
    const int cols = 1 + static_cast<int>(rng::uniform_index(eng, 6));
    std::vector<LogitMatrix> locals;
    for (int k = 0; k < 3; ++k) {
      locals.push_back(detail::random_logits(classes, cols, eng));
    }
    const LogitMatrix sa = aggregate_sa(locals);
    const LogitMatrix era = aggregate_era(locals, {});
    sa_ok = sa_ok && simplex_violation(sa.values(), kSimplexTolerance).empty();
    for (Eigen::Index j = 0; j < cols; ++j) {
      era_ok = era_ok && argmax(sa.column(j)) == argmax(era.column(j));
    }
  }
  check("SA output stays on the simplex", sa_ok);
  check("ERA keeps the argmax of the SA mean", era_ok);

  {
    const auto fd = round_cost(Protocol::kFd, 1, 10, 0, 100);
    const auto ds = round_cost(Protocol::kDsflEra, 1, 10, 1000, 100);
    const auto ds_big = round_cost(Protocol::kDsflEra, 1u << 30, 10, 1000, 100);
    check("FD round cost is 40400 bytes", fd.total() == 40400);
    check("DS-FL round cost ignores model size", ds.total() == ds_big.total());
  }

  {
    const LabeledDataset ds = synth_generate(10, 12, 40, 0.3, seed);
    const auto plan = partition_noniid_shards(ds, 10, 2, seed);
    std::vector<int> seen(ds.size(), 0);
    for (const auto& a : plan.assignments) {
      for (auto i : a) ++seen[i];
    }
    bool ok = true;
    for (int s : seen) ok = ok && s <= 1;
    check("non-IID shards are disjoint", ok && plan.dropped == 0);
  }

  {
    const ModelSpec spec = ModelSpec::dense({3, 4, 2});
    const ModelParams wx = initialize(spec, 1);
    const ModelParams wg = initialize(spec, 2);
    const ModelParams wm = poison_model_update(wx, wg, 10);
    double err = 0.0;
    for (std::size_t p = 0; p < wx.size(); ++p) {
      const double mean = (wm.values()[p] + 9.0 * wg.values()[p]) / 10.0;
      err = std::max(err, std::abs(mean - wx.values()[p]) /
                              std::max(1.0, std::abs(double{wx.values()[p]})));
    }
    check("single-shot poisoning recovers w_x", err <= 1e-5,
          "relative error " + std::to_string(err));
  }
  return failures;
}

}  // namespace dsfl

#endif  // DSFL_SELFTEST_HPP_
