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

#ifndef DSFL_ERRORS_HPP_
#define DSFL_ERRORS_HPP_

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dsfl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch, non-simplex input, out-of-range argument.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class TrainingDivergence : public Error {
 public:
  explicit TrainingDivergence(std::size_t batch_index)
      : Error("training diverged: non-finite loss or gradient at batch " +
              std::to_string(batch_index)),
        batch_index_(batch_index) {}

  std::size_t batch_index() const { return batch_index_; }

 private:
  std::size_t batch_index_;
};

class IdxError : public Error {
 public:
  enum class Kind { kIo, kMagicMismatch, kTruncated, kCountMismatch };

  IdxError(Kind kind, std::string file, std::uint64_t offset,
           const std::string& what)
      : Error(file + " @" + std::to_string(offset) + ": " + what),
        kind_(kind),
        file_(std::move(file)),
        offset_(offset) {}

  Kind kind() const { return kind_; }
  const std::string& file() const { return file_; }
  std::uint64_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::string file_;
  std::uint64_t offset_;
};

// Leave-one-out distillation target requested for a class with < 2 holders.
class TargetUndefined : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace dsfl

#endif  // DSFL_ERRORS_HPP_
