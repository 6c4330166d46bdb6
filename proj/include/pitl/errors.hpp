// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PITL_ERRORS_HPP_
#define PITL_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace pitl {

/// Violated shape, range or type contract on a public operation.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Caller-supplied precondition does not hold (degenerate sizes, counts).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corpus or manifest integrity failure (duplicate ids, dangling references).
class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, long step, std::string last_good)
      : std::runtime_error(what), step_(step), last_good_(std::move(last_good)) {}
  long step() const { return step_; }
  const std::string& last_good_checkpoint() const { return last_good_; }

 private:
  long step_;
  std::string last_good_;
};

}  // namespace pitl

#endif  // PITL_ERRORS_HPP_
