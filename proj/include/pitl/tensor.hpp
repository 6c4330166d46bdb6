// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PITL_TENSOR_HPP_
#define PITL_TENSOR_HPP_

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <string_view>

#include "pitl/errors.hpp"

namespace pitl {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

/// A named trainable array with its accumulated gradient.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
};

/// Insertion-ordered collection of parameters. References returned by add()
/// stay valid for the store's lifetime.
template <typename Scalar>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other) { *this = other; }
  ParameterStore& operator=(const ParameterStore& other) {
    if (this == &other) return *this;
    params_.clear();
    by_name_.clear();
    for (const auto& p : other.params_) add(p.name, p.value);
    return *this;
  }
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter<Scalar>& add(std::string name, Matrix<Scalar> init) {
    if (by_name_.count(name)) throw ContractError("duplicate parameter name: " + name);
    auto& p = params_.emplace_back();
    p.name = std::move(name);
    p.grad = Matrix<Scalar>::Zero(init.rows(), init.cols());
    p.value = std::move(init);
    by_name_[p.name] = &p;
    return p;
  }

  Parameter<Scalar>& at(std::string_view name) {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) throw ContractError("unknown parameter: " + std::string(name));
    return *it->second;
  }
  const Parameter<Scalar>& at(std::string_view name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }
  bool contains(std::string_view name) const { return by_name_.count(std::string(name)) > 0; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::size_t size() const { return params_.size(); }
  Index num_scalars() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename Other>
  ParameterStore<Other> cast() const {
    ParameterStore<Other> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<Other>());
    return out;
  }

 private:
  std::deque<Parameter<Scalar>> params_;
  std::map<std::string, Parameter<Scalar>*, std::less<>> by_name_;
};

/// Truncated normal (resampled beyond two standard deviations).
template <typename Scalar, typename Rng>
Matrix<Scalar> truncated_normal(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<Scalar> out(rows, cols);
  for (Index i = 0; i < out.size(); ++i) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    out.data()[i] = static_cast<Scalar>(z * stddev);
  }
  return out;
}

}  // namespace pitl

#endif  // PITL_TENSOR_HPP_
