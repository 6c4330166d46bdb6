// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every operation applied to Var handles together with a
// closure that propagates the upstream gradient to the operation's inputs.
// Parameters enter the tape once per tape; after backward() their
// accumulated gradients are added into Parameter::grad.

#ifndef PITL_AUTODIFF_HPP_
#define PITL_AUTODIFF_HPP_

#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "pitl/errors.hpp"
#include "pitl/tensor.hpp"

namespace pitl {

template <typename Scalar>
class Tape;

template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  const Matrix<Scalar>& grad() const { return tape_->grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar item() const { return value()(0, 0); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, const Mat& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr); }

  /// A non-parameter input whose gradient is wanted (e.g. pixels).
  Var<Scalar> variable(Mat value) { return push(std::move(value), true, nullptr); }

  Var<Scalar> param(Parameter<Scalar>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var<Scalar>(this, it->second);
    auto v = push(p.value, true, nullptr);
    nodes_[v.id()].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> parents, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<Scalar>>(parents.begin(), parents.size()),
                  std::move(fn));
  }
  Var<Scalar> record(Mat value, std::span<const Var<Scalar>> parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || requires_grad(p);
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  bool requires_grad(const Var<Scalar>& v) const { return nodes_[v.id()].requires_grad; }
  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(const Var<Scalar>& v, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(root)/d(root) = 1 and propagates to every ancestor. Parameter
  /// gradients are added into Parameter::grad.
  void backward(const Var<Scalar>& root) {
    if (root.rows() != 1 || root.cols() != 1) throw ContractError("backward() needs a scalar root");
    if (!requires_grad(root)) return;
    accumulate(root, Mat::Ones(1, 1));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.backward) n.backward(*this, n.grad);
    }
    for (auto& n : nodes_) {
      if (n.param && n.has_grad) n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    Parameter<Scalar>* param = nullptr;
  };

  Var<Scalar> push(Mat value, bool requires_grad, BackwardFn fn) {
    auto& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, std::size_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Operations

namespace detail {
template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + ")");
  }
}
}  // namespace detail

template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& a) {
  return a.tape().constant(a.value());
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape<Scalar>& t, const auto& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape<Scalar>& t, const auto& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) {
  return a.tape().record(s * a.value(), {a},
                         [a, s](Tape<Scalar>& t, const auto& g) { t.accumulate(a, s * g); });
}

/// Adds a 1 x n row to every row of a.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ContractError("add_row: shape mismatch");
  Matrix<Scalar> v = a.value().rowwise() + row.value().row(0);
  return a.tape().record(std::move(v), {a, row}, [a, row](Tape<Scalar>& t, const auto& g) {
    t.accumulate(a, g);
    t.accumulate(row, g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows()) throw ContractError("matmul: inner dimension mismatch");
  return a.tape().record(a.value() * b.value(), {a, b}, [a, b](Tape<Scalar>& t, const auto& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.cols()) throw ContractError("matmul_nt: inner dimension mismatch");
  return a.tape().record(a.value() * b.value().transpose(), {a, b},
                         [a, b](Tape<Scalar>& t, const auto& g) {
                           if (t.requires_grad(a)) t.accumulate(a, g * b.value());
                           if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
                         });
}

template <typename Scalar>
Var<Scalar> hadamard(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "hadamard");
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](Tape<Scalar>& t, const auto& g) {
                           t.accumulate(a, g.cwiseProduct(b.value()));
                           t.accumulate(b, g.cwiseProduct(a.value()));
                         });
}

/// Multiplies every entry of a by the 1x1 variable s.
template <typename Scalar>
Var<Scalar> scale_by(const Var<Scalar>& a, const Var<Scalar>& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ContractError("scale_by: scale must be 1x1");
  return a.tape().record(a.value() * s.item(), {a, s}, [a, s](Tape<Scalar>& t, const auto& g) {
    t.accumulate(a, g * s.item());
    if (t.requires_grad(s)) t.accumulate(s, Matrix<Scalar>::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
  });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  Matrix<Scalar> v = a.value().array().exp().matrix();
  Matrix<Scalar> saved = v;
  return a.tape().record(std::move(v), {a}, [a, e = std::move(saved)](Tape<Scalar>& t, const auto& g) {
    t.accumulate(a, g.cwiseProduct(e));
  });
}

/// tanh-approximated GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  constexpr Scalar kC = Scalar(0.7978845608028654);  // sqrt(2/pi)
  constexpr Scalar kA = Scalar(0.044715);
  const auto& x = a.value().array();
  Matrix<Scalar> v = (Scalar(0.5) * x * (Scalar(1) + (kC * (x + kA * x.cube())).tanh())).matrix();
  return a.tape().record(std::move(v), {a}, [a, kC, kA](Tape<Scalar>& t, const auto& g) {
    const auto& x = a.value().array();
    const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> th = (kC * (x + kA * x.cube())).tanh();
    auto d = Scalar(0.5) * (Scalar(1) + th) +
             Scalar(0.5) * x * (Scalar(1) - th.square()) * kC * (Scalar(1) + Scalar(3) * kA * x.square());
    t.accumulate(a, (g.array() * d).matrix());
  });
}

/// Row-wise layer normalization with affine rows gamma, beta (1 x n).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-5)) {
  const Index n = x.cols();
  if (gamma.cols() != n || beta.cols() != n || gamma.rows() != 1 || beta.rows() != 1) {
    throw ContractError("layer_norm: affine shape mismatch");
  }
  const auto& xv = x.value();
  Vector<Scalar> mean = xv.rowwise().mean();
  Matrix<Scalar> centered = xv.colwise() - mean;
  Vector<Scalar> inv_std =
      ((centered.array().square().rowwise().sum() / Scalar(n)) + eps).rsqrt().matrix();
  Matrix<Scalar> xhat = centered.array().colwise() * inv_std.array();
  Matrix<Scalar> y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                     beta.value().row(0).array();
  return x.tape().record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n](Tape<Scalar>& t,
                                                                               const auto& g) {
        t.accumulate(beta, g.colwise().sum());
        t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
        if (!t.requires_grad(x)) return;
        Matrix<Scalar> dxhat = g.array().rowwise() * gamma.value().row(0).array();
        Vector<Scalar> m1 = dxhat.rowwise().mean();
        Vector<Scalar> m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
        Matrix<Scalar> dx = (dxhat.colwise() - m1) - (xhat.array().colwise() * m2.array()).matrix();
        dx = dx.array().colwise() * inv_std.array();
        t.accumulate(x, dx);
      });
}

/// Row-wise softmax where columns with key_valid[j] == 0 get exactly zero
/// weight and never influence the row maximum.
template <typename Scalar>
Var<Scalar> masked_softmax_rows(const Var<Scalar>& x, const std::vector<char>& key_valid) {
  const auto& xv = x.value();
  if (!key_valid.empty() && static_cast<Index>(key_valid.size()) != xv.cols()) {
    throw ContractError("masked_softmax_rows: mask width mismatch");
  }
  auto valid = [&](Index j) { return key_valid.empty() || key_valid[j] != 0; };
  Matrix<Scalar> p = Matrix<Scalar>::Zero(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < xv.cols(); ++j)
      if (valid(j)) mx = std::max(mx, xv(r, j));
    if (!std::isfinite(mx)) throw ContractError("masked_softmax_rows: row without valid keys");
    Scalar sum = 0;
    for (Index j = 0; j < xv.cols(); ++j) {
      if (!valid(j)) continue;
      p(r, j) = std::exp(xv(r, j) - mx);
      sum += p(r, j);
    }
    p.row(r) /= sum;
  }
  Matrix<Scalar> saved = p;
  return x.tape().record(std::move(p), {x}, [x, p = std::move(saved)](Tape<Scalar>& t, const auto& g) {
    Vector<Scalar> dot = g.cwiseProduct(p).rowwise().sum();
    t.accumulate(x, p.cwiseProduct(g.colwise() - dot));
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ContractError("slice_rows: out of range");
  Matrix<Scalar> v = a.value().middleRows(start, count);
  return a.tape().record(std::move(v), {a}, [a, start, count](Tape<Scalar>& t, const auto& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(a.rows(), a.cols());
    full.middleRows(start, count) = g;
    t.accumulate(a, full);
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ContractError("slice_cols: out of range");
  Matrix<Scalar> v = a.value().middleCols(start, count);
  return a.tape().record(std::move(v), {a}, [a, start, count](Tape<Scalar>& t, const auto& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    t.accumulate(a, full);
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
  Index rows = 0;
  const Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ContractError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<Scalar> v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var<Scalar>> kept(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(v), parts, [kept](Tape<Scalar>& t, const auto& g) {
    Index at = 0;
    for (const auto& p : kept) {
      t.accumulate(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
  Index cols = 0;
  const Index rows = parts[0].rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ContractError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<Scalar> v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var<Scalar>> kept(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(v), parts, [kept](Tape<Scalar>& t, const auto& g) {
    Index at = 0;
    for (const auto& p : kept) {
      t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

/// Embedding lookup: row i of the result is row ids[i] of table.
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& table, const std::vector<int>& ids) {
  Matrix<Scalar> v(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw ContractError("gather_rows: id out of range");
    v.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  return table.tape().record(std::move(v), {table}, [table, ids](Tape<Scalar>& t, const auto& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) full.row(ids[i]) += g.row(static_cast<Index>(i));
    t.accumulate(table, full);
  });
}

/// Rearranges an (size*size) x channels pixel matrix (row index y*size+x)
/// into non-overlapping patch rows of length patch*patch*channels, patches
/// in raster order.
template <typename Scalar>
Var<Scalar> patchify(const Var<Scalar>& pixels, Index size, Index patch) {
  const Index channels = pixels.cols();
  if (pixels.rows() != size * size || size % patch != 0) throw ContractError("patchify: bad geometry");
  const Index per_side = size / patch;
  const Index width = patch * patch * channels;
  // source row/col for each output entry
  std::vector<std::pair<Index, Index>> src(static_cast<std::size_t>(per_side * per_side * width));
  Matrix<Scalar> v(per_side * per_side, width);
  for (Index py = 0; py < per_side; ++py)
    for (Index px = 0; px < per_side; ++px)
      for (Index dy = 0; dy < patch; ++dy)
        for (Index dx = 0; dx < patch; ++dx)
          for (Index c = 0; c < channels; ++c) {
            const Index r = py * per_side + px;
            const Index k = (dy * patch + dx) * channels + c;
            const Index pr = (py * patch + dy) * size + (px * patch + dx);
            v(r, k) = pixels.value()(pr, c);
            src[static_cast<std::size_t>(r * width + k)] = {pr, c};
          }
  return pixels.tape().record(std::move(v), {pixels}, [pixels, src, width](Tape<Scalar>& t, const auto& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(pixels.rows(), pixels.cols());
    for (Index r = 0; r < g.rows(); ++r)
      for (Index k = 0; k < g.cols(); ++k) {
        const auto& [pr, c] = src[static_cast<std::size_t>(r * width + k)];
        full(pr, c) += g(r, k);
      }
    t.accumulate(pixels, full);
  });
}

/// Divides each row by max(||row||, eps).
template <typename Scalar>
Var<Scalar> l2_normalize_rows(const Var<Scalar>& a, Scalar eps = Scalar(1e-12)) {
  Vector<Scalar> norms = a.value().rowwise().norm();
  Vector<Scalar> denom = norms.cwiseMax(eps);
  Matrix<Scalar> y = a.value().array().colwise() / denom.array();
  Matrix<Scalar> saved = y;
  return a.tape().record(std::move(y), {a}, [a, y = std::move(saved), norms, denom, eps](Tape<Scalar>& t,
                                                                                         const auto& g) {
    Matrix<Scalar> dx(g.rows(), g.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      if (norms(r) > eps) {
        dx.row(r) = (g.row(r) - y.row(r) * y.row(r).dot(g.row(r))) / norms(r);
      } else {
        dx.row(r) = g.row(r) / eps;
      }
    }
    t.accumulate(a, dx);
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  return a.tape().record(Matrix<Scalar>::Constant(1, 1, a.value().sum()), {a},
                         [a](Tape<Scalar>& t, const auto& g) {
                           t.accumulate(a, Matrix<Scalar>::Constant(a.rows(), a.cols(), g(0, 0)));
                         });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  const Scalar n = static_cast<Scalar>(a.value().size());
  return a.tape().record(Matrix<Scalar>::Constant(1, 1, a.value().sum() / n), {a},
                         [a, n](Tape<Scalar>& t, const auto& g) {
                           t.accumulate(a, Matrix<Scalar>::Constant(a.rows(), a.cols(), g(0, 0) / n));
                         });
}

/// Result of soft_cross_entropy: the mean loss over included rows.
template <typename Scalar>
struct CrossEntropy {
  Var<Scalar> loss;
  Index included_rows = 0;
  Index excluded_rows = 0;
};

/// Mean over rows of H(targets_r, softmax(logits_r)) = -sum_j y_rj log p_rj.
///
/// Softmax runs over the columns where `candidate_mask` is nonzero (all
/// columns when the mask is empty). Rows whose targets sum to zero carry no
/// positive and are excluded from the mean; with no included row the loss is
/// the constant 0. Targets need not be normalized.
template <typename Scalar>
CrossEntropy<Scalar> soft_cross_entropy(const Var<Scalar>& logits, const Matrix<Scalar>& targets,
                                        const Matrix<Scalar>& candidate_mask = {}) {
  const auto& x = logits.value();
  if (targets.rows() != x.rows() || targets.cols() != x.cols()) {
    throw ContractError("soft_cross_entropy: targets shape mismatch");
  }
  const bool masked = candidate_mask.size() > 0;
  if (masked && (candidate_mask.rows() != x.rows() || candidate_mask.cols() != x.cols())) {
    throw ContractError("soft_cross_entropy: candidate mask shape mismatch");
  }
  Matrix<Scalar> probs = Matrix<Scalar>::Zero(x.rows(), x.cols());
  std::vector<char> include(static_cast<std::size_t>(x.rows()), 0);
  Scalar total = 0;
  Index included = 0;
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar ysum = targets.row(r).sum();
    if (!(ysum > Scalar(0))) continue;
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < x.cols(); ++j)
      if (!masked || candidate_mask(r, j) != 0) mx = std::max(mx, x(r, j));
    Scalar z = 0;
    for (Index j = 0; j < x.cols(); ++j)
      if (!masked || candidate_mask(r, j) != 0) z += std::exp(x(r, j) - mx);
    const Scalar log_z = mx + std::log(z);
    Scalar row_loss = 0;
    for (Index j = 0; j < x.cols(); ++j) {
      if (masked && candidate_mask(r, j) == 0) {
        if (targets(r, j) != 0) throw ContractError("soft_cross_entropy: target on masked candidate");
        continue;
      }
      probs(r, j) = std::exp(x(r, j) - log_z);
      if (targets(r, j) != 0) row_loss -= targets(r, j) * (x(r, j) - log_z);
    }
    total += row_loss;
    include[static_cast<std::size_t>(r)] = 1;
    ++included;
  }
  CrossEntropy<Scalar> out;
  out.included_rows = included;
  out.excluded_rows = x.rows() - included;
  auto& tape = logits.tape();
  if (included == 0) {
    out.loss = tape.constant(Matrix<Scalar>::Zero(1, 1));
    return out;
  }
  const Scalar count = static_cast<Scalar>(included);
  out.loss = tape.record(
      Matrix<Scalar>::Constant(1, 1, total / count), {logits},
      [logits, probs = std::move(probs), targets, include = std::move(include), count](Tape<Scalar>& t,
                                                                                       const auto& g) {
        Matrix<Scalar> dx = Matrix<Scalar>::Zero(probs.rows(), probs.cols());
        for (Index r = 0; r < probs.rows(); ++r) {
          if (!include[static_cast<std::size_t>(r)]) continue;
          const Scalar ysum = targets.row(r).sum();
          dx.row(r) = (ysum * probs.row(r) - targets.row(r)) * (g(0, 0) / count);
        }
        t.accumulate(logits, dx);
      });
  return out;
}

}  // namespace pitl

#endif  // PITL_AUTODIFF_HPP_
