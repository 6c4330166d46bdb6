// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force reference implementations used by the tests. Plain loops over
// std::vector in long double; nothing here touches Eigen or the tape.

#ifndef PITL_TESTS_ORACLES_HPP_
#define PITL_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <vector>

namespace oracle {

using Row = std::vector<double>;
using Rows = std::vector<Row>;

inline long double dot(const Row& a, const Row& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

/// -sum_i y_i log softmax(z)_i over the entries with keep[i].
inline long double soft_ce(const std::vector<long double>& z, const std::vector<long double>& y,
                           const std::vector<bool>& keep) {
  long double mx = -INFINITY;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (keep[i]) mx = std::max(mx, z[i]);
  long double denom = 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (keep[i]) denom += std::exp(z[i] - mx);
  const long double lse = mx + std::log(denom);
  long double loss = 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (keep[i] && y[i] != 0) loss -= y[i] * (z[i] - lse);
  return loss;
}

/// One direction of the queue + batch contrastive loss: mean over queries
/// that have at least one same-category candidate.
inline long double contrastive_direction(const Rows& queries, const std::vector<int>& query_cats, const Rows& queue,
                                         const std::vector<int>& queue_cats, const Rows& batch,
                                         const std::vector<int>& batch_cats, double tau, bool exclude_self,
                                         bool uniform_targets) {
  long double total = 0;
  int included = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<long double> z;
    std::vector<long double> y;
    std::vector<bool> keep;
    for (std::size_t m = 0; m < queue.size(); ++m) {
      z.push_back(dot(queries[q], queue[m]) / tau);
      y.push_back(queue_cats[m] == query_cats[q] ? 1 : 0);
      keep.push_back(true);
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const bool self = exclude_self && b == q;
      z.push_back(dot(queries[q], batch[b]) / tau);
      y.push_back(!self && batch_cats[b] == query_cats[q] ? 1 : 0);
      keep.push_back(!self);
    }
    long double positives = 0;
    for (auto v : y) positives += v;
    if (positives == 0) continue;
    if (uniform_targets)
      for (auto& v : y) v /= positives;
    total += soft_ce(z, y, keep);
    ++included;
  }
  return included == 0 ? 0 : total / included;
}

/// Standard InfoNCE with the diagonal as the single positive, both
/// directions averaged, candidates = queue followed by the batch.
inline long double info_nce(const Rows& images, const Rows& texts, const Rows& image_queue, const Rows& text_queue,
                            double tau) {
  auto direction = [&](const Rows& q, const Rows& queue, const Rows& batch) {
    long double total = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      long double denom = 0;
      for (const auto& c : queue) denom += std::exp(dot(q[i], c) / tau);
      for (const auto& c : batch) denom += std::exp(dot(q[i], c) / tau);
      total -= dot(q[i], batch[i]) / tau - std::log(denom);
    }
    return total / q.size();
  };
  return 0.5L * (direction(images, text_queue, texts) + direction(texts, image_queue, images));
}

/// Mean binary cross-entropy of probabilities against 0/1 labels.
inline long double bce(const std::vector<double>& p, const std::vector<int>& labels) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s -= labels[i] ? std::log((long double)p[i]) : std::log1p(-(long double)p[i]);
  return s / p.size();
}

/// Mean two-way softmax cross-entropy; column 1 scores "matched".
inline long double itm(const Rows& logits, const std::vector<int>& labels) {
  long double s = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const long double a = logits[i][0], b = logits[i][1];
    const long double mx = std::max(a, b);
    const long double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    s -= (labels[i] ? b : a) - lse;
  }
  return s / logits.size();
}

/// Mean vocabulary cross-entropy at the listed rows.
inline long double mlm(const Rows& logits, const std::vector<int>& positions, const std::vector<int>& targets) {
  if (positions.empty()) return 0;
  long double s = 0;
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const auto& row = logits[positions[k]];
    long double mx = -INFINITY;
    for (double v : row) mx = std::max<long double>(mx, v);
    long double denom = 0;
    for (double v : row) denom += std::exp(v - mx);
    s -= row[targets[k]] - mx - std::log(denom);
  }
  return s / positions.size();
}

/// Recall@k by counting, for every query, how many gallery items beat each
/// relevant item (higher score, or equal score and lower index).
inline double recall_at_k(const Rows& scores, const std::vector<std::set<int>>& relevant, int k) {
  int hits = 0;
  for (std::size_t q = 0; q < scores.size(); ++q) {
    bool hit = false;
    for (int r : relevant[q]) {
      int better = 0;
      for (std::size_t g = 0; g < scores[q].size(); ++g) {
        if (scores[q][g] > scores[q][r] || (scores[q][g] == scores[q][r] && static_cast<int>(g) < r)) ++better;
      }
      if (better < k) hit = true;
    }
    if (hit) ++hits;
  }
  return 100.0 * hits / scores.size();
}

}  // namespace oracle

#endif  // PITL_TESTS_ORACLES_HPP_
