// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

// The four pre-training objectives (ITC, ITM, MLM, IMC), the embedding
// queues feeding the two contrastive ones, and the per-step randomness they
// consume (masked tokens, matching negatives).

#ifndef PITL_OBJECTIVES_HPP_
#define PITL_OBJECTIVES_HPP_

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pitl/autodiff.hpp"
#include "pitl/log.hpp"
#include "pitl/model.hpp"
#include "pitl/random.hpp"
#include "pitl/tokenizer.hpp"

namespace pitl {

/// How category-level positives become a cross-entropy target: a uniform
/// distribution over positives, or the plain binary indicator.
enum class TargetMode { Uniform, BinarySum };
/// Contrastive similarity on projected unit vectors or on the raw CLS rows.
enum class SimilarityMode { Projected, Raw };
enum class NegativeStrategy { Uniform, Hard };

std::string to_string(TargetMode mode);
std::string to_string(SimilarityMode mode);
std::string to_string(NegativeStrategy strategy);
TargetMode parse_target_mode(std::string_view text);
SimilarityMode parse_similarity_mode(std::string_view text);
NegativeStrategy parse_negative_strategy(std::string_view text);

/// Dot product of two (unit) vectors.
template <typename Scalar>
Scalar similarity(const RowVector<Scalar>& a, const RowVector<Scalar>& b) {
  return a.dot(b);
}

// ---------------------------------------------------------------------------
// EmbeddingQueue

/// Fixed-capacity FIFO of embedding rows tagged with category codes.
template <typename Scalar>
class EmbeddingQueue {
 public:
  EmbeddingQueue(Index capacity, Index dim, bool require_unit_norm = true)
      : capacity_(capacity), dim_(dim), require_unit_norm_(require_unit_norm), ring_(capacity, dim),
        categories_(static_cast<std::size_t>(capacity), -1) {
    if (capacity < 1 || dim < 1) throw ContractError("EmbeddingQueue: capacity and dim must be >= 1");
  }

  /// Appends rows oldest-first; entries beyond capacity are evicted FIFO.
  /// Throws ContractError when a row is not unit norm (+-1e-5) in unit-norm
  /// mode, or on a shape mismatch.
  void enqueue(const Matrix<Scalar>& rows, std::span<const int> categories) {
    if (rows.cols() != dim_ || static_cast<std::size_t>(rows.rows()) != categories.size()) {
      throw ContractError("enqueue: shape mismatch");
    }
    if (require_unit_norm_) {
      for (Index r = 0; r < rows.rows(); ++r) {
        const double n = static_cast<double>(rows.row(r).norm());
        if (std::abs(n - 1.0) > 1e-5) throw ContractError("enqueue: embedding norm " + std::to_string(n) + " != 1");
      }
    }
    for (Index r = 0; r < rows.rows(); ++r) {
      const Index slot = (head_ + size_) % capacity_;
      ring_.row(slot) = rows.row(r);
      categories_[static_cast<std::size_t>(slot)] = categories[static_cast<std::size_t>(r)];
      if (size_ < capacity_) {
        ++size_;
      } else {
        head_ = (head_ + 1) % capacity_;
      }
    }
  }

  Index size() const { return size_; }
  Index capacity() const { return capacity_; }
  Index dim() const { return dim_; }
  bool requires_unit_norm() const { return require_unit_norm_; }

  /// size() x dim rows, oldest first.
  Matrix<Scalar> embeddings() const {
    Matrix<Scalar> out(size_, dim_);
    for (Index i = 0; i < size_; ++i) out.row(i) = ring_.row((head_ + i) % capacity_);
    return out;
  }
  std::vector<int> categories() const {
    std::vector<int> out;
    for (Index i = 0; i < size_; ++i) out.push_back(categories_[static_cast<std::size_t>((head_ + i) % capacity_)]);
    return out;
  }

  void clear() {
    head_ = 0;
    size_ = 0;
  }

 private:
  Index capacity_;
  Index dim_;
  bool require_unit_norm_;
  Matrix<Scalar> ring_;
  std::vector<int> categories_;
  Index head_ = 0;
  Index size_ = 0;
};

// ---------------------------------------------------------------------------
// Contrastive objectives

template <typename Scalar>
struct ContrastiveProblem {
  Var<Scalar> logits;             // queries x (queue + batch), divided by tau
  Matrix<Scalar> targets;         // category-derived target rows
  Matrix<Scalar> candidate_mask;  // 0 for slots removed from the softmax
};

/// Scores every query against the queue entries followed by the in-batch
/// candidates at temperature exp(log_tau). With `exclude_self` the in-batch
/// candidate with the query's own index is removed from its softmax.
template <typename Scalar>
ContrastiveProblem<Scalar> contrastive_problem(const Var<Scalar>& queries, std::span<const int> query_categories,
                                               const Matrix<Scalar>& queue_embeddings,
                                               std::span<const int> queue_categories,
                                               const Var<Scalar>& batch_candidates,
                                               std::span<const int> batch_categories, const Var<Scalar>& log_tau,
                                               bool exclude_self, TargetMode mode) {
  auto& tape = queries.tape();
  const Index nq = queries.rows();
  const Index nqueue = queue_embeddings.rows();
  const Index nb = batch_candidates.rows();
  if (static_cast<std::size_t>(nq) != query_categories.size() ||
      static_cast<std::size_t>(nqueue) != queue_categories.size() ||
      static_cast<std::size_t>(nb) != batch_categories.size()) {
    throw ContractError("contrastive_problem: category count mismatch");
  }
  if (exclude_self && nq != nb) throw ContractError("contrastive_problem: self exclusion needs queries == batch");

  Var<Scalar> candidates = batch_candidates;
  if (nqueue > 0) {
    if (queue_embeddings.cols() != batch_candidates.cols()) throw ContractError("contrastive_problem: queue dim mismatch");
    std::vector<Var<Scalar>> parts{tape.constant(queue_embeddings), batch_candidates};
    candidates = concat_rows<Scalar>(parts);
  }
  const Index nc = nqueue + nb;
  auto sims = matmul_nt(queries, candidates);
  auto inv_tau = exp(Scalar(-1) * log_tau);

  ContrastiveProblem<Scalar> p;
  p.logits = scale_by(sims, inv_tau);
  p.targets = Matrix<Scalar>::Zero(nq, nc);
  p.candidate_mask = Matrix<Scalar>::Ones(nq, nc);
  for (Index q = 0; q < nq; ++q) {
    if (exclude_self) p.candidate_mask(q, nqueue + q) = 0;
    const int cat = query_categories[static_cast<std::size_t>(q)];
    Index positives = 0;
    for (Index c = 0; c < nc; ++c) {
      if (p.candidate_mask(q, c) == 0) continue;
      const int cc = c < nqueue ? queue_categories[static_cast<std::size_t>(c)]
                                : batch_categories[static_cast<std::size_t>(c - nqueue)];
      if (cc == cat) {
        p.targets(q, c) = 1;
        ++positives;
      }
    }
    if (mode == TargetMode::Uniform && positives > 0) p.targets.row(q) /= static_cast<Scalar>(positives);
  }
  return p;
}

template <typename Scalar>
struct ContrastiveLoss {
  Var<Scalar> loss;              // (forward + backward) / 2
  CrossEntropy<Scalar> forward;  // image->text (ITC) or image->image (IMC)
  CrossEntropy<Scalar> backward; // text->image (ITC) or text->text (IMC)

  bool all_excluded() const { return forward.included_rows == 0 && backward.included_rows == 0; }
};

namespace detail {
template <typename Scalar>
Var<Scalar> half_sum(const Var<Scalar>& a, const Var<Scalar>& b) {
  return Scalar(0.5) * (a + b);
}

template <typename Scalar>
void warn_if_excluded(const ContrastiveLoss<Scalar>& loss, const char* name) {
  if (loss.forward.included_rows == 0) log::warn(std::string(name) + ": no query has a positive (forward); term is 0");
  if (loss.backward.included_rows == 0) log::warn(std::string(name) + ": no query has a positive (backward); term is 0");
}
}  // namespace detail

/// Image-text contrastive loss over (queue + batch) candidates with
/// category-level positives.
template <typename Scalar>
ContrastiveLoss<Scalar> itc_loss(const Var<Scalar>& image_embeddings, const Var<Scalar>& text_embeddings,
                                 std::span<const int> categories, const EmbeddingQueue<Scalar>& image_queue,
                                 const EmbeddingQueue<Scalar>& text_queue, const Var<Scalar>& log_tau,
                                 TargetMode mode = TargetMode::Uniform) {
  const auto text_q = text_queue.embeddings();
  const auto text_qc = text_queue.categories();
  const auto image_q = image_queue.embeddings();
  const auto image_qc = image_queue.categories();
  auto i2t = contrastive_problem(image_embeddings, categories, text_q, text_qc, text_embeddings, categories, log_tau,
                                 false, mode);
  auto t2i = contrastive_problem(text_embeddings, categories, image_q, image_qc, image_embeddings, categories, log_tau,
                                 false, mode);
  ContrastiveLoss<Scalar> out;
  out.forward = soft_cross_entropy(i2t.logits, i2t.targets, i2t.candidate_mask);
  out.backward = soft_cross_entropy(t2i.logits, t2i.targets, t2i.candidate_mask);
  out.loss = detail::half_sum(out.forward.loss, out.backward.loss);
  detail::warn_if_excluded(out, "itc");
  return out;
}

/// Intra-modal contrastive loss: image->image and text->text, same-category
/// entries positive, each query's own in-batch slot excluded.
template <typename Scalar>
ContrastiveLoss<Scalar> imc_loss(const Var<Scalar>& image_embeddings, const Var<Scalar>& text_embeddings,
                                 std::span<const int> categories, const EmbeddingQueue<Scalar>& image_queue,
                                 const EmbeddingQueue<Scalar>& text_queue, const Var<Scalar>& log_tau,
                                 TargetMode mode = TargetMode::Uniform) {
  const auto text_q = text_queue.embeddings();
  const auto text_qc = text_queue.categories();
  const auto image_q = image_queue.embeddings();
  const auto image_qc = image_queue.categories();
  auto i2i = contrastive_problem(image_embeddings, categories, image_q, image_qc, image_embeddings, categories,
                                 log_tau, true, mode);
  auto t2t = contrastive_problem(text_embeddings, categories, text_q, text_qc, text_embeddings, categories, log_tau,
                                 true, mode);
  ContrastiveLoss<Scalar> out;
  out.forward = soft_cross_entropy(i2i.logits, i2i.targets, i2i.candidate_mask);
  out.backward = soft_cross_entropy(t2t.logits, t2t.targets, t2t.candidate_mask);
  out.loss = detail::half_sum(out.forward.loss, out.backward.loss);
  detail::warn_if_excluded(out, "imc");
  return out;
}

// ---------------------------------------------------------------------------
// Image-text matching

struct ItmPair {
  int image = 0;
  int text = 0;
  bool matched = false;
};

struct ItmPlan {
  std::vector<ItmPair> pairs;  // positives first, then negatives
  long skipped = 0;            // directions with no category-disjoint candidate
};

/// One positive (i, i) per batch entry plus, per entry, one wrong text and
/// one wrong image drawn from other categories. `similarities(i, j)` is the
/// image i / text j contrastive score used by the hard strategy.
template <typename Scalar>
ItmPlan sample_itm_negatives(std::span<const int> categories, NegativeStrategy strategy,
                             const Matrix<Scalar>& similarities, Rng& rng) {
  const auto n = static_cast<Index>(categories.size());
  if (strategy == NegativeStrategy::Hard && (similarities.rows() != n || similarities.cols() != n)) {
    throw ContractError("sample_itm_negatives: similarity matrix must be batch x batch");
  }
  ItmPlan plan;
  for (Index i = 0; i < n; ++i) plan.pairs.push_back({static_cast<int>(i), static_cast<int>(i), true});
  auto pick = [&](Index anchor, bool pick_text) -> std::optional<Index> {
    std::vector<Index> pool;
    for (Index j = 0; j < n; ++j)
      if (categories[static_cast<std::size_t>(j)] != categories[static_cast<std::size_t>(anchor)]) pool.push_back(j);
    if (pool.empty()) return std::nullopt;
    if (strategy == NegativeStrategy::Uniform) return pool[uniform_index(rng, pool.size())];
    Index best = pool[0];
    for (auto j : pool) {
      const Scalar s = pick_text ? similarities(anchor, j) : similarities(j, anchor);
      const Scalar sb = pick_text ? similarities(anchor, best) : similarities(best, anchor);
      if (s > sb) best = j;
    }
    return best;
  };
  for (Index i = 0; i < n; ++i) {
    if (auto j = pick(i, true)) {
      plan.pairs.push_back({static_cast<int>(i), static_cast<int>(*j), false});
    } else {
      ++plan.skipped;
    }
    if (auto k = pick(i, false)) {
      plan.pairs.push_back({static_cast<int>(*k), static_cast<int>(i), false});
    } else {
      ++plan.skipped;
    }
  }
  return plan;
}

/// Mean two-way cross-entropy of matched (1) / unmatched (0) labels against
/// logits whose column 1 scores "matched".
template <typename Scalar>
Var<Scalar> itm_loss_from_logits(const Var<Scalar>& logits, std::span<const int> labels) {
  if (logits.cols() != 2 || static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw ContractError("itm_loss: logits must be N x 2 with N labels");
  }
  Matrix<Scalar> targets = Matrix<Scalar>::Zero(logits.rows(), 2);
  for (Index r = 0; r < logits.rows(); ++r) targets(r, labels[static_cast<std::size_t>(r)] ? 1 : 0) = 1;
  return soft_cross_entropy(logits, targets).loss;
}

template <typename Scalar>
Var<Scalar> itm_loss(Model<Scalar>& model, Tape<Scalar>& tape, const Var<Scalar>& fused_cls_rows,
                     std::span<const int> labels) {
  return itm_loss_from_logits(model.itm_logits(tape, fused_cls_rows), labels);
}

// ---------------------------------------------------------------------------
// Masked language modeling

struct MaskedText {
  std::vector<int> input_ids;   // corrupted sequence fed to the text encoder
  std::vector<int> positions;   // selected positions
  std::vector<int> targets;     // original ids at those positions
};

/// Selects each maskable position (non-special id, attendable) with
/// probability `rate`; a selected token becomes [MASK] with probability 0.8,
/// a random non-special id with 0.1, and stays unchanged with 0.1.
MaskedText mask_tokens(const std::vector<int>& ids, double rate, int vocab_size, Rng& rng,
                       const std::vector<char>& key_valid = {});

/// Mean cross-entropy over the rows of `logits` listed in `positions`;
/// all other rows get exactly zero gradient. No positions -> constant 0.
template <typename Scalar>
Var<Scalar> mlm_loss_from_logits(const Var<Scalar>& logits, std::span<const int> positions,
                                 std::span<const int> targets) {
  if (positions.size() != targets.size()) throw ContractError("mlm_loss: positions/targets mismatch");
  Matrix<Scalar> y = Matrix<Scalar>::Zero(logits.rows(), logits.cols());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    if (positions[k] < 0 || positions[k] >= logits.rows() || targets[k] < 0 || targets[k] >= logits.cols()) {
      throw ContractError("mlm_loss: position or target out of range");
    }
    y(positions[k], targets[k]) = 1;
  }
  return soft_cross_entropy(logits, y).loss;
}

// ---------------------------------------------------------------------------
// Full pre-training step

template <typename Scalar>
struct StepInputs {
  std::vector<ImageTensor<Scalar>> images;
  std::vector<std::vector<int>> token_ids;  // each starts with [CLS]
  std::vector<int> categories;
};

struct LossOptions {
  TargetMode target = TargetMode::Uniform;
  SimilarityMode similarity = SimilarityMode::Projected;
  NegativeStrategy negatives = NegativeStrategy::Uniform;
  double mask_rate = 0.15;
};

/// Randomness consumed by one step. Unset members are drawn during the
/// forward pass and filled in.
struct StepPlan {
  std::optional<ItmPlan> itm;
  std::optional<std::vector<MaskedText>> masks;
};

template <typename Scalar>
struct LossTerms {
  Var<Scalar> itc, itm, mlm, imc, total;
  Var<Scalar> image_embeddings;  // rows fed to the image queue
  Var<Scalar> text_embeddings;
  ContrastiveLoss<Scalar> itc_detail;
  ContrastiveLoss<Scalar> imc_detail;
  long masked_tokens = 0;
};

/// Unweighted sum of the four components.
template <typename Scalar>
Var<Scalar> total_loss(const Var<Scalar>& itc, const Var<Scalar>& itm, const Var<Scalar>& mlm, const Var<Scalar>& imc) {
  return itc + itm + mlm + imc;
}

inline double total_loss(double itc, double itm, double mlm, double imc) { return itc + itm + mlm + imc; }

/// Forward pass of all four objectives on one batch. Draws missing plan
/// entries from `negative_rng` / `mask_rng`.
template <typename Scalar>
LossTerms<Scalar> pretraining_losses(Model<Scalar>& model, Tape<Scalar>& tape, const StepInputs<Scalar>& inputs,
                                     const EmbeddingQueue<Scalar>& image_queue,
                                     const EmbeddingQueue<Scalar>& text_queue, const LossOptions& options,
                                     StepPlan& plan, Rng* negative_rng = nullptr, Rng* mask_rng = nullptr) {
  const std::size_t n = inputs.images.size();
  if (n == 0 || inputs.token_ids.size() != n || inputs.categories.size() != n) {
    throw ContractError("pretraining_losses: inconsistent batch");
  }
  std::vector<EncodedImage<Scalar>> images;
  std::vector<EncodedText<Scalar>> texts;
  std::vector<Var<Scalar>> image_cls;
  std::vector<Var<Scalar>> text_cls;
  for (std::size_t i = 0; i < n; ++i) {
    images.push_back(model.encode_image(tape, inputs.images[i]));
    texts.push_back(model.encode_text(tape, inputs.token_ids[i]));
    image_cls.push_back(images.back().cls);
    text_cls.push_back(texts.back().cls);
  }
  auto image_rows = concat_rows<Scalar>(image_cls);
  auto text_rows = concat_rows<Scalar>(text_cls);

  LossTerms<Scalar> out;
  if (options.similarity == SimilarityMode::Projected) {
    out.image_embeddings = model.project_cls(tape, image_rows, ProjectionHead::Image);
    out.text_embeddings = model.project_cls(tape, text_rows, ProjectionHead::Text);
  } else {
    out.image_embeddings = image_rows;
    out.text_embeddings = text_rows;
  }
  auto log_tau = model.log_temperature(tape);
  out.itc_detail = itc_loss(out.image_embeddings, out.text_embeddings, inputs.categories, image_queue, text_queue,
                            log_tau, options.target);
  out.imc_detail = imc_loss(out.image_embeddings, out.text_embeddings, inputs.categories, image_queue, text_queue,
                            log_tau, options.target);
  out.itc = out.itc_detail.loss;
  out.imc = out.imc_detail.loss;

  // Matching: positives and category-disjoint negatives through the fusion encoder.
  if (!plan.itm) {
    if (!negative_rng) throw ContractError("pretraining_losses: no ITM plan and no negative RNG");
    Matrix<Scalar> sims = out.image_embeddings.value() * out.text_embeddings.value().transpose();
    plan.itm = sample_itm_negatives<Scalar>(inputs.categories, options.negatives, sims, *negative_rng);
    if (plan.itm->pairs.size() == n) log::info("itm: single-category batch, no negatives");
  }
  std::vector<Var<Scalar>> fused_cls;
  std::vector<int> labels;
  for (const auto& pair : plan.itm->pairs) {
    fused_cls.push_back(model.fuse(tape, images[static_cast<std::size_t>(pair.image)],
                                   texts[static_cast<std::size_t>(pair.text)]).cls);
    labels.push_back(pair.matched ? 1 : 0);
  }
  out.itm = itm_loss(model, tape, concat_rows<Scalar>(fused_cls), labels);

  // Masked language modeling conditioned on the paired image.
  if (!plan.masks) {
    if (!mask_rng) throw ContractError("pretraining_losses: no mask plan and no mask RNG");
    std::vector<MaskedText> masks;
    for (const auto& ids : inputs.token_ids)
      masks.push_back(mask_tokens(ids, options.mask_rate, model.config().vocab_size, *mask_rng));
    plan.masks = std::move(masks);
  }
  std::vector<Var<Scalar>> fused_tokens;
  std::vector<int> positions;
  std::vector<int> targets;
  int offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = (*plan.masks)[i];
    if (m.positions.empty()) continue;
    auto fused = model.fuse(tape, images[i], model.encode_text(tape, m.input_ids));
    fused_tokens.push_back(fused.sequence);
    for (std::size_t k = 0; k < m.positions.size(); ++k) {
      positions.push_back(offset + m.positions[k]);
      targets.push_back(m.targets[k]);
    }
    offset += static_cast<int>(fused.sequence.rows());
  }
  out.masked_tokens = static_cast<long>(positions.size());
  if (fused_tokens.empty()) {
    bool maskable = false;
    for (const auto& ids : inputs.token_ids)
      for (int id : ids) maskable = maskable || !Tokenizer::is_special(id);
    if (!maskable) log::warn("mlm: batch has no maskable tokens; term is 0");
    out.mlm = tape.constant(Matrix<Scalar>::Zero(1, 1));
  } else {
    out.mlm = mlm_loss_from_logits(model.mlm_logits(tape, concat_rows<Scalar>(fused_tokens)), positions, targets);
  }
  out.total = total_loss(out.itc, out.itm, out.mlm, out.imc);
  return out;
}

}  // namespace pitl

#endif  // PITL_OBJECTIVES_HPP_
