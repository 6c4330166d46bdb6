// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

// Cross-modal retrieval: similarity ranking, optional matching-head rerank,
// R@K and AvgR for image-to-text and text-to-image.

#ifndef PITL_EVALKIT_HPP_
#define PITL_EVALKIT_HPP_

#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pitl/corpus.hpp"
#include "pitl/model.hpp"
#include "pitl/objectives.hpp"
#include "pitl/tensor.hpp"
#include "pitl/tokenizer.hpp"

namespace pitl::evalkit {

enum class Direction { I2T, T2I };
enum class RelevanceMode { Instance, Category };

std::string to_string(Direction direction);
std::string to_string(RelevanceMode mode);
RelevanceMode parse_relevance_mode(std::string_view text);

/// Per query, gallery indices from best to worst.
using Ranking = std::vector<std::vector<int>>;

/// Orders every gallery row by descending score; equal scores keep ascending
/// gallery index.
Ranking rank_by_scores(const Matrix<double>& scores);

/// Dot-product ranking of query rows against gallery rows. Throws
/// ContractError on a dimension mismatch or an empty gallery.
template <typename Scalar>
Ranking rank_candidates(const Matrix<Scalar>& queries, const Matrix<Scalar>& gallery) {
  if (gallery.rows() == 0) throw ContractError("rank_candidates: empty gallery");
  if (queries.cols() != gallery.cols()) throw ContractError("rank_candidates: dimension mismatch");
  return rank_by_scores((queries * gallery.transpose()).template cast<double>());
}

/// Reorders the first k entries of `ranked` by descending `score(candidate)`
/// (ties keep their contrastive order); the tail is untouched. k <= 1 is a
/// no-op.
std::vector<int> rerank_topk(const std::vector<int>& ranked, int k, const std::function<double(int)>& score);

struct RelevanceMap {
  RelevanceMode mode = RelevanceMode::Category;
  std::vector<std::set<int>> relevant;  // per query, gallery indices

  /// Throws ReportError when a query has no relevant item or an index falls
  /// outside [0, gallery_size).
  void validate(std::size_t gallery_size) const;
};

/// Query q is relevant to gallery g when their categories are equal.
RelevanceMap category_relevance(const std::vector<std::string>& query_categories,
                                const std::vector<std::string>& gallery_categories);

/// Relevance from explicit (query index, gallery index) pairs.
RelevanceMap instance_relevance(std::size_t num_queries, const std::vector<std::pair<int, int>>& pairs);

/// 100 x fraction of queries with a relevant item in the top k. Throws
/// ReportError on an empty query set and ContractError when k < 1.
double recall_at_k(const Ranking& ranking, const RelevanceMap& relevance, int k);

/// (r1 + r5 + r10) / 3.
double avg_recall(double r1, double r5, double r10);

struct RetrievalReport {
  Direction direction = Direction::I2T;
  RelevanceMode mode = RelevanceMode::Category;
  double r1 = 0, r5 = 0, r10 = 0, avgr = 0;
  std::size_t queries = 0;
  std::size_t gallery = 0;
  int rerank_k = 0;

  nlohmann::json to_json() const;
};

RetrievalReport make_report(Direction direction, const Ranking& ranking, const RelevanceMap& relevance,
                            std::size_t gallery_size, int rerank_k = 0);

struct EvaluationResult {
  RetrievalReport i2t;
  RetrievalReport t2i;
  // Mean of the two directions' AvgR.
  double overall_avgr = 0;
  std::string config_hash;

  nlohmann::json to_json() const;
  /// One line: R@1 R@5 R@10 AvgR per direction, then overall AvgR, each to
  /// one decimal.
  std::string table_row() const;
};

EvaluationResult combine(RetrievalReport i2t, RetrievalReport t2i, std::string config_hash = "");

/// Embedding-level evaluation: images and texts share one gallery each.
EvaluationResult evaluate_embeddings(const Matrix<double>& image_embeddings, const Matrix<double>& text_embeddings,
                                     const RelevanceMap& i2t, const RelevanceMap& t2i, std::string config_hash = "");

/// Images and texts of one split with their category ids and the ids used
/// by instance relevance.
struct RetrievalSet {
  std::vector<corpus::ImageRecord> images;
  std::vector<promptgen::DescriptionRecord> texts;
};

RetrievalSet retrieval_set(const corpus::Manifest& manifest, corpus::Split split);

struct ModelEvalOptions {
  RelevanceMode mode = RelevanceMode::Category;
  SimilarityMode similarity = SimilarityMode::Projected;
  int rerank_k = 0;
  // Required in instance mode: (image_id, description_id) caption pairs.
  std::vector<std::pair<std::string, std::string>> instance_pairs;
  std::string config_hash;
};

/// Contrastive embeddings of every image and text of the set, in set order.
struct SetEmbeddings {
  Matrix<double> images;
  Matrix<double> texts;
};

SetEmbeddings embed_set(Model<float>& model, const Tokenizer& tokenizer, const RetrievalSet& set,
                        SimilarityMode similarity);

/// Full evaluation of a model on a retrieval set. With rerank_k > 0 the top
/// k of each query are reordered by the matching head's matched
/// probability.
EvaluationResult evaluate_model(Model<float>& model, const Tokenizer& tokenizer, const RetrievalSet& set,
                                const ModelEvalOptions& options);

}  // namespace pitl::evalkit

#endif  // PITL_EVALKIT_HPP_
