// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pitl/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>

#include "pitl/errors.hpp"

namespace pitl::evalkit {

using nlohmann::json;

std::string to_string(Direction direction) { return direction == Direction::I2T ? "i2t" : "t2i"; }
std::string to_string(RelevanceMode mode) { return mode == RelevanceMode::Instance ? "instance" : "category"; }

RelevanceMode parse_relevance_mode(std::string_view text) {
  if (text == "instance") return RelevanceMode::Instance;
  if (text == "category") return RelevanceMode::Category;
  throw ContractError("unknown relevance mode: " + std::string(text));
}

Ranking rank_by_scores(const Matrix<double>& scores) {
  Ranking out(static_cast<std::size_t>(scores.rows()));
  for (Index q = 0; q < scores.rows(); ++q) {
    auto& order = out[static_cast<std::size_t>(q)];
    order.resize(static_cast<std::size_t>(scores.cols()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores(q, a) > scores(q, b); });
  }
  return out;
}

std::vector<int> rerank_topk(const std::vector<int>& ranked, int k, const std::function<double(int)>& score) {
  std::vector<int> out = ranked;
  const auto top = static_cast<std::size_t>(std::clamp<long>(k, 0, static_cast<long>(out.size())));
  if (top <= 1) return out;
  std::vector<std::pair<double, int>> scored;
  for (std::size_t i = 0; i < top; ++i) scored.emplace_back(score(out[i]), out[i]);
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; i < top; ++i) out[i] = scored[i].second;
  return out;
}

void RelevanceMap::validate(std::size_t gallery_size) const {
  for (std::size_t q = 0; q < relevant.size(); ++q) {
    if (relevant[q].empty()) throw ReportError("query " + std::to_string(q) + " has no relevant item");
    for (int g : relevant[q]) {
      if (g < 0 || static_cast<std::size_t>(g) >= gallery_size) {
        throw ReportError("relevant index " + std::to_string(g) + " outside the gallery");
      }
    }
  }
}

RelevanceMap category_relevance(const std::vector<std::string>& query_categories,
                                const std::vector<std::string>& gallery_categories) {
  std::map<std::string, std::set<int>> by_category;
  for (std::size_t g = 0; g < gallery_categories.size(); ++g)
    by_category[gallery_categories[g]].insert(static_cast<int>(g));
  RelevanceMap map;
  map.mode = RelevanceMode::Category;
  for (const auto& c : query_categories) {
    auto it = by_category.find(c);
    map.relevant.push_back(it == by_category.end() ? std::set<int>{} : it->second);
  }
  return map;
}

RelevanceMap instance_relevance(std::size_t num_queries, const std::vector<std::pair<int, int>>& pairs) {
  RelevanceMap map;
  map.mode = RelevanceMode::Instance;
  map.relevant.resize(num_queries);
  for (const auto& [q, g] : pairs) {
    if (q < 0 || static_cast<std::size_t>(q) >= num_queries) throw ReportError("instance pair query out of range");
    map.relevant[static_cast<std::size_t>(q)].insert(g);
  }
  return map;
}

double recall_at_k(const Ranking& ranking, const RelevanceMap& relevance, int k) {
  if (k < 1) throw ContractError("recall_at_k: k must be >= 1");
  if (ranking.empty()) throw ReportError("recall_at_k: no queries");
  if (relevance.relevant.size() != ranking.size()) throw ReportError("recall_at_k: relevance/query count mismatch");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < ranking.size(); ++q) {
    const auto& order = ranking[q];
    const auto top = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    for (std::size_t i = 0; i < top; ++i) {
      if (relevance.relevant[q].count(order[i])) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranking.size());
}

double avg_recall(double r1, double r5, double r10) { return (r1 + r5 + r10) / 3.0; }

json RetrievalReport::to_json() const {
  return json{{"direction", to_string(direction)},
              {"mode", to_string(mode)},
              {"k", {1, 5, 10}},
              {"r1", r1},
              {"r5", r5},
              {"r10", r10},
              {"avgr", avgr},
              {"queries", queries},
              {"gallery", gallery},
              {"rerank_k", rerank_k}};
}

RetrievalReport make_report(Direction direction, const Ranking& ranking, const RelevanceMap& relevance,
                            std::size_t gallery_size, int rerank_k) {
  relevance.validate(gallery_size);
  RetrievalReport r;
  r.direction = direction;
  r.mode = relevance.mode;
  r.r1 = recall_at_k(ranking, relevance, 1);
  r.r5 = recall_at_k(ranking, relevance, 5);
  r.r10 = recall_at_k(ranking, relevance, 10);
  r.avgr = avg_recall(r.r1, r.r5, r.r10);
  r.queries = ranking.size();
  r.gallery = gallery_size;
  r.rerank_k = rerank_k;
  return r;
}

json EvaluationResult::to_json() const {
  return json{{"i2t", i2t.to_json()}, {"t2i", t2i.to_json()}, {"overall_avgr", overall_avgr},
              {"config_hash", config_hash}};
}

std::string EvaluationResult::table_row() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "I2T %.1f %.1f %.1f %.1f | T2I %.1f %.1f %.1f %.1f | Overall %.1f", i2t.r1, i2t.r5,
                i2t.r10, i2t.avgr, t2i.r1, t2i.r5, t2i.r10, t2i.avgr, overall_avgr);
  return buf;
}

EvaluationResult combine(RetrievalReport i2t, RetrievalReport t2i, std::string config_hash) {
  EvaluationResult out;
  out.overall_avgr = (i2t.avgr + t2i.avgr) / 2.0;
  out.i2t = std::move(i2t);
  out.t2i = std::move(t2i);
  out.config_hash = std::move(config_hash);
  return out;
}

EvaluationResult evaluate_embeddings(const Matrix<double>& image_embeddings, const Matrix<double>& text_embeddings,
                                     const RelevanceMap& i2t, const RelevanceMap& t2i, std::string config_hash) {
  auto i2t_rank = rank_candidates(image_embeddings, text_embeddings);
  auto t2i_rank = rank_candidates(text_embeddings, image_embeddings);
  return combine(make_report(Direction::I2T, i2t_rank, i2t, static_cast<std::size_t>(text_embeddings.rows())),
                 make_report(Direction::T2I, t2i_rank, t2i, static_cast<std::size_t>(image_embeddings.rows())),
                 std::move(config_hash));
}

RetrievalSet retrieval_set(const corpus::Manifest& manifest, corpus::Split split) {
  RetrievalSet set;
  for (const auto& img : manifest.images)
    if (img.split == split) set.images.push_back(img);
  for (std::size_t i = 0; i < manifest.descriptions.size(); ++i)
    if (manifest.description_splits.at(i) == split) set.texts.push_back(manifest.descriptions[i]);
  if (set.images.empty() || set.texts.empty()) {
    throw ReportError("split " + corpus::to_string(split) + " has no images or no texts");
  }
  return set;
}

SetEmbeddings embed_set(Model<float>& model, const Tokenizer& tokenizer, const RetrievalSet& set,
                        SimilarityMode similarity) {
  const auto& cfg = model.config();
  auto embed = [&](Tape<float>& tape, const Var<float>& cls, ProjectionHead head) {
    return similarity == SimilarityMode::Projected ? model.project_cls(tape, cls, head) : cls;
  };
  SetEmbeddings out;
  const Index dim = similarity == SimilarityMode::Projected ? cfg.projection_dim : cfg.hidden_dim;
  out.images.resize(static_cast<Index>(set.images.size()), dim);
  out.texts.resize(static_cast<Index>(set.texts.size()), dim);
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    Tape<float> tape;
    auto img = ImageTensor<float>::from(corpus::load_image(set.images[i], cfg.image_size, cfg.channels));
    auto e = embed(tape, model.encode_image(tape, img).cls, ProjectionHead::Image);
    out.images.row(static_cast<Index>(i)) = e.value().row(0).cast<double>();
  }
  for (std::size_t t = 0; t < set.texts.size(); ++t) {
    Tape<float> tape;
    auto e = embed(tape, model.encode_text(tape, tokenizer.encode(set.texts[t].text, cfg.max_text_len)).cls,
                   ProjectionHead::Text);
    out.texts.row(static_cast<Index>(t)) = e.value().row(0).cast<double>();
  }
  return out;
}

EvaluationResult evaluate_model(Model<float>& model, const Tokenizer& tokenizer, const RetrievalSet& set,
                                const ModelEvalOptions& options) {
  const auto emb = embed_set(model, tokenizer, set, options.similarity);

  RelevanceMap i2t_rel;
  RelevanceMap t2i_rel;
  if (options.mode == RelevanceMode::Category) {
    std::vector<std::string> image_cats;
    std::vector<std::string> text_cats;
    for (const auto& i : set.images) image_cats.push_back(i.category_id);
    for (const auto& t : set.texts) text_cats.push_back(t.category_id);
    i2t_rel = category_relevance(image_cats, text_cats);
    t2i_rel = category_relevance(text_cats, image_cats);
  } else {
    if (options.instance_pairs.empty()) throw ReportError("instance mode needs image/description pairs");
    std::map<std::string, int> image_pos;
    std::map<std::string, int> text_pos;
    for (std::size_t i = 0; i < set.images.size(); ++i) image_pos[set.images[i].image_id] = static_cast<int>(i);
    for (std::size_t t = 0; t < set.texts.size(); ++t) text_pos[set.texts[t].description_id] = static_cast<int>(t);
    std::vector<std::pair<int, int>> i2t_pairs;
    std::vector<std::pair<int, int>> t2i_pairs;
    for (const auto& [image_id, text_id] : options.instance_pairs) {
      auto ii = image_pos.find(image_id);
      auto tt = text_pos.find(text_id);
      if (ii == image_pos.end() || tt == text_pos.end()) continue;
      i2t_pairs.emplace_back(ii->second, tt->second);
      t2i_pairs.emplace_back(tt->second, ii->second);
    }
    i2t_rel = instance_relevance(set.images.size(), i2t_pairs);
    t2i_rel = instance_relevance(set.texts.size(), t2i_pairs);
  }

  auto i2t_rank = rank_candidates(emb.images, emb.texts);
  auto t2i_rank = rank_candidates(emb.texts, emb.images);

  if (options.rerank_k > 1) {
    const auto& cfg = model.config();
    std::vector<EncodedImage<float>> images;
    std::vector<EncodedText<float>> texts;
    Tape<float> tape;
    for (const auto& rec : set.images) {
      images.push_back(model.encode_image(
          tape, ImageTensor<float>::from(corpus::load_image(rec, cfg.image_size, cfg.channels))));
    }
    for (const auto& rec : set.texts)
      texts.push_back(model.encode_text(tape, tokenizer.encode(rec.text, cfg.max_text_len)));
    auto matched = [&](int image, int text) {
      Tape<float> local;
      // Re-run fusion on a fresh tape so the shared tape does not grow per pair.
      auto img = EncodedImage<float>{local.constant(images[static_cast<std::size_t>(image)].sequence.value()),
                                     local.constant(images[static_cast<std::size_t>(image)].cls.value()),
                                     images[static_cast<std::size_t>(image)].num_patches};
      const auto& src = texts[static_cast<std::size_t>(text)];
      auto txt = EncodedText<float>{local.constant(src.sequence.value()), local.constant(src.cls.value()),
                                    src.key_valid};
      const auto logits = model.itm_logits(local, model.fuse(local, img, txt).cls).value();
      // Matched probability of a two-way softmax.
      return 1.0 / (1.0 + std::exp(static_cast<double>(logits(0, 0) - logits(0, 1))));
    };
    for (std::size_t q = 0; q < i2t_rank.size(); ++q)
      i2t_rank[q] = rerank_topk(i2t_rank[q], options.rerank_k, [&](int t) { return matched(static_cast<int>(q), t); });
    for (std::size_t q = 0; q < t2i_rank.size(); ++q)
      t2i_rank[q] = rerank_topk(t2i_rank[q], options.rerank_k, [&](int i) { return matched(i, static_cast<int>(q)); });
  }

  return combine(make_report(Direction::I2T, i2t_rank, i2t_rel, set.texts.size(), std::max(0, options.rerank_k)),
                 make_report(Direction::T2I, t2i_rank, t2i_rel, set.images.size(), std::max(0, options.rerank_k)),
                 options.config_hash);
}

}  // namespace pitl::evalkit
