// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>

#include <Eigen/QR>

#include "pitl/errors.hpp"
#include "pitl/evalkit.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace pitl;
using namespace pitl::evalkit;

namespace {

using Mat = Matrix<double>;

RelevanceMap single(std::vector<int> relevant) {
  RelevanceMap m;
  m.mode = RelevanceMode::Instance;
  for (int r : relevant) m.relevant.push_back({r});
  return m;
}

std::vector<int> argsort_desc(const Mat& scores, Index row) {
  std::vector<int> idx(static_cast<std::size_t>(scores.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores(row, a) > scores(row, b); });
  return idx;
}

Mat random_orthogonal(Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  Mat a(n, n);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  Eigen::HouseholderQR<Mat> qr(a);
  return qr.householderQ() * Mat::Identity(n, n);
}

double one_decimal(double x) { return std::round(x * 10.0) / 10.0; }

}  // namespace

TEST_CASE("rank_candidates orders by descending similarity") {
  Mat q(1, 2), g(3, 2);
  q << 1, 0;
  g << -1, 0, 0, 1, 1, 0;
  CHECK(rank_candidates(q, g)[0] == std::vector<int>{2, 1, 0});
  Mat same = Mat::Ones(4, 2);
  CHECK(rank_candidates(q, same)[0] == std::vector<int>{0, 1, 2, 3});
  CHECK_THROWS_AS(rank_candidates(q, Mat(0, 2)), ContractError);
  CHECK_THROWS_AS(rank_candidates(q, Mat(Mat::Ones(2, 3))), ContractError);
}

TEST_CASE("ranking matches a full argsort") {
  Rng rng(3);
  auto q = fixtures::random_unit_rows<double>(20, 5, rng);
  auto g = fixtures::random_unit_rows<double>(30, 5, rng);
  auto ranking = rank_candidates(q, g);
  Mat scores = q * g.transpose();
  for (Index r = 0; r < 20; ++r) CHECK(ranking[static_cast<std::size_t>(r)] == argsort_desc(scores, r));
}

TEST_CASE("rankings survive rotation and positive scaling") {
  Rng rng(4);
  auto q = fixtures::random_unit_rows<double>(10, 6, rng);
  auto g = fixtures::random_unit_rows<double>(25, 6, rng);
  auto base = rank_candidates(q, g);
  Mat rot = random_orthogonal(6, rng);
  Mat qr = q * rot, gr = g * rot;
  // Rotation perturbs scores at round-off level, so compare with a margin on
  // near-ties rather than bitwise.
  auto rotated = rank_candidates(qr, gr);
  Mat scores = q * g.transpose();
  for (std::size_t r = 0; r < base.size(); ++r) {
    for (std::size_t k = 0; k < base[r].size(); ++k) {
      if (base[r][k] != rotated[r][k]) {
        CHECK(std::abs(scores(static_cast<Index>(r), base[r][k]) - scores(static_cast<Index>(r), rotated[r][k])) <
              1e-12);
      }
    }
  }
  CHECK(rank_by_scores(scores * 7.5) == rank_by_scores(scores));
  CHECK(rank_by_scores(scores * 1e-3) == rank_by_scores(scores));
}

TEST_CASE("rerank_topk") {
  std::vector<int> ranked{4, 2, 7, 1, 0};
  std::map<int, double> contrastive{{4, 0.9}, {2, 0.8}, {7, 0.5}, {1, 0.2}, {0, 0.1}};
  auto by_contrastive = [&](int c) { return contrastive.at(c); };
  CHECK(rerank_topk(ranked, 5, by_contrastive) == ranked);
  CHECK(rerank_topk(ranked, 1, [](int c) { return -c; }) == ranked);
  CHECK(rerank_topk(ranked, 0, [](int c) { return -c; }) == ranked);
  // Rigged fusion scores that invert the top three.
  std::map<int, double> rigged{{4, 0.1}, {2, 0.5}, {7, 0.9}, {1, 1.0}, {0, 1.0}};
  CHECK(rerank_topk(ranked, 3, [&](int c) { return rigged.at(c); }) == std::vector<int>{7, 2, 4, 1, 0});
}

TEST_CASE("reranking only permutes the top k") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> ranked(12);
    std::iota(ranked.begin(), ranked.end(), 0);
    std::shuffle(ranked.begin(), ranked.end(), rng);
    const int k = 1 + static_cast<int>(uniform_index(rng, 12));
    std::vector<double> score(12);
    for (auto& s : score) s = uniform01(rng);
    auto out = rerank_topk(ranked, k, [&](int c) { return score[static_cast<std::size_t>(c)]; });
    std::multiset<int> a(ranked.begin(), ranked.begin() + k), b(out.begin(), out.begin() + k);
    CHECK(a == b);
    CHECK(std::equal(ranked.begin() + k, ranked.end(), out.begin() + k));
    // Recall at any k' >= k is unchanged for any relevance set.
    Ranking before{ranked}, after{out};
    auto rel = single({ranked[static_cast<std::size_t>(uniform_index(rng, 12))]});
    for (int kk = k; kk <= 12; ++kk) CHECK(recall_at_k(before, rel, kk) == recall_at_k(after, rel, kk));
  }
}

TEST_CASE("recall_at_k examples") {
  Ranking first{{0, 1, 2}, {1, 0, 2}};
  CHECK(recall_at_k(first, single({0, 1}), 1) == 100.0);

  // Relevant items all sit at rank k + 1.
  Ranking late(4, std::vector<int>{0, 1, 2, 3, 4, 5, 6});
  CHECK(recall_at_k(late, single({5, 5, 5, 5}), 5) == 0.0);
  CHECK(recall_at_k(late, single({5, 5, 5, 5}), 6) == 100.0);

  Ranking ten(10, std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(recall_at_k(ten, single({0, 3, 4, 9, 9, 9, 9, 9, 9, 9}), 5) == doctest::Approx(30.0));

  CHECK_THROWS_AS(recall_at_k(first, single({0, 1}), 0), ContractError);
  CHECK_THROWS_AS(recall_at_k({}, RelevanceMap{}, 1), ReportError);
}

TEST_CASE("recall matches the full-enumeration oracle and is monotone") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Index nq = 1 + static_cast<Index>(uniform_index(rng, 15));
    const Index ng = 1 + static_cast<Index>(uniform_index(rng, 25));
    Mat scores(nq, ng);
    for (Index i = 0; i < scores.size(); ++i) scores.data()[i] = std::round(uniform01(rng) * 8) / 8;  // ties
    RelevanceMap rel;
    for (Index q = 0; q < nq; ++q) {
      std::set<int> s{static_cast<int>(uniform_index(rng, static_cast<std::size_t>(ng)))};
      if (uniform01(rng) < 0.5) s.insert(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(ng))));
      rel.relevant.push_back(s);
    }
    auto ranking = rank_by_scores(scores);
    double previous = 0;
    for (int k : {1, 2, 5, 10, 20}) {
      const double got = recall_at_k(ranking, rel, k);
      CHECK(got == doctest::Approx(oracle::recall_at_k(fixtures::to_rows(scores), rel.relevant, k)).epsilon(1e-12));
      CHECK(got >= previous);
      previous = got;
    }
  }
}

TEST_CASE("AvgR arithmetic") {
  CHECK(one_decimal(avg_recall(85.4, 97.7, 98.9)) == 94.0);
  CHECK(avg_recall(85.4, 97.7, 98.9) == doctest::Approx(94.0).epsilon(1e-12));
  CHECK(one_decimal(avg_recall(86.8, 97.6, 99.3)) == 94.6);
  CHECK(avg_recall(0, 0, 0) == 0.0);

  RetrievalReport i2t, t2i;
  i2t.avgr = 94.6;
  t2i.direction = Direction::T2I;
  t2i.avgr = 86.2;
  auto both = combine(i2t, t2i);
  CHECK(both.overall_avgr == doctest::Approx(90.4).epsilon(1e-12));
  CHECK(both.table_row().find("Overall 90.4") != std::string::npos);
}

TEST_CASE("reports satisfy the ordering invariants") {
  Rng rng(8);
  auto img = fixtures::random_unit_rows<double>(12, 4, rng);
  auto txt = fixtures::random_unit_rows<double>(24, 4, rng);
  std::vector<std::string> ic, tc;
  for (int i = 0; i < 12; ++i) ic.push_back("c" + std::to_string(i % 4));
  for (int i = 0; i < 24; ++i) tc.push_back("c" + std::to_string(i % 4));
  auto result = evaluate_embeddings(img, txt, category_relevance(ic, tc), category_relevance(tc, ic), "abc");
  for (const auto* r : {&result.i2t, &result.t2i}) {
    CHECK(0 <= r->r1);
    CHECK(r->r1 <= r->r5);
    CHECK(r->r5 <= r->r10);
    CHECK(r->r10 <= 100);
    CHECK(r->avgr == (r->r1 + r->r5 + r->r10) / 3);
  }
  CHECK(result.i2t.queries == 12);
  CHECK(result.t2i.queries == 24);
  auto j = result.to_json();
  CHECK(j.at("config_hash") == "abc");
  CHECK(j.at("i2t").at("mode") == "category");
}

TEST_CASE("perfectly separated categories reach R@1 = 100") {
  Mat img = Mat::Zero(8, 4), txt = Mat::Zero(12, 4);
  std::vector<std::string> ic, tc;
  for (int i = 0; i < 8; ++i) {
    img(i, i % 4) = 1;
    ic.push_back("c" + std::to_string(i % 4));
  }
  for (int i = 0; i < 12; ++i) {
    txt(i, i % 4) = 1;
    tc.push_back("c" + std::to_string(i % 4));
  }
  auto r = evaluate_embeddings(img, txt, category_relevance(ic, tc), category_relevance(tc, ic));
  CHECK(r.i2t.r1 == 100.0);
  CHECK(r.t2i.r1 == 100.0);
}

TEST_CASE("instance mode on a three-image fixture with five captions each") {
  // Image i and caption j share a direction when j / 5 == i; caption 14 is
  // an outlier pointing at image 0.
  Mat img = Mat::Identity(3, 3);
  Mat txt(15, 3);
  for (int j = 0; j < 15; ++j) {
    txt.row(j) = img.row(j / 5) * (1.0 - 0.01 * (j % 5));
  }
  txt.row(14) << 1, 0, 0;
  std::vector<std::pair<int, int>> i2t_pairs, t2i_pairs;
  for (int j = 0; j < 15; ++j) {
    i2t_pairs.emplace_back(j / 5, j);
    t2i_pairs.emplace_back(j, j / 5);
  }
  auto r = evaluate_embeddings(img, txt, instance_relevance(3, i2t_pairs), instance_relevance(15, t2i_pairs));
  // Hand enumeration: every image has a relevant caption first.
  CHECK(r.i2t.r1 == 100.0);
  // Captions 0-13 rank their own image first; caption 14 ranks image 0 first
  // and image 2 (its relevant one) last.
  CHECK(r.t2i.r1 == doctest::Approx(100.0 * 14 / 15));
  CHECK(r.t2i.r5 == 100.0);
  CHECK(r.i2t.mode == RelevanceMode::Instance);
  CHECK(r.i2t.gallery == 15);
}

TEST_CASE("relevance validation") {
  RelevanceMap empty_query;
  empty_query.relevant = {{0}, {}};
  CHECK_THROWS_AS(empty_query.validate(3), ReportError);
  RelevanceMap outside;
  outside.relevant = {{5}};
  CHECK_THROWS_AS(outside.validate(3), ReportError);
  CHECK_THROWS_AS(category_relevance({"a"}, {"b"}).validate(1), ReportError);
  CHECK(parse_relevance_mode("instance") == RelevanceMode::Instance);
}

TEST_CASE("model evaluation on a desk split") {
  auto manifest = fixtures::desk_manifest(8, 8, corpus::SplitPolicy::InstanceHoldout, 0.25, 2);
  auto set = retrieval_set(manifest, corpus::Split::Eval);
  CHECK(set.images.size() == 16);

  std::vector<std::string> texts;
  for (const auto& d : manifest.descriptions) texts.push_back(d.text);
  auto cfg = fixtures::tiny_model();
  cfg.vocab_size = 128;
  cfg.max_text_len = 16;
  auto tok = Tokenizer::build(texts, 1, cfg.vocab_size);

  // Chance level: averaged over initializations, R@1 sits near 100 / 8.
  double i2t = 0, t2i = 0;
  const int inits = 8;
  for (int seed = 0; seed < inits; ++seed) {
    Model<float> model(cfg, static_cast<std::uint64_t>(seed));
    ModelEvalOptions opts;
    auto r = evaluate_model(model, tok, set, opts);
    i2t += r.i2t.r1 / inits;
    t2i += r.t2i.r1 / inits;
  }
  INFO("chance I2T " << i2t << " T2I " << t2i);
  CHECK(i2t > 4.0);
  CHECK(i2t < 25.0);
  CHECK(t2i > 4.0);
  CHECK(t2i < 25.0);

  Model<float> model(cfg, 1);
  ModelEvalOptions plain;
  ModelEvalOptions zero;
  zero.rerank_k = 0;
  auto a = evaluate_model(model, tok, set, plain);
  auto b = evaluate_model(model, tok, set, zero);
  CHECK(a.to_json() == b.to_json());
  ModelEvalOptions rerank;
  rerank.rerank_k = 5;
  auto c = evaluate_model(model, tok, set, rerank);
  CHECK(c.i2t.r10 == a.i2t.r10);  // reranking inside the top 5 cannot change R@10
  CHECK(c.i2t.rerank_k == 5);

  ModelEvalOptions instance;
  instance.mode = RelevanceMode::Instance;
  CHECK_THROWS_AS(evaluate_model(model, tok, set, instance), ReportError);

  corpus::Manifest none = manifest;
  for (auto& im : none.images) im.split = corpus::Split::Pretrain;
  CHECK_THROWS_AS(retrieval_set(none, corpus::Split::Eval), ReportError);
}
