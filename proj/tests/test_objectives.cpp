// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "pitl/errors.hpp"
#include "pitl/objectives.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace pitl;

namespace {

using Mat = Matrix<double>;

const double kE = std::exp(1.0);
const double kOneVsZero = -std::log(kE / (kE + 1));  // 0.3133

Mat rows(std::initializer_list<std::initializer_list<double>> values) {
  Mat m(static_cast<Index>(values.size()), static_cast<Index>(values.begin()->size()));
  Index r = 0;
  for (const auto& row : values) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

EmbeddingQueue<double> queue_of(const Mat& embeddings, std::vector<int> cats, Index capacity = 8) {
  EmbeddingQueue<double> q(capacity, embeddings.cols());
  if (embeddings.rows() > 0) q.enqueue(embeddings, cats);
  return q;
}

struct Instance {
  Mat images, texts, image_queue, text_queue;
  std::vector<int> cats, iq_cats, tq_cats;
  double tau = 1;
};

Instance random_instance(Rng& rng) {
  Instance in;
  const Index dim = 6;
  const Index n = 1 + static_cast<Index>(uniform_index(rng, 4));
  const Index m = static_cast<Index>(uniform_index(rng, 9));
  in.images = fixtures::random_unit_rows<double>(n, dim, rng);
  in.texts = fixtures::random_unit_rows<double>(n, dim, rng);
  in.image_queue = fixtures::random_unit_rows<double>(m, dim, rng);
  in.text_queue = fixtures::random_unit_rows<double>(m, dim, rng);
  for (Index i = 0; i < n; ++i) in.cats.push_back(static_cast<int>(uniform_index(rng, 3)));
  for (Index i = 0; i < m; ++i) in.iq_cats.push_back(static_cast<int>(uniform_index(rng, 3)));
  for (Index i = 0; i < m; ++i) in.tq_cats.push_back(static_cast<int>(uniform_index(rng, 3)));
  in.tau = 0.05 + uniform01(rng);
  return in;
}

double relative(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

struct Computed {
  double itc, imc;
};

Computed compute(const Instance& in, TargetMode mode = TargetMode::Uniform) {
  Tape<double> tape;
  auto iq = queue_of(in.image_queue, in.iq_cats);
  auto tq = queue_of(in.text_queue, in.tq_cats);
  auto img = tape.constant(in.images);
  auto txt = tape.constant(in.texts);
  auto log_tau = tape.constant(Mat::Constant(1, 1, std::log(in.tau)));
  return {itc_loss(img, txt, in.cats, iq, tq, log_tau, mode).loss.item(),
          imc_loss(img, txt, in.cats, iq, tq, log_tau, mode).loss.item()};
}

long double itc_oracle(const Instance& in, bool uniform = true) {
  using fixtures::to_rows;
  return 0.5L * (oracle::contrastive_direction(to_rows(in.images), in.cats, to_rows(in.text_queue), in.tq_cats,
                                               to_rows(in.texts), in.cats, in.tau, false, uniform) +
                 oracle::contrastive_direction(to_rows(in.texts), in.cats, to_rows(in.image_queue), in.iq_cats,
                                               to_rows(in.images), in.cats, in.tau, false, uniform));
}

long double imc_oracle(const Instance& in, bool uniform = true) {
  using fixtures::to_rows;
  return 0.5L * (oracle::contrastive_direction(to_rows(in.images), in.cats, to_rows(in.image_queue), in.iq_cats,
                                               to_rows(in.images), in.cats, in.tau, true, uniform) +
                 oracle::contrastive_direction(to_rows(in.texts), in.cats, to_rows(in.text_queue), in.tq_cats,
                                               to_rows(in.texts), in.cats, in.tau, true, uniform));
}

double itm_from_probabilities(const std::vector<double>& p, const std::vector<int>& labels) {
  Tape<double> tape;
  Mat logits = Mat::Zero(static_cast<Index>(p.size()), 2);
  for (std::size_t i = 0; i < p.size(); ++i) logits(static_cast<Index>(i), 1) = std::log(p[i] / (1 - p[i]));
  return itm_loss_from_logits(tape.constant(logits), labels).item();
}

}  // namespace

TEST_CASE("similarity of unit vectors") {
  RowVector<double> v(3), w(3);
  v << 0.6, 0.8, 0;
  w << -0.8, 0.6, 0;
  CHECK(similarity(v, v) == doctest::Approx(1.0));
  CHECK(similarity(v, w) == doctest::Approx(0.0));
  CHECK(similarity<double>(v, -v) == doctest::Approx(-1.0));
}

TEST_CASE("enum names round trip") {
  CHECK(parse_target_mode("binary_sum") == TargetMode::BinarySum);
  CHECK(to_string(SimilarityMode::Raw) == "raw");
  CHECK(parse_negative_strategy(to_string(NegativeStrategy::Hard)) == NegativeStrategy::Hard);
  CHECK_THROWS(parse_similarity_mode("cosine"));
}

TEST_CASE("queue FIFO eviction") {
  EmbeddingQueue<double> q(4, 2);
  auto e = [](double angle) {
    Mat m(1, 2);
    m << std::cos(angle), std::sin(angle);
    return m;
  };
  Mat first(3, 2), second(3, 2);
  first << e(0), e(1), e(2);
  second << e(3), e(4), e(5);
  q.enqueue(first, std::vector<int>{0, 1, 2});
  q.enqueue(second, std::vector<int>{3, 4, 5});
  CHECK(q.size() == 4);
  CHECK(q.categories() == std::vector<int>{2, 3, 4, 5});
  // Sentinels: the row tagged k was built from angle k.
  auto emb = q.embeddings();
  auto cats = q.categories();
  for (Index r = 0; r < emb.rows(); ++r) CHECK((emb.row(r) - e(cats[static_cast<std::size_t>(r)])).norm() < 1e-15);

  Mat big(6, 2);
  for (int i = 0; i < 6; ++i) big.row(i) = e(10 + i);
  q.enqueue(big, std::vector<int>{10, 11, 12, 13, 14, 15});
  CHECK(q.categories() == std::vector<int>{12, 13, 14, 15});
  CHECK((q.embeddings().row(0) - e(12)).norm() < 1e-15);

  Mat bad = Mat::Constant(1, 2, 1.0);
  CHECK_THROWS_AS(q.enqueue(bad, std::vector<int>{0}), ContractError);
  CHECK_THROWS_AS(q.enqueue(e(0), std::vector<int>{0, 1}), ContractError);
  EmbeddingQueue<double> raw(2, 2, false);
  CHECK_NOTHROW(raw.enqueue(bad, std::vector<int>{0}));
}

TEST_CASE("queue occupancy law under random pushes") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index cap = 1 + static_cast<Index>(uniform_index(rng, 8));
    EmbeddingQueue<double> q(cap, 3);
    std::vector<int> history;
    int next = 0;
    for (int push = 0; push < 6; ++push) {
      const Index n = 1 + static_cast<Index>(uniform_index(rng, 5));
      std::vector<int> cats;
      for (Index i = 0; i < n; ++i) cats.push_back(next++);
      q.enqueue(fixtures::random_unit_rows<double>(n, 3, rng), cats);
      history.insert(history.end(), cats.begin(), cats.end());
      CHECK(q.size() == std::min<Index>(cap, static_cast<Index>(history.size())));
      std::vector<int> tail(history.end() - q.size(), history.end());
      CHECK(q.categories() == tail);
    }
  }
}

TEST_CASE("ITC on the two-candidate example") {
  Tape<double> tape;
  auto e1 = rows({{1, 0}});
  auto e2 = rows({{0, 1}});
  auto iq = queue_of(e2, {1});
  auto tq = queue_of(e2, {1});
  auto log_tau = tape.constant(Mat::Zero(1, 1));
  std::vector<int> cats{0};
  auto loss = itc_loss(tape.constant(e1), tape.constant(e1), cats, iq, tq, log_tau);
  CHECK(loss.forward.loss.item() == doctest::Approx(kOneVsZero).epsilon(1e-12));
  CHECK(loss.backward.loss.item() == doctest::Approx(kOneVsZero).epsilon(1e-12));
  CHECK(loss.loss.item() == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("ITC with equal similarities is log of the candidate count") {
  Tape<double> tape;
  const Index m = 5;
  Mat queue = Mat::Zero(m, 3);
  queue.col(0).setOnes();
  auto iq = queue_of(queue, {1, 1, 2, 2, 1});
  auto tq = queue_of(queue, {1, 1, 2, 2, 1});
  auto x = tape.constant(rows({{1, 0, 0}}));
  std::vector<int> cats{0};
  auto loss = itc_loss(x, x, cats, iq, tq, tape.constant(Mat::Constant(1, 1, std::log(0.3))));
  CHECK(loss.loss.item() == doctest::Approx(std::log(m + 1.0)).epsilon(1e-12));
}

TEST_CASE("two positives with uniform targets") {
  // Queue: one same-category copy of the query and one orthogonal distractor.
  Tape<double> tape;
  auto iq = queue_of(rows({{1, 0}, {0, 1}}), {0, 1});
  auto tq = queue_of(rows({{1, 0}, {0, 1}}), {0, 1});
  auto x = tape.constant(rows({{1, 0}}));
  std::vector<int> cats{0};
  auto loss = itc_loss(x, x, cats, iq, tq, tape.constant(Mat::Zero(1, 1)));
  // Brute force: candidates (1, 0, 1) with targets (1/2, 0, 1/2).
  const double p = kE / (2 * kE + 1);
  const double expected = -0.5 * std::log(p) - 0.5 * std::log(p);
  CHECK(loss.loss.item() == doctest::Approx(expected).epsilon(1e-12));
  // Merging the two positives into one slot of mass 2p leaves an extra log 2.
  CHECK(loss.loss.item() == doctest::Approx(-std::log(2 * p) + std::log(2.0)).epsilon(1e-12));
  auto binary = itc_loss(x, x, cats, iq, tq, tape.constant(Mat::Zero(1, 1)), TargetMode::BinarySum);
  CHECK(binary.loss.item() == doctest::Approx(2 * expected).epsilon(1e-12));
}

TEST_CASE("IMC two-image example and exclusion") {
  Tape<double> tape;
  auto e1 = rows({{1, 0}, {1, 0}});
  auto iq = queue_of(rows({{0, 1}}), {1});
  auto tq = queue_of(rows({{0, 1}}), {1});
  std::vector<int> cats{0, 0};
  auto loss = imc_loss(tape.constant(e1), tape.constant(e1), cats, iq, tq, tape.constant(Mat::Zero(1, 1)));
  CHECK(loss.forward.loss.item() == doctest::Approx(kOneVsZero).epsilon(1e-12));
  CHECK(loss.forward.included_rows == 2);

  // A lone query of a category absent from the queue has no positive.
  std::vector<int> mixed{0, 2};
  auto excl = imc_loss(tape.constant(e1), tape.constant(e1), mixed, iq, tq, tape.constant(Mat::Zero(1, 1)));
  CHECK(excl.forward.included_rows == 0);
  CHECK(excl.all_excluded());
  CHECK(excl.loss.item() == 0.0);
}

TEST_CASE("ITC excludes queries without positives") {
  Tape<double> tape;
  auto iq = queue_of(Mat(0, 2), {});
  auto tq = queue_of(Mat(0, 2), {});
  auto x = tape.constant(rows({{1, 0}}));
  std::vector<int> cats{0};
  // The in-batch pair is always a positive for ITC.
  auto loss = itc_loss(x, x, cats, iq, tq, tape.constant(Mat::Zero(1, 1)));
  CHECK(loss.forward.included_rows == 1);
  CHECK(loss.loss.item() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("softmax rows over candidates sum to one") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_instance(rng);
    Tape<double> tape;
    auto q = tape.constant(in.images);
    for (bool self : {false, true}) {
      auto p = contrastive_problem(q, in.cats, in.image_queue, in.iq_cats, q, in.cats,
                                   tape.constant(Mat::Constant(1, 1, std::log(in.tau))), self, TargetMode::Uniform);
      const auto& z = p.logits.value();
      for (Index r = 0; r < z.rows(); ++r) {
        double mx = -INFINITY, sum = 0;
        for (Index c = 0; c < z.cols(); ++c)
          if (p.candidate_mask(r, c) != 0) mx = std::max(mx, z(r, c));
        for (Index c = 0; c < z.cols(); ++c)
          if (p.candidate_mask(r, c) != 0) sum += std::exp(z(r, c) - mx);
        double total_p = 0;
        for (Index c = 0; c < z.cols(); ++c)
          if (p.candidate_mask(r, c) != 0) total_p += std::exp(z(r, c) - mx) / sum;
        CHECK(total_p == doctest::Approx(1.0).epsilon(1e-12));
        if (self) CHECK(p.candidate_mask(r, in.image_queue.rows() + r) == 0);
        const double target_sum = p.targets.row(r).sum();
        CHECK((target_sum == 0 || std::abs(target_sum - 1) < 1e-12));
      }
    }
  }
}

TEST_CASE("contrastive losses match the brute-force oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    auto in = random_instance(rng);
    auto got = compute(in);
    CHECK(relative(got.itc, static_cast<double>(itc_oracle(in))) < 1e-10);
    CHECK(relative(got.imc, static_cast<double>(imc_oracle(in))) < 1e-10);
    auto bin = compute(in, TargetMode::BinarySum);
    CHECK(relative(bin.itc, static_cast<double>(itc_oracle(in, false))) < 1e-10);
    CHECK(relative(bin.imc, static_cast<double>(imc_oracle(in, false))) < 1e-10);
  }
}

TEST_CASE("single positive per query reduces to InfoNCE") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    auto in = random_instance(rng);
    // Distinct batch categories and a queue of categories unseen in the batch.
    std::iota(in.cats.begin(), in.cats.end(), 0);
    for (auto& c : in.iq_cats) c = 100 + c;
    for (auto& c : in.tq_cats) c = 100 + c;
    auto got = compute(in);
    using fixtures::to_rows;
    const auto expected = oracle::info_nce(to_rows(in.images), to_rows(in.texts), to_rows(in.image_queue),
                                           to_rows(in.text_queue), in.tau);
    CHECK(std::abs(got.itc - static_cast<double>(expected)) < 1e-12);
  }
}

TEST_CASE("ITC increases with temperature for a fixed similarity gap") {
  Tape<double> tape;
  auto iq = queue_of(rows({{0, 1}, {0.6, 0.8}}), {1, 2});
  auto tq = queue_of(rows({{0, 1}, {0.6, 0.8}}), {1, 2});
  auto x = tape.constant(rows({{1, 0}}));
  std::vector<int> cats{0};
  double previous = -1;
  for (double tau = 0.05; tau <= 5.0 + 1e-9; tau *= 1.1) {
    const double loss = itc_loss(x, x, cats, iq, tq, tape.constant(Mat::Constant(1, 1, std::log(tau)))).loss.item();
    CHECK(loss > previous);
    previous = loss;
  }
}

TEST_CASE("losses are invariant to batch order") {
  Rng rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_instance(rng);
    auto base = compute(in);
    std::vector<Index> perm(static_cast<std::size_t>(in.images.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Instance p = in;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      p.images.row(static_cast<Index>(i)) = in.images.row(perm[i]);
      p.texts.row(static_cast<Index>(i)) = in.texts.row(perm[i]);
      p.cats[i] = in.cats[static_cast<std::size_t>(perm[i])];
    }
    auto permuted = compute(p);
    CHECK(std::abs(base.itc - permuted.itc) < 1e-6);
    CHECK(std::abs(base.imc - permuted.imc) < 1e-6);
  }
}

TEST_CASE("ITM examples") {
  CHECK(itm_from_probabilities({0.5, 0.5, 0.5}, {1, 0, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const double hand = -0.25 * (std::log(0.9) + std::log(0.8) + std::log(0.8) + std::log(0.7));
  CHECK(itm_from_probabilities({0.9, 0.8, 0.2, 0.3}, {1, 1, 0, 0}) == doctest::Approx(hand).epsilon(1e-12));
  CHECK(hand == doctest::Approx(0.2271).epsilon(1e-4));
  CHECK(itm_from_probabilities({1 - 1e-12, 1e-12}, {1, 0}) < 1e-10);
  CHECK(itm_from_probabilities({0.7, 0.6}, {1, 1}) > 0);  // single-class batch is still defined
}

TEST_CASE("ITM and MLM match the scalar oracles") {
  Rng rng(31);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 12));
    Mat logits(n, 2);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      logits(i, 0) = 3 * normal(rng);
      logits(i, 1) = 3 * normal(rng);
      labels.push_back(static_cast<int>(uniform_index(rng, 2)));
    }
    Tape<double> tape;
    const double got = itm_loss_from_logits(tape.constant(logits), labels).item();
    CHECK(relative(got, static_cast<double>(oracle::itm(fixtures::to_rows(logits), labels))) < 1e-10);

    const int vocab = 4 + static_cast<int>(uniform_index(rng, 29));
    const int len = 2 + static_cast<int>(uniform_index(rng, 10));
    Mat vl(len, vocab);
    for (Index i = 0; i < vl.size(); ++i) vl.data()[i] = 2 * normal(rng);
    std::vector<int> positions, targets;
    for (int r = 0; r < len; ++r) {
      if (uniform01(rng) < 0.4) {
        positions.push_back(r);
        targets.push_back(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(vocab))));
      }
    }
    if (positions.empty()) {
      positions.push_back(0);
      targets.push_back(0);
    }
    const double mlm = mlm_loss_from_logits(tape.constant(vl), positions, targets).item();
    CHECK(relative(mlm, static_cast<double>(oracle::mlm(fixtures::to_rows(vl), positions, targets))) < 1e-10);
  }
}

TEST_CASE("ITM and MLM are invariant to row order") {
  Rng rng(37);
  Mat logits = fixtures::random_unit_rows<double>(6, 2, rng);
  std::vector<int> labels{1, 0, 0, 1, 1, 0};
  Mat flipped = logits.colwise().reverse();
  std::vector<int> flabels(labels.rbegin(), labels.rend());
  Tape<double> tape;
  CHECK(std::abs(itm_loss_from_logits(tape.constant(logits), labels).item() -
                 itm_loss_from_logits(tape.constant(flipped), flabels).item()) < 1e-12);
  std::vector<int> pos{0, 2, 5}, tgt{1, 0, 1}, rpos{5, 3, 0}, rtgt{1, 0, 1};
  CHECK(std::abs(mlm_loss_from_logits(tape.constant(logits), pos, tgt).item() -
                 mlm_loss_from_logits(tape.constant(flipped), rpos, rtgt).item()) < 1e-12);
}

TEST_CASE("MLM uniform logits give log V and zero gradient off the masked rows") {
  Tape<double> tape;
  const int vocab = 32;
  auto logits = tape.variable(Mat::Zero(5, vocab));
  std::vector<int> positions{1, 3}, targets{7, 9};
  auto loss = mlm_loss_from_logits(logits, positions, targets);
  CHECK(loss.item() == doctest::Approx(std::log(32.0)).epsilon(1e-12));
  tape.backward(loss);
  for (int r : {0, 2, 4}) CHECK(logits.grad().row(r).cwiseAbs().maxCoeff() == 0.0);
  CHECK(logits.grad().row(1).cwiseAbs().maxCoeff() > 0);
  std::vector<int> none;
  CHECK(mlm_loss_from_logits(logits, none, none).item() == 0.0);
}

TEST_CASE("mask rate and corruption split") {
  Rng rng(41);
  const int vocab = 32;
  long tokens = 0, selected = 0, masked = 0, kept = 0, replaced = 0;
  while (tokens < 100000) {
    std::vector<int> ids{2};
    for (int i = 0; i < 20; ++i) ids.push_back(4 + static_cast<int>(uniform_index(rng, vocab - 4)));
    auto m = mask_tokens(ids, 0.15, vocab, rng);
    tokens += 20;
    selected += static_cast<long>(m.positions.size());
    CHECK(m.input_ids[0] == 2);
    for (std::size_t k = 0; k < m.positions.size(); ++k) {
      const int after = m.input_ids[static_cast<std::size_t>(m.positions[k])];
      CHECK(m.targets[k] == ids[static_cast<std::size_t>(m.positions[k])]);
      if (after == 3) {
        ++masked;
      } else if (after == m.targets[k]) {
        ++kept;
      } else {
        ++replaced;
        CHECK(after >= 4);
      }
    }
  }
  const double rate = static_cast<double>(selected) / static_cast<double>(tokens);
  CHECK(rate >= 0.145);
  CHECK(rate <= 0.155);
  CHECK(static_cast<double>(masked) / selected == doctest::Approx(0.8).epsilon(0.03));
  // A random replacement can coincide with the original id.
  CHECK(static_cast<double>(replaced + kept) / selected == doctest::Approx(0.2).epsilon(0.1));
}

TEST_CASE("special and padded positions are never selected") {
  Rng rng(43);
  std::vector<int> ids{2, 0, 1, 3, 7, 8, 0};
  std::vector<char> valid{1, 1, 1, 1, 1, 0, 0};
  for (int i = 0; i < 500; ++i) {
    auto m = mask_tokens(ids, 0.9, 16, rng, valid);
    for (int p : m.positions) CHECK(p == 4);
  }
  auto none = mask_tokens({2, 0}, 0.9, 16, rng);
  CHECK(none.positions.empty());
}

TEST_CASE("ITM negatives") {
  Rng rng(47);
  std::vector<int> two{0, 1, 0, 1};
  auto plan = sample_itm_negatives<double>(two, NegativeStrategy::Uniform, Mat(), rng);
  CHECK(plan.skipped == 0);
  CHECK(plan.pairs.size() == 12);
  for (std::size_t i = 0; i < plan.pairs.size(); ++i) {
    const auto& p = plan.pairs[i];
    if (i < 4) {
      CHECK(p.matched);
      CHECK(p.image == p.text);
    } else {
      CHECK_FALSE(p.matched);
      CHECK(two[static_cast<std::size_t>(p.image)] != two[static_cast<std::size_t>(p.text)]);
    }
  }

  // Rigged similarities: the hard pick is the argmax over other categories.
  std::vector<int> cats{0, 1, 2, 0};
  Mat sims = rows({{9, 0.1, 0.7, 5}, {0.3, 9, 0.2, 0.9}, {0.8, 0.4, 9, 0.1}, {5, 0.6, 0.5, 9}});
  auto hard = sample_itm_negatives<double>(cats, NegativeStrategy::Hard, sims, rng);
  for (std::size_t i = 4; i < hard.pairs.size(); ++i) {
    const auto& p = hard.pairs[i];
    const bool text_negative = (i - 4) % 2 == 0;
    const int anchor = text_negative ? p.image : p.text;
    int best = -1;
    for (int j = 0; j < 4; ++j) {
      if (cats[static_cast<std::size_t>(j)] == cats[static_cast<std::size_t>(anchor)]) continue;
      const double s = text_negative ? sims(anchor, j) : sims(j, anchor);
      if (best < 0 || s > (text_negative ? sims(anchor, best) : sims(best, anchor))) best = j;
    }
    CHECK((text_negative ? p.text : p.image) == best);
  }

  std::vector<int> one{3, 3, 3};
  auto none = sample_itm_negatives<double>(one, NegativeStrategy::Uniform, Mat(), rng);
  CHECK(none.pairs.size() == 3);
  CHECK(none.skipped == 6);
}

TEST_CASE("total loss is the unweighted sum") {
  CHECK(total_loss(0.3, 0.7, 2.0, 0.4) == doctest::Approx(3.4).epsilon(1e-15));
  CHECK(total_loss(0.0, 0.0, 0.0, 1.25) == 1.25);
  CHECK(std::isnan(total_loss(0.3, std::nan(""), 2.0, 0.4)));
  Tape<double> tape;
  auto c = [&](double v) { return tape.constant(Mat::Constant(1, 1, v)); };
  CHECK(total_loss(c(0.3), c(0.7), c(2.0), c(0.4)).item() == doctest::Approx(3.4));
}

TEST_CASE("pretraining_losses on a tiny model") {
  auto cfg = fixtures::tiny_model();
  Model<double> model(cfg, 3);
  Rng rng(53);
  StepInputs<double> inputs;
  for (int i = 0; i < 4; ++i) inputs.images.push_back(fixtures::random_image<double>(cfg, rng));
  inputs.token_ids = fixtures::random_tokens(4, 6, cfg.vocab_size, rng);
  inputs.categories = {0, 1, 2, 3};
  EmbeddingQueue<double> iq(8, cfg.projection_dim), tq(8, cfg.projection_dim);
  StepPlan plan;
  Rng neg(1), mask(2);
  Tape<double> tape;
  auto terms = pretraining_losses(model, tape, inputs, iq, tq, LossOptions{}, plan, &neg, &mask);
  REQUIRE(plan.itm.has_value());
  REQUIRE(plan.masks.has_value());
  CHECK(plan.itm->pairs.size() == 12);
  CHECK(terms.total.item() ==
        doctest::Approx(terms.itc.item() + terms.itm.item() + terms.mlm.item() + terms.imc.item()).epsilon(1e-12));
  // No queue and distinct categories: IMC has no positives at all.
  CHECK(terms.imc.item() == 0.0);
  CHECK(terms.image_embeddings.rows() == 4);

  // Re-running with the same plan reproduces the value bit for bit.
  Tape<double> again;
  auto terms2 = pretraining_losses(model, again, inputs, iq, tq, LossOptions{}, plan);
  CHECK(terms2.total.item() == terms.total.item());

  LossOptions raw;
  raw.similarity = SimilarityMode::Raw;
  EmbeddingQueue<double> riq(8, cfg.hidden_dim, false), rtq(8, cfg.hidden_dim, false);
  StepPlan plan2;
  Tape<double> t3;
  auto raw_terms = pretraining_losses(model, t3, inputs, riq, rtq, raw, plan2, &neg, &mask);
  CHECK(raw_terms.image_embeddings.cols() == cfg.hidden_dim);
}
