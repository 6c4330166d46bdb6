// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "pitl/corpus.hpp"
#include "pitl/errors.hpp"
#include "support/fixtures.hpp"

using namespace pitl;
using namespace pitl::corpus;
using promptgen::PromptId;

namespace {

std::vector<promptgen::DescriptionRecord> descriptions(std::size_t categories) {
  promptgen::FixtureBackend backend;
  promptgen::PromptCache cache;
  auto entries = fixtures::entries(categories);
  return promptgen::build_text_corpus(entries, promptgen::default_templates(), backend, cache).records;
}

CategoryIndex index_over(std::size_t categories, int images_per_category) {
  std::vector<std::string> ids(fixtures::desk_labels().begin(), fixtures::desk_labels().begin() + categories);
  return build_manifest(synthetic_image_records(ids, images_per_category), descriptions(categories));
}

}  // namespace

TEST_CASE("build_manifest counts usable categories") {
  std::vector<ImageRecord> images{{"a0", "golden_retriever"}, {"a1", "golden_retriever"}, {"b0", "tabby_cat"}};
  auto index = build_manifest(images, descriptions(2));
  CHECK(index.usable_categories().size() == 2);
  CHECK(index.incomplete_categories().empty());
  CHECK(index.buckets().at("golden_retriever").images.size() == 2);
  CHECK(index.buckets().at("tabby_cat").descriptions.size() == 45);
}

TEST_CASE("build_manifest rejects broken inputs") {
  auto texts = descriptions(2);
  std::vector<ImageRecord> one_cat{{"a0", "golden_retriever"}};
  CHECK_THROWS_AS(build_manifest(one_cat, texts), ManifestError);  // tabby_cat descriptions dangle
  CHECK_THROWS_AS(build_manifest(std::vector<ImageRecord>{}, texts), ManifestError);
  std::vector<ImageRecord> dup{{"a0", "golden_retriever"}, {"a0", "tabby_cat"}};
  CHECK_THROWS_AS(build_manifest(dup, texts), ManifestError);

  auto index = build_manifest(one_cat, texts, std::set<std::string>{"golden_retriever", "tabby_cat"});
  CHECK(index.usable_categories() == std::vector<std::string>{"golden_retriever"});
  CHECK(index.incomplete_categories() == std::vector<std::string>{"tabby_cat"});
}

TEST_CASE("sample_batch is deterministic and category consistent") {
  auto index = index_over(4, 3);
  auto a = sample_batch(index, 4, 7);
  auto b = sample_batch(index, 4, 7);
  REQUIRE(a.triples.size() == 4);
  std::set<std::string> cats;
  for (std::size_t i = 0; i < a.triples.size(); ++i) {
    CHECK(a.triples[i].image_id == b.triples[i].image_id);
    CHECK(a.triples[i].description_id == b.triples[i].description_id);
    const auto& img = index.images()[index.image_position(a.triples[i].image_id)];
    const auto& txt = index.descriptions()[index.description_position(a.triples[i].description_id)];
    CHECK(img.category_id == a.triples[i].category_id);
    CHECK(txt.category_id == a.triples[i].category_id);
    cats.insert(a.triples[i].category_id);
  }
  CHECK(cats.size() == 4);  // distinct categories by default

  SampleOptions repeat;
  repeat.allow_repeated_categories = true;
  auto big = sample_batch(index, 8, 7, repeat);
  CHECK(big.triples.size() == 8);
  CHECK_THROWS(sample_batch(index, 8, 7));  // only four categories
}

TEST_CASE("prompt filter restricts the eligible descriptions") {
  auto index = index_over(4, 2);
  SampleOptions opts;
  opts.prompt_filter = std::set<PromptId>{PromptId::P1};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& t : sample_batch(index, 4, seed, opts).triples) {
      CHECK(index.descriptions()[index.description_position(t.description_id)].prompt_id == PromptId::P1);
    }
  }
  std::vector<ImageRecord> images{{"a0", "golden_retriever"}, {"b0", "tabby_cat"}};
  auto texts = descriptions(2);
  std::erase_if(texts, [](const auto& d) { return d.prompt_id == PromptId::P1; });
  auto no_p1 = build_manifest(images, texts);
  CHECK_THROWS_AS(sample_batch(no_p1, 2, 0, opts), SamplingError);
}

TEST_CASE("sample_batch preconditions") {
  auto index = index_over(1, 2);
  CHECK_THROWS_AS(sample_batch(index, 2, 0), PreconditionError);
  auto two = index_over(2, 2);
  CHECK_THROWS_AS(sample_batch(two, 1, 0), PreconditionError);
}

TEST_CASE("shuffle_pairs keeps the multisets and crosses categories") {
  auto index = index_over(2, 4);
  double fraction_sum = 0;
  const int trials = 20;
  for (int seed = 0; seed < trials; ++seed) {
    auto shuffled = shuffle_pairs(index, static_cast<std::uint64_t>(seed));
    CHECK_FALSE(shuffled.noop);
    CHECK(shuffled.cross_category_fraction > 0);
    CHECK(shuffled.index.images().size() == index.images().size());
    std::multiset<std::string> before, after;
    for (const auto& d : index.descriptions()) before.insert(d.text);
    for (const auto& d : shuffled.index.descriptions()) after.insert(d.text);
    CHECK(before == after);
    for (const auto& [cat, bucket] : index.buckets()) {
      CHECK(shuffled.index.buckets().at(cat).descriptions.size() == bucket.descriptions.size());
    }
    fraction_sum += shuffled.cross_category_fraction;
  }
  // Oracle: a uniform permutation moves a description of category c off its
  // category with probability 1 - p_c, so the mean is 1 - sum p_c^2 = 0.5.
  const double expected = 0.5;
  const double sd = std::sqrt(expected * (1 - expected) / (90.0 * trials));
  CHECK(fraction_sum / trials >= expected - 4 * sd);
  CHECK(fraction_sum / trials <= expected + 4 * sd);
}

TEST_CASE("shuffle_pairs on a single category is a no-op") {
  auto index = index_over(1, 2);
  auto shuffled = shuffle_pairs(index, 3);
  CHECK(shuffled.noop);
  CHECK(shuffled.cross_category_fraction == 0.0);
}

TEST_CASE("split policies") {
  auto m = fixtures::desk_manifest(8, 8, SplitPolicy::CategoryHoldout, 0.25, 1);
  auto pre = build_split_index(m, Split::Pretrain);
  auto eval = build_split_index(m, Split::Eval);
  CHECK(eval.usable_categories().size() == 2);
  CHECK(pre.usable_categories().size() == 6);
  for (const auto& c : eval.usable_categories()) CHECK_FALSE(pre.buckets().count(c));

  auto inst = fixtures::desk_manifest(8, 8, SplitPolicy::InstanceHoldout, 0.25, 1);
  auto ipre = build_split_index(inst, Split::Pretrain);
  auto ieval = build_split_index(inst, Split::Eval);
  CHECK(ipre.usable_categories().size() == 8);
  CHECK(ieval.usable_categories().size() == 8);
  CHECK(ieval.images().size() == 16);
  CHECK(ipre.images().size() == 48);
}

TEST_CASE("manifest files round trip") {
  fixtures::TempDir dir("manifest");
  auto m = fixtures::desk_manifest(3, 2, SplitPolicy::InstanceHoldout, 0.25, 4);
  write_manifest(dir / "manifest.jsonl", m);
  auto back = read_manifest(dir / "manifest.jsonl");
  REQUIRE(back.images.size() == m.images.size());
  REQUIRE(back.descriptions.size() == m.descriptions.size());
  CHECK(back.description_splits == m.description_splits);
  CHECK(back.split_policy == m.split_policy);
  for (std::size_t i = 0; i < m.images.size(); ++i) CHECK(back.images[i].split == m.images[i].split);
}

TEST_CASE("synthetic images are deterministic and class conditional") {
  auto a = render_synthetic_image("tabby_cat", "tabby_cat/img0", 16);
  auto b = render_synthetic_image("tabby_cat", "tabby_cat/img0", 16);
  auto c = render_synthetic_image("sailboat", "sailboat/img0", 16);
  CHECK(a.pixels == b.pixels);
  CHECK(a.pixels != c.pixels);
  CHECK(a.pixels.size() == 16u * 16u * 3u);
}
