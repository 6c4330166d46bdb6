// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PITL_TESTS_FIXTURES_HPP_
#define PITL_TESTS_FIXTURES_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "pitl/corpus.hpp"
#include "pitl/model.hpp"
#include "pitl/objectives.hpp"
#include "pitl/promptgen.hpp"
#include "pitl/random.hpp"

namespace fixtures {

inline const std::vector<std::string>& desk_labels() {
  static const std::vector<std::string> labels = {"golden_retriever", "tabby_cat",  "red_fox",  "barn_owl",
                                                  "sea_turtle",       "fire_truck", "sailboat", "tulip"};
  return labels;
}

inline std::vector<pitl::promptgen::CategoryEntry> entries(std::size_t n) {
  std::vector<pitl::promptgen::CategoryEntry> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({desk_labels()[i], desk_labels()[i], {}});
  return out;
}

/// Fixture-backend descriptions plus `images_per_category` synthetic images
/// per category, split by `policy`.
inline pitl::corpus::Manifest desk_manifest(std::size_t categories, int images_per_category,
                                            pitl::corpus::SplitPolicy policy, double eval_fraction,
                                            std::uint64_t seed) {
  auto cats = entries(categories);
  pitl::promptgen::FixtureBackend backend;
  pitl::promptgen::PromptCache cache("v1");
  auto text = pitl::promptgen::build_text_corpus(cats, pitl::promptgen::default_templates(), backend, cache);
  std::vector<std::string> ids;
  for (const auto& c : cats) ids.push_back(c.category_id);
  pitl::corpus::Manifest m;
  m.images = pitl::corpus::synthetic_image_records(ids, images_per_category);
  m.descriptions = text.records;
  pitl::corpus::assign_splits(m, policy, eval_fraction, seed);
  return m;
}

/// Hidden 16, two vision layers, one text and one fusion layer.
inline pitl::ModelConfig tiny_model() {
  pitl::ModelConfig c;
  c.vision_layers = 2;
  c.text_layers = 1;
  c.fusion_layers = 1;
  c.hidden_dim = 16;
  c.heads = 2;
  c.patch_size = 4;
  c.image_size = 8;
  c.channels = 3;
  c.vocab_size = 32;
  c.max_text_len = 8;
  c.projection_dim = 8;
  c.mlp_ratio = 2;
  return c;
}

template <typename Scalar>
pitl::Matrix<Scalar> random_unit_rows(pitl::Index rows, pitl::Index cols, pitl::Rng& rng) {
  std::normal_distribution<double> normal;
  pitl::Matrix<Scalar> m(rows, cols);
  for (pitl::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(normal(rng));
  for (pitl::Index r = 0; r < rows; ++r) m.row(r).normalize();
  return m;
}

inline std::vector<std::vector<double>> to_rows(const pitl::Matrix<double>& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (pitl::Index r = 0; r < m.rows(); ++r)
    for (pitl::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r)].push_back(m(r, c));
  return out;
}

/// Random token sequences: [CLS] then `length` regular ids.
inline std::vector<std::vector<int>> random_tokens(std::size_t count, int length, int vocab, pitl::Rng& rng) {
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<int> ids{2};
    for (int k = 0; k < length; ++k)
      ids.push_back(4 + static_cast<int>(pitl::uniform_index(rng, static_cast<std::size_t>(vocab - 4))));
    out.push_back(ids);
  }
  return out;
}

template <typename Scalar>
pitl::ImageTensor<Scalar> random_image(const pitl::ModelConfig& c, pitl::Rng& rng) {
  std::normal_distribution<double> normal;
  pitl::ImageTensor<Scalar> t{c.image_size, c.image_size, c.channels,
                              pitl::Matrix<Scalar>(c.image_size * c.image_size, c.channels)};
  for (pitl::Index i = 0; i < t.pixels.size(); ++i) t.pixels.data()[i] = static_cast<Scalar>(normal(rng));
  return t;
}

/// A scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("pitl-test-" + tag + "-" + std::to_string(pitl::fnv1a64(tag + std::to_string(reinterpret_cast<std::uintptr_t>(this)))));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures

#endif  // PITL_TESTS_FIXTURES_HPP_
