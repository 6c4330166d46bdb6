// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

// Category-level join of images and descriptions, pair sampling, and the
// shuffled-pairing ablation.

#ifndef PITL_CORPUS_HPP_
#define PITL_CORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pitl/promptgen.hpp"

namespace pitl::corpus {

using promptgen::DescriptionRecord;
using promptgen::PromptId;

enum class Split { Pretrain, Eval };
std::string to_string(Split split);
Split parse_split(std::string_view text);

enum class SplitPolicy { CategoryHoldout, InstanceHoldout };
std::string to_string(SplitPolicy policy);
SplitPolicy parse_split_policy(std::string_view text);

/// `source` is either "synthetic" (procedural, class-conditional pattern
/// keyed by category and image id) or a path to a binary PPM file.
struct ImageRecord {
  std::string image_id;
  std::string category_id;
  std::string source = "synthetic";
  Split split = Split::Pretrain;
};

/// Images and descriptions with their split assignment.
struct Manifest {
  static constexpr int kVersion = 1;
  std::vector<ImageRecord> images;
  std::vector<DescriptionRecord> descriptions;
  std::vector<Split> description_splits;  // parallel to descriptions
  std::string split_policy = "unassigned";

  nlohmann::json header() const;
};

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Line-delimited image records (the image half of a manifest).
void write_image_records(const std::filesystem::path& path, const std::vector<ImageRecord>& images);
std::vector<ImageRecord> read_image_records(const std::filesystem::path& path);

/// Category holdout moves whole categories (about eval_fraction of them, at
/// least one) to the eval split; instance holdout moves about eval_fraction
/// of each category's images and of each (category, prompt) group of
/// descriptions, keeping at least one of each group in pretrain.
void assign_splits(Manifest& manifest, SplitPolicy policy, double eval_fraction, std::uint64_t seed);

/// `images_per_category` synthetic image records per category, ids
/// "<category>/img<k>".
std::vector<ImageRecord> synthetic_image_records(const std::vector<std::string>& category_ids,
                                                 int images_per_category);

class CategoryIndex {
 public:
  struct Bucket {
    std::vector<std::size_t> images;        // indices into images()
    std::vector<std::size_t> descriptions;  // indices into descriptions()
  };

  /// Throws ManifestError on empty inputs, duplicate ids or a record whose
  /// category is unknown. Known categories are `known_categories` when
  /// given, otherwise the categories of the image records.
  static CategoryIndex build(std::vector<ImageRecord> images, std::vector<DescriptionRecord> descriptions,
                             const std::optional<std::set<std::string>>& known_categories = std::nullopt);

  const std::vector<ImageRecord>& images() const { return images_; }
  const std::vector<DescriptionRecord>& descriptions() const { return descriptions_; }
  const std::map<std::string, Bucket>& buckets() const { return buckets_; }

  /// Categories with at least one image and one description.
  std::vector<std::string> usable_categories() const;
  /// Categories lacking images or descriptions.
  std::vector<std::string> incomplete_categories() const;

  std::size_t image_position(const std::string& image_id) const;
  std::size_t description_position(const std::string& description_id) const;

 private:
  std::vector<ImageRecord> images_;
  std::vector<DescriptionRecord> descriptions_;
  std::map<std::string, Bucket> buckets_;
  std::map<std::string, std::size_t> image_pos_;
  std::map<std::string, std::size_t> description_pos_;
};

/// Builds the category index over all records.
CategoryIndex build_manifest(std::vector<ImageRecord> images, std::vector<DescriptionRecord> descriptions,
                             const std::optional<std::set<std::string>>& known_categories = std::nullopt);

/// Index over the records of one split.
CategoryIndex build_split_index(const Manifest& manifest, Split split);

struct PairTriple {
  std::string image_id;
  std::string description_id;
  std::string category_id;
};

struct PairBatch {
  std::vector<PairTriple> triples;
  std::uint64_t seed = 0;
};

struct SampleOptions {
  std::optional<std::set<PromptId>> prompt_filter;
  // By default a batch never holds two triples of one category.
  bool allow_repeated_categories = false;
};

/// Category-uniform, then image- and description-uniform within category.
/// Deterministic in (index, batch_size, seed, options).
PairBatch sample_batch(const CategoryIndex& index, int batch_size, std::uint64_t seed,
                       const SampleOptions& options = {});

struct ShuffleResult {
  CategoryIndex index;
  std::uint64_t seed = 0;
  // Fraction of descriptions now attached to a category other than their own.
  double cross_category_fraction = 0.0;
  int redraws = 0;
  bool noop = false;
};

/// Uniformly permutes descriptions across the category slots, destroying the
/// image/description category association while keeping the image set, the
/// description multiset and per-category description counts. A draw that
/// moves no description across categories is rejected and redrawn.
ShuffleResult shuffle_pairs(const CategoryIndex& index, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Pixels

/// Row-major (y, x, c) pixel buffer, normalized to roughly zero mean.
struct Image {
  int size = 0;
  int channels = 0;
  std::vector<double> pixels;

  double at(int y, int x, int c) const { return pixels[static_cast<std::size_t>((y * size + x) * channels + c)]; }
};

/// Class-conditional oriented grating: colour, orientation and frequency
/// come from the category id, phase and noise from the image id.
Image render_synthetic_image(const std::string& category_id, const std::string& image_id, int size,
                             int channels = 3);

/// Loads a binary PPM (P6) with nearest-neighbour resize, or renders a
/// synthetic image.
Image load_image(const ImageRecord& record, int size, int channels = 3);

}  // namespace pitl::corpus

#endif  // PITL_CORPUS_HPP_
