// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pitl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "pitl/log.hpp"
#include "pitl/random.hpp"

namespace pitl::corpus {

std::string to_string(Split split) { return split == Split::Pretrain ? "pretrain" : "eval"; }

Split parse_split(std::string_view text) {
  if (text == "pretrain" || text == "train") return Split::Pretrain;
  if (text == "eval" || text == "test") return Split::Eval;
  throw ContractError("unknown split: " + std::string(text));
}

std::string to_string(SplitPolicy policy) {
  return policy == SplitPolicy::CategoryHoldout ? "category-holdout" : "instance-holdout";
}

SplitPolicy parse_split_policy(std::string_view text) {
  if (text == "category-holdout") return SplitPolicy::CategoryHoldout;
  if (text == "instance-holdout") return SplitPolicy::InstanceHoldout;
  throw ContractError("unknown split policy: " + std::string(text));
}

// ---------------------------------------------------------------------------
// Manifest files

namespace {

nlohmann::json image_to_json(const ImageRecord& r) {
  return {{"kind", "image"},
          {"image_id", r.image_id},
          {"category_id", r.category_id},
          {"source", r.source},
          {"split", to_string(r.split)}};
}

ImageRecord image_from_json(const nlohmann::json& j) {
  ImageRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.category_id = j.at("category_id").get<std::string>();
  r.source = j.value("source", "synthetic");
  r.split = parse_split(j.value("split", "pretrain"));
  return r;
}

}  // namespace

nlohmann::json Manifest::header() const {
  std::set<std::string> categories;
  long split_images[2] = {0, 0};
  long split_texts[2] = {0, 0};
  for (const auto& im : images) {
    categories.insert(im.category_id);
    ++split_images[im.split == Split::Eval];
  }
  for (std::size_t i = 0; i < descriptions.size(); ++i) {
    categories.insert(descriptions[i].category_id);
    ++split_texts[i < description_splits.size() && description_splits[i] == Split::Eval];
  }
  return {{"kind", "header"},
          {"version", kVersion},
          {"split_policy", split_policy},
          {"counts",
           {{"images", images.size()}, {"descriptions", descriptions.size()}, {"categories", categories.size()}}},
          {"splits",
           {{"pretrain", {{"images", split_images[0]}, {"descriptions", split_texts[0]}}},
            {"eval", {{"images", split_images[1]}, {"descriptions", split_texts[1]}}}}}};
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ManifestError("cannot write " + path.string());
  out << manifest.header().dump() << '\n';
  for (const auto& im : manifest.images) out << image_to_json(im).dump() << '\n';
  for (std::size_t i = 0; i < manifest.descriptions.size(); ++i) {
    auto j = promptgen::to_json(manifest.descriptions[i]);
    j["kind"] = "description";
    j["split"] = to_string(i < manifest.description_splits.size() ? manifest.description_splits[i] : Split::Pretrain);
    out << j.dump() << '\n';
  }
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  bool have_header = false;
  nlohmann::json header;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    const auto kind = j.value("kind", "");
    if (kind == "header") {
      if (j.value("version", 0) != Manifest::kVersion) throw ManifestError("unsupported manifest version");
      m.split_policy = j.value("split_policy", "unassigned");
      header = j;
      have_header = true;
    } else if (kind == "image") {
      m.images.push_back(image_from_json(j));
    } else if (kind == "description") {
      m.descriptions.push_back(promptgen::description_from_json(j));
      m.description_splits.push_back(parse_split(j.value("split", "pretrain")));
    } else {
      throw ManifestError("unknown manifest record kind '" + kind + "'");
    }
  }
  if (!have_header) throw ManifestError("manifest without header: " + path.string());
  const auto& counts = header.at("counts");
  if (counts.at("images").get<std::size_t>() != m.images.size() ||
      counts.at("descriptions").get<std::size_t>() != m.descriptions.size()) {
    throw ManifestError("manifest counts do not match its records: " + path.string());
  }
  return m;
}

void write_image_records(const std::filesystem::path& path, const std::vector<ImageRecord>& images) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ManifestError("cannot write " + path.string());
  for (const auto& im : images) out << image_to_json(im).dump() << '\n';
}

std::vector<ImageRecord> read_image_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open " + path.string());
  std::vector<ImageRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(image_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

void assign_splits(Manifest& m, SplitPolicy policy, double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw ContractError("eval_fraction must be in [0, 1)");
  m.split_policy = to_string(policy);
  m.description_splits.assign(m.descriptions.size(), Split::Pretrain);
  for (auto& im : m.images) im.split = Split::Pretrain;
  if (eval_fraction == 0.0) return;

  std::set<std::string> category_set;
  for (const auto& im : m.images) category_set.insert(im.category_id);
  for (const auto& d : m.descriptions) category_set.insert(d.category_id);
  std::vector<std::string> categories(category_set.begin(), category_set.end());
  auto rng = make_rng(seed, "split");

  if (policy == SplitPolicy::CategoryHoldout) {
    std::shuffle(categories.begin(), categories.end(), rng);
    auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(categories.size())));
    n_eval = std::clamp<std::size_t>(n_eval, 1, categories.size() > 1 ? categories.size() - 1 : 1);
    std::set<std::string> held(categories.begin(), categories.begin() + static_cast<std::ptrdiff_t>(n_eval));
    for (auto& im : m.images)
      if (held.count(im.category_id)) im.split = Split::Eval;
    for (std::size_t i = 0; i < m.descriptions.size(); ++i)
      if (held.count(m.descriptions[i].category_id)) m.description_splits[i] = Split::Eval;
    return;
  }

  // Instance holdout: per category (and per prompt for descriptions), hold
  // out round(fraction * n) items but keep at least one in pretrain.
  auto hold_out = [&](std::vector<std::size_t>& positions, auto&& mark) {
    if (positions.size() < 2) return;
    std::shuffle(positions.begin(), positions.end(), rng);
    auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(positions.size())));
    n_eval = std::clamp<std::size_t>(n_eval, 1, positions.size() - 1);
    for (std::size_t k = 0; k < n_eval; ++k) mark(positions[k]);
  };
  for (const auto& c : categories) {
    std::vector<std::size_t> ims;
    std::map<promptgen::PromptId, std::vector<std::size_t>> ds;
    for (std::size_t i = 0; i < m.images.size(); ++i)
      if (m.images[i].category_id == c) ims.push_back(i);
    for (std::size_t i = 0; i < m.descriptions.size(); ++i)
      if (m.descriptions[i].category_id == c) ds[m.descriptions[i].prompt_id].push_back(i);
    hold_out(ims, [&](std::size_t i) { m.images[i].split = Split::Eval; });
    for (auto& [prompt, group] : ds) hold_out(group, [&](std::size_t i) { m.description_splits[i] = Split::Eval; });
  }
}

std::vector<ImageRecord> synthetic_image_records(const std::vector<std::string>& category_ids,
                                                 int images_per_category) {
  if (images_per_category < 1) throw PreconditionError("images_per_category must be >= 1");
  std::vector<ImageRecord> out;
  for (const auto& c : category_ids)
    for (int k = 0; k < images_per_category; ++k)
      out.push_back({c + "/img" + std::to_string(k), c, "synthetic", Split::Pretrain});
  return out;
}

// ---------------------------------------------------------------------------
// CategoryIndex

CategoryIndex CategoryIndex::build(std::vector<ImageRecord> images, std::vector<DescriptionRecord> descriptions,
                                   const std::optional<std::set<std::string>>& known_categories) {
  if (images.empty()) throw ManifestError("manifest has no images");
  if (descriptions.empty()) throw ManifestError("manifest has no descriptions");
  std::set<std::string> known;
  if (known_categories) {
    known = *known_categories;
  } else {
    for (const auto& im : images) known.insert(im.category_id);
  }
  CategoryIndex index;
  for (const auto& c : known) index.buckets_[c];
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    if (!known.count(im.category_id)) {
      throw ManifestError("image " + im.image_id + " references unknown category " + im.category_id);
    }
    if (!index.image_pos_.emplace(im.image_id, i).second) throw ManifestError("duplicate image id " + im.image_id);
    index.buckets_[im.category_id].images.push_back(i);
  }
  for (std::size_t i = 0; i < descriptions.size(); ++i) {
    const auto& d = descriptions[i];
    if (!known.count(d.category_id)) {
      throw ManifestError("description " + d.description_id + " references unknown category " + d.category_id);
    }
    if (!index.description_pos_.emplace(d.description_id, i).second) {
      throw ManifestError("duplicate description id " + d.description_id);
    }
    index.buckets_[d.category_id].descriptions.push_back(i);
  }
  index.images_ = std::move(images);
  index.descriptions_ = std::move(descriptions);
  for (const auto& c : index.incomplete_categories()) log::warn("category " + c + " lacks images or descriptions");
  return index;
}

std::vector<std::string> CategoryIndex::usable_categories() const {
  std::vector<std::string> out;
  for (const auto& [c, b] : buckets_)
    if (!b.images.empty() && !b.descriptions.empty()) out.push_back(c);
  return out;
}

std::vector<std::string> CategoryIndex::incomplete_categories() const {
  std::vector<std::string> out;
  for (const auto& [c, b] : buckets_)
    if (b.images.empty() || b.descriptions.empty()) out.push_back(c);
  return out;
}

std::size_t CategoryIndex::image_position(const std::string& image_id) const {
  auto it = image_pos_.find(image_id);
  if (it == image_pos_.end()) throw ContractError("unknown image id " + image_id);
  return it->second;
}

std::size_t CategoryIndex::description_position(const std::string& description_id) const {
  auto it = description_pos_.find(description_id);
  if (it == description_pos_.end()) throw ContractError("unknown description id " + description_id);
  return it->second;
}

CategoryIndex build_manifest(std::vector<ImageRecord> images, std::vector<DescriptionRecord> descriptions,
                             const std::optional<std::set<std::string>>& known_categories) {
  return CategoryIndex::build(std::move(images), std::move(descriptions), known_categories);
}

CategoryIndex build_split_index(const Manifest& manifest, Split split) {
  std::vector<ImageRecord> images;
  std::vector<DescriptionRecord> descriptions;
  std::set<std::string> known;
  for (const auto& im : manifest.images) {
    known.insert(im.category_id);
    if (im.split == split) images.push_back(im);
  }
  for (std::size_t i = 0; i < manifest.descriptions.size(); ++i) {
    known.insert(manifest.descriptions[i].category_id);
    const auto s = i < manifest.description_splits.size() ? manifest.description_splits[i] : Split::Pretrain;
    if (s == split) descriptions.push_back(manifest.descriptions[i]);
  }
  // Restrict the known set to categories present in this split.
  std::set<std::string> present;
  for (const auto& im : images) present.insert(im.category_id);
  for (const auto& d : descriptions) present.insert(d.category_id);
  return CategoryIndex::build(std::move(images), std::move(descriptions), present);
}

// ---------------------------------------------------------------------------
// Sampling

PairBatch sample_batch(const CategoryIndex& index, int batch_size, std::uint64_t seed, const SampleOptions& options) {
  if (batch_size < 2) throw PreconditionError("sample_batch: batch_size must be >= 2");
  const auto usable = index.usable_categories();
  if (usable.size() < 2) throw PreconditionError("sample_batch: need at least two usable categories");

  // Eligible descriptions per usable category under the prompt filter.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> eligible;
  for (const auto& c : usable) {
    std::vector<std::size_t> ds;
    for (auto d : index.buckets().at(c).descriptions) {
      if (!options.prompt_filter || options.prompt_filter->count(index.descriptions()[d].prompt_id)) ds.push_back(d);
    }
    if (!ds.empty()) eligible.emplace_back(c, std::move(ds));
  }
  if (eligible.empty()) throw SamplingError("sample_batch: prompt filter leaves no eligible description");
  if (eligible.size() < 2) throw PreconditionError("sample_batch: prompt filter leaves fewer than two categories");
  if (!options.allow_repeated_categories && static_cast<std::size_t>(batch_size) > eligible.size()) {
    throw PreconditionError("sample_batch: batch_size " + std::to_string(batch_size) + " exceeds the " +
                            std::to_string(eligible.size()) + " distinct eligible categories");
  }

  Rng rng(seed);
  std::vector<std::size_t> chosen;
  if (options.allow_repeated_categories) {
    for (int i = 0; i < batch_size; ++i) chosen.push_back(uniform_index(rng, eligible.size()));
  } else {
    std::vector<std::size_t> order(eligible.size());
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < batch_size; ++i) {
      const auto j = static_cast<std::size_t>(i) + uniform_index(rng, order.size() - static_cast<std::size_t>(i));
      std::swap(order[static_cast<std::size_t>(i)], order[j]);
      chosen.push_back(order[static_cast<std::size_t>(i)]);
    }
  }

  PairBatch batch;
  batch.seed = seed;
  for (auto k : chosen) {
    const auto& [category, ds] = eligible[k];
    const auto& ims = index.buckets().at(category).images;
    const auto& im = index.images()[ims[uniform_index(rng, ims.size())]];
    const auto& d = index.descriptions()[ds[uniform_index(rng, ds.size())]];
    batch.triples.push_back({im.image_id, d.description_id, category});
  }
  return batch;
}

ShuffleResult shuffle_pairs(const CategoryIndex& index, std::uint64_t seed) {
  // Slot k belongs to slot_category[k]; initially holds description slot_desc[k].
  std::vector<std::string> slot_category;
  std::vector<std::size_t> slot_desc;
  std::size_t categories_with_text = 0;
  for (const auto& [c, b] : index.buckets()) {
    if (!b.descriptions.empty()) ++categories_with_text;
    for (auto d : b.descriptions) {
      slot_category.push_back(c);
      slot_desc.push_back(d);
    }
  }
  ShuffleResult result{index, seed, 0.0, 0, false};
  if (categories_with_text < 2) {
    log::warn("shuffle_pairs: fewer than two categories with descriptions; shuffle is a no-op");
    result.noop = true;
    return result;
  }

  Rng rng(seed);
  std::vector<std::size_t> perm(slot_desc.size());
  std::size_t crossing = 0;
  while (true) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    crossing = 0;
    for (std::size_t k = 0; k < perm.size(); ++k)
      if (slot_category[perm[k]] != slot_category[k]) ++crossing;
    if (crossing > 0) break;
    ++result.redraws;
    log::warn("shuffle_pairs: drawn permutation keeps every category intact; redrawing");
  }

  std::vector<DescriptionRecord> shuffled;
  shuffled.reserve(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    auto d = index.descriptions()[slot_desc[perm[k]]];
    d.category_id = slot_category[k];
    shuffled.push_back(std::move(d));
  }
  std::set<std::string> known;
  for (const auto& [c, b] : index.buckets()) known.insert(c);
  result.index = CategoryIndex::build(index.images(), std::move(shuffled), known);
  result.cross_category_fraction = static_cast<double>(crossing) / static_cast<double>(perm.size());
  return result;
}

// ---------------------------------------------------------------------------
// Pixels

Image render_synthetic_image(const std::string& category_id, const std::string& image_id, int size, int channels) {
  if (size < 1 || channels < 1) throw ContractError("render_synthetic_image: bad geometry");
  auto cat_rng = Rng(fnv1a64("category:" + category_id));
  auto inst_rng = Rng(fnv1a64("image:" + image_id));
  constexpr double kPi = 3.14159265358979323846;

  std::vector<double> colour(static_cast<std::size_t>(channels));
  for (auto& c : colour) c = 0.15 + 0.85 * uniform01(cat_rng);
  const double theta = kPi * uniform01(cat_rng);
  const double cycles = 1.0 + 3.0 * uniform01(cat_rng);
  const double phase = 2.0 * kPi * uniform01(inst_rng);
  const double brightness = 0.9 + 0.2 * uniform01(inst_rng);
  std::normal_distribution<double> noise(0.0, 0.08);

  Image img{size, channels, std::vector<double>(static_cast<std::size_t>(size * size * channels))};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = (x * std::cos(theta) + y * std::sin(theta)) / size;
      const double wave = 0.55 + 0.45 * std::sin(2.0 * kPi * cycles * u + phase);
      for (int c = 0; c < channels; ++c) {
        const double v = brightness * colour[static_cast<std::size_t>(c)] * wave + noise(inst_rng);
        img.pixels[static_cast<std::size_t>((y * size + x) * channels + c)] = (v - 0.5) / 0.25;
      }
    }
  return img;
}

Image load_image(const ImageRecord& record, int size, int channels) {
  if (record.source.empty() || record.source == "synthetic") {
    return render_synthetic_image(record.category_id, record.image_id, size, channels);
  }
  std::ifstream in(record.source, std::ios::binary);
  if (!in) throw ManifestError("cannot open image " + record.source);
  std::string magic;
  int w = 0;
  int h = 0;
  int maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (magic != "P6" || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw ManifestError("unsupported image format (binary PPM expected): " + record.source);
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * 3));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw ManifestError("truncated image " + record.source);
  Image img{size, channels, std::vector<double>(static_cast<std::size_t>(size * size * channels))};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int sy = y * h / size;
      const int sx = x * w / size;
      for (int c = 0; c < channels; ++c) {
        const double v = raw[static_cast<std::size_t>((sy * w + sx) * 3 + std::min(c, 2))] / double(maxval);
        img.pixels[static_cast<std::size_t>((y * size + x) * channels + c)] = (v - 0.5) / 0.25;
      }
    }
  return img;
}

}  // namespace pitl::corpus
