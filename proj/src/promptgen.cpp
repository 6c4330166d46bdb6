// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pitl/promptgen.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "pitl/log.hpp"
#include "pitl/random.hpp"

namespace pitl::promptgen {

std::string to_string(PromptId id) { return "P" + std::to_string(static_cast<int>(id)); }

PromptId parse_prompt_id(std::string_view text) {
  if (text.size() == 2 && (text[0] == 'P' || text[0] == 'p') && text[1] >= '1' && text[1] <= '9') {
    return static_cast<PromptId>(text[1] - '0');
  }
  throw ContractError("invalid prompt id: '" + std::string(text) + "'");
}

std::vector<PromptId> parse_prompt_list(std::string_view text) {
  std::vector<PromptId> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    auto item = text.substr(start, end - start);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
    if (!item.empty()) out.push_back(parse_prompt_id(item));
    start = end + 1;
  }
  if (out.empty()) throw ContractError("empty prompt list");
  return out;
}

const std::vector<PromptTemplate>& default_templates() {
  static const std::vector<PromptTemplate> templates = {
      {PromptId::P1, "Describe colors of a <category>", "colors"},
      {PromptId::P2, "Describe shapes of a <category>", "shapes"},
      {PromptId::P3, "Describe textures of a <category>", "textures"},
      {PromptId::P4, "Describe visual appearances of a <category>", "summarized visual appearances"},
      {PromptId::P5, "Describe a <category> in a scene", "scenes"},
      {PromptId::P6, "Describe what a <category> could be seen with", "relations with other entities"},
      {PromptId::P7, "Describe the places a <category> has been seen", "places"},
      {PromptId::P8, "Describe the main activities of a <category>", "activities"},
      {PromptId::P9, "Describe what is it like to be a <category>", "first-person view"},
  };
  return templates;
}

namespace {

std::size_t count_placeholders(std::string_view text) {
  std::size_t n = 0;
  for (auto pos = text.find(kPlaceholder); pos != std::string_view::npos;
       pos = text.find(kPlaceholder, pos + kPlaceholder.size())) {
    ++n;
  }
  return n;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto end = s.find(sep, start);
    out.emplace_back(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace

void validate_template(const PromptTemplate& tmpl) {
  const auto n = count_placeholders(tmpl.text);
  if (n != 1) {
    throw TemplateError("template " + to_string(tmpl.id) + " must contain exactly one " +
                        std::string(kPlaceholder) + " placeholder, found " + std::to_string(n));
  }
}

std::string render_surface(std::string_view label) {
  std::string out(label);
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

std::string render_prompt(const PromptTemplate& tmpl, std::string_view label_surface) {
  validate_template(tmpl);
  if (trim(label_surface).empty()) throw PreconditionError("render_prompt: empty label");
  std::string out = tmpl.text;
  out.replace(out.find(kPlaceholder), kPlaceholder.size(), render_surface(label_surface));
  return out;
}

std::vector<std::string> CategoryEntry::surface_labels() const {
  std::vector<std::string> out{canonical_label};
  out.insert(out.end(), synonyms.begin(), synonyms.end());
  return out;
}

void CategoryEntry::validate() const {
  if (category_id.empty()) throw ContractError("category entry with empty id");
  if (trim(canonical_label).empty()) throw ContractError("category " + category_id + " has an empty label");
  std::set<std::string> seen{canonical_label};
  for (const auto& s : synonyms) {
    if (trim(s).empty()) throw ContractError("category " + category_id + " has an empty synonym");
    if (!seen.insert(s).second) {
      throw ContractError("category " + category_id + " repeats surface label '" + s + "'");
    }
  }
}

nlohmann::json to_json(const DescriptionRecord& r) {
  return nlohmann::json{{"description_id", r.description_id},
                        {"category_id", r.category_id},
                        {"prompt_id", to_string(r.prompt_id)},
                        {"surface_label_used", r.surface_label_used},
                        {"response_index", r.response_index},
                        {"text", r.text},
                        {"kept_count", r.kept_count}};
}

DescriptionRecord description_from_json(const nlohmann::json& j) {
  DescriptionRecord r;
  r.description_id = j.at("description_id").get<std::string>();
  r.category_id = j.at("category_id").get<std::string>();
  r.prompt_id = parse_prompt_id(j.at("prompt_id").get<std::string>());
  r.surface_label_used = j.at("surface_label_used").get<std::string>();
  r.response_index = j.at("response_index").get<int>();
  r.text = j.at("text").get<std::string>();
  r.kept_count = j.value("kept_count", 1);
  if (normalize_whitespace(r.text).empty()) throw ManifestError("description " + r.description_id + " has empty text");
  return r;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// FixtureBackend

namespace {

constexpr std::string_view kAttributeWords[] = {
    "amber",   "slate",   "ivory",    "crimson", "olive",  "teal",    "golden",  "dusky",
    "speckled", "striped", "glossy",  "matte",   "rough",  "smooth",  "feathery", "scaly",
    "round",   "slender", "angular",  "curved",  "tiny",   "massive", "bright",  "muted",
    "quiet",   "noisy",   "wet",      "dry",     "sandy",  "rocky",   "grassy",  "urban",
    "coastal", "wooded",  "frozen",   "warm",    "calm",   "busy",    "playful", "sturdy",
    "fragile", "ancient", "modern",   "hollow",  "dense",  "soft",    "sharp",   "shiny"};
constexpr std::size_t kNumAttributeWords = std::size(kAttributeWords);

std::string_view focus_lead(PromptId id) {
  switch (id) {
    case PromptId::P1: return "its colors are";
    case PromptId::P2: return "its shape is";
    case PromptId::P3: return "its texture feels";
    case PromptId::P4: return "it looks";
    case PromptId::P5: return "the scene is";
    case PromptId::P6: return "it is seen with things that are";
    case PromptId::P7: return "it is found in places that are";
    case PromptId::P8: return "its days are";
    case PromptId::P9: return "being one feels";
  }
  return "it is";
}

}  // namespace

FixtureBackend::FixtureBackend(std::vector<PromptTemplate> templates) : templates_(std::move(templates)) {}

std::unique_ptr<FixtureBackend> FixtureBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw BackendError("cannot open fixture file " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  auto backend = std::make_unique<FixtureBackend>();
  for (auto it = j.begin(); it != j.end(); ++it) {
    backend->add_canned(it.key(), it.value().get<std::vector<std::string>>());
  }
  return backend;
}

void FixtureBackend::add_canned(const std::string& prompt, std::vector<std::string> responses) {
  std::lock_guard lock(mutex_);
  canned_[prompt] = std::move(responses);
}

long FixtureBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::string FixtureBackend::complete(const std::string& prompt, int sample_index) {
  {
    std::lock_guard lock(mutex_);
    ++calls_;
    auto it = canned_.find(prompt);
    if (it != canned_.end()) {
      if (it->second.empty()) return {};
      return it->second[static_cast<std::size_t>(sample_index) % it->second.size()];
    }
  }
  // Recover the label by matching a known template around the placeholder.
  std::string label;
  std::optional<PromptId> matched;
  for (const auto& t : templates_) {
    const auto pos = t.text.find(kPlaceholder);
    if (pos == std::string::npos) continue;
    const std::string prefix = t.text.substr(0, pos);
    const std::string suffix = t.text.substr(pos + kPlaceholder.size());
    if (prompt.size() > prefix.size() + suffix.size() && prompt.compare(0, prefix.size(), prefix) == 0 &&
        prompt.compare(prompt.size() - suffix.size(), suffix.size(), suffix) == 0) {
      label = prompt.substr(prefix.size(), prompt.size() - prefix.size() - suffix.size());
      matched = t.id;
      break;
    }
  }
  if (!matched) label = prompt;
  std::transform(label.begin(), label.end(), label.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

  // A label-specific palette of six attribute words; response r uses words
  // (r, r+1, r+2) of the palette so the five responses are distinct.
  const std::uint64_t h = fnv1a64(label);
  std::vector<std::string_view> palette;
  for (std::size_t k = 0; palette.size() < 6; ++k) {
    auto w = kAttributeWords[(h + k * 11 + (h >> 17) % 5) % kNumAttributeWords];
    if (std::find(palette.begin(), palette.end(), w) == palette.end()) palette.push_back(w);
  }
  const auto r = static_cast<std::size_t>(sample_index);
  std::ostringstream os;
  os << "a " << label << " : " << (matched ? focus_lead(*matched) : std::string_view("it is")) << ' '
     << palette[r % 6] << " , " << palette[(r + 1) % 6] << " and " << palette[(r + 2) % 6] << " .";
  return os.str();
}

// ---------------------------------------------------------------------------
// PromptCache

PromptCache::PromptCache(std::string version, std::optional<std::filesystem::path> dir)
    : version_(std::move(version)), dir_(std::move(dir)) {
  if (version_.empty()) throw ContractError("cache version must be non-empty");
}

std::string PromptCache::key_hash(PromptId id, std::string_view surface_label, int response_index) {
  std::string key = to_string(id);
  key.push_back('\x1f');
  key.append(surface_label);
  key.push_back('\x1f');
  key.append(std::to_string(response_index));
  return hex64(fnv1a64(key));
}

std::filesystem::path PromptCache::entry_path(const std::string& hash) const {
  return *dir_ / version_ / hash.substr(0, 2) / (hash + ".txt");
}

std::optional<std::string> PromptCache::get(PromptId id, const std::string& surface_label, int response_index) {
  const auto hash = key_hash(id, surface_label, response_index);
  std::lock_guard lock(mutex_);
  if (auto it = memory_.find(hash); it != memory_.end()) {
    ++hits_;
    return it->second;
  }
  if (dir_) {
    std::ifstream in(entry_path(hash), std::ios::binary);
    if (in) {
      std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      memory_[hash] = text;
      ++hits_;
      return text;
    }
  }
  ++misses_;
  return std::nullopt;
}

void PromptCache::put(PromptId id, const std::string& surface_label, int response_index, const std::string& text) {
  const auto hash = key_hash(id, surface_label, response_index);
  std::lock_guard lock(mutex_);
  memory_[hash] = text;
  if (!dir_) return;
  const auto path = entry_path(hash);
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw BackendError("cannot write cache entry " + tmp);
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

long PromptCache::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

long PromptCache::misses() const {
  std::lock_guard lock(mutex_);
  return misses_;
}

// ---------------------------------------------------------------------------
// Generation

GenerationStats& GenerationStats::operator+=(const GenerationStats& o) {
  backend_calls += o.backend_calls;
  cache_hits += o.cache_hits;
  retries += o.retries;
  empty_responses += o.empty_responses;
  duplicates_collapsed += o.duplicates_collapsed;
  failures += o.failures;
  return *this;
}

namespace {

class RateLimiter {
 public:
  explicit RateLimiter(double per_second) : per_second_(per_second) {}
  void acquire() {
    if (per_second_ <= 0) return;
    const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / per_second_));
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(mutex_);
      const auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_);
      next_ = slot + interval;
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  double per_second_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_{};
};

struct Task {
  std::string surface;
  const PromptTemplate* tmpl;
  int response_index;
  std::optional<std::string> text;  // unset on failure
  bool from_cache = false;
  int retries = 0;
  std::string error;
};

}  // namespace

std::vector<DescriptionRecord> generate_descriptions(const CategoryEntry& entry,
                                                     std::span<const PromptTemplate> templates,
                                                     LanguageModelBackend& backend, PromptCache& cache,
                                                     const GenerationOptions& options, GenerationStats* stats) {
  if (options.responses_per_prompt < 1) throw PreconditionError("responses_per_prompt must be >= 1");
  entry.validate();
  for (const auto& t : templates) validate_template(t);

  std::vector<Task> tasks;
  for (const auto& surface : entry.surface_labels())
    for (const auto& t : templates)
      for (int r = 0; r < options.responses_per_prompt; ++r) tasks.push_back({surface, &t, r, {}, false, 0, {}});

  RateLimiter limiter(options.backend.max_requests_per_second);
  auto run = [&](Task& task) {
    if (auto hit = cache.get(task.tmpl->id, task.surface, task.response_index)) {
      task.text = std::move(*hit);
      task.from_cache = true;
      return;
    }
    const auto prompt = render_prompt(*task.tmpl, task.surface);
    for (int attempt = 0; attempt <= options.backend.max_retries; ++attempt) {
      try {
        limiter.acquire();
        auto text = backend.complete(prompt, task.response_index);
        cache.put(task.tmpl->id, task.surface, task.response_index, text);
        task.text = std::move(text);
        return;
      } catch (const std::exception& e) {
        task.error = e.what();
        if (attempt < options.backend.max_retries) ++task.retries;
      }
    }
  };

  const auto workers = static_cast<std::size_t>(std::max(1, options.backend.max_in_flight));
  if (workers == 1 || tasks.size() < 2) {
    for (auto& t : tasks) run(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, tasks.size()); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) run(tasks[i]);
      });
    }
    for (auto& th : pool) th.join();
  }

  GenerationStats local;
  std::vector<DescriptionRecord> records;
  // (prompt, normalized text) -> record index
  std::map<std::pair<PromptId, std::string>, std::size_t> seen;
  std::string first_error;
  // Emit grouped by template so records of one prompt type stay contiguous.
  for (const auto& t : templates) {
    for (auto& task : tasks) {
      if (task.tmpl != &t) continue;
      local.retries += task.retries;
      if (!task.text) {
        ++local.failures;
        if (first_error.empty()) first_error = task.error;
        continue;
      }
      if (task.from_cache) {
        ++local.cache_hits;
      } else {
        local.backend_calls += 1 + task.retries;
      }
      auto text = normalize_whitespace(*task.text);
      if (text.empty()) {
        ++local.empty_responses;
        log::warn("empty response for " + to_string(t.id) + " / '" + task.surface + "' #" +
                  std::to_string(task.response_index));
        continue;
      }
      auto [it, inserted] = seen.emplace(std::make_pair(t.id, text), records.size());
      if (!inserted) {
        ++records[it->second].kept_count;
        ++local.duplicates_collapsed;
        continue;
      }
      DescriptionRecord rec;
      rec.description_id = entry.category_id + "/" + to_string(t.id) + "/" + task.surface + "/" +
                           std::to_string(task.response_index);
      rec.category_id = entry.category_id;
      rec.prompt_id = t.id;
      rec.surface_label_used = task.surface;
      rec.response_index = task.response_index;
      rec.text = std::move(text);
      records.push_back(std::move(rec));
    }
  }
  if (stats) *stats += local;
  if (local.failures > 0) {
    throw PartialResultError("backend failed for " + std::to_string(local.failures) + " request(s) of category " +
                                 entry.category_id + ": " + first_error,
                             std::move(records));
  }
  return records;
}

nlohmann::json CorpusStatistics::to_json() const {
  nlohmann::json per_prompt = nlohmann::json::object();
  for (const auto& [id, n] : descriptions_per_prompt) per_prompt[promptgen::to_string(id)] = n;
  return nlohmann::json{{"categories", categories},
                        {"descriptions_per_prompt", per_prompt},
                        {"total_texts", total_texts},
                        {"backend_calls", generation.backend_calls},
                        {"cache_hits", generation.cache_hits},
                        {"retries", generation.retries},
                        {"empty_responses", generation.empty_responses},
                        {"duplicates_collapsed", generation.duplicates_collapsed}};
}

TextCorpus build_text_corpus(std::span<const CategoryEntry> entries, std::span<const PromptTemplate> templates,
                             LanguageModelBackend& backend, PromptCache& cache, const GenerationOptions& options) {
  if (entries.empty()) throw ManifestError("build_text_corpus: no categories");
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.category_id).second) throw ManifestError("duplicate category id: " + e.category_id);
  }
  TextCorpus corpus;
  corpus.statistics.categories = static_cast<long>(entries.size());
  for (const auto& t : templates) corpus.statistics.descriptions_per_prompt[t.id] = 0;
  for (const auto& e : entries) {
    auto records = generate_descriptions(e, templates, backend, cache, options, &corpus.statistics.generation);
    for (auto& r : records) {
      ++corpus.statistics.descriptions_per_prompt[r.prompt_id];
      corpus.records.push_back(std::move(r));
    }
  }
  corpus.statistics.total_texts = static_cast<long>(corpus.records.size());
  return corpus;
}

long expected_record_count(std::span<const CategoryEntry> entries, std::size_t num_templates,
                           int responses_per_prompt) {
  long total = 0;
  for (const auto& e : entries) {
    total += static_cast<long>(1 + e.synonyms.size()) * static_cast<long>(num_templates) * responses_per_prompt;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Files

void write_description_corpus(const std::filesystem::path& path, std::span<const DescriptionRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ManifestError("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<DescriptionRecord> read_description_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open " + path.string());
  std::vector<DescriptionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    out.push_back(description_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

std::vector<CategoryEntry> read_categories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open categories file " + path.string());
  std::vector<CategoryEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    auto fields = split(line, '\t');
    if (fields.size() < 2) {
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>label[<TAB>synonyms]");
    }
    CategoryEntry e{trim(fields[0]), trim(fields[1]), {}};
    if (fields.size() > 2) {
      for (const auto& s : split(fields[2], ',')) {
        if (!trim(s).empty()) e.synonyms.push_back(trim(s));
      }
    }
    e.validate();
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<PromptTemplate> read_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TemplateError("cannot open templates file " + path.string());
  std::vector<PromptTemplate> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    auto fields = split(line, '\t');
    if (fields.size() < 3) throw TemplateError("template line needs id<TAB>text<TAB>focus: " + line);
    PromptTemplate t{parse_prompt_id(trim(fields[0])), trim(fields[1]), trim(fields[2])};
    validate_template(t);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace pitl::promptgen
