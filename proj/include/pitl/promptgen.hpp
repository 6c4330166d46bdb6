// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

// Description corpus synthesis: render the nine category prompts, query a
// language-model backend (through a content-addressed cache) and collect the
// responses as DescriptionRecords.

#ifndef PITL_PROMPTGEN_HPP_
#define PITL_PROMPTGEN_HPP_

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pitl/errors.hpp"

namespace pitl::promptgen {

enum class PromptId : int { P1 = 1, P2, P3, P4, P5, P6, P7, P8, P9 };

inline constexpr int kNumPromptTypes = 9;

std::string to_string(PromptId id);
/// Accepts "P1".."P9" (case-insensitive). Throws ContractError otherwise.
PromptId parse_prompt_id(std::string_view text);
/// Comma-separated list of prompt ids, e.g. "P1,P9".
std::vector<PromptId> parse_prompt_list(std::string_view text);

inline constexpr std::string_view kPlaceholder = "<category>";

struct PromptTemplate {
  PromptId id;
  std::string text;   // exactly one <category> placeholder
  std::string focus;
};

/// The nine templates with their focus tags.
const std::vector<PromptTemplate>& default_templates();

/// Throws TemplateError unless the template has exactly one placeholder.
void validate_template(const PromptTemplate& tmpl);

/// Surface form of a label inside a prompt: underscores become spaces.
std::string render_surface(std::string_view label);

std::string render_prompt(const PromptTemplate& tmpl, std::string_view label_surface);

struct CategoryEntry {
  std::string category_id;
  std::string canonical_label;
  std::vector<std::string> synonyms;

  /// Canonical label first, then synonyms in order.
  std::vector<std::string> surface_labels() const;
  /// Throws ContractError on an empty label or duplicated/self synonyms.
  void validate() const;
};

struct DescriptionRecord {
  std::string description_id;
  std::string category_id;
  PromptId prompt_id = PromptId::P1;
  std::string surface_label_used;
  int response_index = 0;
  std::string text;
  // Number of identical responses collapsed into this record (>= 1).
  int kept_count = 1;
};

nlohmann::json to_json(const DescriptionRecord& record);
DescriptionRecord description_from_json(const nlohmann::json& j);

/// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

// ---------------------------------------------------------------------------
// Backends

/// Text in, text out. `sample_index` distinguishes repeated samples of the
/// same prompt.
class LanguageModelBackend {
 public:
  virtual ~LanguageModelBackend() = default;
  virtual std::string complete(const std::string& prompt, int sample_index) = 0;
  virtual std::string name() const = 0;
};

struct BackendConfig {
  int max_retries = 3;
  std::chrono::milliseconds timeout{30000};
  // 0 disables rate limiting
  double max_requests_per_second = 0.0;
  int max_in_flight = 4;
  // Decoding settings forwarded verbatim to live backends; unset keeps the
  // backend's own defaults.
  std::optional<double> temperature;
  std::optional<int> max_tokens;
};

/// Deterministic offline backend. Canned responses are looked up by exact
/// prompt text; any other prompt gets a procedurally composed response that
/// depends only on (prompt, sample_index).
class FixtureBackend : public LanguageModelBackend {
 public:
  explicit FixtureBackend(std::vector<PromptTemplate> templates = default_templates());

  /// JSON object mapping prompt text to an array of responses.
  static std::unique_ptr<FixtureBackend> from_file(const std::filesystem::path& path);
  void add_canned(const std::string& prompt, std::vector<std::string> responses);

  std::string complete(const std::string& prompt, int sample_index) override;
  std::string name() const override { return "fixture"; }
  long calls() const;

 private:
  std::vector<PromptTemplate> templates_;
  std::unordered_map<std::string, std::vector<std::string>> canned_;
  mutable std::mutex mutex_;
  long calls_ = 0;
};

struct LiveBackendConfig {
  // Base URL of an OpenAI-compatible server, e.g. https://api.example.com
  std::string endpoint;
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-3.5-turbo-instruct";
  std::string api_key;
  BackendConfig backend;
};

/// Chat-completions client. Credentials default to PITL_LLM_API_KEY and the
/// endpoint to PITL_LLM_ENDPOINT.
class LiveBackend : public LanguageModelBackend {
 public:
  explicit LiveBackend(LiveBackendConfig config);
  static LiveBackend from_environment(BackendConfig backend = {});

  std::string complete(const std::string& prompt, int sample_index) override;
  std::string name() const override { return "live"; }

 private:
  LiveBackendConfig config_;
};

// ---------------------------------------------------------------------------
// Cache

/// Keyed store (prompt_id, surface_label, response_index) -> text. With a
/// directory the entries persist as <dir>/<version>/<hh>/<hash>.txt;
/// otherwise the cache is in-memory only.
class PromptCache {
 public:
  explicit PromptCache(std::string version = "v1", std::optional<std::filesystem::path> dir = {});

  static std::string key_hash(PromptId id, std::string_view surface_label, int response_index);

  std::optional<std::string> get(PromptId id, const std::string& surface_label, int response_index);
  void put(PromptId id, const std::string& surface_label, int response_index, const std::string& text);

  const std::string& version() const { return version_; }
  long hits() const;
  long misses() const;

 private:
  std::filesystem::path entry_path(const std::string& hash) const;

  std::string version_;
  std::optional<std::filesystem::path> dir_;
  std::unordered_map<std::string, std::string> memory_;
  mutable std::mutex mutex_;
  long hits_ = 0;
  long misses_ = 0;
};

// ---------------------------------------------------------------------------
// Generation

struct GenerationOptions {
  int responses_per_prompt = 5;
  BackendConfig backend;
};

struct GenerationStats {
  long backend_calls = 0;
  long cache_hits = 0;
  long retries = 0;
  long empty_responses = 0;
  long duplicates_collapsed = 0;
  long failures = 0;

  GenerationStats& operator+=(const GenerationStats& o);
};

/// Backend kept failing after retries; carries the records that did complete.
class PartialResultError : public BackendError {
 public:
  PartialResultError(const std::string& what, std::vector<DescriptionRecord> completed)
      : BackendError(what), completed_(std::move(completed)) {}
  const std::vector<DescriptionRecord>& completed() const { return completed_; }

 private:
  std::vector<DescriptionRecord> completed_;
};

/// One record per (surface label, template, response index), minus exact-text
/// duplicates within (category, prompt) which are collapsed into the first
/// occurrence's kept_count. Empty responses are skipped and counted.
std::vector<DescriptionRecord> generate_descriptions(const CategoryEntry& entry,
                                                     std::span<const PromptTemplate> templates,
                                                     LanguageModelBackend& backend, PromptCache& cache,
                                                     const GenerationOptions& options = {},
                                                     GenerationStats* stats = nullptr);

struct CorpusStatistics {
  long categories = 0;
  std::map<PromptId, long> descriptions_per_prompt;
  long total_texts = 0;
  GenerationStats generation;

  nlohmann::json to_json() const;
};

struct TextCorpus {
  std::vector<DescriptionRecord> records;
  CorpusStatistics statistics;
};

/// Throws ManifestError for an empty entry list or duplicate category ids.
TextCorpus build_text_corpus(std::span<const CategoryEntry> entries, std::span<const PromptTemplate> templates,
                             LanguageModelBackend& backend, PromptCache& cache,
                             const GenerationOptions& options = {});

/// Expected record count before duplicate collapsing.
long expected_record_count(std::span<const CategoryEntry> entries, std::size_t num_templates,
                           int responses_per_prompt);

// ---------------------------------------------------------------------------
// Files

/// One JSON object per line, UTF-8.
void write_description_corpus(const std::filesystem::path& path, std::span<const DescriptionRecord> records);
std::vector<DescriptionRecord> read_description_corpus(const std::filesystem::path& path);

/// Tab-separated: category_id <TAB> canonical_label [<TAB> synonym,synonym...]
/// Blank lines and lines starting with '#' are ignored.
std::vector<CategoryEntry> read_categories(const std::filesystem::path& path);

/// Tab-separated: P<n> <TAB> template text <TAB> focus
std::vector<PromptTemplate> read_templates(const std::filesystem::path& path);

}  // namespace pitl::promptgen

#endif  // PITL_PROMPTGEN_HPP_
