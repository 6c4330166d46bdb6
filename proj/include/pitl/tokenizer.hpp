// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PITL_TOKENIZER_HPP_
#define PITL_TOKENIZER_HPP_

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pitl {

/// Lower-cased word-level vocabulary. Words split on whitespace, each
/// punctuation character is its own token.
///
/// Vocabulary file: UTF-8, one token per line, line number = token id. The
/// first four lines are the special tokens [PAD] [UNK] [CLS] [MASK].
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kMask = 3;
  static constexpr int kNumSpecial = 4;

  Tokenizer();

  /// Words seen at least `min_count` times, most frequent first (ties in
  /// lexicographic order), capped at `max_vocab` total entries when > 0.
  static Tokenizer build(std::span<const std::string> texts, int min_count = 1, int max_vocab = 0);
  static Tokenizer load(const std::filesystem::path& path);
  /// Same as load() from an in-memory token list.
  static Tokenizer from_tokens(const std::vector<std::string>& tokens);
  void save(const std::filesystem::path& path) const;

  static std::vector<std::string> split_words(std::string_view text);

  /// [CLS] followed by at most `max_tokens` word ids.
  std::vector<int> encode(std::string_view text, int max_tokens) const;
  std::string decode(std::span<const int> ids) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int id(const std::string& token) const;

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace pitl

#endif  // PITL_TOKENIZER_HPP_
