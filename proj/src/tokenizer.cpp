// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pitl/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "pitl/errors.hpp"

namespace pitl {

Tokenizer::Tokenizer() {
  for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[MASK]"}) add(s);
}

void Tokenizer::add(const std::string& token) {
  if (ids_.count(token)) throw ContractError("duplicate vocabulary token: " + token);
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

std::vector<std::string> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c) && c != '\'' && c != '-') {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

Tokenizer Tokenizer::build(std::span<const std::string> texts, int min_count, int max_vocab) {
  std::map<std::string, long> counts;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) ++counts[w];
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Tokenizer tok;
  for (const auto& [w, n] : ranked) {
    if (n < min_count) continue;
    if (max_vocab > 0 && tok.size() >= max_vocab) break;
    tok.add(w);
  }
  return tok;
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(tokens);
}

Tokenizer Tokenizer::from_tokens(const std::vector<std::string>& tokens) {
  Tokenizer tok;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i < static_cast<std::size_t>(kNumSpecial)) {
      if (tokens[i] != tok.tokens_[i]) throw ContractError("vocabulary must start with the special tokens");
    } else {
      tok.add(tokens[i]);
    }
  }
  return tok;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContractError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::vector<int> Tokenizer::encode(std::string_view text, int max_tokens) const {
  std::vector<int> ids{kCls};
  for (const auto& w : split_words(text)) {
    if (static_cast<int>(ids.size()) > max_tokens) break;
    auto it = ids_.find(w);
    ids.push_back(it == ids_.end() ? kUnk : it->second);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

int Tokenizer::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

}  // namespace pitl
