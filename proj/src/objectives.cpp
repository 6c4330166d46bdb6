// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pitl/objectives.hpp"

#include <string>

#include "pitl/errors.hpp"

namespace pitl {

std::string to_string(TargetMode mode) { return mode == TargetMode::Uniform ? "uniform" : "binary_sum"; }
std::string to_string(SimilarityMode mode) { return mode == SimilarityMode::Projected ? "projected" : "raw"; }
std::string to_string(NegativeStrategy strategy) { return strategy == NegativeStrategy::Uniform ? "uniform" : "hard"; }

TargetMode parse_target_mode(std::string_view text) {
  if (text == "uniform") return TargetMode::Uniform;
  if (text == "binary_sum") return TargetMode::BinarySum;
  throw ContractError("unknown target mode: " + std::string(text));
}

SimilarityMode parse_similarity_mode(std::string_view text) {
  if (text == "projected") return SimilarityMode::Projected;
  if (text == "raw") return SimilarityMode::Raw;
  throw ContractError("unknown similarity mode: " + std::string(text));
}

NegativeStrategy parse_negative_strategy(std::string_view text) {
  if (text == "uniform") return NegativeStrategy::Uniform;
  if (text == "hard") return NegativeStrategy::Hard;
  throw ContractError("unknown negative strategy: " + std::string(text));
}

MaskedText mask_tokens(const std::vector<int>& ids, double rate, int vocab_size, Rng& rng,
                       const std::vector<char>& key_valid) {
  if (rate < 0.0 || rate > 1.0) throw ContractError("mask_tokens: rate must be in [0, 1]");
  if (vocab_size <= Tokenizer::kNumSpecial) throw ContractError("mask_tokens: vocabulary has no regular tokens");
  if (!key_valid.empty() && key_valid.size() != ids.size()) throw ContractError("mask_tokens: mask length mismatch");
  MaskedText out;
  out.input_ids = ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (Tokenizer::is_special(ids[i])) continue;
    if (!key_valid.empty() && !key_valid[i]) continue;
    if (uniform01(rng) >= rate) continue;
    out.positions.push_back(static_cast<int>(i));
    out.targets.push_back(ids[i]);
    const double action = uniform01(rng);
    if (action < 0.8) {
      out.input_ids[i] = Tokenizer::kMask;
    } else if (action < 0.9) {
      out.input_ids[i] = Tokenizer::kNumSpecial +
                         static_cast<int>(uniform_index(rng, static_cast<std::size_t>(vocab_size - Tokenizer::kNumSpecial)));
    }
  }
  return out;
}

}  // namespace pitl
