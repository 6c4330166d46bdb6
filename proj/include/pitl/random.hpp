// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PITL_RANDOM_HPP_
#define PITL_RANDOM_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace pitl {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// Seed of the named substream derived from a master seed. Distinct names
/// give statistically independent streams, so changing how one consumer
/// draws never perturbs another.
std::uint64_t substream_seed(std::uint64_t master, std::string_view name);

inline Rng make_rng(std::uint64_t master, std::string_view name) {
  return Rng(substream_seed(master, name));
}

std::string serialize_rng(const Rng& rng);
void deserialize_rng(Rng& rng, const std::string& state);

/// Uniform double in [0, 1) from 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace pitl

#endif  // PITL_RANDOM_HPP_
