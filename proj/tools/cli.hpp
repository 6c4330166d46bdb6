// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PITL_TOOLS_CLI_HPP_
#define PITL_TOOLS_CLI_HPP_

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

namespace pitl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kToolVersion = "0.1.0";

/// What one subcommand invocation resolved to and produced. Written as
/// run_manifest.json in the run directory.
struct RunManifest {
  std::string subcommand;
  std::map<std::string, std::string> config;  // resolved flat key = value
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> inputs;  // path -> content hash
  std::vector<std::string> outputs;
  std::string tool_version = kToolVersion;

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

/// Hash of the resolved configuration, ignoring output-location keys.
std::string config_hash(const std::map<std::string, std::string>& config);

/// Runs the tool with argv semantics and returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pitl::cli

#endif  // PITL_TOOLS_CLI_HPP_
