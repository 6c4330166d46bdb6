// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pitl/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace pitl::log {
namespace {
std::atomic<long> g_warnings{0};
std::atomic<bool> g_quiet{false};
std::mutex g_mutex;
}  // namespace

void warn(std::string_view message) {
  ++g_warnings;
  if (g_quiet) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[pitl] warning: " << message << '\n';
}

void info(std::string_view message) {
  if (g_quiet) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[pitl] " << message << '\n';
}

long warning_count() { return g_warnings; }

void set_quiet(bool quiet) { g_quiet = quiet; }

}  // namespace pitl::log
