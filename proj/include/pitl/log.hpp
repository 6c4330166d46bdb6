// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PITL_LOG_HPP_
#define PITL_LOG_HPP_

#include <string_view>

namespace pitl::log {

// Warnings go to stderr unless silenced; the counter always advances.
void warn(std::string_view message);
void info(std::string_view message);
long warning_count();
void set_quiet(bool quiet);

}  // namespace pitl::log

#endif  // PITL_LOG_HPP_
