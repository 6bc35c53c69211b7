// SPDX-License-Identifier: Apache-2.0
#pragma once

// Process-wide warning and info sinks. Both default to stderr; tools and tests may redirect them.

#include <functional>
#include <iostream>
#include <string>

namespace trj {

using LogSink = std::function<void(const std::string&)>;

inline LogSink& warning_sink() {
  static LogSink sink = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
  return sink;
}

inline LogSink& info_sink() {
  static LogSink sink = [](const std::string& m) { std::cerr << m << "\n"; };
  return sink;
}

inline void warn(const std::string& message) {
  if (warning_sink()) warning_sink()(message);
}

inline void info(const std::string& message) {
  if (info_sink()) info_sink()(message);
}

}  // namespace trj
