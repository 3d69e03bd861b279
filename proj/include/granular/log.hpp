#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace granular {

using LogSink = std::function<void(const std::string&)>;

inline LogSink& warning_sink() {
  static LogSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}

inline void log_warning(const std::string& msg) {
  if (warning_sink()) warning_sink()(msg);
}

}  // namespace granular
