#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace lshx {

using WarningSink = std::function<void(const std::string&)>;

/// Process-wide sink for non-fatal diagnostics. Defaults to stderr.
inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}

inline void warn(const std::string& msg) {
  if (auto& sink = warning_sink()) sink(msg);
}

}  // namespace lshx
