#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <utility>

namespace adham {

using WarningHandler = std::function<void(const std::string&)>;

inline WarningHandler& warning_handler() {
  static WarningHandler handler = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return handler;
}

inline void warn(const std::string& msg) {
  if (warning_handler()) warning_handler()(msg);
}

/// Swaps the warning handler for the lifetime of the guard.
class ScopedWarningHandler {
 public:
  explicit ScopedWarningHandler(WarningHandler h) : saved_(std::exchange(warning_handler(), std::move(h))) {}
  ~ScopedWarningHandler() { warning_handler() = std::move(saved_); }
  ScopedWarningHandler(const ScopedWarningHandler&) = delete;
  ScopedWarningHandler& operator=(const ScopedWarningHandler&) = delete;

 private:
  WarningHandler saved_;
};

}  // namespace adham
