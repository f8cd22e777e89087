#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace facecue {

using WarningHandler = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
inline WarningHandler& warning_handler() {
  static WarningHandler h = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return h;
}
}  // namespace detail

inline void warn(const std::string& msg) {
  std::lock_guard lock(detail::warning_mutex());
  detail::warning_handler()(msg);
}

// Installs a handler for the lifetime of the guard; restores the previous one
// on destruction.
class ScopedWarningHandler {
 public:
  explicit ScopedWarningHandler(WarningHandler h) {
    std::lock_guard lock(detail::warning_mutex());
    previous_ = std::exchange(detail::warning_handler(), std::move(h));
  }
  ~ScopedWarningHandler() {
    std::lock_guard lock(detail::warning_mutex());
    detail::warning_handler() = std::move(previous_);
  }
  ScopedWarningHandler(const ScopedWarningHandler&) = delete;
  ScopedWarningHandler& operator=(const ScopedWarningHandler&) = delete;

 private:
  WarningHandler previous_;
};

}  // namespace facecue
