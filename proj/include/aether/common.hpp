#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>

namespace aether {

// ---------------------------------------------------------------- logging

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

void set_log_level(LogLevel level);
LogLevel log_level();
void log_line(LogLevel level, const std::string& line);

template <typename... Args>
void log_info(Args&&... args) {
  if (log_level() < LogLevel::Info) return;
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  log_line(LogLevel::Info, os.str());
}

template <typename... Args>
void log_debug(Args&&... args) {
  if (log_level() < LogLevel::Debug) return;
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  log_line(LogLevel::Debug, os.str());
}

// ---------------------------------------------------------------- threads

/// Worker count used by parallel_for. Defaults to the hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs body(i) for i in [0, n). Work is handed out by index, so anything that
/// writes only to slot i produces the same result for every thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

// ---------------------------------------------------------------- hashing

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::span<const std::byte> bytes);
std::string hex64(std::uint64_t value);

/// Hash of a whole file's contents; throws IoError if unreadable.
std::uint64_t hash_file(const std::string& path);

// ---------------------------------------------------------------- strings

std::string trim(std::string_view s);
std::string format_double(double value);  // shortest round-trip form

}  // namespace aether
