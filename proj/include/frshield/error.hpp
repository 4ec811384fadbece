#pragma once

#include <stdexcept>
#include <string>

namespace frshield {

// Failure classes; the CLI maps each to its own exit code.
enum class ErrorKind {
  InvalidArgument = 2,
  ShapeMismatch = 3,
  NonFinite = 4,
  Io = 5,
  Format = 6,
  Data = 7,
  Convergence = 8,
  Config = 9,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

const char* error_kind_name(ErrorKind kind) noexcept;

// Warnings and progress lines go to stderr unless silenced (tests silence them).
void warn(const std::string& message);
void info(const std::string& message);
void set_warnings_enabled(bool enabled);

}  // namespace frshield
