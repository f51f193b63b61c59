#pragma once

#include <stdexcept>
#include <string>

namespace descan {

// Failure classes. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  invalid_argument = 1,
  config = 2,
  io = 3,
  data = 4,
  stage_order = 5,
  divergence = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::invalid_argument, what);
}

}  // namespace descan
